"""
Speckle and classical despeckling
=================================

Speckle the luma of a few procedural scenes at 1, 4 and 10 looks, then
compare the raw speckled image with the Lee and Kuan filters.
"""

from sargan.corpus import procedural_corpus
from sargan.filters import FilterConfig, kuan_filter, lee_filter
from sargan.metrics import evaluate_corpus, format_table
from sargan.speckle import SpeckleParams, sample_speckle
from sargan.train import gray_image, make_pair_dataset

# the fading field has unit mean and variance 1/L
for looks in (1, 4, 10):
    f = sample_speckle(200_000, SpeckleParams(looks, seed=looks))
    print(f"L={looks:2d}  mean {f.mean():.4f}  var {f.var():.4f}  (1/L = {1 / looks:.4f})")

clean = procedural_corpus(8, 64, seed=3)

for looks in (1, 4, 10):
    ds = make_pair_dataset(clean, looks, seed=10 + looks)
    # metrics compare against the clean luma, which is what the filters estimate
    pairs = [(y, gray_image(x)) for y, x in ds.pairs]
    cfg = FilterConfig(window=7, looks=looks)
    reports = [
        evaluate_corpus(lambda y: y, pairs, looks, name="noisy"),
        evaluate_corpus(lambda y: lee_filter(y, cfg), pairs, looks, name="lee"),
        evaluate_corpus(lambda y: kuan_filter(y, cfg), pairs, looks, name="kuan"),
    ]
    print()
    print(format_table(reports))
