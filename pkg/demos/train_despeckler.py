"""
Training the despeckling network
================================

Fit the despeckling network alone (L1 loss only) on procedural speckled
pairs, then score it next to the Lee and Kuan filters on held-out scenes.

Three settings help the network on one-look speckle. The division uses
eps 0.02 so that dark speckle pixels do not saturate the tanh. The
estimate starts at exactly 1. Batch-norm statistics are re-estimated
once training ends. A few hundred steps already clean up flat regions.
Beating the filters takes about 5000 steps on a few thousand scenes
(see ``tests/test_acceptance.py``).
"""

import sys
import time

import numpy as np

from sargan.corpus import procedural_corpus
from sargan.filters import FilterConfig, kuan_filter, lee_filter
from sargan.metrics import evaluate_corpus, format_table
from sargan.nets import build_despeckling_net, recalibrate_batch_norm, set_unit_estimate
from sargan.train import TrainConfig, Trainer, gray_image, make_pair_dataset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

train_pairs = make_pair_dataset(procedural_corpus(1000, 32, seed=1), looks=1, seed=2).pairs
test_pairs = [(y, gray_image(x)) for y, x in
              make_pair_dataset(procedural_corpus(6, 64, seed=3), looks=1, seed=4).pairs]

cfg = TrainConfig(stage="despeckle", lambda_a=0.0, learning_rate=5e-4, epochs=10 ** 6)
gd = build_despeckling_net(seed=0, eps=0.02)
set_unit_estimate(gd)
trainer = Trainer(cfg, gd=gd)

t0 = time.perf_counter()
for chunk in range(1, steps // 100 + 1):
    trainer.fit(train_pairs, max_steps=100 * chunk)
    recent = np.mean([r.l_d for r in trainer.trace[-100:]])
    print(f"step {trainer.step:5d}  L1 {recent:.4f}  {time.perf_counter() - t0:.0f}s")

# average the batch statistics of the final weights over 50 training batches
recalibrate_batch_norm(gd, [np.stack([train_pairs[4 * k + j][0] for j in range(4)])
                            for k in range(50)])


def cnn(y):
    return np.clip(trainer.gd(y[None], mode="eval").data[0], 0.0, 1.0)


fcfg = FilterConfig(7, 1)
reports = [
    evaluate_corpus(lambda y: y, test_pairs, 1, name="noisy"),
    evaluate_corpus(lambda y: lee_filter(y, fcfg), test_pairs, 1, name="lee"),
    evaluate_corpus(lambda y: kuan_filter(y, fcfg), test_pairs, 1, name="kuan"),
    evaluate_corpus(cnn, test_pairs, 1, name="cnn"),
]
print(format_table(reports))
