"""
Despeckle, then colorize
========================

The generator is a cascade: the despeckling network maps a speckled
single-channel image to a clean one, and the colorization network maps
that to RGB. A discriminator scores RGB images as real or generated.

This script runs a handful of joint adversarial training steps on tiny
networks and writes the intermediate and final images of one scene.
"""

from pathlib import Path

import numpy as np

from sargan.corpus import procedural_corpus, write_image
from sargan.nets import generator_forward
from sargan.train import TrainConfig, make_pair_dataset, train_gan, trace_to_csv

out = Path("cascade_out")
out.mkdir(exist_ok=True)

dataset = make_pair_dataset(procedural_corpus(12, 32, seed=5), looks=4, seed=6)
cfg = TrainConfig(width=16, batch_size=4, epochs=5, lambda_a=0.1, looks=4)
trainer = train_gan(dataset, cfg)

# one row per step: despeckling L1, colorization L1, adversarial, total, D loss
print(trace_to_csv(trainer.trace[-3:]))

y, x = dataset.test[0]
despeckled, colorized = generator_forward(trainer.gd, trainer.gc, y[None], mode="eval")
print("speckled", y.shape, "-> despeckled", despeckled.shape[1:], "-> colorized", colorized.shape[1:])

write_image(out / "speckled.pgm", np.clip(y, 0, 1))
write_image(out / "despeckled.pgm", despeckled.data[0])
write_image(out / "colorized.ppm", colorized.data[0])
write_image(out / "clean.ppm", x)
print("images written to", out.resolve())
