"""Speckle simulation, cascaded despeckling/colorization networks on a small
numpy autodiff engine, classical baselines and quality metrics."""

from .tensor import ContractError, DimensionError, NumericError, Tensor
from .speckle import SpeckleParams, apply_speckle, gamma_pdf, sample_speckle
from .filters import FilterConfig, kuan_filter, lee_filter
from .metrics import MetricsReport, despeckling_gain, evaluate_corpus, psnr, ssim, uqi
from .nets import (
    LossWeights,
    Network,
    build_colorization_net,
    build_despeckling_net,
    build_discriminator,
    generator_forward,
)

__version__ = "0.1.0"
