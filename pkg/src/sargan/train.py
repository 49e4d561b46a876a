"""Adam, speckled-pair datasets and the alternating GAN training loop."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import persist
from . import functional as F
from .nets import (
    LossWeights,
    Network,
    adversarial_loss_g,
    build_colorization_net,
    build_despeckling_net,
    build_discriminator,
    discriminator_loss_from_scores,
    generator_forward,
    gray,
)
from .speckle import SpeckleParams, apply_speckle, make_rng, sample_speckle
from .tensor import DimensionError, Graph, NumericError, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 4
    lambda_a: float = 0.1
    looks: int = 1
    epochs: int = 50
    seed: int = 0
    image_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_steps_per_g_step: int = 1
    # None: derive the discriminator init seed from ``seed``
    d_seed: int | None = None
    width: int = 64
    # "joint" trains the full cascade with D; "despeckle" fits G_D alone on L_D
    stage: str = "joint"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.lambda_a < 0:
            raise ValueError("lambda_a must be >= 0")
        if self.stage not in ("joint", "despeckle"):
            raise ValueError(f"unknown stage {self.stage!r}")

    @classmethod
    def full_scale_preset(cls, **overrides) -> "TrainConfig":
        """Full-scale settings: 512×512 images, mini-batches of 12."""
        return cls(**{"batch_size": 12, "image_size": 512, **overrides})


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_step(param: np.ndarray, grad: np.ndarray | None, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns new ``(param, m, v)``.

    A missing gradient counts as zero.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if grad is None:
        grad = np.zeros_like(param)
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise DimensionError(f"adam_step: shapes {param.shape}, {grad.shape}, {m.shape}, {v.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        for k, p in self.params.items():
            p.data, self.m[k], self.v[k] = adam_step(p.data, p.grad, self.m[k], self.v[k],
                                                     self.t, self.lr, b1, b2, self.eps)

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}m/{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}v/{k}": a for k, a in self.v.items()})
        return out

    def load(self, arrays: dict[str, np.ndarray], prefix: str, t: int) -> None:
        for k in self.params:
            self.m[k] = arrays[f"{prefix}m/{k}"].copy()
            self.v[k] = arrays[f"{prefix}v/{k}"].copy()
        self.t = t


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def gray_image(x: np.ndarray) -> np.ndarray:
    """3×H×W RGB -> 1×H×W luma."""
    return gray(np.asarray(x, dtype=float)).data[0]


@dataclass
class PairDataset:
    """Speckled/clean pairs; the last ``n_test`` entries form the test split."""

    pairs: list[tuple[np.ndarray, np.ndarray]]
    n_test: int
    looks: float
    seed: int

    @property
    def train(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.pairs[: len(self.pairs) - self.n_test]

    @property
    def test(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.pairs[len(self.pairs) - self.n_test:]

    def __len__(self) -> int:
        return len(self.pairs)


def test_count(n: int) -> int:
    return max(1, n // 10) if n > 1 else 0


def make_pair_dataset(clean_images: Sequence[np.ndarray], looks: float, seed: int) -> PairDataset:
    """Speckle the luma of each RGB image with one seeded stream.

    ``looks=math.inf`` uses a unit fading field (no speckle).
    """
    if len(clean_images) == 0:
        raise ValueError("empty corpus")
    rng = make_rng(seed)
    pairs = []
    for x in clean_images:
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[0] != 3:
            raise DimensionError(f"clean images must be 3×H×W, got {x.shape}")
        g = gray_image(x)
        if math.isinf(looks):
            field_ = np.ones_like(g)
        else:
            field_ = sample_speckle(g.shape, SpeckleParams(int(looks), seed), rng=rng)
        pairs.append((apply_speckle(g, field_, clamp=False), x))
    return PairDataset(pairs, test_count(len(pairs)), looks, seed)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

TRACE_FIELDS = ("step", "l_d", "l_c_l1", "l_c_adv", "l_total", "d_loss")


@dataclass
class TraceRow:
    step: int
    l_d: float
    l_c_l1: float
    l_c_adv: float
    l_total: float
    d_loss: float

    def as_tuple(self) -> tuple:
        return dataclasses.astuple(self)


def trace_to_csv(trace: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for row in trace:
        w.writerow([row.step] + [repr(float(v)) for v in row.as_tuple()[1:]])
    return buf.getvalue()


def _check_finite(loss: Tensor, what: str) -> None:
    if np.isfinite(loss.data).all():
        return
    bad = Graph.from_output(loss).first_nonfinite()
    where = f"{bad.op} node" + (f" {bad.name!r}" if bad.name else "") if bad is not None else "input"
    raise NumericError(f"non-finite {what}; first non-finite tensor: {where}")


def _stack(items: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(a, dtype=float) for a in items])


class Trainer:
    """Owns the three networks, their optimizers and the data order.

    Each call to :meth:`train_step` performs the discriminator update(s)
    followed by one generator update on the given mini-batch.
    """

    def __init__(self, cfg: TrainConfig, gd: Network | None = None, gc: Network | None = None,
                 d: Network | None = None):
        self.cfg = cfg
        d_seed = cfg.d_seed if cfg.d_seed is not None else cfg.seed + 2
        self.gd = gd or build_despeckling_net(seed=cfg.seed, width=cfg.width)
        self.gc = gc or build_colorization_net(seed=cfg.seed + 1, width=cfg.width)
        self.d = d or build_discriminator(seed=d_seed, width=cfg.width)
        self.weights = LossWeights(cfg.lambda_a)
        g_params = {f"gd/{k}": p for k, p in self.gd.state.params.items()}
        if cfg.stage == "joint":
            g_params.update({f"gc/{k}": p for k, p in self.gc.state.params.items()})
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(g_params, cfg.learning_rate, betas, cfg.adam_eps)
        self.opt_d = Adam({f"d/{k}": p for k, p in self.d.state.params.items()},
                          cfg.learning_rate, betas, cfg.adam_eps)
        self.rng = make_rng(cfg.seed + 3)
        self.step = 0
        self.epoch = 0
        self.order: np.ndarray | None = None
        self.cursor = 0
        self.trace: list[TraceRow] = []

    # -- single update -----------------------------------------------------
    def train_step(self, y: np.ndarray, x: np.ndarray) -> TraceRow:
        """``y``: N×1×H×W speckled batch, ``x``: N×3×H×W clean batch."""
        if self.cfg.stage == "despeckle":
            return self._despeckle_step(y, x)
        despeckled, colorized = generator_forward(self.gd, self.gc, y)
        l_d = F.l1_loss(despeckled, gray(x))
        l_c_l1 = F.l1_loss(colorized, x)
        _check_finite(l_d, "despeckling loss")
        _check_finite(l_c_l1, "colorization loss")

        fake = colorized.detach()
        d_loss = math.nan
        for _ in range(self.cfg.d_steps_per_g_step):
            self.opt_d.zero_grad()
            dl = discriminator_loss_from_scores(self.d(x), self.d(fake))
            _check_finite(dl, "discriminator loss")
            dl.backward()
            self.opt_d.step()
            d_loss = dl.item()

        # generator step against the freshly updated discriminator
        l_adv = adversarial_loss_g(self.d(colorized))
        total = F.add(l_d, F.add(l_c_l1, F.scale(l_adv, self.weights.lambda_a)))
        _check_finite(total, "generator loss")
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()
        self.opt_d.zero_grad()
        return self._record(l_d.item(), l_c_l1.item(), l_adv.item(), total.item(), d_loss)

    def _despeckle_step(self, y, x) -> TraceRow:
        l_d = F.l1_loss(self.gd(y), gray(x))
        _check_finite(l_d, "despeckling loss")
        self.opt_g.zero_grad()
        l_d.backward()
        self.opt_g.step()
        v = l_d.item()
        return self._record(v, math.nan, math.nan, v, math.nan)

    def _record(self, *values) -> TraceRow:
        self.step += 1
        row = TraceRow(self.step, *values)
        self.trace.append(row)
        return row

    # -- epochs --------------------------------------------------------------
    def fit(self, pairs: Sequence[tuple[np.ndarray, np.ndarray]], max_steps: int | None = None,
            checkpoint_path=None, on_epoch: Callable[["Trainer"], None] | None = None) -> list[TraceRow]:
        """Run until ``cfg.epochs`` epochs (or ``max_steps`` total steps) are done.

        Picks up from the stored epoch/cursor, so a restored trainer resumes
        exactly where its checkpoint was taken.
        """
        if len(pairs) == 0:
            raise ValueError("empty training set")
        n = len(pairs)
        bs = self.cfg.batch_size
        while self.epoch < self.cfg.epochs:
            if self.order is None:
                self.order = self.rng.permutation(n)
                self.cursor = 0
            while self.cursor < n:
                if max_steps is not None and self.step >= max_steps:
                    return self.trace
                idx = self.order[self.cursor:self.cursor + bs]
                self.cursor += len(idx)
                y = _stack([pairs[i][0] for i in idx])
                x = _stack([pairs[i][1] for i in idx])
                self.train_step(y, x)
            self.epoch += 1
            self.order = None
            self.cursor = 0
            if checkpoint_path is not None:
                self.save(checkpoint_path)
            if on_epoch is not None:
                on_epoch(self)
        return self.trace

    # -- checkpoints -----------------------------------------------------------
    def save(self, path) -> None:
        arrays = {}
        arrays.update(persist.network_arrays(self.gd, "gd/"))
        arrays.update(persist.network_arrays(self.gc, "gc/"))
        arrays.update(persist.network_arrays(self.d, "d/"))
        arrays.update(self.opt_g.arrays("adam_g/"))
        arrays.update(self.opt_d.arrays("adam_d/"))
        trailer = {
            "kind": "checkpoint",
            "config": dataclasses.asdict(self.cfg),
            "epoch": self.epoch,
            "step": self.step,
            "cursor": self.cursor,
            "order": None if self.order is None else [int(i) for i in self.order],
            "adam_g_t": self.opt_g.t,
            "adam_d_t": self.opt_d.t,
            "rng": _jsonable(self.rng.bit_generator.state),
            "trace": [list(r.as_tuple()) for r in self.trace],
        }
        persist.save_arrays(path, arrays, trailer)

    @classmethod
    def load(cls, path, **overrides) -> "Trainer":
        """Rebuild a trainer from a checkpoint; ``overrides`` adjust its config
        (e.g. a larger ``epochs`` to continue training)."""
        arrays, meta = persist.load_arrays(path)
        if not meta or meta.get("kind") != "checkpoint":
            raise persist.FormatError(f"{path} is not a training checkpoint")
        cfg = TrainConfig(**{**meta["config"], **overrides})
        tr = cls(cfg)
        persist.load_network(tr.gd, arrays, "gd/")
        persist.load_network(tr.gc, arrays, "gc/")
        persist.load_network(tr.d, arrays, "d/")
        tr.opt_g.load(arrays, "adam_g/", meta["adam_g_t"])
        tr.opt_d.load(arrays, "adam_d/", meta["adam_d_t"])
        tr.epoch = meta["epoch"]
        tr.step = meta["step"]
        tr.cursor = meta["cursor"]
        tr.order = None if meta["order"] is None else np.asarray(meta["order"], dtype=np.int64)
        tr.rng.bit_generator.state = _from_jsonable(meta["rng"])
        tr.trace = [TraceRow(int(r[0]), *map(float, r[1:])) for r in meta["trace"]]
        return tr


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": [int(v) for v in obj.ravel()], "dtype": str(obj.dtype)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.asarray(obj["__array__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def train_gan(dataset: PairDataset | Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
              checkpoint_path=None, max_steps: int | None = None) -> Trainer:
    """Train the cascade (and discriminator) on the training split.

    Returns the trainer; its ``trace`` holds one row per step.
    """
    pairs = dataset.train if isinstance(dataset, PairDataset) else list(dataset)
    trainer = Trainer(cfg)
    trainer.fit(pairs, max_steps=max_steps, checkpoint_path=checkpoint_path)
    return trainer


def train_despeckler(pairs: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                     max_steps: int | None = None) -> Trainer:
    """Fit the despeckling network alone on its L1 loss."""
    trainer = Trainer(dataclasses.replace(cfg, stage="despeckle"))
    trainer.fit(pairs, max_steps=max_steps)
    return trainer
