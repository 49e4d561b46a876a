"""Command line for the speckle, training, translation, evaluation and gradient-check workflows.

Every subcommand reads the same flat settings (see :class:`RunConfig`).
Values come from the built-in defaults, then an optional ``key = value``
file given with ``--config``, then command-line flags; later sources win.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import persist
from .checks import run_suite
from .corpus import MANIFEST_NAME, Manifest, procedural_corpus, read_image, write_corpus, write_image
from .filters import FilterConfig, kuan_filter, lee_filter
from .metrics import evaluate_corpus, format_table, reports_to_csv
from .nets import Network, build_colorization_net, build_despeckling_net, generator_forward
from .speckle import SpeckleParams
from .tensor import NumericError
from .train import TrainConfig, Trainer, gray_image, make_pair_dataset, test_count, trace_to_csv

log = logging.getLogger("sargan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.sgw"
TRACE_NAME = "trace.csv"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


_TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))


@dataclass
class RunConfig:
    """Flat union of training, filter, speckle and I/O settings."""

    # training (mirrors TrainConfig)
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
    d_seed: int | None = None
    width: int = 64
    stage: str = "joint"
    # baselines
    window: int = 7
    # I/O
    input: str | None = None
    procedural: int | None = None
    corpus: list[str] = field(default_factory=list)
    out: str | None = None
    checkpoint: str | None = None
    resume: str | None = None
    methods: list[str] = field(default_factory=lambda: ["noisy", "lee", "kuan"])
    max_steps: int | None = None
    quick: bool = False
    # names set by a file or flag rather than left at their default
    explicit: frozenset = frozenset()

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "explicit"]

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_FIELDS})

    def filter_config(self) -> FilterConfig:
        return FilterConfig(self.window, self.looks)


_FIELD_TYPES = {
    "learning_rate": float, "lambda_a": float, "beta1": float, "beta2": float, "adam_eps": float,
    "batch_size": int, "looks": int, "epochs": int, "seed": int, "image_size": int,
    "d_steps_per_g_step": int, "d_seed": int, "width": int, "window": int, "procedural": int,
    "max_steps": int, "stage": str, "input": str, "out": str, "checkpoint": str, "resume": str,
    "corpus": list, "methods": list, "quick": bool,
}


def _coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind is list:
            if isinstance(value, str):
                return [v.strip() for v in value.split(",") if v.strip()]
            return list(value)
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(value, str) and value.strip().lower() == "none":
            return None
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    known = set(RunConfig.keys())
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        if key not in known:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


def build_config(file_values: dict, overrides: dict) -> RunConfig:
    merged = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = set(merged) - set(RunConfig.keys())
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()}, explicit=frozenset(merged))
    try:
        SpeckleParams(cfg.looks)
        cfg.train_config()
        cfg.filter_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    for key in RunConfig.keys():
        flag = "--" + key.replace("_", "-")
        if _FIELD_TYPES[key] is bool:
            p.add_argument(flag, dest=key, action="store_const", const=True, default=None)
        elif _FIELD_TYPES[key] is list:
            p.add_argument(flag, dest=key, action="append", default=None,
                           help="comma-separated or repeated")
        else:
            p.add_argument(flag, dest=key, default=None, metavar=key.upper())


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sargan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "write a speckled corpus (procedural or from --input dir)",
        "train": "train the cascade on a corpus",
        "translate": "despeckle and colorize one image",
        "evaluate": "score methods on one or more corpora",
        "gradcheck": "finite-difference check of every layer type",
    }
    for name, text in helps.items():
        _add_override_flags(sub.add_parser(name, help=text))
    return parser


def parse_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {}
    for key in RunConfig.keys():
        value = getattr(args, key)
        if value is None:
            continue
        if _FIELD_TYPES[key] is list:
            value = [item for chunk in value for item in _coerce(key, chunk)]
        overrides[key] = value
    return build_config(file_values, overrides)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _require(value, what: str):
    if value is None or value == []:
        raise ConfigError(f"missing setting: {what}")
    return value


def _out_dir(path: str) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out} exists and is not a directory")
    anchor = out
    while not anchor.exists():
        anchor = anchor.parent
    if not anchor.is_dir():
        raise ConfigError(f"cannot create {out}")
    return out


def _manifest_dir(path: str) -> Path:
    d = Path(path)
    if not (d / MANIFEST_NAME).is_file():
        raise ConfigError(f"no {MANIFEST_NAME} in {d}")
    return d


def _read_manifest(d: Path) -> Manifest:
    try:
        manifest = Manifest.read(d)
    except (OSError, ValueError) as exc:
        raise DataError(f"{d}: {exc}") from None
    if not manifest.entries:
        raise DataError(f"{d}: manifest lists no images")
    return manifest


def _load_pairs(manifest: Manifest):
    try:
        return manifest.load_pairs()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load corpus arrays: {exc}") from None


def load_generators(path) -> tuple[Network, Network]:
    """Despeckling and colorization networks stored in a training checkpoint."""
    try:
        arrays, meta = persist.load_arrays(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except persist.FormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    width = int((meta or {}).get("config", {}).get("width", 64))
    gd = build_despeckling_net(width=width)
    gc = build_colorization_net(width=width)
    try:
        persist.load_network(gd, arrays, "gd/")
        persist.load_network(gc, arrays, "gc/")
    except persist.FormatError as exc:
        raise DataError(f"checkpoint does not match the network layout: {exc}") from None
    return gd, gc


def _as_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[None]
    if img.shape[0] == 3:
        return gray_image(img)
    if img.shape[0] == 1:
        return img
    raise DataError(f"expected a 1- or 3-channel image, got shape {img.shape}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(_require(cfg.out, "out"))
    if (cfg.input is None) == (cfg.procedural is None):
        raise ConfigError("give exactly one of --input DIR or --procedural N")
    if cfg.procedural is not None:
        if cfg.procedural < 1:
            raise ConfigError("--procedural needs N >= 1")
        clean = procedural_corpus(cfg.procedural, cfg.image_size, seed=cfg.seed)
    else:
        src = Path(cfg.input)
        if not src.is_dir():
            raise ConfigError(f"--input {src} is not a directory")
        files = sorted(p for p in src.iterdir() if p.is_file())
        clean = []
        for p in files:
            try:
                img = read_image(p, cfg.image_size)
            except Exception as exc:  # Pillow raises several unrelated types
                raise DataError(f"cannot read {p}: {exc}") from None
            clean.append(np.repeat(img, 3, axis=0) if img.shape[0] == 1 else img[:3])
        if not clean:
            raise DataError(f"no images in {src}")
    # the speckle stream is kept apart from the scene generator's stream
    dataset = make_pair_dataset(clean, cfg.looks, seed=cfg.seed + 1)
    speckled = [y for y, _ in dataset.pairs]
    grays = [gray_image(x) for x in clean]
    write_corpus(out, clean, speckled, grays, cfg.looks, cfg.seed)
    print(f"wrote {len(clean)} pairs at L={cfg.looks} to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    corpus = _manifest_dir(_require(cfg.corpus, "corpus")[0])
    out = _out_dir(_require(cfg.out, "out"))
    if cfg.resume is not None and not Path(cfg.resume).is_file():
        raise ConfigError(f"--resume {cfg.resume} does not exist")
    manifest = _read_manifest(corpus)
    pairs = [(y, x) for y, x, _ in _load_pairs(manifest)]
    n_train = len(pairs) - test_count(len(pairs))
    train_pairs = pairs[:n_train]
    shapes = {y.shape for y, _ in train_pairs}
    if len(shapes) != 1:
        raise DataError(f"training images differ in size: {sorted(shapes)}")

    tcfg = cfg.train_config()
    if cfg.resume is not None:
        try:
            trainer = Trainer.load(cfg.resume, epochs=tcfg.epochs)
        except (OSError, persist.FormatError, KeyError) as exc:
            raise DataError(f"cannot resume from {cfg.resume}: {exc}") from None
    else:
        trainer = Trainer(tcfg)

    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    mark = [len(trainer.trace)]

    def report(tr: Trainer) -> None:
        rows = tr.trace[mark[0]:]
        mark[0] = len(tr.trace)
        if not rows:
            return
        avg = {k: float(np.mean([getattr(r, k) for r in rows])) for k in ("l_d", "l_c_l1", "l_c_adv", "d_loss")}
        print(f"epoch {tr.epoch:4d}  steps {tr.step:6d}  L_D {avg['l_d']:.5f}  L_C-L1 {avg['l_c_l1']:.5f}  "
              f"L_A {avg['l_c_adv']:.5f}  D {avg['d_loss']:.5f}", flush=True)

    print(f"training on {len(train_pairs)} pairs ({len(pairs) - n_train} held out)")
    try:
        trainer.fit(train_pairs, max_steps=cfg.max_steps, checkpoint_path=ckpt, on_epoch=report)
    finally:
        (out / TRACE_NAME).write_text(trace_to_csv(trainer.trace), encoding="utf-8")
    trainer.save(ckpt)
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_translate(cfg: RunConfig) -> int:
    ckpt = Path(_require(cfg.checkpoint, "checkpoint"))
    src = Path(_require(cfg.input, "input"))
    prefix = Path(_require(cfg.out, "out"))
    for p in (ckpt, src):
        if not p.is_file():
            raise ConfigError(f"{p} does not exist")
    _out_dir(str(prefix.parent))
    gd, gc = load_generators(ckpt)
    try:
        img = read_image(src)
    except Exception as exc:
        raise DataError(f"cannot read {src}: {exc}") from None
    y = _as_gray(np.asarray(img, dtype=float))
    despeckled, colorized = generator_forward(gd, gc, y[None], mode="eval")
    des = despeckled.data[0]
    col = colorized.data[0]
    if not (np.isfinite(des).all() and np.isfinite(col).all()):
        raise NumericError("network output is not finite")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    base = str(prefix)
    np.save(base + "_despeckled.npy", des)
    np.save(base + "_colorized.npy", col)
    write_image(base + "_despeckled.pgm", des)
    write_image(base + "_colorized.ppm", col)
    print(f"wrote {base}_despeckled.{{npy,pgm}} and {base}_colorized.{{npy,ppm}}")
    return EXIT_OK


def _method(name: str, cfg: RunConfig, looks: int):
    if name == "noisy":
        return lambda y: y
    if name in ("lee", "kuan"):
        flt = lee_filter if name == "lee" else kuan_filter
        fcfg = FilterConfig(cfg.window, looks)
        return lambda y: flt(y, fcfg)
    if name.startswith("cnn:"):
        gd, _ = load_generators(name[4:])
        return lambda y: np.clip(gd(y[None], mode="eval").data[0], 0.0, 1.0)
    raise ConfigError(f"unknown method {name!r}; choose from noisy, lee, kuan, cnn:CHECKPOINT")


def cmd_evaluate(cfg: RunConfig) -> int:
    dirs = [_manifest_dir(c) for c in _require(cfg.corpus, "corpus")]
    out = _out_dir(_require(cfg.out, "out"))
    methods = _require(cfg.methods, "methods")
    for m in methods:
        if m.startswith("cnn:") and not Path(m[4:]).is_file():
            raise ConfigError(f"checkpoint {m[4:]} does not exist")
        if m not in ("noisy", "lee", "kuan") and not m.startswith("cnn:"):
            raise ConfigError(f"unknown method {m!r}; choose from noisy, lee, kuan, cnn:CHECKPOINT")

    by_looks: dict[int, list] = {}
    for d in dirs:
        manifest = _read_manifest(d)
        if "looks" in cfg.explicit and manifest.looks != cfg.looks:
            continue
        ids = [e.image_id for e in manifest.entries]
        by_looks.setdefault(manifest.looks, []).extend(
            (i, (y, g)) for i, (y, _, g) in zip(ids, _load_pairs(manifest)))
    if not by_looks:
        raise DataError(f"no corpus at L={cfg.looks}")

    out.mkdir(parents=True, exist_ok=True)
    for looks, items in sorted(by_looks.items()):
        ids = [i for i, _ in items]
        pairs = [p for _, p in items]
        reports = [evaluate_corpus(_method(m, cfg, looks), pairs, looks, name=m, ids=ids) for m in methods]
        table = format_table(reports)
        (out / f"metrics_L{looks}.csv").write_text(reports_to_csv(reports), encoding="utf-8")
        (out / f"table_L{looks}.txt").write_text(table + "\n", encoding="utf-8")
        print(f"L = {looks}, {len(pairs)} images")
        print(table)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    reports = run_suite(seed=cfg.seed, full_networks=not cfg.quick)
    ok = True
    for rep in reports:
        print(rep)
        ok &= rep.passed
    print("all checks passed" if ok else "GRADIENT CHECK FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
