"""Procedural clean RGB images, image files and corpus manifests.

The generator paints map-like scenes: a smooth color gradient background,
a few flat-colored rectangles and discs, and an optional low-contrast
sinusoidal texture.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .speckle import make_rng

MANIFEST_NAME = "manifest.tsv"


def procedural_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One 3×size×size image in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1 = rng.uniform(0.15, 0.9, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    t = 0.5 + 0.5 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) * 1.4
    t = np.clip(t, 0.0, 1.0)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.05, 1.0, size=3)
        if rng.random() < 0.5:
            x0, y0 = rng.uniform(0, 0.8, size=2)
            w, h = rng.uniform(0.15, 0.5, size=2)
            mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        else:
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            r = rng.uniform(0.08, 0.3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        img[:, mask] = color[:, None]

    if rng.random() < 0.5:
        freq = rng.uniform(2, 6)
        phase = rng.uniform(0, 2 * np.pi)
        texture = 0.06 * np.sin(2 * np.pi * freq * (xx + 0.5 * yy) + phase)
        img = img + texture[None]
    return np.clip(img, 0.0, 1.0)


def procedural_corpus(n: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    rng = make_rng(seed)
    return [procedural_image(rng, size) for _ in range(n)]


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------

def write_image(path, img: np.ndarray, bits: int = 8) -> None:
    """Write a C×H×W image in [0, 1] as binary PGM (C=1) or PPM (C=3).

    16-bit output is supported for single-channel images.
    """
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    if img.ndim == 2:
        img = img[None]
    c = img.shape[0]
    if bits == 16:
        if c != 1:
            raise ValueError("16-bit output is single-channel only")
        q = np.round(img[0] * 65535).astype(np.uint16)
        PILImage.fromarray(q).save(path)  # uint16 -> "I;16"
    elif bits == 8:
        q = np.round(img * 255).astype(np.uint8)
        pil = PILImage.fromarray(q[0]) if c == 1 else PILImage.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0)))
        pil.save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_image(path, size: int | None = None) -> np.ndarray:
    """Read any Pillow-supported file, or a raw ``.npy`` dump, as C×H×W floats."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    with PILImage.open(path) as pil:
        if size is not None:
            pil = pil.resize((size, size), PILImage.BICUBIC)
        mode = pil.mode
        arr = np.asarray(pil)
    if mode in ("I;16", "I;16B", "I"):
        return (arr.astype(float) / 65535.0)[None]
    arr = arr.astype(float) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return arr[..., :3].transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    clean: Path
    gray: Path
    speckled: Path

    @property
    def image_id(self) -> str:
        return self.clean.stem.replace("_clean", "")


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    looks: int
    seed: int

    def write(self, directory) -> Path:
        directory = Path(directory)
        lines = [f"# seed {self.seed}", f"# looks {self.looks}"]
        for e in self.entries:
            lines.append("\t".join(str(p.relative_to(directory)) for p in (e.clean, e.gray, e.speckled)))
        path = directory / MANIFEST_NAME
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, directory) -> "Manifest":
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        meta = {}
        entries = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                meta[key] = value
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"malformed manifest line: {line!r}")
            entries.append(ManifestEntry(*(directory / p for p in parts)))
        return cls(entries, int(meta.get("looks", 1)), int(meta.get("seed", 0)))

    def load_pairs(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """``(speckled, clean_rgb, clean_gray)`` arrays for every entry."""
        return [(np.load(e.speckled), np.load(e.clean), np.load(e.gray)) for e in self.entries]


def write_corpus(directory, clean_images: Sequence[np.ndarray], speckled: Sequence[np.ndarray],
                 grays: Sequence[np.ndarray], looks: int, seed: int) -> Manifest:
    """Store raw dumps plus viewable PPM/PGM files and the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (x, g, y) in enumerate(zip(clean_images, grays, speckled)):
        stem = directory / f"{i:04d}"
        paths = ManifestEntry(Path(f"{stem}_clean.npy"), Path(f"{stem}_gray.npy"), Path(f"{stem}_speckled.npy"))
        np.save(paths.clean, x)
        np.save(paths.gray, g)
        np.save(paths.speckled, y)
        write_image(f"{stem}_clean.ppm", x)
        write_image(f"{stem}_gray.pgm", g, bits=16)
        write_image(f"{stem}_speckled.pgm", y, bits=16)
        entries.append(paths)
    manifest = Manifest(entries, looks, seed)
    manifest.write(directory)
    return manifest
