"""Full-reference quality measures for despeckled images: PSNR, SSIM,
UQI and despeckling gain, plus corpus-level reports.

Images are ``C×H×W`` (or ``H×W``) float arrays on a unit dynamic range.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .functional import GRAY_WEIGHTS
from .tensor import DimensionError

PEAK = 1.0
DB_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
UQI_WINDOW = 8


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse an image to one H×W plane (BT.601 luma for RGB)."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(GRAY_WEIGHTS, img, axes=([0], [0]))
    raise DimensionError(f"cannot take luminance of shape {img.shape}")


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(estimate, reference, peak: float = PEAK) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for a perfect match."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(estimate, reference)
    if err == 0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(peak * peak / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _weighted(view: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.tensordot(view, w, axes=([-2, -1], [0, 1]))


def ssim_map(estimate, reference) -> np.ndarray:
    """Local SSIM over every fully-contained 11×11 Gaussian window."""
    x, y = _pair(luminance(estimate), luminance(reference))
    k = SSIM_WINDOW
    if min(x.shape) < k:
        raise DimensionError(f"images must be at least {k}×{k}")
    w = gaussian_window()
    vx = sliding_window_view(x, (k, k))
    vy = sliding_window_view(y, (k, k))
    mx = _weighted(vx, w)
    my = _weighted(vy, w)
    sxx = _weighted(vx * vx, w) - mx * mx
    syy = _weighted(vy * vy, w) - my * my
    sxy = _weighted(vx * vy, w) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(estimate, reference) -> float:
    """Mean structural similarity (Gaussian window, sigma 1.5)."""
    return float(np.mean(ssim_map(estimate, reference)))


def uqi(estimate, reference, window: int = UQI_WINDOW) -> float:
    """Universal quality index averaged over all ``window``×``window`` blocks.

    Windows where both inputs are constant count as 1 if their means agree
    and are otherwise skipped, as are any other windows with a zero
    denominator. Returns NaN if no window qualifies.
    """
    x, y = _pair(luminance(estimate), luminance(reference))
    if min(x.shape) < window:
        raise DimensionError(f"images must be at least {window}×{window}")
    vx = sliding_window_view(x, (window, window))
    vy = sliding_window_view(y, (window, window))
    mx = vx.mean(axis=(-2, -1))
    my = vy.mean(axis=(-2, -1))
    flat_x = np.ptp(vx, axis=(-2, -1)) == 0
    flat_y = np.ptp(vy, axis=(-2, -1)) == 0
    dx = vx - mx[..., None, None]
    dy = vy - my[..., None, None]
    sxx = np.where(flat_x, 0.0, (dx * dx).mean(axis=(-2, -1)))
    syy = np.where(flat_y, 0.0, (dy * dy).mean(axis=(-2, -1)))
    sxy = np.where(flat_x | flat_y, 0.0, (dx * dy).mean(axis=(-2, -1)))
    den = (sxx + syy) * (mx * mx + my * my)
    ok = den != 0
    q = np.zeros_like(den)
    q[ok] = 4.0 * sxy[ok] * mx[ok] * my[ok] / den[ok]
    both_flat = flat_x & flat_y & (mx == my)
    q[both_flat] = 1.0
    use = ok | both_flat
    if not np.any(use):
        return float("nan")
    return float(q[use].mean())


def despeckling_gain(noisy, estimate, reference) -> float:
    """``10 log10(MSE(noisy, ref) / MSE(estimate, ref))`` in dB."""
    before = mse(noisy, reference)
    after = mse(estimate, reference)
    if before == 0:
        raise ValueError("noisy image already equals the reference; gain undefined")
    if after == 0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(before / after))


# ---------------------------------------------------------------------------
# corpus reports
# ---------------------------------------------------------------------------

CSV_HEADER = ("method", "looks", "image", "psnr", "ssim", "uqi", "dg")


@dataclass
class ImageScores:
    image: str
    psnr: float
    ssim: float
    uqi: float
    dg: float


@dataclass
class MetricsReport:
    method: str
    looks: int
    per_image: list[ImageScores] = field(default_factory=list)

    @property
    def averages(self) -> dict[str, float]:
        if not self.per_image:
            return {k: float("nan") for k in ("psnr", "ssim", "uqi", "dg")}
        return {
            k: float(np.mean([getattr(s, k) for s in self.per_image]))
            for k in ("psnr", "ssim", "uqi", "dg")
        }

    def rows(self) -> list[tuple]:
        return [(self.method, self.looks, s.image, s.psnr, s.ssim, s.uqi, s.dg)
                for s in self.per_image]


def score_image(image_id: str, noisy, estimate, reference) -> ImageScores:
    return ImageScores(
        image=image_id,
        psnr=psnr(estimate, reference),
        ssim=ssim(estimate, reference),
        uqi=uqi(estimate, reference),
        dg=despeckling_gain(noisy, estimate, reference),
    )


def evaluate_corpus(method: Callable[[np.ndarray], np.ndarray],
                    pairs: Sequence[tuple[np.ndarray, np.ndarray]], looks: int,
                    name: str = "method", ids: Sequence[str] | None = None) -> MetricsReport:
    """Score ``method(noisy)`` against the clean reference for each pair.

    ``pairs`` holds ``(noisy, clean)`` images of identical shape.
    """
    if len(pairs) == 0:
        raise ValueError("empty corpus")
    ids = list(ids) if ids is not None else [f"{i:04d}" for i in range(len(pairs))]
    report = MetricsReport(method=name, looks=looks)
    for image_id, (noisy, clean) in zip(ids, pairs):
        est = method(noisy)
        report.per_image.append(score_image(image_id, noisy, est, clean))
    return report


def reports_to_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rep in reports:
        for row in rep.rows():
            writer.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])
    return buf.getvalue()


def read_csv_reports(text: str) -> list[MetricsReport]:
    by_method: dict[tuple[str, int], MetricsReport] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["method"], int(row["looks"]))
        rep = by_method.setdefault(key, MetricsReport(method=key[0], looks=key[1]))
        rep.per_image.append(ImageScores(row["image"], float(row["psnr"]), float(row["ssim"]),
                                         float(row["uqi"]), float(row["dg"])))
    return list(by_method.values())


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned text table: one row per method, averaged metric columns."""
    looks = sorted({r.looks for r in reports})
    width = max([len("Method")] + [len(r.method) for r in reports])
    head = f"{'Method':<{width}}  {'PSNR':>7}  {'SSIM':>6}  {'UQI':>6}  {'DG':>7}"
    lines = [f"L = {', '.join(map(str, looks))}  ({len(reports[0].per_image) if reports else 0} images)",
             head, "-" * len(head)]
    for r in reports:
        a = r.averages
        lines.append(f"{r.method:<{width}}  {a['psnr']:7.2f}  {a['ssim']:6.3f}  "
                     f"{a['uqi']:6.3f}  {a['dg']:7.2f}")
    return "\n".join(lines) + "\n"
