"""Rendering objective and evaluation metrics.

The training objective is evaluated forward only: a weighted two-stage sum
of a pixel term (MSE), a structure term (1 - SSIM) scaled by beta_s, and a
pluggable perceptual term scaled by beta_p that defaults to zero when no
plug-in is supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

_F64 = np.float64

PSNR_CAP_DB = 99.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    beta_structure: float = 0.1
    beta_perceptual: float = 0.05
    stage_gammas: tuple[float, ...] = (0.5, 1.0)

    def __post_init__(self):
        if self.beta_structure < 0 or self.beta_perceptual < 0 or any(g < 0 for g in self.stage_gammas):
            raise ValueError("LossWeights: weights must be nonnegative")


def mse(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.shape != gt.shape:
        raise ShapeError(f"mse: shapes differ, {pred.shape} vs {gt.shape}")
    diff = pred.astype(_F64) - gt.astype(_F64)
    return float(np.mean(diff * diff))


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """PSNR in dB for unit-range images, capped at 99 dB for exact matches."""
    err = mse(pred, gt)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / err)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=_F64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def _window_means(channel: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    h, w = channel.shape
    view = np.lib.stride_tricks.sliding_window_view(channel, (k, k))
    return np.einsum("hwij,ij->hw", view, window, optimize=False)


def ssim(pred: np.ndarray, gt: np.ndarray, window_size: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged
    over valid window positions and channels.

    For images smaller than the window, the window shrinks to the largest
    odd size that fits.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"ssim: shapes differ, {pred.shape} vs {gt.shape}")
    p = pred.astype(_F64)
    g = gt.astype(_F64)
    if p.ndim == 2:
        p = p[None]
        g = g[None]
    h, w = p.shape[1:]
    k = min(window_size, h, w)
    if k % 2 == 0:
        k -= 1
    if k < 1:
        raise ShapeError(f"ssim: image {h}x{w} too small for any window")
    window = gaussian_window(k, sigma)

    scores = []
    for c in range(p.shape[0]):
        mu_p = _window_means(p[c], window)
        mu_g = _window_means(g[c], window)
        var_p = _window_means(p[c] * p[c], window) - mu_p * mu_p
        var_g = _window_means(g[c] * g[c], window) - mu_g * mu_g
        cov = _window_means(p[c] * g[c], window) - mu_p * mu_g
        num = (2.0 * mu_p * mu_g + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_p * mu_p + mu_g * mu_g + SSIM_C1) * (var_p + var_g + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def total_loss(
    stage_renders: Sequence[np.ndarray],
    gt: np.ndarray,
    weights: LossWeights = LossWeights(),
    perceptual: Callable[[np.ndarray, np.ndarray], float] | None = None,
):
    """Cumulative loss over stages plus a per-term breakdown.

    Every stage contributes gamma * (pixel + beta_s * structure +
    beta_p * perceptual); the perceptual slot is 0 without a plug-in.
    """
    if len(stage_renders) != len(weights.stage_gammas):
        raise ShapeError(
            f"total_loss: {len(stage_renders)} stage renders vs {len(weights.stage_gammas)} stage weights"
        )
    breakdown = []
    total = 0.0
    for render, gamma in zip(stage_renders, weights.stage_gammas):
        pixel = mse(render, gt)
        structure = 1.0 - ssim(render, gt)
        feature = float(perceptual(render, gt)) if perceptual is not None else 0.0
        stage = gamma * (pixel + weights.beta_structure * structure + weights.beta_perceptual * feature)
        breakdown.append({"pixel": pixel, "structure": structure, "feature": feature, "weighted": stage})
        total += stage
    return total, breakdown


def depth_metrics(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None) -> dict:
    """Mean absolute depth error plus the fraction of pixels within 2 and 10
    scene units (the millimeter convention of range-scanned datasets)."""
    pred = np.asarray(pred, dtype=_F64)
    gt = np.asarray(gt, dtype=_F64)
    if pred.shape != gt.shape:
        raise ShapeError(f"depth_metrics: shapes differ, {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    if not np.any(valid):
        raise ValueError("depth_metrics: empty validity mask")
    err = np.abs(pred - gt)[valid]
    return {
        "abs_err": float(np.mean(err)),
        "acc_2": float(np.mean(err < 2.0)),
        "acc_10": float(np.mean(err < 10.0)),
    }


def write_metrics_report(path_txt, path_jsonl, records: Sequence[dict]) -> None:
    """Flat key-value text report plus one JSON record per evaluated view."""
    with open(path_txt, "w", encoding="utf-8") as f:
        for record in records:
            for key, value in record.items():
                f.write(f"{key} {value}\n")
    with open(path_jsonl, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
