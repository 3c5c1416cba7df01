"""Reconstruction quality metrics: MSE, Dice, volume ratio, SNR.

The region of interest (ROI) is the set of entries exceeding one third of
the image maximum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

__all__ = ["MetricsReport", "roi", "mse", "dice", "vr", "snr_db", "evaluate"]


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    dice: float
    vr: float
    snr_db: float
    roi_recon: int
    roi_truth: int

    def to_json(self, path=None) -> str:
        payload = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as f:
                f.write(payload + "\n")
        return payload


def roi(x: np.ndarray) -> np.ndarray:
    """Indices with intensity strictly above max(x)/3; empty for all-zero x."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite entries")
    m = x.max() if x.size else 0.0
    if m <= 0:
        return np.array([], dtype=np.int64)
    return np.nonzero(x > m / 3.0)[0]


def mse(x: np.ndarray, x_true: np.ndarray) -> float:
    x, x_true = _pair(x, x_true)
    return float(np.mean((x - x_true) ** 2))


def dice(x: np.ndarray, x_true: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); both ROIs empty counts as perfect agreement."""
    x, x_true = _pair(x, x_true)
    a, b = set(roi(x).tolist()), set(roi(x_true).tolist())
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def vr(x: np.ndarray, x_true: np.ndarray) -> float:
    x, x_true = _pair(x, x_true)
    denom = roi(x_true).size
    if denom == 0:
        return 0.0
    return roi(x).size / denom


def snr_db(x: np.ndarray, x_true: np.ndarray) -> float:
    """10*log10(sum x*^2 / sum (x - x*)^2); +inf for an exact match."""
    x, x_true = _pair(x, x_true)
    if not np.any(x_true):
        raise ValueError("SNR requires a nonzero ground truth")
    err = float(np.sum((x - x_true) ** 2))
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(np.sum(x_true**2) / err))


def evaluate(x: np.ndarray, x_true: np.ndarray) -> MetricsReport:
    return MetricsReport(
        mse=mse(x, x_true),
        dice=dice(x, x_true),
        vr=vr(x, x_true),
        snr_db=snr_db(x, x_true),
        roi_recon=int(roi(x).size),
        roi_truth=int(roi(x_true).size),
    )


def _pair(x, x_true):
    x = np.asarray(x, dtype=float).ravel()
    x_true = np.asarray(x_true, dtype=float).ravel()
    if x.shape != x_true.shape:
        raise ValueError(f"image lengths differ: {x.shape} vs {x_true.shape}")
    return x, x_true
