"""Sensitivity matrix W: fluorescence distribution -> Born measurements.

One adjoint solve per detector pixel (S^f is symmetric, so the adjoint is a
plain solve against the pixel's transport row); W rows then come cheap for
every laser.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import SystemMatrix
from .forward import MeasurementSet

__all__ = ["SensitivityMatrix", "adjoint_detector_fields", "assemble_W", "dump_matrix"]


@dataclass(frozen=True)
class SensitivityMatrix:
    """Dense (unmasked LM) x N sensitivity matrix with its row map."""

    W: np.ndarray        # (R, N)
    rows: np.ndarray     # (R, 2) ints, (laser, pixel) per row

    def __post_init__(self):
        if not np.all(np.isfinite(self.W)):
            raise ValueError("sensitivity matrix contains non-finite entries")
        if self.W.shape[0] != self.rows.shape[0]:
            raise ValueError("row map length mismatch")


def adjoint_detector_fields(S_f: SystemMatrix, gamma: sp.csr_matrix) -> np.ndarray:
    """G[:, k] solves S^f g = Gamma_k for every pixel k."""
    return S_f.solve(gamma.toarray().T)


def assemble_W(G: np.ndarray, Phi_E: np.ndarray, ms: MeasurementSet, eta: float) -> SensitivityMatrix:
    """W[(l,k), i] = eta * G[i,k] * Phi_E[i,l] / P_e[l,k] on unmasked rows.

    The mask comes from the measurement set so rows never divide by a
    floored denominator.
    """
    N, M = G.shape
    L = Phi_E.shape[1]
    if Phi_E.shape[0] != N or ms.Y.shape != (L, M):
        raise ValueError("shape mismatch between fields, adjoints and measurements")
    l_idx, k_idx = np.nonzero(ms.mask)
    W = eta * G[:, k_idx].T * Phi_E[:, l_idx].T / ms.P_e[l_idx, k_idx][:, None]
    return SensitivityMatrix(W=W, rows=np.stack([l_idx, k_idx], axis=1))


def dump_matrix(W: np.ndarray, path) -> None:
    """Debug dump: 16-byte header (two int64 dims) + row-major float64."""
    with open(path, "wb") as f:
        f.write(struct.pack("<qq", *W.shape))
        f.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
