"""Design matrix V: candidate illumination vector -> predicted Born ratios.

V is linear in the source only because the per-row denominators (excitation
powers) are frozen at the previous round's fields; re-solving them inside the
design would make the problem nonlinear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import SystemMatrix
from .forward import MeasurementSet

__all__ = ["DesignMatrix", "assemble_V", "extend_system"]


@dataclass(frozen=True)
class DesignMatrix:
    """Dense (unmasked LM) x |support| design matrix."""

    V: np.ndarray            # (R, n_support)
    support: np.ndarray      # (n_support,) mesh node index per column
    rows: np.ndarray         # (R, 2) (laser, pixel) per row
    denominators: np.ndarray  # (R,) frozen P_e per row

    def __post_init__(self):
        if not np.all(np.isfinite(self.V)):
            raise ValueError("design matrix contains non-finite entries")


def assemble_V(S_e: SystemMatrix, S_f: SystemMatrix, gamma: sp.csr_matrix,
               C: np.ndarray, Phi_E_prev: np.ndarray, eta: float,
               support: np.ndarray, ms: MeasurementSet | None = None,
               G: np.ndarray | None = None) -> DesignMatrix:
    """Assemble V via the adjoint factorization (2M solves total).

    g_k solves S^f g = Gamma_k; h_k solves S^e h = eta * (g_k * C); then
    V[(l,k), j] = h_k[support_j] / (Gamma_k . Phi^e_l). G may be passed to
    reuse cached adjoint fields. ms supplies the measurement mask and the
    frozen denominators; if omitted they are recomputed from Phi_E_prev.
    """
    C = np.asarray(C, dtype=float)
    if np.any(C < 0):
        raise ValueError("fluorescence estimate C must be nonnegative")
    support = np.asarray(support, dtype=np.int64)
    if G is None:
        G = S_f.solve(gamma.toarray().T)
    H = S_e.solve(eta * C[:, None] * G)          # (N, M)
    P_e = (gamma @ Phi_E_prev).T                 # (L, M)
    if ms is not None:
        mask = ms.mask
        P_e = ms.P_e
    else:
        mask = P_e > 1e-12 * P_e.max()
    l_idx, k_idx = np.nonzero(mask)
    d = P_e[l_idx, k_idx]
    V = H[np.ix_(support, k_idx)].T / d[:, None]
    return DesignMatrix(V=V, support=support, rows=np.stack([l_idx, k_idx], axis=1),
                        denominators=d)


def extend_system(V: np.ndarray, Y: np.ndarray, gamma_interior: float,
                  disallowed: np.ndarray | None = None):
    """Append gamma-weighted identity rows for disallowed columns, forcing
    their solution entries toward zero.

    With a support-restricted V no column is disallowed and this is the
    identity; the penalty path matters only when optimizing over all
    surface nodes.
    """
    if gamma_interior < 0:
        raise ValueError("interior penalty must be nonnegative")
    if disallowed is None:
        disallowed = np.zeros(V.shape[1], dtype=bool)
    cols = np.nonzero(disallowed)[0]
    if gamma_interior == 0.0 or cols.size == 0:
        return V, Y
    P = np.zeros((cols.size, V.shape[1]))
    P[np.arange(cols.size), cols] = gamma_interior
    return np.vstack([V, P]), np.concatenate([Y, np.zeros(cols.size)])
