"""Free-space transport to the detector plane and Born-ratio synthesis.

The transport kernel is a simplified Lambertian inverse-square law from the
top-surface nodes to the pixel centers; this stands in for a full camera
model and is the main fidelity gap versus real hardware.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import SystemMatrix
from .mesh import MeshGrid

__all__ = [
    "DetectorPlane",
    "MeasurementSet",
    "build_gamma",
    "excitation_fields",
    "emission_source",
    "born_measurements",
    "add_noise",
    "export_measurements_csv",
]

log = logging.getLogger(__name__)

# Denominator floor for Born ratios, relative to max excitation power.
FLOOR_REL = 1e-12


@dataclass(frozen=True)
class DetectorPlane:
    """Pixel grid hovering above the phantom's top face."""

    rows: int
    cols: int
    pitch: float           # mm
    height: float          # mm above the top face
    center: tuple[float, float]  # (x, y) of the array center, mm

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("detector grid must have positive dimensions")
        if self.pitch <= 0:
            raise ValueError("pixel pitch must be positive")
        if self.height <= 0:
            raise ValueError("detector plane must sit strictly above the phantom")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    def pixel_centers(self, top_z: float) -> np.ndarray:
        """(M, 3) pixel center positions, row-major."""
        xs = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.pitch + self.center[0]
        ys = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.pitch + self.center[1]
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        z = np.full(gx.size, top_z + self.height)
        return np.stack([gx.ravel(), gy.ravel(), z], axis=1)


@dataclass
class MeasurementSet:
    """Born ratios plus the raw powers they came from, one row per laser."""

    Y: np.ndarray       # (L, M)
    P_e: np.ndarray     # (L, M)
    P_f: np.ndarray     # (L, M)
    mask: np.ndarray    # (L, M) bool, True = usable measurement
    noise_seed: int | None = None

    def stacked(self):
        """Unmasked Y flattened laser-major, with the (l, k) row map."""
        l_idx, k_idx = np.nonzero(self.mask)
        return self.Y[self.mask], np.stack([l_idx, k_idx], axis=1)


def build_gamma(mesh: MeshGrid, det: DetectorPlane, cone_half_angle_deg: float = 90.0) -> sp.csr_matrix:
    """Sparse M x N transport matrix from top-surface nodes to pixels.

    Gamma[k, i] = a_i * cos(theta) / (pi * d^2) for nodes inside the pixel's
    acceptance cone; a_i is the node's share of the top-surface area.
    """
    if mesh.illum_allowed is None:
        raise ValueError("mesh must be classified before building Gamma")
    top_z = mesh.dims[2]
    pix = det.pixel_centers(top_z)
    if np.any(pix[:, 2] <= top_z):
        raise ValueError("detector plane must be strictly above the top face")
    share = mesh.node_area_share(face="top")
    nodes = np.nonzero(share > 0)[0]
    dvec = pix[:, None, :] - mesh.node_coords[None, nodes, :]   # (M, n, 3)
    d = np.linalg.norm(dvec, axis=2)
    cos = dvec[:, :, 2] / d
    vals = share[nodes][None, :] * cos / (np.pi * d**2)
    vals[cos < np.cos(np.deg2rad(cone_half_angle_deg)) - 1e-15] = 0.0
    gamma = sp.lil_matrix((det.n_pixels, mesh.n_nodes))
    gamma[:, nodes] = vals
    gamma = gamma.tocsr()
    empty = int(np.sum(np.diff(gamma.indptr) == 0))
    if empty:
        log.warning("%d of %d detector pixels see no surface node", empty, det.n_pixels)
    return gamma


def excitation_fields(S_e: SystemMatrix, sources: np.ndarray) -> np.ndarray:
    """Solve the excitation system for all source columns at once."""
    return S_e.solve(sources)


def emission_source(C: np.ndarray, phi_e: np.ndarray, eta: float) -> np.ndarray:
    """Fluorescence re-emission load: eta * C (elementwise) phi_e."""
    C = np.asarray(C, dtype=float)
    if np.any(C < 0):
        raise ValueError("fluorescence distribution C must be nonnegative")
    return eta * C * phi_e if phi_e.ndim == 1 else eta * C[:, None] * phi_e


def born_measurements(gamma: sp.csr_matrix, Phi_E: np.ndarray, Phi_F: np.ndarray,
                      floor_rel: float = FLOOR_REL) -> MeasurementSet:
    """Normalized Born ratios Y = P_f / P_e with denominator flooring.

    Entries with excitation power at or below floor_rel * max(P_e) are
    masked out of downstream fitting.
    """
    P_e = (gamma @ Phi_E).T    # (L, M)
    P_f = (gamma @ Phi_F).T
    floor = floor_rel * P_e.max()
    mask = P_e > floor
    if not np.any(mask):
        raise RuntimeError("all measurements masked: detector geometry misconfigured")
    Y = np.zeros_like(P_e)
    Y[mask] = P_f[mask] / P_e[mask]
    if not np.all(np.isfinite(Y)):
        raise RuntimeError("non-finite Born ratio encountered")
    return MeasurementSet(Y=Y, P_e=P_e, P_f=P_f, mask=mask)


def add_noise(ms: MeasurementSet, model: str = "none", sigma_rel: float = 0.0,
              seed: int | None = None) -> MeasurementSet:
    """Multiplicative Gaussian noise Y * (1 + sigma_rel * xi), deterministic
    under seed. P_f is rescaled so Y = P_f / P_e still holds."""
    if model not in ("none", "gaussian"):
        raise ValueError(f"unknown noise model {model!r}")
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be nonnegative")
    if model == "none" or sigma_rel == 0.0:
        return MeasurementSet(Y=ms.Y.copy(), P_e=ms.P_e.copy(), P_f=ms.P_f.copy(),
                              mask=ms.mask.copy(), noise_seed=seed)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(ms.Y.shape)
    Y = ms.Y * (1.0 + sigma_rel * xi)
    return MeasurementSet(Y=Y, P_e=ms.P_e.copy(), P_f=Y * ms.P_e,
                          mask=ms.mask.copy(), noise_seed=seed)


def export_measurements_csv(ms: MeasurementSet, path) -> None:
    with open(path, "w") as f:
        f.write("laser,pixel,Y,P_e,P_f,masked\n")
        L, M = ms.Y.shape
        for l in range(L):
            for k in range(M):
                f.write(f"{l},{k},{float(ms.Y[l, k])!r},{float(ms.P_e[l, k])!r},"
                        f"{float(ms.P_f[l, k])!r},{int(not ms.mask[l, k])}\n")
