"""Steady-state diffusion FEM: assemble S = K + C + (1/(2*zeta))*A and solve.

Continuous-wave only: all arithmetic is real and no frequency mass term is
assembled. The Robin condition phi + 2*zeta*kappa*dphi/dnu = q contributes
the boundary mass A/(2*zeta) to S and a lumped nodal load q/(2*zeta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshGrid

__all__ = ["OpticalMedium", "SystemMatrix", "SolverError", "assemble_system", "point_source_load"]

# Direct factorization is kept below this node count; CG above.
DIRECT_SOLVE_MAX_NODES = 50_000
CG_TOL = 1e-10
CG_MAXITER = 10_000
RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OpticalMedium:
    """Per-node optical coefficients plus the scalar physics constants."""

    mu_a: np.ndarray          # (N,) absorption, 1/mm
    mu_s: np.ndarray          # (N,) scattering, 1/mm
    g: float = 0.0            # anisotropy, in (-1, 1)
    zeta: float = 1.0         # boundary refractive-index mismatch
    c: float = 2.26e11        # speed of light in medium, mm/s
    eta: float = 1.0          # fluorescence yield
    kappa: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu_a = np.asarray(self.mu_a, dtype=float)
        mu_s = np.asarray(self.mu_s, dtype=float)
        if mu_a.shape != mu_s.shape:
            raise ValueError("mu_a and mu_s must have the same shape")
        if np.any(mu_a <= 0) or np.any(mu_s <= 0):
            raise ValueError("mu_a and mu_s must be positive everywhere")
        if not (-1.0 < self.g < 1.0):
            raise ValueError(f"anisotropy g must lie in (-1, 1), got {self.g}")
        if self.zeta <= 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        object.__setattr__(self, "mu_a", mu_a)
        object.__setattr__(self, "mu_s", mu_s)
        object.__setattr__(self, "kappa", 1.0 / (3.0 * (1.0 - self.g) * (mu_a + mu_s)))

    @classmethod
    def homogeneous(cls, n_nodes: int, mu_a: float, mu_s: float, **kw) -> "OpticalMedium":
        return cls(mu_a=np.full(n_nodes, mu_a), mu_s=np.full(n_nodes, mu_s), **kw)


class SystemMatrix:
    """Sparse SPD system matrix with a cached factorization for repeated solves."""

    def __init__(self, S: sp.csr_matrix):
        n = S.shape[0]
        asym = abs(S - S.T)
        rel_asym = asym.max() / abs(S).max() if S.nnz else 0.0
        if rel_asym > 1e-12:
            raise ValueError(f"assembled matrix is not symmetric (rel asym {rel_asym:.2e})")
        if np.any(S.diagonal() <= 0):
            raise ValueError("assembled matrix has non-positive diagonal entries")
        self.S = S
        self.n = n
        self._factor = None
        if n <= DIRECT_SOLVE_MAX_NODES:
            self._factor = spla.splu(S.tocsc())

    def solve(self, Q: np.ndarray) -> np.ndarray:
        """Solve S @ Phi = Q for a vector or multi-RHS matrix; verifies the
        relative residual of every column."""
        Q = np.asarray(Q, dtype=float)
        if not np.all(np.isfinite(Q)):
            raise ValueError("right-hand side contains non-finite entries")
        single = Q.ndim == 1
        rhs = Q[:, None] if single else Q
        if self._factor is not None:
            phi = self._factor.solve(rhs)
        else:
            M = spla.LinearOperator((self.n, self.n), matvec=lambda x: x / self.S.diagonal())
            phi = np.empty_like(rhs)
            for j in range(rhs.shape[1]):
                x, info = spla.cg(self.S, rhs[:, j], rtol=CG_TOL, maxiter=CG_MAXITER, M=M)
                if info != 0:
                    r = np.linalg.norm(self.S @ x - rhs[:, j]) / max(np.linalg.norm(rhs[:, j]), 1e-300)
                    raise SolverError(f"CG failed on column {j} (info={info})", residual=r)
                phi[:, j] = x
        qn = np.linalg.norm(rhs, axis=0)
        rn = np.linalg.norm(self.S @ phi - rhs, axis=0)
        bad = rn > RESIDUAL_TOL * np.maximum(qn, 1e-300)
        nonzero_bad = bad & (qn > 0)
        if np.any(nonzero_bad):
            worst = (rn / np.maximum(qn, 1e-300)).max()
            raise SolverError(f"solve residual {worst:.2e} exceeds {RESIDUAL_TOL}", residual=worst)
        return phi[:, 0] if single else phi


# Exact mass weights on a unit-volume tet: integral of u_k*u_i*u_j equals
# V/20 (all equal), V/60 (two equal), V/120 (all distinct).
def _mass_weight_tensor() -> np.ndarray:
    w = np.empty((4, 4, 4))
    for k in range(4):
        for i in range(4):
            for j in range(4):
                m = len({k, i, j})
                w[k, i, j] = {1: 1 / 20, 2: 1 / 60, 3: 1 / 120}[m]
    return w


_MASS_W = _mass_weight_tensor()


def assemble_system(mesh: MeshGrid, medium: OpticalMedium, mu_a: np.ndarray | None = None) -> SystemMatrix:
    """Assemble the diffusion system for the given medium.

    mu_a overrides the medium's absorption (the emission wavelength may see
    different absorption); kappa is recomputed accordingly.
    """
    if medium.mu_a.shape[0] != mesh.n_nodes:
        raise ValueError(
            f"medium has {medium.mu_a.shape[0]} nodes, mesh has {mesh.n_nodes}"
        )
    mu_a = medium.mu_a if mu_a is None else np.asarray(mu_a, dtype=float)
    if mu_a.shape[0] != mesh.n_nodes:
        raise ValueError("mu_a override length mismatch")
    kappa = 1.0 / (3.0 * (1.0 - medium.g) * (mu_a + medium.mu_s))

    tets = mesh.tets
    p = mesh.node_coords[tets]                      # (T, 4, 3)
    e = p[:, 1:] - p[:, :1]                         # (T, 3, 3)
    vol = np.linalg.det(e) / 6.0                    # (T,)
    ginv = np.linalg.inv(e)                         # (T, 3, 3): columns = grads of nodes 1..3
    grads = np.empty((tets.shape[0], 4, 3))
    grads[:, 1:] = np.transpose(ginv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)

    # Stiffness: K_ij = mean(kappa over tet nodes) * V * grad_i . grad_j
    kbar = kappa[tets].mean(axis=1)
    Kel = (kbar * vol)[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)

    # Absorption mass: C_ij = V * sum_k mu_a[k] * w[k,i,j]
    Cel = vol[:, None, None] * np.einsum("tk,kij->tij", mu_a[tets], _MASS_W)

    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    vals = (Kel + Cel).ravel()
    S = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))

    # Robin boundary mass over surface triangles: Area/6 diag, Area/12 off-diag.
    tris = mesh.surface_tris
    areas = mesh.surface_areas()
    Ael = (areas[:, None, None] / 12.0) * (np.eye(3) + 1.0)
    arows = np.repeat(tris, 3, axis=1).ravel()
    acols = np.tile(tris, (1, 3)).ravel()
    A = sp.coo_matrix((Ael.ravel(), (arows, acols)), shape=S.shape)

    full = (S + A / (2.0 * medium.zeta)).tocsr()
    full.sum_duplicates()
    return SystemMatrix(full)


def point_source_load(n_nodes: int, node: int, power: float, zeta: float) -> np.ndarray:
    """Nodal load for a laser concentrated on one mesh node: q/(2*zeta)."""
    if not 0 <= node < n_nodes:
        raise ValueError(f"source node {node} out of range")
    q = np.zeros(n_nodes)
    q[node] = power / (2.0 * zeta)
    return q
