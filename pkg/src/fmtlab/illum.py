"""Illumination pattern design: reweighted-l1 over box-constrained cyclic
coordinate descent, plus splitting the designed pattern into per-laser
sources."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "IlluminationPattern",
    "ReweightConfig",
    "ccd_solve",
    "reweighted_l1",
    "split_pattern",
    "PatternDesigner",
    "export_pattern_csv",
]

log = logging.getLogger(__name__)

# Incremental residual is refreshed from scratch this often to bound drift.
RESIDUAL_REFRESH_SWEEPS = 50


@dataclass
class IlluminationPattern:
    """Nonnegative node-indexed laser power vector with its constraints."""

    sigma: np.ndarray            # (N,) full-mesh power vector
    support: np.ndarray          # node indices allowed to carry power
    p_max: float
    L_max: int | None = None
    warn_all_zero: bool = False

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if np.any(sigma < -1e-15) or np.any(sigma > self.p_max * (1 + 1e-12)):
            raise ValueError("pattern violates the box constraint [0, p_max]")
        outside = np.ones(sigma.size, dtype=bool)
        outside[self.support] = False
        if np.any(sigma[outside] != 0):
            raise ValueError("pattern has power outside the allowed support")
        self.sigma = np.clip(sigma, 0.0, self.p_max)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.sigma))

    def nodes(self) -> np.ndarray:
        return np.nonzero(self.sigma)[0]


@dataclass(frozen=True)
class ReweightConfig:
    mu: float = 1.5e-8
    epsilon: float = 0.01       # reweight stabilizer, ~0.01 * p_max
    outer_iters: int = 10
    sweeps: int = 200
    tol: float = 1e-6
    p_max: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def ccd_solve(V: np.ndarray, Y: np.ndarray, mu: float, h: np.ndarray, p_max: float,
              sigma0: np.ndarray, max_sweeps: int = 200, tol: float = 1e-6) -> np.ndarray:
    """Cyclic coordinate descent for 0.5*||Y - V s||^2 + mu*||diag(h) s||_1
    subject to 0 <= s <= p_max.

    The coordinate update soft-thresholds the partial-residual correlation
    and clamps to the box; zero-norm columns stay fixed at 0. Stops when the
    largest coordinate change in a sweep falls below tol * p_max.
    """
    V = np.asarray(V, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    sigma = np.clip(np.asarray(sigma0, dtype=float).copy(), 0.0, p_max)
    col_sq = np.einsum("ij,ij->j", V, V)
    active = col_sq > 0
    sigma[~active] = 0.0
    r = Y - V @ sigma
    n = V.shape[1]
    for sweep in range(max_sweeps):
        if sweep and sweep % RESIDUAL_REFRESH_SWEEPS == 0:
            r = Y - V @ sigma
        max_change = 0.0
        for j in range(n):
            if not active[j]:
                continue
            old = sigma[j]
            rho = V[:, j] @ r + col_sq[j] * old
            shrunk = np.sign(rho) * max(abs(rho) - mu * h[j], 0.0)
            new = min(max(shrunk / col_sq[j], 0.0), p_max)
            if new != old:
                r += V[:, j] * (old - new)
                sigma[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol * p_max:
            break
    return sigma


def reweighted_l1(V: np.ndarray, Y: np.ndarray, config: ReweightConfig,
                  sigma_init: np.ndarray, support: np.ndarray,
                  n_nodes: int | None = None) -> IlluminationPattern:
    """Alternate CCD solves with weights h_i = 1/(|sigma_i| + epsilon).

    sigma_init and the returned vector live in support coordinates unless
    n_nodes is given, in which case the pattern is scattered back onto the
    full mesh."""
    h = np.ones(V.shape[1])
    sigma_prev = np.clip(np.asarray(sigma_init, dtype=float), 0.0, config.p_max)
    sigma = sigma_prev
    warn = False
    for k in range(config.outer_iters):
        sigma = ccd_solve(V, Y, config.mu, h, config.p_max, sigma_prev,
                          max_sweeps=config.sweeps, tol=config.tol)
        if k == 0 and not np.any(sigma):
            log.warning("reweighted-l1 collapsed to the zero pattern: mu too large")
            warn = True
            break
        change = np.linalg.norm(sigma - sigma_prev) / max(np.linalg.norm(sigma_prev), 1e-12)
        sigma_prev = sigma
        if change < config.tol:
            break
        h = 1.0 / (np.abs(sigma) + config.epsilon)
    support = np.asarray(support, dtype=np.int64)
    if n_nodes is None:
        full = sigma
        sup = np.arange(sigma.size)
    else:
        full = np.zeros(n_nodes)
        full[support] = sigma
        sup = support
    return IlluminationPattern(sigma=full, support=sup, p_max=config.p_max,
                               warn_all_zero=warn)


def split_pattern(pattern: IlluminationPattern) -> list[np.ndarray]:
    """One single-nonzero source vector per laser; their sum is the pattern."""
    nodes = pattern.nodes()
    if nodes.size == 0:
        raise ValueError("cannot split an empty illumination pattern")
    sources = []
    for node in nodes:
        q = np.zeros(pattern.sigma.size)
        q[node] = pattern.sigma[node]
        sources.append(q)
    return sources


class PatternDesigner(BaseEstimator):
    """sklearn-style wrapper around reweighted-l1: fit(V, y) designs the
    pattern over V's columns; coef_ holds the support-space solution."""

    def __init__(self, mu=1.5e-8, epsilon=0.01, outer_iters=10, sweeps=200,
                 tol=1e-6, p_max=1.0):
        self.mu = mu
        self.epsilon = epsilon
        self.outer_iters = outer_iters
        self.sweeps = sweeps
        self.tol = tol
        self.p_max = p_max

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, ensure_2d=False, dtype=np.float64)
        cfg = ReweightConfig(mu=self.mu, epsilon=self.epsilon, outer_iters=self.outer_iters,
                             sweeps=self.sweeps, tol=self.tol, p_max=self.p_max)
        pattern = reweighted_l1(X, y, cfg, np.zeros(X.shape[1]), np.arange(X.shape[1]))
        self.coef_ = pattern.sigma
        self.pattern_ = pattern
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_


def export_pattern_csv(pattern: IlluminationPattern, node_coords: np.ndarray, path) -> None:
    with open(path, "w") as f:
        f.write("node_id,x,y,z,power\n")
        for node in pattern.nodes():
            x, y, z = (float(v) for v in node_coords[node])
            f.write(f"{node},{x!r},{y!r},{z!r},{float(pattern.sigma[node])!r}\n")
