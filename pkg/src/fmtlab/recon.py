"""Sparse reconstruction of the fluorescence distribution with FISTA.

Objective: 0.5*||Y - W C||^2 + lambda*(alpha*||C||_1 + (1-alpha)/2*||C||_2^2),
minimized over nonnegative C (the nonnegativity projection can be switched
off for sign-unconstrained problems).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "ReconConfig",
    "FluorescenceImage",
    "soft_threshold",
    "prox_elastic_net",
    "lipschitz_step",
    "fista",
    "FistaReconstructor",
    "export_iteration_log",
]


@dataclass(frozen=True)
class ReconConfig:
    lam: float = 1e-4
    alpha: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-8
    nonneg: bool = True

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class FluorescenceImage:
    C: np.ndarray
    objectives: list = field(default_factory=list)   # objective per iteration
    n_iters: int = 0
    converged: bool = False


def soft_threshold(x: np.ndarray, theta: float) -> np.ndarray:
    """Elementwise shrinkage sign(x) * max(|x| - theta, 0)."""
    if theta < 0:
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def prox_elastic_net(z: np.ndarray, s: float, lam: float, alpha: float) -> np.ndarray:
    """Proximal map of s * lambda * (alpha*||.||_1 + (1-alpha)/2*||.||_2^2)."""
    if s <= 0:
        raise ValueError("step size must be positive")
    return soft_threshold(z, alpha * lam * s) / (1.0 + (1.0 - alpha) * lam * s)


def lipschitz_step(W: np.ndarray, tol: float = 1e-8, max_iters: int = 1000,
                   seed: int = 0) -> float:
    """Largest eigenvalue of W^T W by power iteration; 1/L is the FISTA step."""
    W = np.asarray(W)
    if not np.any(W):
        raise ValueError("cannot compute a Lipschitz constant for a zero matrix")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = W.T @ (W @ v)
        lam_new = np.linalg.norm(w)
        v = w / lam_new
        if abs(lam_new - lam) <= tol * lam_new:
            return lam_new
        lam = lam_new
    return lam


def _objective(W, Y, C, lam, alpha):
    r = Y - W @ C
    return 0.5 * r @ r + lam * (alpha * np.abs(C).sum() + 0.5 * (1 - alpha) * C @ C)


def fista(W: np.ndarray, Y: np.ndarray, config: ReconConfig) -> FluorescenceImage:
    """FISTA with constant step 1/eig_max(W^T W), zero initial guess, and
    best-objective iterate tracking."""
    W = np.asarray(W, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if W.shape[0] != Y.shape[0]:
        raise ValueError(f"W has {W.shape[0]} rows but Y has {Y.shape[0]} entries")
    s = 1.0 / lipschitz_step(W)
    n = W.shape[1]
    C = np.zeros(n)
    x_prev = np.zeros(n)
    p = 1.0
    best = _objective(W, Y, C, config.lam, config.alpha)
    best_C = C.copy()
    objectives = [best]
    converged = False
    k = 0
    for k in range(1, config.max_iters + 1):
        z = C + s * (W.T @ (Y - W @ C))
        x = prox_elastic_net(z, s, config.lam, config.alpha)
        p_next = (1.0 + np.sqrt(1.0 + 4.0 * p * p)) / 2.0
        C = x + ((p - 1.0) / p_next) * (x - x_prev)
        if config.nonneg:
            C = np.maximum(C, 0.0)
        if not np.all(np.isfinite(C)):
            raise RuntimeError(f"non-finite FISTA iterate at iteration {k}")
        x_prev = x
        p = p_next
        obj = _objective(W, Y, C, config.lam, config.alpha)
        objectives.append(obj)
        if obj < best:
            best, best_C = obj, C.copy()
        prev = objectives[-2]
        if abs(prev - obj) <= config.tol * max(abs(prev), 1e-300):
            converged = True
            break
    if config.nonneg:
        best_C = np.maximum(best_C, 0.0)
    return FluorescenceImage(C=best_C, objectives=objectives, n_iters=k, converged=converged)


class FistaReconstructor(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper: fit(W, y) recovers the sparse coefficient
    vector; predict(W) returns the modeled measurements."""

    def __init__(self, lam=1e-4, alpha=1.0, max_iters=2000, tol=1e-8, nonneg=True):
        self.lam = lam
        self.alpha = alpha
        self.max_iters = max_iters
        self.tol = tol
        self.nonneg = nonneg

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, ensure_2d=False, dtype=np.float64)
        cfg = ReconConfig(lam=self.lam, alpha=self.alpha, max_iters=self.max_iters,
                          tol=self.tol, nonneg=self.nonneg)
        result = fista(X, y, cfg)
        self.coef_ = result.C
        self.objective_history_ = result.objectives
        self.n_iter_ = result.n_iters
        self.converged_ = result.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_


def export_iteration_log(image: FluorescenceImage, path) -> None:
    nnz = int(np.count_nonzero(image.C))
    with open(path, "w") as f:
        f.write("iter,objective,nnz_final\n")
        for i, obj in enumerate(image.objectives):
            f.write(f"{i},{float(obj)!r},{nnz}\n")
