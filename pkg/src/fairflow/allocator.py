"""Weighted alpha-fair bandwidth allocation.

For a state ``n`` the allocation maximizes

    G_n(L) = sum_{i: n_i > 0} kappa_i n_i**alpha L_i**(1 - alpha) / (1 - alpha)

(``kappa_i n_i log L_i`` when ``alpha == 1``) subject to ``A L <= C``.  The
solver works on the prices ``p``: for fixed prices the maximizer is
``L_i = n_i (kappa_i / (A^T p)_i)**(1/alpha)``, and ``p`` is driven to the
dual optimum by a projected Newton iteration (see :mod:`fairflow._dual`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _dual
from .exceptions import AllocationError
from .validation import check_state, check_states

EPS_KKT = 1e-9
MAX_ITERS = 100_000
ALPHA_ONE_TOL = 1e-12


def effective_alpha(alpha: float) -> float:
    """Snap ``alpha`` to exactly 1 inside the log-branch tolerance."""
    return 1.0 if abs(alpha - 1.0) < ALPHA_ONE_TOL else float(alpha)


@dataclass(frozen=True)
class Allocation:
    lam: np.ndarray
    prices: np.ndarray
    kkt_residual: float
    iterations: int

    def to_dict(self):
        return {
            "lambda": self.lam.tolist(),
            "prices": self.prices.tolist(),
            "residual": self.kkt_residual,
            "iterations": self.iterations,
        }


def objective(model, n, lam_plus) -> float:
    """Evaluate ``G_n`` at a bandwidth vector given on the positive routes.

    Returns ``-inf`` when ``alpha >= 1`` and a positive route gets zero
    bandwidth.
    """
    n = check_state(n, model.n_routes)
    pos = n > 0
    if not pos.any():
        raise ValueError("objective is undefined at n = 0")
    lam_plus = np.asarray(lam_plus, dtype=float).ravel()
    if lam_plus.shape[0] != pos.sum():
        raise ValueError(f"expected {pos.sum()} bandwidths for the positive routes")
    if np.any(lam_plus < 0):
        raise ValueError("bandwidths must be nonnegative")
    alpha = effective_alpha(model.alpha)
    kappa, npos = model.kappa[pos], n[pos]
    if alpha >= 1.0 and np.any(lam_plus == 0):
        return -np.inf
    if alpha == 1.0:
        return float(np.sum(kappa * npos * np.log(lam_plus)))
    return float(np.sum(kappa * npos**alpha * lam_plus ** (1.0 - alpha) / (1.0 - alpha)))


def kkt_residual(model, n, lam, p) -> float:
    """Largest violation of primal feasibility, complementary slackness and
    stationarity for the allocation program at state ``n``."""
    n = check_state(n, model.n_routes)
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    alpha = effective_alpha(model.alpha)
    slack = model.C - model.A @ lam
    res = max(0.0, float(np.max(-slack)))
    res = max(res, float(np.max(np.abs(p * slack))))
    pos = n > 0
    if pos.any():
        route_price = (model.A.T @ p)[pos]
        with np.errstate(divide="ignore"):
            marginal = model.kappa[pos] * (n[pos] / lam[pos]) ** alpha
        res = max(res, float(np.max(np.abs(marginal - route_price))))
    return res


def _solve(model, n, p0, eps_kkt, max_iters, n_floor=0.0):
    alpha = effective_alpha(model.alpha)
    warm = np.empty(0) if p0 is None else np.asarray(p0, dtype=float)
    return _dual.allocate_kernel(
        model.A, model.C, model.kappa, alpha, n, warm, n_floor, eps_kkt, max_iters
    )


def allocate(model, n, *, eps_kkt=EPS_KKT, max_iters=MAX_ITERS, p0=None) -> Allocation:
    """Solve the alpha-fair program at state ``n``.

    Parameters
    ----------
    model : NetworkModel
    n : array_like
        Nonnegative flow counts, one per route.
    eps_kkt : float
        Target for :func:`kkt_residual`.
    max_iters : int
        Newton iteration cap.
    p0 : array_like, optional
        Warm-start prices, one per resource.

    Returns
    -------
    Allocation

    Raises
    ------
    AllocationError
        If the residual target is not met.  At very large price scales the
        residual is floored by rounding; a stalled iterate is accepted when
        its residual is within ``eps_kkt`` relative to the largest route
        price.
    """
    n = check_state(n, model.n_routes)
    lam, p, res, it, status = _solve(model, n, p0, eps_kkt, max_iters)
    residual = kkt_residual(model, n, lam, p)
    out = Allocation(lam, p, residual, int(it))
    if residual > eps_kkt:
        scale = max(1.0, float(np.max(model.A.T @ p)))
        if status == _dual.MAX_ITER or residual > eps_kkt * scale:
            raise AllocationError(
                f"allocation did not converge: residual {residual:.3g} after {it} iterations",
                best=out, residual=residual,
            )
    return out


class AlphaFairAllocator(BaseEstimator):
    """Map flow-count states to alpha-fair bandwidth allocations.

    The network is a constructor parameter so the estimator can sit in a
    pipeline; ``fit`` only validates and binds it.

    Parameters
    ----------
    network : NetworkModel
    eps_kkt : float, default=1e-9
    max_iters : int, default=100000
    """

    def __init__(self, network=None, eps_kkt=EPS_KKT, max_iters=MAX_ITERS):
        self.network = network
        self.eps_kkt = eps_kkt
        self.max_iters = max_iters

    def fit(self, X=None, y=None):
        if self.network is None:
            raise ValueError("AlphaFairAllocator needs a network")
        if not self.eps_kkt > 0:
            raise ValueError("eps_kkt must be positive")
        self.network_ = self.network
        self.n_features_in_ = self.network.n_routes
        if X is not None:
            check_states(X, self.n_features_in_)
        return self

    def transform(self, X):
        """Allocation ``Lambda(n)`` for every row of ``X``."""
        check_is_fitted(self, "network_")
        X = check_states(X, self.n_features_in_)
        out = np.empty_like(X)
        p = None
        for k, row in enumerate(X):
            alloc = allocate(self.network_, row, eps_kkt=self.eps_kkt,
                             max_iters=self.max_iters, p0=p)
            out[k] = alloc.lam
            p = alloc.prices
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def prices(self, X):
        check_is_fitted(self, "network_")
        X = check_states(X, self.n_features_in_)
        return np.array([
            allocate(self.network_, row, eps_kkt=self.eps_kkt, max_iters=self.max_iters).prices
            for row in X
        ])
