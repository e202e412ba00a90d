"""Invariant states of the critical fluid model and the objects built on them.

The Lyapunov function ``F``, its dissipation ``K`` along fluid paths, the
workload map ``w`` on critical resources, the lifting map ``Delta`` (the
minimum-``F`` state carrying a given workload), the gap
``H = F - F_low(w)``, the ``q``-parametrization of invariant states and
membership in the workload cone.

Subcritical models (no critical resource) are handled as the degenerate
case: workloads are empty vectors, ``Delta`` is identically 0 and the
only invariant state is the origin.  Results carry a ``degenerate`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _dual
from .allocator import EPS_KKT, MAX_ITERS, allocate, effective_alpha
from .exceptions import AllocationError, ConfigError
from .validation import check_state, check_states, check_vector

#: Cone membership tolerance on ``|w(Delta(w)) - w|`` relative to ``|w| + 1``.
CONE_TOL = 1e-6
INVARIANT_TOL = 1e-6


@dataclass(frozen=True)
class LiftResult:
    n: np.ndarray
    prices: np.ndarray
    lower_F: float
    kkt_residual: float
    iterations: int = 0
    degenerate: bool = False


@dataclass(frozen=True)
class ManifoldPoint:
    q: np.ndarray
    n: np.ndarray
    w: np.ndarray
    allocation_error: float
    degenerate: bool = False


@dataclass(frozen=True)
class InvarianceCheck:
    invariant: bool
    residual: float
    H: float
    K: float

    def __bool__(self):
        return self.invariant


def lyapunov_F(model, n) -> float:
    """``sum_i nu_i kappa_i mu_i**(alpha-1) (n_i/nu_i)**(alpha+1) / (alpha+1)``."""
    n = check_state(n, model.n_routes)
    a = model.alpha
    terms = model.nu * model.kappa * model.mu ** (a - 1.0) * (n / model.nu) ** (a + 1.0)
    return float(terms.sum() / (a + 1.0))


def dissipation_K(model, n, *, lam=None) -> float:
    """Time derivative of ``F`` along the fluid model; never positive.

    ``lam`` may carry a precomputed allocation for ``n``.
    """
    n = check_state(n, model.n_routes)
    pos = n > 0
    if not pos.any():
        return 0.0
    if lam is None:
        lam = allocate(model, n).lam
    a = model.alpha
    mu, nu, kappa = model.mu[pos], model.nu[pos], model.kappa[pos]
    terms = kappa * (mu * n[pos] / nu) ** a * (nu / mu - np.asarray(lam)[pos])
    return float(terms.sum())


def workload(model, n) -> np.ndarray:
    """Workload ``sum_i A_ji n_i / mu_i`` on each critical resource."""
    n = check_state(n, model.n_routes)
    return model.A_crit @ (n / model.mu)


def lift_residual(model, w, n, p) -> float:
    """KKT violation of a candidate ``(n, p)`` for the lift program at ``w``."""
    Ac = model.A_crit
    if Ac.shape[0] == 0:
        return float(np.max(np.abs(n), initial=0.0))
    a = effective_alpha(model.alpha)
    s = Ac.T @ p
    target = model.rho * (s / model.kappa) ** (1.0 / a)
    gap = Ac @ (n / model.mu) - w
    res = max(0.0, float(np.max(-gap)))
    res = max(res, float(np.max(np.abs(p * gap))))
    return max(res, float(np.max(np.abs(n - target))))


def lift_delta(model, w, *, eps_kkt=EPS_KKT, max_iters=MAX_ITERS, p0=None) -> LiftResult:
    """Minimum-``F`` state whose workload dominates ``w``.

    The minimizer has the invariant-state form
    ``n_i = rho_i ((A_*^T p)_i / kappa_i)**(1/alpha)`` and the prices ``p``
    are found by the same projected Newton dual iteration as the allocator.
    """
    Ac = model.A_crit
    Jc = Ac.shape[0]
    if Jc == 0:
        w = check_vector(w, 0, name="w")
        zero = np.zeros(model.n_routes)
        return LiftResult(zero, np.zeros(0), 0.0, 0.0, 0, degenerate=True)
    w = check_vector(w, Jc, name="w")
    if not np.any(w > 0):
        zero = np.zeros(model.n_routes)
        return LiftResult(zero, np.zeros(Jc), 0.0, 0.0, 0)

    a = effective_alpha(model.alpha)
    c = model.rho / model.mu * model.kappa ** (-1.0 / a)
    if p0 is None:
        # common price level whose workload first covers w
        base = Ac @ c
        p0 = np.full(Jc, float(np.max(w / base)) ** a)
    p, x, _, it, status = _dual.solve_dual(
        Ac, c, -w, 1.0 / a, -1.0, np.asarray(p0, dtype=float), eps_kkt, max_iters
    )
    n = np.maximum(-x * model.mu, 0.0)
    residual = lift_residual(model, w, n, p)
    result = LiftResult(n, p, lyapunov_F(model, n), residual, int(it))
    if residual > eps_kkt:
        scale = max(1.0, float(np.max(p)))
        if status == _dual.MAX_ITER or residual > eps_kkt * scale:
            raise AllocationError(
                f"lift did not converge: residual {residual:.3g} after {it} iterations",
                best=result, residual=residual,
            )
    return result


def lower_F(model, w) -> float:
    """Optimal value of the lift program."""
    return lift_delta(model, w).lower_F


def gap_H(model, n) -> float:
    """``F(n) - F_low(w(n))``: zero exactly on the invariant manifold."""
    n = check_state(n, model.n_routes)
    return lyapunov_F(model, n) - lift_delta(model, workload(model, n)).lower_F


def invariant_from_q(model, q) -> ManifoldPoint:
    """Invariant state ``n_i = rho_i ((A_*^T q)_i / kappa_i)**(1/alpha)``.

    ``allocation_error`` is ``max |Lambda_i(n) - rho_i|`` over the positive
    routes, which vanishes for a genuine invariant state.
    """
    Ac = model.A_crit
    q = check_vector(q, Ac.shape[0], name="q")
    a = effective_alpha(model.alpha)
    n = model.rho * ((Ac.T @ q) / model.kappa) ** (1.0 / a)
    w = Ac @ (n / model.mu)
    pos = n > 0
    err = 0.0
    if pos.any():
        lam = allocate(model, n).lam
        err = float(np.max(np.abs(lam[pos] - model.rho[pos])))
    return ManifoldPoint(q, n, w, err, degenerate=Ac.shape[0] == 0)


def is_invariant(model, n, tol=INVARIANT_TOL) -> InvarianceCheck:
    """Decide invariance by the fixed-point test ``n == Delta(w(n))``."""
    n = check_state(n, model.n_routes)
    lift = lift_delta(model, workload(model, n))
    residual = float(np.linalg.norm(n - lift.n))
    H = lyapunov_F(model, n) - lift.lower_F
    K = dissipation_K(model, n)
    return InvarianceCheck(residual <= tol, residual, H, K)


def cone_contains(model, w, tol=CONE_TOL) -> bool:
    """Membership of ``w`` in the image of the invariant manifold.

    ``Delta(w)`` is always invariant, and its workload equals ``w`` exactly
    when ``w`` lies in the cone; off the cone some constraint stays slack.
    """
    w = check_vector(w, model.A_crit.shape[0], name="w")
    lift = lift_delta(model, w)
    miss = np.linalg.norm(model.A_crit @ (lift.n / model.mu) - w)
    return bool(miss <= tol * (np.linalg.norm(w) + 1.0))


def _is_linear_network(model) -> bool:
    A = model.A
    return (
        A.shape == (2, 3)
        and np.array_equal(A, [[1, 0, 1], [0, 1, 1]])
        and np.allclose(model.C, 1.0)
        and np.allclose(model.kappa, 1.0)
        and np.allclose(model.mu, 1.0)
        and np.allclose(model.rho[0] + model.rho[2], 1.0)
        and np.allclose(model.rho[1] + model.rho[2], 1.0)
    )


def cone_closed_form_linear(rho3, w, model=None) -> bool:
    """Workload cone of the two-link linear network: ``rho3 w1 <= w2 <= w1 / rho3``.

    When ``model`` is given it must be that network with long-route load
    ``rho3``.
    """
    if model is not None:
        if not _is_linear_network(model):
            raise ConfigError("closed-form cone needs the two-resource linear network")
        if not np.isclose(model.rho[2], rho3):
            raise ConfigError(f"model has rho3={model.rho[2]:g}, not {rho3:g}")
    w1, w2 = check_vector(w, 2, name="w", nonnegative=False)
    return bool(w1 >= 0 and rho3 * w1 <= w2 <= w1 / rho3)


class WorkloadProjector(TransformerMixin, BaseEstimator):
    """Project states onto the invariant manifold via ``Delta(w(n))``.

    ``transform`` returns the projected states, ``score_samples`` the gap
    ``H`` (zero on the manifold) and ``lift`` maps workloads directly.
    """

    def __init__(self, network=None, eps_kkt=EPS_KKT):
        self.network = network
        self.eps_kkt = eps_kkt

    def fit(self, X=None, y=None):
        if self.network is None:
            raise ValueError("WorkloadProjector needs a network")
        self.network_ = self.network
        self.n_features_in_ = self.network.n_routes
        if X is not None:
            check_states(X, self.n_features_in_)
        return self

    def workload(self, X):
        check_is_fitted(self, "network_")
        X = check_states(X, self.n_features_in_)
        return (X / self.network_.mu) @ self.network_.A_crit.T

    def lift(self, W):
        check_is_fitted(self, "network_")
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return np.array([lift_delta(self.network_, w, eps_kkt=self.eps_kkt).n for w in W])

    def transform(self, X):
        return self.lift(self.workload(X))

    def score_samples(self, X):
        check_is_fitted(self, "network_")
        X = check_states(X, self.n_features_in_)
        return np.array([gap_H(self.network_, x) for x in X])
