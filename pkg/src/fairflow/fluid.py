"""Critical fluid model: ``dn_i/dt = nu_i - mu_i Lambda_i(n)`` while ``n_i > 0``.

Integration is explicit Euler with clamping to the nonnegative orthant.  A
component that would cross zero inside a step ends the step at the exact
crossing time (the Euler drift is constant over a step, so the crossing is
a linear root) and is then frozen at zero for the rest of the run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _dual
from ._io import text_sink
from .allocator import EPS_KKT, MAX_ITERS, allocate, effective_alpha
from .exceptions import AllocationError, InvariantViolation
from .manifold import dissipation_K, lift_delta, lyapunov_F, workload
from .validation import check_state

N_FLOOR = 1e-12
EPS_FEAS = 10 * EPS_KKT

_OK = 0
_ALLOC_FAIL = 1


def default_dt(model) -> float:
    return 1e-3 * float(np.min(1.0 / model.mu))


def _positive(n, n_floor):
    return np.where(n > n_floor, n, 0.0)


def drift(model, n, *, n_floor=N_FLOOR, lam=None) -> np.ndarray:
    """Fluid velocity at ``n``; zero on components at or below ``n_floor``."""
    n = check_state(n, model.n_routes)
    npos = _positive(n, n_floor)
    if lam is None:
        lam = allocate(model, npos).lam
    return np.where(npos > 0, model.nu - model.mu * lam, 0.0)


def feasibility_margin(model, n, *, lam=None) -> np.ndarray:
    """Capacity left after positive routes take ``Lambda_i(n)`` and empty
    routes are charged their nominal load ``rho_i``."""
    n = check_state(n, model.n_routes)
    if lam is None:
        lam = allocate(model, n).lam
    used = np.where(n > 0, lam, model.rho)
    return model.C - model.A @ used


@njit(cache=True)
def _F(n, nu, mu, kappa, alpha):
    total = 0.0
    for i in range(n.shape[0]):
        if n[i] > 0.0:
            total += nu[i] * kappa[i] * mu[i] ** (alpha - 1.0) * (n[i] / nu[i]) ** (alpha + 1.0)
    return total / (alpha + 1.0)


@njit(cache=True)
def _curvature(n, d, nu, mu, kappa, alpha):
    # d^T (Hess F)(n) d; the Hessian is diagonal
    total = 0.0
    for i in range(n.shape[0]):
        if d[i] != 0.0:
            if n[i] > 0.0:
                hii = alpha * kappa[i] * mu[i] ** (alpha - 1.0) * n[i] ** (alpha - 1.0) / nu[i] ** alpha
            elif alpha >= 1.0:
                hii = kappa[i] / nu[i] if alpha == 1.0 else 0.0
            else:
                hii = np.inf
            total += hii * d[i] * d[i]
    return total


@njit(cache=True)
def _euler(A, C, nu, mu, kappa, alpha, crit, n0, grid, dt, n_floor, tol, max_iter):
    J, I = A.shape
    M = grid.shape[0]
    rho = nu / mu
    samples = np.zeros((M, I))
    cross_t = np.full(I, np.nan)
    n = n0.copy()
    frozen = np.zeros(I, dtype=np.bool_)
    for i in range(I):
        if n[i] <= n_floor:
            n[i] = 0.0
            frozen[i] = True
    # stats: max F increase, max |secant - K|, min w increment, min margin,
    # max excess of |secant - K| over its second-order Euler bound
    stats = np.array([-np.inf, 0.0, np.inf, np.inf, -np.inf])
    steps = 0
    k = 0
    while k < M and grid[k] <= 0.0:
        samples[k] = n
        k += 1
    t = 0.0
    p = np.empty(0)
    drift = np.zeros(I)
    while k < M:
        target = grid[k]
        h = target - t
        hit = True
        if h > dt:
            h = dt
            hit = False
        lam, p, res, it, status = _dual.allocate_kernel(
            A, C, kappa, alpha, n, p, n_floor, tol, max_iter)
        if not _dual.acceptable(A, p, res, status, tol):
            return samples[:k], cross_t, stats, steps, t, _ALLOC_FAIL
        K = 0.0
        for i in range(I):
            if frozen[i]:
                drift[i] = 0.0
            else:
                drift[i] = nu[i] - mu[i] * lam[i]
                K += kappa[i] * (mu[i] * n[i] / nu[i]) ** alpha * (rho[i] - lam[i])
        for j in range(J):
            used = 0.0
            for i in range(I):
                if A[j, i] != 0.0:
                    used += A[j, i] * (rho[i] if frozen[i] else lam[i])
            if C[j] - used < stats[3]:
                stats[3] = C[j] - used
        tau = h
        for i in range(I):
            if not frozen[i] and drift[i] < 0.0:
                ti = n[i] / -drift[i]
                if ti < tau:
                    tau = ti
        if tau < h:
            h = tau
            hit = False
        F0 = _F(n, nu, mu, kappa, alpha)
        w0 = A[crit] @ (n / mu)
        n_new = n + h * drift
        for i in range(I):
            if frozen[i]:
                continue
            if drift[i] < 0.0 and n[i] / -drift[i] <= h * (1.0 + 1e-12):
                n_new[i] = 0.0
            if n_new[i] <= n_floor:
                n_new[i] = 0.0
                frozen[i] = True
                cross_t[i] = t + h
        F1 = _F(n_new, nu, mu, kappa, alpha)
        w1 = A[crit] @ (n_new / mu)
        if F1 - F0 > stats[0]:
            stats[0] = F1 - F0
        if h >= 1e-3 * dt:
            err = abs((F1 - F0) / h - K)
            if err > stats[1]:
                stats[1] = err
            q = max(_curvature(n, drift, nu, mu, kappa, alpha),
                    _curvature(n_new, drift, nu, mu, kappa, alpha))
            excess = err - 0.5 * h * q - 1e-9 * (1.0 + abs(K))
            if excess > stats[4]:
                stats[4] = excess
        for j in range(w0.shape[0]):
            if w1[j] - w0[j] < stats[2]:
                stats[2] = w1[j] - w0[j]
        n = n_new
        steps += 1
        if hit:
            t = target
            samples[k] = n
            k += 1
        else:
            t += h
    return samples, cross_t, stats, steps, t, _OK


@dataclass
class FluidTrajectory:
    """Fluid states on the output grid with per-sample diagnostics.

    Step statistics cover every internal Euler step: ``max_F_increase`` is
    the largest one-step rise of ``F``, ``max_secant_error`` the largest
    ``|(F(n_{k+1}) - F(n_k))/h - K(n_k)|``, ``min_w_increment`` the most
    negative one-step change of a critical workload and ``min_step_margin``
    the smallest capacity margin seen before a step.

    The secant error of an Euler step is ``h/2 * d^T Hess F(xi) d`` for some
    ``xi`` on the step, and every diagonal Hessian entry is monotone in
    ``n_i``, so it is bounded by the larger endpoint value.
    ``secant_bound_excess`` is the worst amount by which that bound was
    exceeded (nonpositive up to rounding).
    """

    t: np.ndarray
    n: np.ndarray
    dt: float
    F: np.ndarray = None
    H: np.ndarray = None
    K: np.ndarray = None
    w: np.ndarray = None
    feas: np.ndarray = None
    lifted: np.ndarray = None
    crossing_times: np.ndarray = None
    max_F_increase: float = float("nan")
    max_secant_error: float = float("nan")
    secant_bound_excess: float = float("nan")
    min_w_increment: float = float("nan")
    min_step_margin: float = float("nan")
    n_steps: int = 0
    tol_mono: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def terminal_gap(self) -> float:
        return float(self.H[-1])

    @property
    def terminal_distance(self) -> float:
        """``|n(T) - Delta(w(n(T)))|`` at the last sample."""
        return float(np.linalg.norm(self.n[-1] - self.lifted[-1]))

    def at(self, times):
        """Linear interpolation of the sampled states."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.column_stack([np.interp(times, self.t, col) for col in self.n.T])

    def columns(self):
        I = self.n.shape[1]
        Jc = self.w.shape[1]
        J = self.feas.shape[1]
        return (
            ["t"] + [f"n_{i + 1}" for i in range(I)] + ["F", "H", "K"]
            + [f"w_{j + 1}" for j in range(Jc)] + [f"feas_{j + 1}" for j in range(J)]
        )

    def rows(self):
        for k in range(self.t.shape[0]):
            yield [self.t[k], *self.n[k], self.F[k], self.H[k], self.K[k], *self.w[k], *self.feas[k]]

    def to_csv(self, path):
        with text_sink(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.rows():
                writer.writerow([repr(float(v)) for v in row])


def integrate(
    model,
    n0,
    horizon,
    dt=None,
    output_grid=None,
    *,
    n_floor=N_FLOOR,
    eps_kkt=EPS_KKT,
    max_iters=MAX_ITERS,
    tol_mono=None,
    check=True,
) -> FluidTrajectory:
    """Integrate the fluid model from ``n0`` up to ``horizon``.

    Parameters
    ----------
    model : NetworkModel
    n0 : array_like
        Initial state, nonnegative.
    horizon : float
    dt : float, optional
        Internal Euler step; defaults to ``1e-3 * min(1/mu)``.
    output_grid : array_like, optional
        Sample times in ``[0, horizon]``; defaults to 201 evenly spaced
        points.  The horizon is always sampled.
    tol_mono : float, optional
        Slack for the monotonicity checks; defaults to
        ``1e-6 + 10 * dt * max|K|``.
    check : bool
        Raise :class:`InvariantViolation` if ``H`` increases by more than
        ``tol_mono`` between samples.

    Raises
    ------
    AllocationError
        If the allocator fails inside the run.
    InvariantViolation
    """
    n0 = check_state(n0, model.n_routes, name="n0")
    horizon = float(horizon)
    if not horizon >= 0:
        raise ValueError("horizon must be nonnegative")
    dt = default_dt(model) if dt is None else float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if output_grid is None:
        grid = np.linspace(0.0, horizon, 201) if horizon > 0 else np.zeros(1)
    else:
        grid = np.asarray(output_grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("output_grid must be strictly increasing")
        if grid[0] < 0 or grid[-1] > horizon * (1 + 1e-12):
            raise ValueError("output_grid must lie inside [0, horizon]")
        if grid[-1] < horizon:
            grid = np.append(grid, horizon)

    alpha = effective_alpha(model.alpha)
    samples, cross_t, stats, steps, t_end, status = _euler(
        model.A, model.C, model.nu, model.mu, model.kappa, alpha,
        model.critical_set, n0, grid, dt, n_floor, eps_kkt, max_iters,
    )
    if status != _OK:
        raise AllocationError(f"allocator failed during fluid integration at t={t_end:.6g}")

    traj = FluidTrajectory(grid, samples, dt, crossing_times=cross_t, n_steps=int(steps))
    traj.max_F_increase = float(stats[0]) if steps else 0.0
    traj.max_secant_error = float(stats[1])
    traj.secant_bound_excess = float(stats[4]) if steps else 0.0
    traj.min_w_increment = float(stats[2]) if steps and model.critical_set.size else 0.0
    traj.min_step_margin = float(stats[3]) if steps else float("inf")
    _diagnose(model, traj, eps_kkt)

    if tol_mono is None:
        tol_mono = 1e-6 + 10 * dt * float(np.max(np.abs(traj.K), initial=0.0))
    traj.tol_mono = float(tol_mono)
    if check:
        rise = np.diff(traj.H)
        if rise.size and rise.max() > tol_mono:
            k = int(np.argmax(rise))
            raise InvariantViolation(
                f"H increased by {rise[k]:.3g} between t={grid[k]:.6g} and t={grid[k + 1]:.6g} "
                f"(tolerance {tol_mono:.3g})"
            )
    return traj


def _diagnose(model, traj, eps_kkt):
    M = traj.t.shape[0]
    Jc = model.critical_set.size
    traj.F = np.empty(M)
    traj.H = np.empty(M)
    traj.K = np.empty(M)
    traj.w = np.empty((M, Jc))
    traj.feas = np.empty((M, model.n_resources))
    traj.lifted = np.empty_like(traj.n)
    p = None
    lift_p = None
    for k, n in enumerate(traj.n):
        alloc = allocate(model, n, eps_kkt=eps_kkt, p0=p)
        p = alloc.prices
        traj.F[k] = lyapunov_F(model, n)
        traj.K[k] = dissipation_K(model, n, lam=alloc.lam)
        traj.w[k] = workload(model, n)
        lift = lift_delta(model, traj.w[k], eps_kkt=eps_kkt,
                          p0=lift_p if lift_p is not None and np.any(lift_p > 0) else None)
        lift_p = lift.prices
        traj.lifted[k] = lift.n
        traj.H[k] = traj.F[k] - lift.lower_F
        traj.feas[k] = feasibility_margin(model, n, lam=alloc.lam)
