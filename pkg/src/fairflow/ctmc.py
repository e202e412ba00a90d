"""Event-driven simulation of the flow-count Markov chain.

From state ``N`` a flow arrives on route ``i`` at rate ``nu_i`` and one
departs at rate ``mu_i Lambda_i(N)`` (only when ``N_i >= 1``).  Paths also
carry the cumulative allocation ``T_i(t) = int_0^t Lambda_i(N(s)) ds`` and
the unused capacity ``U_j(t) = C_j t - (A T(t))_j``.

Two statistically exact samplers are provided:

``"direct"``
    Gillespie's direct method: an exponential clock at the total rate and a
    categorical draw of the event.  Streams: 0 = clock, 1 = event selector.
``"time_change"``
    Each event type on each route is a unit-rate Poisson process run on its
    own internal clock (arrivals at ``nu_i t``, departures at
    ``mu_i T_i(t)``), the next-reaction form of the sample-path
    representation.  Streams: ``2 + 2i`` arrivals and ``3 + 2i`` departures
    on route ``i``.

Every stream is a Philox generator seeded with ``SeedSequence([seed,
stream])``, so runs are bit-reproducible for a given seed and method.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from . import _dual
from ._io import text_sink
from .allocator import EPS_KKT, MAX_ITERS, allocate, effective_alpha
from .exceptions import AllocationError, EventCapExceeded, HorizonTooShort
from .validation import check_state, check_vector

MAX_EVENTS = 100_000_000
METHODS = ("direct", "time_change")

EV_INIT, EV_ARRIVAL, EV_DEPARTURE, EV_END = 0, 1, 2, 3
EVENT_NAMES = ("init", "arrival", "departure", "end")

_BLOCK = 1 << 14
_CACHE_ENTRIES = 1 << 16

_DONE, _NEED_RANDOMS, _BUFFER_FULL, _CAP, _ALLOC_FAIL = 0, 1, 2, 3, 4


class Transition(NamedTuple):
    kind: str
    route: int
    rate: float


def transition_rates(model, N, *, eps_kkt=EPS_KKT) -> list[Transition]:
    """Outgoing transitions from integer state ``N`` (routes 0-based)."""
    N = check_state(N, model.n_routes, name="N", integer=True)
    out = [Transition("arrival", i, float(model.nu[i])) for i in range(model.n_routes)]
    if N.any():
        lam = allocate(model, N, eps_kkt=eps_kkt).lam
        out += [
            Transition("departure", i, float(model.mu[i] * lam[i]))
            for i in range(model.n_routes) if N[i] >= 1
        ]
    return out


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def _allocation(A, C, kappa, alpha, N, p, tol, max_iter, cache_lam, cache_ok, base, diag):
    idx = 0
    small = True
    for i in range(N.shape[0]):
        if N[i] >= base:
            small = False
            break
        idx = idx * base + N[i]
    if small and cache_ok[idx]:
        return cache_lam[idx], True
    lam, p_new, res, it, status = _dual.allocate_kernel(
        A, C, kappa, alpha, N.astype(np.float64), p, 0.0, tol, max_iter)
    diag[1] += 1.0
    if res > diag[0]:
        diag[0] = res
    if not _dual.acceptable(A, p_new, res, status, tol):
        return lam, False
    if N.sum() > 0:
        p[:] = p_new
    if small:
        cache_lam[idx] = lam
        cache_ok[idx] = True
    return lam, True


@njit(cache=True)
def _advance(A, C, lam, T, U, h):
    J, I = A.shape
    for i in range(I):
        T[i] += lam[i] * h
    for j in range(J):
        used = 0.0
        for i in range(I):
            used += A[j, i] * lam[i]
        # the allocation is feasible; clamp rounding so U stays monotone
        slack = C[j] - used
        if slack > 0.0:
            U[j] += slack * h


@njit(cache=True)
def _record(rec_t, rec_ev, rec_i, rec_N, rec_T, rec_U, fill, t, ev, i, N, T, U):
    k = fill[0]
    rec_t[k] = t
    rec_ev[k] = ev
    rec_i[k] = i
    rec_N[k] = N
    rec_T[k] = T
    rec_U[k] = U
    fill[0] = k + 1


@njit(cache=True)
def _run_direct(A, C, nu, mu, kappa, alpha, tol, max_iter, horizon, max_events,
                N, clock, T, U, p, counts, exps, unifs, pos,
                rec_t, rec_ev, rec_i, rec_N, rec_T, rec_U, fill,
                cache_lam, cache_ok, base, diag):
    I = N.shape[0]
    while True:
        t = clock[0]
        if t >= horizon:
            return _DONE
        if fill[0] >= rec_t.shape[0]:
            return _BUFFER_FULL
        if pos[0] >= exps.shape[0]:
            return _NEED_RANDOMS
        if counts[2, 0] >= max_events:
            return _CAP
        lam, ok = _allocation(A, C, kappa, alpha, N, p, tol, max_iter,
                              cache_lam, cache_ok, base, diag)
        if not ok:
            return _ALLOC_FAIL
        total = 0.0
        for i in range(I):
            total += nu[i] + mu[i] * lam[i]
        if total <= 0.0:
            _advance(A, C, lam, T, U, horizon - t)
            clock[0] = horizon
            return _DONE
        h = exps[pos[0]] / total
        u = unifs[pos[0]] * total
        pos[0] += 1
        if t + h >= horizon:
            _advance(A, C, lam, T, U, horizon - t)
            clock[0] = horizon
            return _DONE
        _advance(A, C, lam, T, U, h)
        t += h
        clock[0] = t
        chosen = -1
        acc = 0.0
        for c in range(2 * I):
            rate = nu[c] if c < I else mu[c - I] * lam[c - I]
            if rate > 0.0:
                chosen = c
                acc += rate
                if u < acc:
                    break
        if chosen < I:
            N[chosen] += 1
            counts[0, chosen] += 1
            ev = EV_ARRIVAL
            route = chosen
        else:
            route = chosen - I
            N[route] -= 1
            counts[1, route] += 1
            ev = EV_DEPARTURE
        counts[2, 0] += 1
        _record(rec_t, rec_ev, rec_i, rec_N, rec_T, rec_U, fill, t, ev, route, N, T, U)


@njit(cache=True)
def _run_time_change(A, C, nu, mu, kappa, alpha, tol, max_iter, horizon, max_events,
                     N, clock, T, U, p, counts, exps, pos, internal, next_fire,
                     rec_t, rec_ev, rec_i, rec_N, rec_T, rec_U, fill,
                     cache_lam, cache_ok, base, diag):
    I = N.shape[0]
    rates = np.empty(2 * I)
    while True:
        t = clock[0]
        if t >= horizon:
            return _DONE
        if fill[0] >= rec_t.shape[0]:
            return _BUFFER_FULL
        for c in range(2 * I):
            if pos[c] >= exps.shape[1]:
                return _NEED_RANDOMS
        if counts[2, 0] >= max_events:
            return _CAP
        lam, ok = _allocation(A, C, kappa, alpha, N, p, tol, max_iter,
                              cache_lam, cache_ok, base, diag)
        if not ok:
            return _ALLOC_FAIL
        best = np.inf
        chosen = -1
        for c in range(2 * I):
            rates[c] = nu[c] if c < I else mu[c - I] * lam[c - I]
            if rates[c] > 0.0:
                wait = (next_fire[c] - internal[c]) / rates[c]
                if wait < best:
                    best = wait
                    chosen = c
        if chosen < 0 or t + best >= horizon:
            h = horizon - t
            for c in range(2 * I):
                internal[c] += rates[c] * h
            _advance(A, C, lam, T, U, h)
            clock[0] = horizon
            return _DONE
        for c in range(2 * I):
            internal[c] += rates[c] * best
        internal[chosen] = next_fire[chosen]
        _advance(A, C, lam, T, U, best)
        t += best
        clock[0] = t
        next_fire[chosen] += exps[chosen, pos[chosen]]
        pos[chosen] += 1
        if chosen < I:
            route = chosen
            N[route] += 1
            counts[0, route] += 1
            ev = EV_ARRIVAL
        else:
            route = chosen - I
            N[route] -= 1
            counts[1, route] += 1
            ev = EV_DEPARTURE
        counts[2, 0] += 1
        _record(rec_t, rec_ev, rec_i, rec_N, rec_T, rec_U, fill, t, ev, route, N, T, U)


# ---------------------------------------------------------------- paths

@dataclass
class EventPath:
    """A simulated path, one row per recorded instant.

    Row 0 is the initial state (event ``init``); a final ``end`` row at the
    horizon closes ``T`` and ``U``.  Every other row is the state just
    after a jump.  ``route`` is 0-based and -1 on ``init``/``end`` rows.
    """

    t: np.ndarray
    N: np.ndarray
    event: np.ndarray
    route: np.ndarray
    T: np.ndarray
    U: np.ndarray
    horizon: float
    seed: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def jumps(self) -> np.ndarray:
        return (self.event == EV_ARRIVAL) | (self.event == EV_DEPARTURE)

    @property
    def jump_times(self) -> np.ndarray:
        return self.t[self.jumps]

    @property
    def n_events(self) -> int:
        return int(self.jumps.sum())

    @property
    def states(self) -> np.ndarray:
        return self.N

    def event_labels(self):
        return [(EVENT_NAMES[e], int(i)) for e, i in zip(self.event, self.route)]

    def counts(self):
        """Cumulative arrivals and departures per route at every row."""
        I = self.N.shape[1]
        onehot = np.zeros((self.t.shape[0], I), dtype=np.int64)
        rows = np.flatnonzero(self.route >= 0)
        onehot[rows, self.route[rows]] = 1
        arr = np.cumsum(onehot * (self.event == EV_ARRIVAL)[:, None], axis=0)
        dep = np.cumsum(onehot * (self.event == EV_DEPARTURE)[:, None], axis=0)
        return arr, dep

    def identity_holds(self) -> bool:
        """``N(t) = N(0) + arrivals(t) - departures(t)`` exactly at every row."""
        arr, dep = self.counts()
        return bool(np.array_equal(self.N, self.N[0] + arr - dep))

    def state_at(self, times, *, left=True) -> np.ndarray:
        """Piecewise-constant state; left limits by default."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.t, times, side="left" if left else "right") - 1
        return self.N[np.clip(idx, 0, None)]

    def columns(self):
        I, J = self.N.shape[1], self.U.shape[1]
        return ["t", "event", "i"] + [f"N_{i + 1}" for i in range(I)] + [f"U_{j + 1}" for j in range(J)]

    def to_csv(self, path):
        """Write ``t, event, i, N_1..N_I, U_1..U_J`` with 1-based routes."""
        with text_sink(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for k in range(self.t.shape[0]):
                route = self.route[k]
                writer.writerow(
                    [repr(float(self.t[k])), EVENT_NAMES[self.event[k]],
                     "" if route < 0 else str(route + 1)]
                    + [str(int(v)) for v in self.N[k]]
                    + [repr(float(v)) for v in self.U[k]]
                )


def _streams(seed, ids):
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k]))) for k in ids]


def simulate(
    model,
    N0,
    horizon,
    seed,
    *,
    method="direct",
    max_events=MAX_EVENTS,
    arrival_rates=None,
    eps_kkt=EPS_KKT,
    max_iters=MAX_ITERS,
) -> EventPath:
    """Simulate the flow-count chain on ``[0, horizon]``.

    Parameters
    ----------
    model : NetworkModel
    N0 : array_like of int
    horizon : float
    seed : int
        Nonnegative; together with ``method`` it fixes the path.
    method : {"direct", "time_change"}
    max_events : int
        Jump budget; exceeding it raises :class:`EventCapExceeded`.
    arrival_rates : array_like, optional
        Override for ``nu``.  Zeros are allowed here (simulator-only), e.g.
        to switch all arrivals off.

    Raises
    ------
    EventCapExceeded
    AllocationError
    """
    N0 = check_state(N0, model.n_routes, name="N0", integer=True).astype(np.int64)
    horizon = float(horizon)
    if not horizon >= 0 or not np.isfinite(horizon):
        raise ValueError("horizon must be finite and nonnegative")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    I, J = model.n_routes, model.n_resources
    nu = model.nu if arrival_rates is None else check_vector(arrival_rates, I, name="arrival_rates")
    A, C, mu, kappa = model.A, model.C, model.mu, model.kappa
    alpha = effective_alpha(model.alpha)

    base = max(2, min(256, int(round(_CACHE_ENTRIES ** (1.0 / I)))))
    while base**I > _CACHE_ENTRIES:
        base -= 1
    cache_lam = np.zeros((base**I, I))
    cache_ok = np.zeros(base**I, dtype=np.bool_)
    diag = np.zeros(2)

    N = N0.copy()
    clock = np.zeros(1)
    T = np.zeros(I)
    U = np.zeros(J)
    p = np.empty(J)
    p[:] = 0.0
    counts = np.zeros((3, I), dtype=np.int64)
    cap = 1024
    rec = [np.empty(cap), np.empty(cap, np.int8), np.empty(cap, np.int64),
           np.empty((cap, I), np.int64), np.empty((cap, I)), np.empty((cap, J))]
    fill = np.zeros(1, dtype=np.int64)
    _record(*rec, fill, 0.0, EV_INIT, -1, N, T, U)

    if method == "direct":
        clock_rng, select_rng = _streams(seed, (0, 1))
        exps = clock_rng.standard_exponential(_BLOCK)
        unifs = select_rng.random(_BLOCK)
        pos = np.zeros(1, dtype=np.int64)
    else:
        rngs = _streams(seed, [2 + c for c in range(2 * I)])
        # channel c < I: arrivals on route c; c >= I: departures on route c - I
        order = [2 * c for c in range(I)] + [2 * c + 1 for c in range(I)]
        rngs = [rngs[k] for k in order]
        exps = np.stack([g.standard_exponential(_BLOCK) for g in rngs])
        next_fire = exps[:, 0].copy()
        pos = np.ones(2 * I, dtype=np.int64)
        internal = np.zeros(2 * I)

    while True:
        if method == "direct":
            status = _run_direct(
                A, C, nu, mu, kappa, alpha, eps_kkt, max_iters, horizon, max_events,
                N, clock, T, U, p, counts, exps, unifs, pos, *rec, fill,
                cache_lam, cache_ok, base, diag)
        else:
            status = _run_time_change(
                A, C, nu, mu, kappa, alpha, eps_kkt, max_iters, horizon, max_events,
                N, clock, T, U, p, counts, exps, pos, internal, next_fire, *rec, fill,
                cache_lam, cache_ok, base, diag)
        if status == _DONE:
            break
        if status == _NEED_RANDOMS:
            if method == "direct":
                exps = clock_rng.standard_exponential(_BLOCK)
                unifs = select_rng.random(_BLOCK)
                pos[0] = 0
            else:
                for c in np.flatnonzero(pos >= _BLOCK):
                    exps[c] = rngs[c].standard_exponential(_BLOCK)
                    pos[c] = 0
        elif status == _BUFFER_FULL:
            cap *= 2
            rec = [np.resize(a, (cap,) + a.shape[1:]) for a in rec]
        elif status == _CAP:
            raise EventCapExceeded(f"more than {max_events} events before t={horizon:g} "
                                   f"(reached t={clock[0]:.6g})")
        else:
            raise AllocationError(f"allocation failed at N={N.tolist()} (t={clock[0]:.6g})")

    if horizon > 0:
        if fill[0] >= cap:
            cap += 1
            rec = [np.resize(a, (cap,) + a.shape[1:]) for a in rec]
        _record(*rec, fill, horizon, EV_END, -1, N, T, U)
    k = int(fill[0])
    t, ev, route, Ns, Ts, Us = (a[:k].copy() for a in rec)
    return EventPath(
        t, Ns, ev, route, Ts, Us, horizon, seed, method,
        diagnostics={"allocations": int(diag[1]), "max_kkt_residual": float(diag[0])},
    )


@dataclass
class ScaledPath:
    """``N(r t)/r`` (left limits), ``T(r t)/r`` and ``U(r t)/r`` on a grid."""

    r: float
    t: np.ndarray
    N: np.ndarray
    T: np.ndarray
    U: np.ndarray


def rescale(path: EventPath, r, grid) -> ScaledPath:
    """Law-of-large-numbers rescaling of ``path`` sampled on ``grid``.

    Raises
    ------
    HorizonTooShort
        If ``r * max(grid)`` lies beyond the simulated horizon.
    """
    r = float(r)
    if not r > 0:
        raise ValueError("scale r must be positive")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size and grid.min() < 0:
        raise ValueError("grid must be nonnegative")
    need = r * float(grid.max(initial=0.0))
    if need > path.horizon * (1 + 1e-12):
        raise HorizonTooShort(f"path ends at t={path.horizon:g}, rescaling needs t={need:g}")
    s = r * grid
    N = path.state_at(s) / r
    T = np.column_stack([np.interp(s, path.t, col) for col in path.T.T]) / r
    U = np.column_stack([np.interp(s, path.t, col) for col in path.U.T]) / r
    return ScaledPath(r, grid, N, T, U)


# ---------------------------------------------------------------- experiment

@dataclass
class FluidLimitReport:
    """Sup-norm distance between rescaled chains and the fluid path.

    ``errors[a, b]`` is the error at ``scales[a]`` with ``seeds[b]`` and
    ``component_errors[a, b]`` the per-route maxima.
    """

    scales: np.ndarray
    seeds: np.ndarray
    errors: np.ndarray
    component_errors: np.ndarray
    horizon: float
    n_events: np.ndarray
    fluid: object = None

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.errors, axis=1)

    def columns(self):
        I = self.component_errors.shape[2]
        return ["r", "seed", "sup_error"] + [f"max_err_{i + 1}" for i in range(I)]

    def to_csv(self, path):
        """One row per (r, seed) and a ``median`` row per scale."""
        with text_sink(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for a, r in enumerate(self.scales):
                for b, seed in enumerate(self.seeds):
                    writer.writerow([repr(float(r)), str(int(seed)), repr(float(self.errors[a, b]))]
                                    + [repr(float(v)) for v in self.component_errors[a, b]])
                med = np.median(self.component_errors[a], axis=0)
                writer.writerow([repr(float(r)), "median", repr(float(self.medians[a]))]
                                + [repr(float(v)) for v in med])


def _one_run(args):
    from .harness import compare_trajectories

    model, n0, r, seed, horizon, grid, fluid_samples, method, max_events, eps_kkt = args
    N0 = np.round(r * n0)
    path = simulate(model, N0, r * horizon, seed, method=method,
                    max_events=max_events, eps_kkt=eps_kkt)
    scaled = rescale(path, r, grid)
    sup, comp = compare_trajectories((grid, scaled.N), fluid_samples, grid)
    return sup, comp, path.n_events


def fluid_limit_experiment(
    model,
    n0,
    scales,
    seeds,
    horizon,
    grid=None,
    *,
    dt=None,
    method="direct",
    max_events=MAX_EVENTS,
    eps_kkt=EPS_KKT,
    n_jobs=1,
) -> FluidLimitReport:
    """Run the chain from ``round(r n0)`` for every scale and seed and
    measure ``sup_t |N(r t)/r - n(t)|`` against the fluid path from ``n0``.

    Parameters
    ----------
    scales : sequence of float
    seeds : sequence of int
    horizon : float
        Fluid time; the chain at scale ``r`` runs to ``r * horizon``.
    grid : array_like, optional
        Comparison times; 101 evenly spaced points by default.
    n_jobs : int
        Worker processes for the (scale, seed) runs.  Results do not depend
        on it.
    """
    from .fluid import integrate

    n0 = check_state(n0, model.n_routes, name="n0")
    scales = np.asarray(scales, dtype=float).ravel()
    seeds = np.asarray(seeds, dtype=np.int64).ravel()
    if scales.size == 0 or seeds.size == 0:
        raise ValueError("need at least one scale and one seed")
    horizon = float(horizon)
    grid = np.linspace(0.0, horizon, 101) if grid is None else np.asarray(grid, dtype=float)
    if horizon > 0:
        fluid = integrate(model, n0, horizon, dt, output_grid=grid, eps_kkt=eps_kkt)
        fluid_samples = (fluid.t, fluid.n)
    else:
        fluid = None
        fluid_samples = (grid, np.tile(n0, (grid.size, 1)))
    jobs = [(model, n0, r, int(s), horizon, grid, fluid_samples, method, max_events, eps_kkt)
            for r in scales for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(job) for job in jobs]
    R, S = scales.size, seeds.size
    errors = np.array([res[0] for res in results]).reshape(R, S)
    comp = np.array([res[1] for res in results]).reshape(R, S, model.n_routes)
    events = np.array([res[2] for res in results]).reshape(R, S)
    return FluidLimitReport(scales, seeds, errors, comp, horizon, events, fluid)
