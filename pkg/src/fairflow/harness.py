"""Experiment orchestration: dispatch a command, write its output and a
sibling ``<out>.manifest.json`` recording version, config digest, every
parameter, wall-clock time and solver diagnostics.

Exit codes
----------
0  success
1  unexpected runtime error
3  configuration or parameter error
4  solver non-convergence
5  invariant violation
6  event cap exceeded
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import text_sink
from .allocator import EPS_KKT, allocate
from .ctmc import MAX_EVENTS, fluid_limit_experiment, simulate
from .exceptions import (
    AllocationError,
    ConfigError,
    EventCapExceeded,
    GridCoverageError,
    HorizonTooShort,
    InvariantViolation,
)
from .fluid import integrate
from .manifold import (
    CONE_TOL,
    INVARIANT_TOL,
    cone_contains,
    dissipation_K,
    gap_H,
    invariant_from_q,
    is_invariant,
    lift_delta,
)
from .network import load_config, to_config
from .validation import parse_vector

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 3
EXIT_NONCONVERGENCE = 4
EXIT_INVARIANT = 5
EXIT_EVENT_CAP = 6

COMMANDS = ("allocate", "fluid", "simulate", "fluidlimit", "manifold", "lift", "cone")
STOCHASTIC = ("simulate", "fluidlimit")


@dataclass
class ExperimentSpec:
    """One command invocation.

    ``params`` holds the command-specific options; ``eps_kkt``, ``dt`` and
    ``tol`` are the tolerance overrides (``None`` keeps the defaults).
    ``tol`` is the monotonicity slack for ``fluid`` and the membership
    tolerance for ``manifold`` and ``cone``.
    """

    command: str
    config: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    eps_kkt: float | None = None
    dt: float | None = None
    tol: float | None = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command in STOCHASTIC and self.seed is None:
            raise ConfigError(f"{self.command} needs --seed")
        if self.seed is not None and int(self.seed) < 0:
            raise ConfigError("seed must be nonnegative")
        for name in ("eps_kkt", "dt"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name.replace('_', '-')} must be positive")


@dataclass
class RunManifest:
    tool: str
    version: str
    command: str
    config_path: str
    config_sha256: str
    network: dict
    params: dict
    seed: int | None
    tolerances: dict
    output: str | None
    output_sha256: str | None
    wall_clock_seconds: float
    diagnostics: dict

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(_jsonable(asdict(self)), fh, indent=2, sort_keys=True)
            fh.write("\n")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- comparison

def _samples(path):
    if isinstance(path, tuple):
        t, X = path
    elif hasattr(path, "N"):
        t, X = path.t, path.N
    else:
        t, X = path.t, path.n
    t = np.asarray(t, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return t, X


def compare_trajectories(a, b, grid):
    """Sup over ``grid`` of the Euclidean distance between two sampled paths.

    Each path is a ``(times, values)`` pair or an object with ``t`` and
    ``n`` (or ``N``).  Values between sample times are interpolated
    linearly.

    Returns
    -------
    sup : float
    per_component : ndarray
        Largest absolute difference per coordinate.

    Raises
    ------
    GridCoverageError
        If either path does not span the grid.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    sampled = []
    for name, path in (("first", a), ("second", b)):
        t, X = _samples(path)
        if grid.size and (grid.min() < t[0] - 1e-12 or grid.max() > t[-1] + 1e-12):
            raise GridCoverageError(
                f"{name} path covers [{t[0]:g}, {t[-1]:g}], grid needs [{grid.min():g}, {grid.max():g}]")
        sampled.append(np.column_stack([np.interp(grid, t, col) for col in X.T]))
    if sampled[0].shape[1] != sampled[1].shape[1]:
        raise ValueError("paths have different dimensions")
    diff = sampled[0] - sampled[1]
    return float(np.max(np.linalg.norm(diff, axis=1), initial=0.0)), np.max(np.abs(diff), axis=0)


# ---------------------------------------------------------------- commands

def _vector(params, key, *, required=True):
    if params.get(key) is None:
        if required:
            raise ConfigError(f"--{key} is required")
        return None
    value = params[key]
    try:
        return parse_vector(value) if isinstance(value, str) else np.asarray(value, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"--{key}: {exc}") from None


def _eps(spec):
    return EPS_KKT if spec.eps_kkt is None else spec.eps_kkt


def _cmd_allocate(model, spec):
    n = _vector(spec.params, "state")
    alloc = allocate(model, n, eps_kkt=_eps(spec))
    result = {"state": n, **alloc.to_dict()}
    return "json", result, {"iterations": alloc.iterations, "kkt_residual": alloc.kkt_residual}


def _cmd_fluid(model, spec):
    n0 = _vector(spec.params, "n0")
    horizon = float(spec.params.get("horizon", 200.0))
    samples = int(spec.params.get("samples", 201))
    grid = np.linspace(0.0, horizon, samples) if horizon > 0 else None
    traj = integrate(model, n0, horizon, spec.dt, output_grid=grid,
                     eps_kkt=_eps(spec), tol_mono=spec.tol)
    diag = {
        "dt": traj.dt, "steps": traj.n_steps, "tol_mono": traj.tol_mono,
        "max_F_increase": traj.max_F_increase, "max_secant_error": traj.max_secant_error,
        "secant_bound_excess": traj.secant_bound_excess,
        "min_w_increment": traj.min_w_increment, "min_step_margin": traj.min_step_margin,
        "terminal_H": traj.terminal_gap, "terminal_distance": traj.terminal_distance,
        "crossing_times": traj.crossing_times,
    }
    return "csv", traj, diag


def _cmd_simulate(model, spec):
    N0 = _vector(spec.params, "n0")
    horizon = float(spec.params.get("horizon", 1e4))
    path = simulate(model, N0, horizon, spec.seed, eps_kkt=_eps(spec),
                    method=spec.params.get("method", "direct"),
                    max_events=int(spec.params.get("max_events", MAX_EVENTS)))
    diag = {"events": path.n_events, "method": path.method,
            "identity_exact": path.identity_holds(), **path.diagnostics}
    return "csv", path, diag


def _cmd_fluidlimit(model, spec):
    n0 = _vector(spec.params, "n0")
    scales = _vector(spec.params, "scales", required=False)
    scales = np.array([20.0, 100.0, 500.0]) if scales is None else scales
    n_seeds = int(spec.params.get("seeds", 20))
    if n_seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    horizon = float(spec.params.get("horizon", 10.0))
    samples = int(spec.params.get("samples", 101))
    grid = np.linspace(0.0, horizon, samples)
    seeds = np.arange(spec.seed, spec.seed + n_seeds)
    report = fluid_limit_experiment(
        model, n0, scales, seeds, horizon, grid, dt=spec.dt, eps_kkt=_eps(spec),
        method=spec.params.get("method", "direct"), n_jobs=int(spec.params.get("jobs", 1)),
    )
    diag = {"scales": report.scales, "medians": report.medians,
            "events": report.n_events.sum(axis=1), "seeds": report.seeds}
    return "csv", report, diag


def _cmd_manifold(model, spec):
    q = _vector(spec.params, "q")
    tol = INVARIANT_TOL if spec.tol is None else spec.tol
    point = invariant_from_q(model, q)
    check = is_invariant(model, point.n, tol)
    result = {
        "q": point.q, "n": point.n, "w": point.w, "degenerate": point.degenerate,
        "checks": {
            "allocation_error": point.allocation_error,
            "K": dissipation_K(model, point.n),
            "H": gap_H(model, point.n),
            "lift_distance": check.residual,
            "invariant": check.invariant,
        },
    }
    return "json", result, {"tolerance": tol}


def _cmd_lift(model, spec):
    w = _vector(spec.params, "w")
    lift = lift_delta(model, w, eps_kkt=_eps(spec))
    result = {"w": w, "n": lift.n, "prices": lift.prices, "lower_F": lift.lower_F,
              "residual": lift.kkt_residual, "degenerate": lift.degenerate}
    return "json", result, {"iterations": lift.iterations, "kkt_residual": lift.kkt_residual}


class _ConeGrid:
    def __init__(self, w1, w2, inside):
        self.w1, self.w2, self.inside = w1, w2, inside

    def to_csv(self, path):
        with text_sink(path) as fh:
            fh.write("w_1,w_2,inside\n")
            for a, b, c in zip(self.w1, self.w2, self.inside):
                fh.write(f"{a!r},{b!r},{int(c)}\n")


def _cmd_cone(model, spec):
    if model.critical_set.size != 2:
        raise ConfigError(f"cone needs exactly 2 critical resources, model has {model.critical_set.size}")
    G = int(spec.params.get("grid", 100))
    wmax = float(spec.params.get("wmax", 3.0))
    if G < 1 or not wmax > 0:
        raise ConfigError("--grid must be positive and --wmax positive")
    tol = CONE_TOL if spec.tol is None else spec.tol
    axis = np.linspace(0.0, wmax, G)
    w1, w2 = (m.ravel() for m in np.meshgrid(axis, axis, indexing="ij"))
    inside = np.array([cone_contains(model, (a, b), tol) for a, b in zip(w1, w2)])
    grid = _ConeGrid([float(v) for v in w1], [float(v) for v in w2], inside)
    return "csv", grid, {"points": int(inside.size), "inside": int(inside.sum()), "tolerance": tol}


_DISPATCH = {
    "allocate": _cmd_allocate,
    "fluid": _cmd_fluid,
    "simulate": _cmd_simulate,
    "fluidlimit": _cmd_fluidlimit,
    "manifold": _cmd_manifold,
    "lift": _cmd_lift,
    "cone": _cmd_cone,
}


def execute(spec: ExperimentSpec):
    """Run ``spec`` and return ``(kind, result, manifest)`` without writing
    anything; exceptions propagate."""
    spec.validate()
    config_path = Path(spec.config)
    start = time.perf_counter()
    model = load_config(config_path)
    kind, result, diag = _DISPATCH[spec.command](model, spec)
    manifest = RunManifest(
        tool="fairflow",
        version=__version__,
        command=spec.command,
        config_path=str(config_path),
        config_sha256=_sha256(config_path),
        network=to_config(model),
        params=dict(spec.params),
        seed=spec.seed,
        tolerances={"eps_kkt": _eps(spec), "dt": spec.dt, "tol": spec.tol},
        output=spec.out,
        output_sha256=None,
        wall_clock_seconds=time.perf_counter() - start,
        diagnostics=diag,
    )
    return kind, result, manifest


def _emit(kind, result, out):
    if kind == "json":
        text = json.dumps(_jsonable(result), indent=2, sort_keys=True) + "\n"
        if out is None:
            sys.stdout.write(text)
        else:
            Path(out).write_text(text)
    else:
        result.to_csv(sys.stdout if out is None else out)


def run(spec: ExperimentSpec) -> int:
    """Execute ``spec``, write the data file and its manifest, and return
    the exit code.  Errors are reported on standard error."""
    try:
        kind, result, manifest = execute(spec)
        _emit(kind, result, spec.out)
        if spec.out is not None:
            manifest.output_sha256 = _sha256(spec.out)
            manifest.write(manifest_path(spec.out))
        return EXIT_OK
    except (ConfigError, HorizonTooShort, GridCoverageError, FileNotFoundError, ValueError) as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except AllocationError as exc:
        code, message = EXIT_NONCONVERGENCE, f"solver did not converge: {exc}"
    except InvariantViolation as exc:
        code, message = EXIT_INVARIANT, f"invariant violation: {exc}"
    except EventCapExceeded as exc:
        code, message = EXIT_EVENT_CAP, f"event cap exceeded: {exc}"
    except Exception as exc:  # noqa: BLE001
        code, message = EXIT_ERROR, f"{type(exc).__name__}: {exc}"
    print(f"fairflow {spec.command}: {message}", file=sys.stderr)
    return code
