"""Network topology, traffic parameters and the derived load structure."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError

#: Relative tolerance for declaring a resource critical.
EPS_CRIT = 1e-9
#: Singular values below this fraction of the largest count as zero.
RANK_RTOL = 1e-10


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Topology:
    """Incidence matrix ``A`` (resources x routes) and capacities ``C``."""

    incidence: np.ndarray
    capacities: np.ndarray
    resource_names: tuple = ()
    route_names: tuple = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.incidence))
        object.__setattr__(self, "incidence", _frozen(A, dtype=float))
        object.__setattr__(self, "capacities", _frozen(np.ravel(self.capacities)))
        J, I = self.incidence.shape
        if not self.resource_names:
            object.__setattr__(self, "resource_names", tuple(f"r{j + 1}" for j in range(J)))
        if not self.route_names:
            object.__setattr__(self, "route_names", tuple(f"route{i + 1}" for i in range(I)))

    @property
    def n_resources(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_routes(self) -> int:
        return self.incidence.shape[1]


@dataclass(frozen=True)
class TrafficParams:
    arrival_rates: np.ndarray
    service_rates: np.ndarray
    weights: np.ndarray
    alpha: float

    def __post_init__(self):
        for name in ("arrival_rates", "service_rates", "weights"):
            object.__setattr__(self, name, _frozen(np.ravel(getattr(self, name))))
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass
class ValidationReport:
    """Violated invariants, one ``(code, message)`` pair each."""

    issues: list = field(default_factory=list)

    def add(self, code, message):
        self.issues.append((code, message))

    @property
    def codes(self):
        return [code for code, _ in self.issues]

    @property
    def valid(self) -> bool:
        return not self.issues

    def __bool__(self):
        return self.valid

    def __str__(self):
        if self.valid:
            return "valid"
        return "; ".join(f"{code}: {msg}" for code, msg in self.issues)


def validate(topology: Topology) -> ValidationReport:
    """Check the structural assumptions on a topology.

    Reports non-binary incidence entries, routes that use no resource,
    rank deficiency of ``A`` and non-positive or non-finite capacities.
    """
    report = ValidationReport()
    A = topology.incidence
    C = topology.capacities
    J, I = A.shape
    if J == 0 or I == 0:
        report.add("empty network", "need at least one resource and one route")
        return report
    if not np.all((A == 0) | (A == 1)):
        report.add("non-binary", "incidence entries must be 0 or 1")
    for i in np.flatnonzero(~A.any(axis=0)):
        report.add("empty route", f"route {topology.route_names[i]} uses no resource")
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > RANK_RTOL * sv.max())) if sv.size and sv.max() > 0 else 0
    if rank < J:
        report.add("rank deficient", f"incidence has rank {rank} < {J} resources")
    if C.shape != (J,):
        report.add("capacity shape", f"expected {J} capacities, got {C.shape[0]}")
    else:
        for j in np.flatnonzero(~(np.isfinite(C) & (C > 0))):
            report.add(
                "capacity",
                f"capacity of {topology.resource_names[j]} must be positive and finite",
            )
    return report


def _check_traffic(traffic: TrafficParams, n_routes: int):
    fields = {
        "nu": traffic.arrival_rates,
        "mu": traffic.service_rates,
        "kappa": traffic.weights,
    }
    for name, values in fields.items():
        if values.shape != (n_routes,):
            raise ConfigError(f"{name}: expected {n_routes} values, got {values.shape[0]}")
        bad = np.flatnonzero(~(np.isfinite(values) & (values > 0)))
        if bad.size:
            raise ConfigError(f"routes[{bad[0]}].{name} must be positive and finite")
    if not (np.isfinite(traffic.alpha) and traffic.alpha > 0):
        raise ConfigError("alpha must be positive and finite")


class CriticalSet(NamedTuple):
    indices: np.ndarray
    subcritical: bool


class NetworkModel:
    """Immutable network: topology, traffic, loads ``rho`` and critical set.

    Construction rejects any model whose nominal load exceeds a capacity.
    """

    def __init__(self, topology: Topology, traffic: TrafficParams):
        report = validate(topology)
        if not report.valid:
            raise ConfigError(str(report))
        _check_traffic(traffic, topology.n_routes)
        self._topology = topology
        self._traffic = traffic
        self._loads = _frozen(traffic.arrival_rates / traffic.service_rates)
        offered = topology.incidence @ self._loads
        C = topology.capacities
        over = np.flatnonzero(offered > C * (1 + EPS_CRIT))
        if over.size:
            j = over[0]
            raise ConfigError(
                f"load {offered[j]:.6g} on resource {topology.resource_names[j]} "
                f"exceeds capacity {C[j]:.6g}"
            )
        crit = np.flatnonzero(np.abs(offered - C) <= EPS_CRIT * C)
        self._critical = _frozen(crit, dtype=np.int64)

    @classmethod
    def from_arrays(cls, A, C, nu, mu, kappa=None, alpha=1.0, **names):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if kappa is None:
            kappa = np.ones(A.shape[1])
        topology = Topology(A, C, **names)
        return cls(topology, TrafficParams(nu, mu, kappa, alpha))

    def with_alpha(self, alpha):
        t = self._traffic
        return NetworkModel(
            self._topology,
            TrafficParams(t.arrival_rates, t.service_rates, t.weights, alpha),
        )

    topology = property(lambda self: self._topology)
    traffic = property(lambda self: self._traffic)
    A = property(lambda self: self._topology.incidence)
    C = property(lambda self: self._topology.capacities)
    nu = property(lambda self: self._traffic.arrival_rates)
    mu = property(lambda self: self._traffic.service_rates)
    kappa = property(lambda self: self._traffic.weights)
    alpha = property(lambda self: self._traffic.alpha)
    rho = property(lambda self: self._loads)
    critical_set = property(lambda self: self._critical)

    @property
    def n_routes(self) -> int:
        return self._topology.n_routes

    @property
    def n_resources(self) -> int:
        return self._topology.n_resources

    @property
    def subcritical(self) -> bool:
        return self._critical.size == 0

    @property
    def A_crit(self):
        """Rows of ``A`` indexed by the critical set."""
        return self.A[self._critical]

    def __repr__(self):
        return (
            f"NetworkModel(J={self.n_resources}, I={self.n_routes}, "
            f"alpha={self.alpha:g}, critical={self._critical.tolist()})"
        )


def load_ratios(model: NetworkModel) -> np.ndarray:
    """Traffic intensity ``(A rho)_j / C_j`` at every resource."""
    return model.A @ model.rho / model.C


def critical_resources(model: NetworkModel) -> CriticalSet:
    offered = model.A @ model.rho
    idx = np.flatnonzero(np.abs(offered - model.C) <= EPS_CRIT * model.C)
    return CriticalSet(idx, idx.size == 0)


def parse_config(cfg: dict) -> NetworkModel:
    """Build a model from the JSON config structure.

    Route order fixes route indexing and resource order fixes resource
    indexing.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    try:
        resources = cfg["resources"]
        routes = cfg["routes"]
        alpha = cfg["alpha"]
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]!r}") from None
    if not resources:
        raise ConfigError("resources: at least one resource required")
    if not routes:
        raise ConfigError("routes: at least one route required")

    names, caps = [], []
    for j, res in enumerate(resources):
        try:
            names.append(str(res["name"]))
            cap = float(res["capacity"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"resources[{j}]: needs 'name' and numeric 'capacity'") from None
        if not (np.isfinite(cap) and cap > 0):
            raise ConfigError(f"resources[{j}].capacity must be positive and finite, got {cap}")
        caps.append(cap)
    if len(set(names)) != len(names):
        raise ConfigError("resources: duplicate resource names")
    index = {name: j for j, name in enumerate(names)}

    A = np.zeros((len(resources), len(routes)))
    params = {"nu": [], "mu": [], "kappa": []}
    route_names = []
    for i, route in enumerate(routes):
        if not isinstance(route, dict):
            raise ConfigError(f"routes[{i}] must be an object")
        route_names.append(str(route.get("name", f"route{i + 1}")))
        used = route.get("resources")
        if not used:
            raise ConfigError(f"routes[{i}].resources must list at least one resource")
        for name in used:
            if name not in index:
                raise ConfigError(f"routes[{i}].resources: unknown resource {name!r}")
            A[index[name], i] = 1.0
        for key in params:
            value = route.get(key, 1.0 if key == "kappa" else None)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"routes[{i}].{key} must be a number") from None
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"routes[{i}].{key} must be positive and finite, got {value}")
            params[key].append(value)
    try:
        alpha = float(alpha)
    except (TypeError, ValueError):
        raise ConfigError("alpha must be a number") from None
    if not (np.isfinite(alpha) and alpha > 0):
        raise ConfigError(f"alpha must be positive and finite, got {alpha}")

    topology = Topology(A, caps, resource_names=tuple(names), route_names=tuple(route_names))
    traffic = TrafficParams(params["nu"], params["mu"], params["kappa"], alpha)
    return NetworkModel(topology, traffic)


def load_config(path) -> NetworkModel:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(cfg)


def to_config(model: NetworkModel) -> dict:
    topo = model.topology
    routes = []
    for i, name in enumerate(topo.route_names):
        used = [topo.resource_names[j] for j in np.flatnonzero(model.A[:, i])]
        routes.append({
            "name": name,
            "resources": used,
            "nu": float(model.nu[i]),
            "mu": float(model.mu[i]),
            "kappa": float(model.kappa[i]),
        })
    return {
        "resources": [
            {"name": name, "capacity": float(c)} for name, c in zip(topo.resource_names, model.C)
        ],
        "routes": routes,
        "alpha": model.alpha,
    }


def linear_network(rho3=0.5, alpha=1.0, rho1=None, rho2=None):
    """Two resources in series, one long route across both.

    Routes ``{1}``, ``{2}``, ``{1, 2}`` with unit capacities, weights and
    service rates.  Both resources are critical unless ``rho1``/``rho2``
    are given below ``1 - rho3``.
    """
    rho1 = 1.0 - rho3 if rho1 is None else rho1
    rho2 = 1.0 - rho3 if rho2 is None else rho2
    A = [[1, 0, 1], [0, 1, 1]]
    return NetworkModel.from_arrays(
        A, [1.0, 1.0], nu=[rho1, rho2, rho3], mu=[1.0, 1.0, 1.0], alpha=alpha,
        resource_names=("link1", "link2"), route_names=("short1", "short2", "long"),
    )
