import itertools

import numpy as np

from fairflow import NetworkModel


def random_incidence(rng, J, I):
    while True:
        A = rng.integers(0, 2, size=(J, I))
        if A.sum(axis=0).min() > 0 and np.linalg.matrix_rank(A) == J:
            return A


def random_model(rng, J, I, alpha=1.0, critical=None):
    """Random valid model; ``critical`` resources are saturated exactly."""
    A = random_incidence(rng, J, I)
    nu = rng.uniform(0.2, 1.0, I)
    mu = rng.uniform(0.5, 2.0, I)
    kappa = rng.uniform(0.5, 2.0, I)
    load = A @ (nu / mu)
    C = load * rng.uniform(1.05, 2.0, J)
    if critical is not None:
        C[list(critical)] = load[list(critical)]
    return NetworkModel.from_arrays(A, C, nu, mu, kappa, alpha)


def random_critical_model(rng, J, I, alpha=1.0):
    """Random model with a random nonempty critical set."""
    k = rng.integers(1, J + 1)
    crit = rng.choice(J, size=k, replace=False)
    return random_model(rng, J, I, alpha, critical=sorted(crit))


def random_state(rng, I, scale=5.0, p_zero=0.2):
    while True:
        n = rng.uniform(0, scale, I) * (rng.random(I) >= p_zero)
        if n.any():
            return n


def random_start(rng, I, radius=5.0):
    """Uniform draw from the positive part of the ball of given radius."""
    v = np.abs(rng.standard_normal(I))
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1.0 / I)


def incidence_classes(max_routes=3):
    """One representative per row/column permutation class of valid
    incidence matrices with at most ``max_routes`` routes."""
    seen = set()
    out = []
    for I in range(1, max_routes + 1):
        for J in range(1, I + 1):
            for bits in itertools.product((0, 1), repeat=J * I):
                A = np.array(bits).reshape(J, I)
                if A.sum(axis=0).min() == 0 or np.linalg.matrix_rank(A) < J:
                    continue
                key = min(
                    tuple(A[np.ix_(r, c)].ravel())
                    for r in itertools.permutations(range(J))
                    for c in itertools.permutations(range(I))
                )
                if (J, I, key) in seen:
                    continue
                seen.add((J, I, key))
                out.append(A)
    return out


def grid_search_allocation(model, n, resolution=1e-3):
    """Brute-force maximizer of the alpha-fair objective (at most 3 routes).

    The objective increases in every coordinate, so the last positive route
    is set to its largest feasible value and only the others are gridded.
    """
    A, C, kappa, alpha = model.A, model.C, model.kappa, model.alpha
    pos = np.flatnonzero(n > 0)
    lam = np.zeros(model.n_routes)
    if pos.size == 0:
        return lam
    Ap = A[:, pos]
    cap = np.array([C[Ap[:, k] > 0].min() for k in range(pos.size)])
    axes = [np.arange(0.0, c + resolution / 2, resolution) for c in cap[:-1]]
    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
    else:
        pts = np.zeros((1, 0))
    used = pts @ Ap[:, :-1].T
    last = Ap[:, -1]
    room = np.where(last > 0, (C - used) / np.where(last > 0, last, 1), np.inf).min(axis=1)
    feasible = np.all(used <= C + 1e-12, axis=1) & (room >= 0)
    pts = np.column_stack([pts, np.maximum(room, 0)])
    w = kappa[pos] * n[pos] ** alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(alpha - 1) < 1e-12:
            vals = np.log(pts) @ w
        else:
            vals = (pts ** (1 - alpha) / (1 - alpha)) @ w
    vals[~feasible] = -np.inf
    vals[np.isnan(vals)] = -np.inf
    best = pts[np.argmax(vals)]
    lam[pos] = best
    return lam


def grid_search_lift(model, w, resolution=1e-3, upper=None):
    """Brute-force lift on the two-resource linear network: grid ``n_3`` and
    set the short routes to the smallest values meeting the workload."""
    upper = max(w) if upper is None else upper
    n3 = np.arange(0.0, upper + resolution / 2, resolution)
    n1 = np.maximum(w[0] - n3, 0.0)
    n2 = np.maximum(w[1] - n3, 0.0)
    pts = np.column_stack([n1, n2, n3])
    a = model.alpha
    F = (model.nu * model.kappa * model.mu ** (a - 1) * (pts / model.nu) ** (a + 1)).sum(axis=1) / (a + 1)
    return pts[np.argmin(F)]
