"""Projected Newton iteration on the dual of a separable power-law program.

Both the bandwidth allocation and the workload lift reduce to minimizing

    psi(p) = sum_i h_i(s_i) + b . p      over p >= 0,   s = A^T p,

where ``h_i'(s) = -x_i(s)`` and ``x_i(s) = sign * c_i * s**e``.  The primal
point is recovered in closed form from the prices, so only ``p`` is iterated.
Gradient and Hessian of ``psi`` are

    grad = b - A x(s),        hess = A diag(-x'(s)) A^T,

and the KKT residual reported here is ``max((-grad)^+, |p * grad|)``;
stationarity holds by construction of ``x``.

For the allocator ``x = Lambda``, ``c_i = n_i kappa_i**(1/alpha)``,
``e = -1/alpha``, ``sign = +1`` and ``b = C``.  For the lift ``x = -n/mu``,
``c_i = (rho_i/mu_i) kappa_i**(-1/alpha)``, ``e = 1/alpha``, ``sign = -1``
and ``b = -w``.
"""

import numpy as np
from numba import njit

CONVERGED = 0
MAX_ITER = 1
STALLED = 2

_ARMIJO = 1e-4
_MAX_HALVINGS = 60
_MAX_IDLE = 50


@njit(cache=True)
def _primal(s, c, e, sign):
    m = s.shape[0]
    x = np.empty(m)
    for i in range(m):
        if c[i] == 0.0:
            x[i] = 0.0
        elif s[i] > 0.0:
            x[i] = sign * c[i] * s[i] ** e
        elif e < 0.0:
            x[i] = sign * np.inf
        else:
            x[i] = 0.0
    return x


@njit(cache=True)
def _psi(A, p, c, b, e, sign):
    s = A.T @ p
    total = 0.0
    for i in range(s.shape[0]):
        if c[i] == 0.0:
            continue
        if s[i] <= 0.0:
            if e < 0.0:
                return np.inf
            continue
        if e == -1.0:
            total -= sign * c[i] * np.log(s[i])
        else:
            total -= sign * c[i] * s[i] ** (e + 1.0) / (e + 1.0)
    return total + b @ p


@njit(cache=True)
def _residual(p, g):
    r = 0.0
    for j in range(p.shape[0]):
        if -g[j] > r:
            r = -g[j]
        v = abs(p[j] * g[j])
        if v > r:
            r = v
    return r


@njit(cache=True)
def _hessian(A, s, c, e, sign):
    m = s.shape[0]
    dd = np.empty(m)
    for i in range(m):
        if c[i] == 0.0:
            dd[i] = 0.0
        else:
            si = max(s[i], 1e-300)
            dd[i] = -sign * c[i] * e * si ** (e - 1.0)
    return (A * dd) @ A.T


@njit(cache=True)
def solve_dual(A, c, b, e, sign, p0, tol, max_iter):
    """Minimize ``psi`` over the nonnegative orthant starting from ``p0``.

    Returns ``(p, x, residual, iterations, status)``.  The Newton system is
    damped by a Levenberg term that grows when the projected line search
    fails, which covers rank-deficient ``A`` (non-unique prices).  The
    damping is proportional to each diagonal entry.
    """
    J = A.shape[0]
    p = p0.copy()
    s = A.T @ p
    x = _primal(s, c, e, sign)
    g = b - A @ x
    res = _residual(p, g)
    f0 = _psi(A, p, c, b, e, sign)
    damp = 1e-12
    best = res
    idle = 0
    polished = False
    status = MAX_ITER
    it = 0
    while it < max_iter:
        if res <= tol:
            if polished:
                status = CONVERGED
                break
            polished = True
        it += 1

        # Bertsekas' epsilon-active set
        pg = 0.0
        for j in range(J):
            v = p[j] - max(p[j] - g[j], 0.0)
            pg += v * v
        eps = min(1e-8, np.sqrt(pg))
        hess = _hessian(A, s, c, e, sign)
        free = np.empty(J, dtype=np.bool_)
        nf = 0
        for j in range(J):
            free[j] = not (p[j] <= eps and g[j] > 0.0)
            if free[j]:
                nf += 1
        idx = np.empty(nf, dtype=np.int64)
        k = 0
        for j in range(J):
            if free[j]:
                idx[k] = j
                k += 1
        hff = np.empty((nf, nf))
        gf = np.empty(nf)
        scale = 0.0
        for a in range(nf):
            gf[a] = g[idx[a]]
            for bb in range(nf):
                hff[a, bb] = hess[idx[a], idx[bb]]
            if hff[a, a] > scale:
                scale = hff[a, a]
        if scale <= 0.0:
            scale = 1.0

        accepted = False
        while damp <= 1e8:
            d = np.zeros(J)
            for j in range(J):
                if not free[j]:
                    hj = hess[j, j] if hess[j, j] > 0.0 else scale
                    d[j] = -g[j] / hj
            if nf > 0:
                # Marquardt scaling: a single huge curvature must not
                # swamp the other coordinates
                h = hff.copy()
                for a in range(nf):
                    h[a, a] += damp * (hff[a, a] if hff[a, a] > 0.0 else scale)
                df = np.linalg.solve(h, -gf)
                for a in range(nf):
                    d[idx[a]] = df[a]
            t = 1.0
            for _ in range(_MAX_HALVINGS):
                pt = np.maximum(p + t * d, 0.0)
                ft = _psi(A, pt, c, b, e, sign)
                if np.isfinite(ft):
                    if ft <= f0 + _ARMIJO * (g @ (pt - p)):
                        accepted = True
                        break
                    # objective differences below rounding: judge by residual
                    if abs(ft - f0) <= 1e-13 * (abs(f0) + 1.0):
                        xt = _primal(A.T @ pt, c, e, sign)
                        if _residual(pt, b - A @ xt) < res:
                            accepted = True
                            break
                t *= 0.5
            if accepted:
                if t == 1.0:
                    damp = max(damp * 0.1, 1e-14)
                break
            damp *= 100.0
        if not accepted:
            status = CONVERGED if res <= tol else STALLED
            break
        p = pt
        f0 = ft
        s = A.T @ p
        x = _primal(s, c, e, sign)
        g = b - A @ x
        res = _residual(p, g)
        if res < 0.5 * best:
            best = res
            idle = 0
        else:
            idle += 1
            if idle >= _MAX_IDLE:
                status = CONVERGED if res <= tol else STALLED
                break
    if status == MAX_ITER and res <= tol:
        status = CONVERGED
    return p, x, res, it, status


@njit(cache=True)
def allocate_kernel(A, C, kappa, alpha, n, p_warm, n_floor, tol, max_iter):
    """Weighted alpha-fair allocation for state ``n``.

    Routes with ``n_i <= n_floor`` get zero bandwidth and are removed from
    the program; resources touched by no remaining route keep price 0.
    ``p_warm`` (length J, may be empty) seeds the prices.

    Returns ``(lam, p, residual, iterations, status)`` with ``lam`` and
    ``p`` in full route/resource indexing.  ``lam`` is scaled back onto the
    capacity region if the last iterate overshoots by rounding.
    """
    J, I = A.shape
    lam = np.zeros(I)
    p = np.zeros(J)
    nact = 0
    for i in range(I):
        if n[i] > n_floor:
            nact += 1
    if nact == 0:
        return lam, p, 0.0, 0, CONVERGED
    cols = np.empty(nact, dtype=np.int64)
    k = 0
    for i in range(I):
        if n[i] > n_floor:
            cols[k] = i
            k += 1
    used = np.zeros(J, dtype=np.bool_)
    for j in range(J):
        for a in range(nact):
            if A[j, cols[a]] != 0.0:
                used[j] = True
                break
    nrows = 0
    for j in range(J):
        if used[j]:
            nrows += 1
    rows = np.empty(nrows, dtype=np.int64)
    k = 0
    for j in range(J):
        if used[j]:
            rows[k] = j
            k += 1

    Asub = np.empty((nrows, nact))
    for r in range(nrows):
        for a in range(nact):
            Asub[r, a] = A[rows[r], cols[a]]
    inv_alpha = 1.0 / alpha
    c = np.empty(nact)
    for a in range(nact):
        c[a] = n[cols[a]] * kappa[cols[a]] ** inv_alpha
    b = np.empty(nrows)
    for r in range(nrows):
        b[r] = C[rows[r]]

    # heuristic prices matching the stationarity magnitude
    p0 = np.empty(nrows)
    for r in range(nrows):
        acc = 0.0
        for a in range(nact):
            acc += Asub[r, a] * kappa[cols[a]] * n[cols[a]] ** alpha
        p0[r] = max(acc / b[r] ** alpha, 1e-8)
    if p_warm.shape[0] == J:
        pw = np.empty(nrows)
        for r in range(nrows):
            pw[r] = p_warm[rows[r]]
        sw = Asub.T @ pw
        ok = True
        for a in range(nact):
            if not sw[a] > 0.0:
                ok = False
                break
        if ok:
            p0 = pw

    psub, x, res, it, status = solve_dual(Asub, c, b, -inv_alpha, 1.0, p0, tol, max_iter)

    load = Asub @ x
    factor = 1.0
    for r in range(nrows):
        if load[r] > b[r]:
            factor = min(factor, b[r] / load[r])
    if factor < 1.0:
        x = x * factor
        load = Asub @ x
        while True:
            over = False
            for r in range(nrows):
                if load[r] > b[r]:
                    over = True
            if not over:
                break
            x = x * (1.0 - 4e-16)
            load = Asub @ x
    for a in range(nact):
        lam[cols[a]] = x[a]
    for r in range(nrows):
        p[rows[r]] = psub[r]
    return lam, p, res, it, status


@njit(cache=True)
def acceptable(A, p, res, status, tol):
    """Acceptance rule shared by every caller of :func:`allocate_kernel`:
    the residual target, or a stall at the rounding floor relative to the
    largest route price."""
    if res <= tol:
        return True
    if status == MAX_ITER:
        return False
    smax = 1.0
    s = A.T @ p
    for i in range(s.shape[0]):
        if s[i] > smax:
            smax = s[i]
    return res <= tol * smax
