"""Operator-splitting (ADMM) solver for the small SQP subproblems.

Solves::

    min  1/2 x'Hx + g'x + sum_i phi_i(z_i)    s.t.  z = Cx

The first ``3 * nball`` rows of ``z`` form 3-vectors with the exact penalty
``phi = mu_b * dist(z, ball(center, radius))``, one weight per ball; the
remaining rows are boxes ``lo <= z <= hi``.  Relaxed ADMM iteration with a
scalar adaptive rho, optionally followed by an active-set polish.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _prox(v, rho, nball, centers, radii, mu, lo, hi):
    out = v.copy()
    for b in range(nball):
        t = mu[b] / rho
        d0 = v[3 * b] - centers[b, 0]
        d1 = v[3 * b + 1] - centers[b, 1]
        d2 = v[3 * b + 2] - centers[b, 2]
        dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        ex = dist - radii[b]
        if ex > 0.0:
            s = min(ex, t) / dist
            out[3 * b] = v[3 * b] - s * d0
            out[3 * b + 1] = v[3 * b + 1] - s * d1
            out[3 * b + 2] = v[3 * b + 2] - s * d2
    k = 0
    for r in range(3 * nball, v.shape[0]):
        if out[r] < lo[k]:
            out[r] = lo[k]
        elif out[r] > hi[k]:
            out[r] = hi[k]
        k += 1
    return out


@njit(cache=True)
def _inf_norm(v):
    m = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > m:
            m = a
    return m


@njit(cache=True)
def admm_kernel(H, g, C, nball, centers, radii, mu, lo, hi, x, z, y, rho,
                sigma, alpha, eps_abs, eps_rel, max_iter, check_every, adapt_every):
    n = g.shape[0]
    m = C.shape[0]
    CT = C.T.copy()
    CtC = CT @ C
    eye = np.eye(n)
    Kinv = np.linalg.inv(H + sigma * eye + rho * CtC)
    prim = np.inf
    dual = np.inf
    converged = False
    last_adapt = 0
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - g + CT @ (rho * z - y)
        xt = Kinv @ rhs
        zt = C @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        zn = _prox(zr + y / rho, rho, nball, centers, radii, mu, lo, hi)
        y = y + rho * (zr - zn)
        z = zn
        if it % check_every != 0 and it != max_iter:
            continue
        Hx = H @ x
        Cx = C @ x
        CTy = CT @ y
        prim = _inf_norm(Cx - z) if m > 0 else 0.0
        dual = _inf_norm(Hx + g + CTy)
        sc_p = max(_inf_norm(Cx), _inf_norm(z)) if m > 0 else 0.0
        sc_d = max(max(_inf_norm(Hx), _inf_norm(CTy)), _inf_norm(g))
        if prim <= eps_abs + eps_rel * sc_p and dual <= eps_abs + eps_rel * sc_d:
            converged = True
            break
        if m > 0 and it - last_adapt >= adapt_every:
            num = prim / max(sc_p, 1e-30)
            den = max(dual / max(sc_d, 1e-30), 1e-30)
            new_rho = rho * np.sqrt(num / den)
            new_rho = min(max(new_rho, 1e-6), 1e6)
            if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                Kinv = np.linalg.inv(H + sigma * eye + rho * CtC)
            last_adapt = it
    return x, z, y, rho, it, converged, prim, dual


class AdmmSettings:
    def __init__(self, sigma=1e-9, alpha=1.6, rho=0.1, eps_abs=1e-6, eps_rel=1e-6,
                 max_iter=20000, check_every=10, adapt_every=100):
        self.sigma = sigma
        self.alpha = alpha
        self.rho = rho
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.max_iter = max_iter
        self.check_every = check_every
        self.adapt_every = adapt_every


class AdmmResult:
    def __init__(self, x, z, y, rho, iterations, converged, prim, dual):
        self.x = x
        self.z = z
        self.y = y
        self.rho = rho
        self.iterations = iterations
        self.converged = converged
        self.prim_res = prim
        self.dual_res = dual


def admm_solve(H, g, C, centers, radii, mu, lo, hi, x0=None, z0=None, y0=None,
               rho=None, settings=None) -> AdmmResult:
    s = settings or AdmmSettings()
    H = np.ascontiguousarray(H, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    C = np.ascontiguousarray(C, dtype=float).reshape(-1, len(g))
    centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, 3)
    radii = np.ascontiguousarray(radii, dtype=float).reshape(-1)
    lo = np.ascontiguousarray(lo, dtype=float).reshape(-1)
    hi = np.ascontiguousarray(hi, dtype=float).reshape(-1)
    nball = len(radii)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (nball,)).copy()
    x = np.zeros(len(g)) if x0 is None else np.array(x0, dtype=float)
    z = C @ x if z0 is None else np.array(z0, dtype=float)
    y = np.zeros(C.shape[0]) if y0 is None else np.array(y0, dtype=float)
    out = admm_kernel(H, g, C, nball, centers, radii, mu, lo, hi, x, z, y,
                      float(s.rho if rho is None else rho), s.sigma, s.alpha,
                      s.eps_abs, s.eps_rel, s.max_iter, s.check_every, s.adapt_every)
    return AdmmResult(*out)


def penalty(z, centers, radii, mu):
    if len(radii) == 0:
        return 0.0
    D = np.asarray(z[: 3 * len(radii)]).reshape(-1, 3) - centers
    return float(np.sum(np.asarray(mu) * np.maximum(np.linalg.norm(D, axis=1) - radii, 0.0)))


def polish(H, g, C, centers, radii, mu, lo, hi, x, y, max_newton=30):
    """Refine an ADMM solution by Newton's method on a guessed active set.

    Balls are classified as inactive, active on their sphere, or violated
    with a saturated penalty; box rows as free or fixed at a bound.  The
    resulting smooth KKT system is solved exactly and accepted only if the
    multiplier signs and feasibility pattern are consistent.  Returns
    ``(x, y)`` or ``None``.
    """
    H = np.asarray(H, float)
    g = np.asarray(g, float)
    C = np.asarray(C, float).reshape(-1, len(g))
    centers = np.asarray(centers, float).reshape(-1, 3)
    radii = np.asarray(radii, float).reshape(-1)
    nb = len(radii)
    mu = np.broadcast_to(np.asarray(mu, float), (nb,))
    m3 = 3 * nb
    A, B = C[:m3], C[m3:]
    lo = np.asarray(lo, float).reshape(-1)
    hi = np.asarray(hi, float).reshape(-1)
    n = len(g)
    scale = 1.0 + np.max(np.abs(g)) + np.max(np.abs(H @ x))

    kind = []
    for b in range(nb):
        Ab = A[3 * b:3 * b + 3]
        dist = np.linalg.norm(Ab @ x - centers[b])
        ny = np.linalg.norm(y[3 * b:3 * b + 3])
        if ny >= (1 - 1e-3) * mu[b] and dist > radii[b] * (1 + 1e-4):
            kind.append("pen")
        elif dist >= radii[b] * (1 - 1e-3) and ny > 0:
            kind.append("sph")
        else:
            kind.append("free")
    zb = B @ x
    yb = y[m3:]
    fix = np.zeros(len(zb), dtype=int)  # -1 lower, +1 upper
    for k in range(len(zb)):
        near_lo = np.isfinite(lo[k]) and zb[k] - lo[k] <= 1e-6 * (1 + abs(lo[k]))
        near_hi = np.isfinite(hi[k]) and hi[k] - zb[k] <= 1e-6 * (1 + abs(hi[k]))
        if near_lo and (yb[k] < 0 or zb[k] <= lo[k]):
            fix[k] = -1
        elif near_hi and (yb[k] > 0 or zb[k] >= hi[k]):
            fix[k] = 1
    sph = [b for b in range(nb) if kind[b] == "sph"]
    pen = [b for b in range(nb) if kind[b] == "pen"]
    act = np.flatnonzero(fix)
    E = B[act]
    bound = np.where(fix[act] < 0, lo[act], hi[act])
    ns, ne = len(sph), len(act)
    lam = np.array([np.linalg.norm(y[3 * b:3 * b + 3]) / radii[b] for b in sph])
    nu = yb[act].copy()
    x = np.array(x, float)
    for _ in range(max_newton):
        K = np.zeros((n + ns + ne, n + ns + ne))
        F = np.zeros(n + ns + ne)
        K[:n, :n] = H
        F[:n] = H @ x + g + E.T @ nu
        for i, b in enumerate(sph):
            Ab = A[3 * b:3 * b + 3]
            e = Ab @ x - centers[b]
            F[:n] += lam[i] * (Ab.T @ e)
            F[n + i] = 0.5 * (e @ e - radii[b] ** 2)
            K[:n, :n] += lam[i] * (Ab.T @ Ab)
            K[:n, n + i] = Ab.T @ e
            K[n + i, :n] = e @ Ab
        for b in pen:
            Ab = A[3 * b:3 * b + 3]
            e = Ab @ x - centers[b]
            d = np.linalg.norm(e)
            u = e / d
            F[:n] += mu[b] * (Ab.T @ u)
            K[:n, :n] += mu[b] / d * (Ab.T @ (np.eye(3) - np.outer(u, u)) @ Ab)
        K[:n, n + ns:] = E.T
        K[n + ns:, :n] = E
        F[n + ns:] = E @ x - bound
        done = (np.max(np.abs(F[:n]), initial=0.0) <= 1e-12 * scale
                and all(abs(F[n + i]) <= 1e-12 * radii[b] ** 2 for i, b in enumerate(sph))
                and np.max(np.abs(F[n + ns:]), initial=0.0) <= 1e-13 * (1 + np.max(np.abs(bound), initial=0.0)))
        if done:
            break
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        x = x + step[:n]
        lam = lam + step[n:n + ns]
        nu = nu + step[n + ns:]
    else:
        return None
    y_out = np.zeros(len(y))
    for i, b in enumerate(sph):
        if lam[i] < 0 or lam[i] * radii[b] > mu[b] * (1 + 1e-9):
            return None
        y_out[3 * b:3 * b + 3] = lam[i] * (A[3 * b:3 * b + 3] @ x - centers[b])
    for b in pen:
        e = A[3 * b:3 * b + 3] @ x - centers[b]
        if np.linalg.norm(e) < radii[b]:
            return None
        y_out[3 * b:3 * b + 3] = mu[b] * e / np.linalg.norm(e)
    for b in range(nb):
        if kind[b] == "free" and np.linalg.norm(A[3 * b:3 * b + 3] @ x - centers[b]) > radii[b] * (1 + 1e-9):
            return None
    if np.any(nu * fix[act] < 0):
        return None
    z = B @ x
    free = fix == 0
    slack = 1e-12 * (1 + np.abs(z))
    if np.any(z[free] < lo[free] - slack[free]) or np.any(z[free] > hi[free] + slack[free]):
        return None
    y_out[m3 + act] = nu
    return x, y_out
