"""Compiled serial-chain kernels: kinematics and recursive Newton-Euler.

All quantities are expressed in the world frame. Joint ``i`` sits at
``offsets[i]`` in the frame of link ``i-1`` and rotates about ``axes[i]``
(given in its own frame, which coincides with the world at q = 0).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _mv(A, v):
    out = np.empty(3)
    for r in range(3):
        out[r] = A[r, 0] * v[0] + A[r, 1] * v[1] + A[r, 2] * v[2]
    return out


@njit(cache=True)
def _mm(A, B):
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]
    return out


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _rodrigues(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * C
    R[0, 1] = x * y * C - z * s
    R[0, 2] = x * z * C + y * s
    R[1, 0] = y * x * C + z * s
    R[1, 1] = c + y * y * C
    R[1, 2] = y * z * C - x * s
    R[2, 0] = z * x * C - y * s
    R[2, 1] = z * y * C + x * s
    R[2, 2] = c + z * z * C
    return R


@njit(cache=True)
def chain(q, axes, offsets):
    n = q.shape[0]
    origins = np.empty((n, 3))
    zaxes = np.empty((n, 3))
    rots = np.empty((n, 3, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        p = p + _mv(R, offsets[i])
        zaxes[i] = _mv(R, axes[i])
        R = _mm(R, _rodrigues(axes[i], q[i]))
        origins[i] = p
        rots[i] = R
    return origins, zaxes, rots


@njit(cache=True)
def paddle_pose(q, axes, offsets, paddle_offset, normal_dir):
    origins, zaxes, rots = chain(q, axes, offsets)
    n = q.shape[0]
    R = rots[n - 1]
    p = origins[n - 1] + _mv(R, paddle_offset)
    nrm = _mv(R, normal_dir)
    return p, nrm, origins, zaxes


@njit(cache=True)
def jacobians(q, axes, offsets, paddle_offset, normal_dir):
    p, nrm, origins, zaxes = paddle_pose(q, axes, offsets, paddle_offset, normal_dir)
    n = q.shape[0]
    J = np.empty((3, n))
    Jn = np.empty((3, n))
    for i in range(n):
        J[:, i] = _cross(zaxes[i], p - origins[i])
        Jn[:, i] = _cross(zaxes[i], nrm)
    return p, nrm, J, Jn, zaxes


@njit(cache=True)
def velocity_partials(q, qd, axes, offsets, paddle_offset, normal_dir):
    """d(J(q) qd)/dq for the paddle-centre velocity, shape (3, n)."""
    p, nrm, J, Jn, zaxes = jacobians(q, axes, offsets, paddle_offset, normal_dir)
    n = q.shape[0]
    H = np.zeros((3, n))
    for j in range(n):
        distal = np.zeros(3)
        for i in range(j, n):
            distal += qd[i] * J[:, i]
        col = _cross(zaxes[j], distal)
        for i in range(j):
            col += qd[i] * _cross(zaxes[i], J[:, j])
        H[:, j] = col
    return H


@njit(cache=True)
def dyn_frames(q, axes, offsets, coms, inertias):
    """Joint origins and axes, link COM offsets and inertias, all in world axes."""
    origins, zaxes, rots = chain(q, axes, offsets)
    n = q.shape[0]
    crel = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    for i in range(n):
        R = rots[i]
        crel[i] = _mv(R, coms[i])
        Iw[i] = _mm(_mm(R, inertias[i]), R.T.copy())
    return origins, zaxes, crel, Iw


@njit(cache=True)
def _rnea_frames(origins, zaxes, crel, Iw, qd, qdd, grav, masses, rotor):
    n = qd.shape[0]
    w = np.zeros(3)
    dw = np.zeros(3)
    a_o = -grav.copy()
    o_prev = np.zeros(3)
    F = np.empty((n, 3))
    Nc = np.empty((n, 3))
    for i in range(n):
        r = origins[i] - o_prev
        if i > 0:
            a_o = a_o + _cross(dw, r) + _cross(w, _cross(w, r))
        z = zaxes[i]
        w_new = w + z * qd[i]
        dw = dw + z * qdd[i] + _cross(w, z * qd[i])
        w = w_new
        c = crel[i]
        a_c = a_o + _cross(dw, c) + _cross(w, _cross(w, c))
        I = Iw[i]
        F[i] = masses[i] * a_c
        Nc[i] = _mv(I, dw) + _cross(w, _mv(I, w))
        o_prev = origins[i]
    tau = np.empty(n)
    f = np.zeros(3)
    m = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            lever = origins[i + 1] - origins[i]
            m = m + _cross(lever, f)
        m = m + Nc[i] + _cross(crel[i], F[i])
        f = f + F[i]
        tau[i] = _dot(zaxes[i], m) + rotor[i] * qdd[i]
    return tau


@njit(cache=True)
def rnea(q, qd, qdd, grav, axes, offsets, masses, coms, inertias, rotor):
    """Joint torques required for (q, qd, qdd) under gravity ``grav``."""
    origins, zaxes, crel, Iw = dyn_frames(q, axes, offsets, coms, inertias)
    return _rnea_frames(origins, zaxes, crel, Iw, qd, qdd, grav, masses, rotor)


@njit(cache=True)
def _mass_frames(origins, zaxes, crel, Iw, masses, rotor):
    """Sum over links of m Jv'Jv + Jw' I Jw, plus the rotor inertias."""
    n = origins.shape[0]
    M = np.zeros((n, n))
    Jv = np.zeros((n, 3))
    IJ = np.zeros((n, 3))
    for i in range(n):
        c = origins[i] + crel[i]
        I = Iw[i]
        for j in range(i + 1):
            Jv[j] = _cross(zaxes[j], c - origins[j])
            for r in range(3):
                IJ[j, r] = I[r, 0] * zaxes[j, 0] + I[r, 1] * zaxes[j, 1] + I[r, 2] * zaxes[j, 2]
        m = masses[i]
        for a in range(i + 1):
            for b in range(a, i + 1):
                acc = 0.0
                for r in range(3):
                    acc += m * Jv[a, r] * Jv[b, r] + zaxes[a, r] * IJ[b, r]
                M[a, b] += acc
    for i in range(n):
        M[i, i] += rotor[i]
        for j in range(i + 1, n):
            M[j, i] = M[i, j]
    return M


@njit(cache=True)
def mass_matrix(q, axes, offsets, masses, coms, inertias, rotor):
    origins, zaxes, crel, Iw = dyn_frames(q, axes, offsets, coms, inertias)
    return _mass_frames(origins, zaxes, crel, Iw, masses, rotor)


@njit(cache=True)
def forward_dynamics(q, qd, u, grav, axes, offsets, masses, coms, inertias, rotor):
    n = q.shape[0]
    origins, zaxes, crel, Iw = dyn_frames(q, axes, offsets, coms, inertias)
    M = _mass_frames(origins, zaxes, crel, Iw, masses, rotor)
    bias = _rnea_frames(origins, zaxes, crel, Iw, qd, np.zeros(n), grav, masses, rotor)
    return np.linalg.solve(M, u - bias)


@njit(cache=True)
def rk4_plant(q, qd, u, dt, grav, axes, offsets, masses, coms, inertias, rotor):
    k1q = qd
    k1v = forward_dynamics(q, qd, u, grav, axes, offsets, masses, coms, inertias, rotor)
    q2 = q + 0.5 * dt * k1q
    v2 = qd + 0.5 * dt * k1v
    k2v = forward_dynamics(q2, v2, u, grav, axes, offsets, masses, coms, inertias, rotor)
    q3 = q + 0.5 * dt * v2
    v3 = qd + 0.5 * dt * k2v
    k3v = forward_dynamics(q3, v3, u, grav, axes, offsets, masses, coms, inertias, rotor)
    q4 = q + dt * v3
    v4 = qd + dt * k3v
    k4v = forward_dynamics(q4, v4, u, grav, axes, offsets, masses, coms, inertias, rotor)
    q_new = q + dt / 6.0 * (k1q + 2.0 * v2 + 2.0 * v3 + v4)
    qd_new = qd + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return q_new, qd_new


@njit(cache=True)
def potential_energy(q, grav, axes, offsets, masses, coms):
    origins, zaxes, rots = chain(q, axes, offsets)
    V = 0.0
    for i in range(q.shape[0]):
        c = origins[i] + rots[i] @ coms[i]
        V -= masses[i] * (grav @ c)
    return V


@njit(cache=True)
def kinetic_energy(q, qd, axes, offsets, masses, coms, inertias, rotor):
    M = mass_matrix(q, axes, offsets, masses, coms, inertias, rotor)
    return 0.5 * qd @ M @ qd


@njit(cache=True)
def terminal_grad(q, qd, yp, yv, yn, axes, offsets, paddle_offset, normal_dir):
    """A(q, qd)' y for the stacked terminal residuals (position, velocity,
    normal), with the multipliers already divided by the residual scales."""
    n = q.shape[0]
    p, nrm, J, Jn, zaxes = jacobians(q, axes, offsets, paddle_offset, normal_dir)
    H = velocity_partials(q, qd, axes, offsets, paddle_offset, normal_dir)
    g = np.empty(2 * n)
    for j in range(n):
        a = 0.0
        b = 0.0
        for r in range(3):
            a += J[r, j] * yp[r] + H[r, j] * yv[r] + Jn[r, j] * yn[r]
            b += J[r, j] * yv[r]
        g[j] = a
        g[n + j] = b
    return g


@njit(cache=True)
def terminal_curvature(q, qd, yp, yv, yn, h, axes, offsets, paddle_offset, normal_dir):
    """Central-difference Hessian of y' r(q, qd), symmetrized."""
    n = q.shape[0]
    L = np.empty((2 * n, 2 * n))
    for k in range(2 * n):
        qp = q.copy()
        qm = q.copy()
        vp = qd.copy()
        vm = qd.copy()
        if k < n:
            qp[k] += h
            qm[k] -= h
        else:
            vp[k - n] += h
            vm[k - n] -= h
        gp = terminal_grad(qp, vp, yp, yv, yn, axes, offsets, paddle_offset, normal_dir)
        gm = terminal_grad(qm, vm, yp, yv, yn, axes, offsets, paddle_offset, normal_dir)
        L[:, k] = (gp - gm) / (2.0 * h)
    return 0.5 * (L + L.T)
