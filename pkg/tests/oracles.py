"""Reference implementations shared by the test modules."""

import numpy as np

from nonlocal_manifold.kernels import COSINE, ScaledKernel, eval_scaled


def double_loop_actions(cloud, delta, mode, u, v, f, fb):
    """Plain double loops over node pairs, one kernel evaluation at a time."""
    m = cloud.m
    K = {lvl: ScaledKernel(COSINE, lvl, delta, m) for lvl in ("R", "Rbar", "Rdbar")}
    k = lambda lvl, x, y: float(eval_scaled(K[lvl], x, y))
    corr = mode == "corrected"
    X, Y, w, s = cloud.X, cloud.Y, cloud.w, cloud.s
    nrm, kap = cloud.normal, cloud.kappa
    N, Nb = len(X), len(Y)

    Lu, Gv, Pf = np.zeros(N), np.zeros(N), np.zeros(N)
    for i in range(N):
        for j in range(N):
            Lu[i] += (u[i] - u[j]) * k("R", X[i], X[j]) * w[j] / delta**2
            Pf[i] += f[j] * k("Rbar", X[i], X[j]) * w[j]
        for j in range(Nb):
            kb = k("Rbar", X[i], Y[j])
            fac = 2.0 + (np.dot(X[i] - Y[j], nrm[j]) * kap[j] if corr else 0.0)
            Gv[i] += v[j] * fac * kb * s[j]
            if corr:
                Pf[i] -= np.dot(X[i] - Y[j], nrm[j]) * fb[j] * kb * s[j]

    Du, Rt, Qf = np.zeros(Nb), np.zeros(Nb), np.zeros(Nb)
    for j in range(Nb):
        for i in range(N):
            kb = k("Rbar", Y[j], X[i])
            xn = np.dot(Y[j] - X[i], nrm[j])
            Du[j] += u[i] * (2.0 - (xn * kap[j] if corr else 0.0)) * kb * w[i]
            if corr:
                Rt[j] -= kap[j] * xn**2 * kb * w[i]
            Qf[j] += -2.0 * delta**2 * f[i] * k("Rdbar", Y[j], X[i]) * w[i]
        for l in range(Nb):
            Rt[j] += 4.0 * delta**2 * k("Rdbar", Y[j], Y[l]) * s[l]
    return dict(L=Lu, G=Gv, P=Pf, D=Du, Rt=Rt, Q=Qf)


def max_rel_gap(a, b) -> float:
    """max |a − b| relative to max |b|."""
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) / scale
