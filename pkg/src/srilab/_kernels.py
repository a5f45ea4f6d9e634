"""Compiled inner loop for recursions driven by ``h(x) = {A x + b} + B_eps(0)``.

Selection modes:

0. minimal norm: projection of the origin onto the ball around ``A x + b``
1. fixed offset: ``A x + b + offset`` (centroid, fixed-direction support
   points, constant estimator bias)
2. random support point: ``A x + b + eps * u_n / |u_n|`` with pre-drawn ``u_n``
"""
import numba
import numpy as np

MINIMAL_NORM = 0
FIXED_OFFSET = 1
RANDOM_DIRECTION = 2


@numba.njit(cache=True)
def affine_ball_recursion(A, b, eps, mode, offset, dirs, steps, noise_raw, noise_scale, state_scaled, x0, guard):
    """Run ``x_{n+1} = x_n + a(n) (y_n + M_{n+1})``.

    ``M_{n+1} = noise_scale * noise_raw[n]``, multiplied by
    ``sqrt(1 + |x_n|^2)`` when ``state_scaled``.  Stops after the first
    iterate whose norm exceeds ``guard`` (or is not finite).

    Returns ``(X, Y, M, n_done, diverged)`` with ``X`` of length ``n_done + 1``.
    """
    N = steps.shape[0]
    d = x0.shape[0]
    X = np.empty((N + 1, d))
    Y = np.empty((N, d))
    M = np.empty((N, d))
    for i in range(d):
        X[0, i] = x0[i]
    c = np.empty(d)
    n_done = N
    diverged = False
    for n in range(N):
        xx = 0.0
        for i in range(d):
            s = b[i]
            for j in range(d):
                s += A[i, j] * X[n, j]
            c[i] = s
            xx += X[n, i] * X[n, i]
        if mode == 0:
            nc = 0.0
            for i in range(d):
                nc += c[i] * c[i]
            nc = np.sqrt(nc)
            if nc <= eps:
                for i in range(d):
                    Y[n, i] = 0.0
            else:
                f = 1.0 - eps / nc
                for i in range(d):
                    Y[n, i] = c[i] * f
        elif mode == 1:
            for i in range(d):
                Y[n, i] = c[i] + offset[i]
        else:
            nu = 0.0
            for i in range(d):
                nu += dirs[n, i] * dirs[n, i]
            nu = np.sqrt(nu)
            for i in range(d):
                if nu > 0.0 and eps > 0.0:
                    Y[n, i] = c[i] + eps * dirs[n, i] / nu
                else:
                    Y[n, i] = c[i]
        scale = noise_scale
        if state_scaled:
            scale = noise_scale * np.sqrt(1.0 + xx)
        a = steps[n]
        nx = 0.0
        for i in range(d):
            M[n, i] = scale * noise_raw[n, i]
            v = X[n, i] + a * (Y[n, i] + M[n, i])
            X[n + 1, i] = v
            nx += v * v
        if not np.isfinite(nx) or np.sqrt(nx) > guard:
            n_done = n + 1
            diverged = True
            break
    return X[: n_done + 1], Y[:n_done], M[:n_done], n_done, diverged
