"""The stochastic recursive inclusion ``x_{n+1} = x_n + a(n) [y_n + M_{n+1}]``.

Step-size schedules, martingale-difference noise models, the recursion
itself and the interpolated trajectories ``x̄(t)`` (piecewise linear) and
``ȳ(t)`` (piecewise constant).

Randomness is threaded forward through a single ``numpy.random.Generator``:
the raw noise block is drawn first, then (for random selection policies)
the direction block, then any per-step draws an estimator-driven policy
makes.  Noise at step ``n`` reads ``x_n`` and nothing later.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import UsageError, ValidationError
from .maps import MarchaudMap, Selection, as_selection, evaluate, membership_distances

OVERFLOW_GUARD = 1e12


# --------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class StepSchedule:
    """``harmonic``: a0/(n+1); ``power``: a0/(n+1)^gamma; ``custom``: explicit list."""

    family: str
    a0: float = 1.0
    gamma: float = 1.0
    custom: tuple | None = None

    def values(self, N: int) -> np.ndarray:
        n = np.arange(N, dtype=float)
        if self.family == "harmonic":
            return self.a0 / (n + 1.0)
        if self.family == "power":
            return self.a0 / (n + 1.0) ** self.gamma
        if len(self.custom) < N:
            raise UsageError(f"custom schedule has {len(self.custom)} entries, {N} steps requested")
        return np.array(self.custom[:N], dtype=float)

    def to_dict(self) -> dict:
        if self.family == "harmonic":
            return {"family": "harmonic", "a0": self.a0}
        if self.family == "power":
            return {"family": "power", "a0": self.a0, "gamma": self.gamma}
        return {"family": "custom", "values": list(self.custom)}


def make_schedule(spec) -> StepSchedule:
    """Validate and build a step schedule from a dict or StepSchedule.

    Power schedules need ``0.5 < gamma <= 1`` so that the steps sum to
    infinity while their squares are summable; every step must lie in
    ``(0, 1]``.
    """
    if isinstance(spec, StepSchedule):
        spec = spec.to_dict()
    family = spec.get("family")
    if family == "harmonic":
        a0 = float(spec.get("a0", 1.0))
        _check_a0(a0)
        return StepSchedule("harmonic", a0=a0)
    if family == "power":
        a0 = float(spec.get("a0", 1.0))
        gamma = float(spec.get("gamma", 1.0))
        _check_a0(a0)
        if gamma <= 0.5:
            raise ValidationError(f"gamma={gamma}: sum of a(n)^2 diverges (need gamma > 0.5)", "schedule.gamma")
        if gamma > 1:
            raise ValidationError(f"gamma={gamma}: sum of a(n) converges (need gamma <= 1)", "schedule.gamma")
        return StepSchedule("power", a0=a0, gamma=gamma)
    if family == "custom":
        vals = tuple(float(v) for v in spec.get("values", ()))
        if not vals:
            raise ValidationError("custom schedule needs a non-empty 'values' list", "schedule.values")
        if not all(0 < v <= 1 for v in vals):
            raise ValidationError("custom step sizes must lie in (0, 1]", "schedule.values")
        return StepSchedule("custom", custom=vals)
    raise ValidationError(f"unknown schedule family {family!r}", "schedule.family")


def _check_a0(a0):
    if not 0 < a0 <= 1:
        raise ValidationError(f"a0={a0} must lie in (0, 1] so that sup a(n) <= 1", "schedule.a0")


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Martingale-difference noise with ``E[|M|^2 | F_n] <= K (1 + |x_n|^2)``.

    ``bounded_iid``: uniform on ``[-w, w]^d``; ``gaussian``: ``N(0, s^2 I)``;
    ``state_scaled_gaussian``: ``s0 sqrt(1 + |x_n|^2) N(0, I)``.
    """

    kind: str
    scale: float
    dimension: int
    bound_K: float

    @property
    def state_scaled(self) -> bool:
        return self.kind == "state_scaled_gaussian"

    def draw_raw(self, rng: np.random.Generator, N: int) -> np.ndarray:
        if self.kind == "bounded_iid":
            return rng.uniform(-1.0, 1.0, size=(N, self.dimension))
        return rng.standard_normal((N, self.dimension))

    def shape(self, raw: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.state_scaled:
            return self.scale * np.sqrt(1.0 + x @ x) * raw
        return self.scale * raw

    def to_dict(self) -> dict:
        key = {"bounded_iid": "half_width", "gaussian": "sigma", "state_scaled_gaussian": "sigma0"}[self.kind]
        return {"kind": self.kind, key: self.scale, "K": self.bound_K}


_NOISE_PARAM = {"bounded_iid": "half_width", "gaussian": "sigma", "state_scaled_gaussian": "sigma0"}


def make_noise(spec, dimension: int) -> NoiseModel:
    """Build a noise model; ``K`` defaults to the smallest valid constant."""
    if isinstance(spec, NoiseModel):
        return spec
    kind = spec.get("kind")
    if kind not in _NOISE_PARAM:
        raise ValidationError(f"unknown noise kind {kind!r}", "noise.kind")
    param = _NOISE_PARAM[kind]
    if param not in spec:
        raise ValidationError(f"{kind} noise needs '{param}'", f"noise.{param}")
    scale = float(spec[param])
    if not scale >= 0:
        raise ValidationError(f"{param} must be nonnegative", f"noise.{param}")
    if kind == "bounded_iid":
        k_min = dimension * scale**2 / 3.0
    else:
        k_min = dimension * scale**2
    K = float(spec.get("K") or 0.0) or k_min
    if K < k_min * (1 - 1e-12):
        raise ValidationError(f"declared K={K} is below the second-moment constant {k_min} of {kind}", "noise.K")
    return NoiseModel(kind, scale, int(dimension), K)


def sample_noise(model: NoiseModel, x, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``M_{n+1}`` given ``x_n``."""
    x = np.asarray(x, float).reshape(-1)
    return model.shape(model.draw_raw(rng, 1)[0], x)


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Full record of one run: ``x_0..x_N``, ``y_0..y_{N-1}``, ``M_1..M_N``, ``a(0..N-1)``, ``t(0..N)``.

    ``M[n]`` holds ``M_{n+1}``, the noise applied in step ``n``.
    """

    x: np.ndarray
    y: np.ndarray
    M: np.ndarray
    a: np.ndarray
    t: np.ndarray
    seed: int | None = None
    scenario_id: str = ""
    diverged: bool = False

    def __post_init__(self):
        for name in ("x", "y", "M", "a", "t"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.a.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)


def _times(a: np.ndarray) -> np.ndarray:
    t = np.empty(a.shape[0] + 1)
    t[0] = 0.0
    np.cumsum(a, out=t[1:])
    return t


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


def iterate(h: MarchaudMap, schedule, noise, policy, x0, N: int, rng=None, scenario_id: str = "",
            guard: float = OVERFLOW_GUARD) -> Trajectory:
    """Run the recursion for ``N`` steps.

    ``policy`` is a selection policy (name, dict or ``Selection``) or an
    estimator-driven selection exposing ``draw(x, rng) -> (y, fluctuation)``,
    whose fluctuation is added to the recorded noise.  Maps with a closed
    spec run on the compiled kernel; everything else runs set by set.
    Iteration stops at the first iterate with norm above ``guard`` and the
    trajectory is flagged ``diverged``.
    """
    if N < 1:
        raise UsageError("N must be at least 1")
    schedule = make_schedule(schedule)
    noise = make_noise(noise, h.dimension)
    rng, seed = _as_rng(rng)
    x0 = np.asarray(x0, float).reshape(-1)
    if x0.shape[0] != h.dimension:
        raise UsageError(f"dimension mismatch: x0 has dimension {x0.shape[0]}, map has {h.dimension}")
    a = schedule.values(N)
    raw = noise.draw_raw(rng, N)
    estimator = hasattr(policy, "draw")
    sel = None if estimator else as_selection(policy)
    dirs = rng.standard_normal((N, h.dimension)) if sel is not None and sel.needs_random else None

    form = h.affine_ball
    fast_offset = getattr(policy, "affine_offset", None) if estimator else None
    if form is not None and (sel is not None or fast_offset is not None):
        A, b, eps = form
        mode, offset = _kernel_mode(sel, eps, h.dimension, fast_offset)
        X, Y, M, n_done, diverged = _kernels.affine_ball_recursion(
            np.ascontiguousarray(A), np.ascontiguousarray(b), float(eps), mode, offset,
            dirs if dirs is not None else np.zeros((1, h.dimension)),
            a, raw, float(noise.scale), noise.state_scaled, x0, float(guard),
        )
    else:
        X, Y, M, n_done, diverged = _python_recursion(h, sel, policy, a, raw, dirs, noise, x0, rng, guard)
    a = a[:n_done]
    return Trajectory(X, Y, M, a, _times(a), seed, scenario_id, bool(diverged))


def _kernel_mode(sel: Selection | None, eps: float, d: int, fast_offset):
    if sel is None:
        return _kernels.FIXED_OFFSET, np.asarray(fast_offset, float).reshape(d)
    if sel.policy == "minimal_norm":
        return _kernels.MINIMAL_NORM, np.zeros(d)
    if sel.policy == "centroid":
        return _kernels.FIXED_OFFSET, np.zeros(d)
    if sel.direction is not None:
        u = np.asarray(sel.direction, float)
        nu = np.linalg.norm(u)
        return _kernels.FIXED_OFFSET, (eps * u / nu if nu > 0 and eps > 0 else np.zeros(d))
    return _kernels.RANDOM_DIRECTION, np.zeros(d)


def _python_recursion(h, sel, policy, a, raw, dirs, noise, x0, rng, guard):
    N, d = a.shape[0], h.dimension
    X = np.empty((N + 1, d))
    Y = np.empty((N, d))
    M = np.empty((N, d))
    X[0] = x0
    for n in range(N):
        x = X[n]
        m = noise.shape(raw[n], x)
        if sel is None:
            y, extra = policy.draw(x, rng)
            m = m + extra
        else:
            y = sel.pick(evaluate(h, x), None if dirs is None else dirs[n])
        Y[n] = y
        M[n] = m
        X[n + 1] = x + a[n] * (y + m)
        nx = np.linalg.norm(X[n + 1])
        if not np.isfinite(nx) or nx > guard:
            return X[: n + 2], Y[: n + 1], M[: n + 1], n + 1, True
    return X, Y, M, N, False


# --------------------------------------------------------------------------
# interpolation


def _locate(traj: Trajectory, t: float) -> int:
    t = float(t)
    if not 0.0 <= t <= traj.t[-1]:
        raise UsageError(f"t={t} outside [0, {traj.t[-1]}]")
    return min(int(np.searchsorted(traj.t, t, side="right")) - 1, traj.N - 1) if traj.N else 0


def interpolate(traj: Trajectory, t: float) -> np.ndarray:
    """``x̄(t)``: linear between knots ``t(n)``, equal to ``x_n`` at ``t(n)``."""
    n = _locate(traj, t)
    t0, t1 = traj.t[n], traj.t[n + 1]
    if t == t0:
        return traj.x[n].copy()
    if t == t1:
        return traj.x[n + 1].copy()
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * traj.x[n] + w * traj.x[n + 1]


def piecewise_y(traj: Trajectory, t: float) -> np.ndarray:
    """``ȳ(t) = y_n`` on ``[t(n), t(n+1))``; the final knot returns ``y_{N-1}``."""
    return traj.y[_locate(traj, t)].copy()


# --------------------------------------------------------------------------
# invariant checks


def verify_trajectory(traj: Trajectory, h: MarchaudMap | None = None, rel_tol: float = 1e-12,
                      membership_tol: float = 1e-7) -> list[str]:
    """Re-check the recorded run; returns a list of violations (empty if clean)."""
    problems = []
    x, y, M, a, t = traj.x, traj.y, traj.M, traj.a, traj.t
    if not (x.shape[0] == a.shape[0] + 1 == t.shape[0] and y.shape[0] == M.shape[0] == a.shape[0]):
        return [f"inconsistent record lengths x={x.shape[0]} y={y.shape[0]} M={M.shape[0]} a={a.shape[0]} t={t.shape[0]}"]
    if t[0] != 0.0:
        problems.append("t(0) != 0")
    if np.any(np.diff(t) <= 0):
        problems.append("t is not strictly increasing")
    if np.any(a <= 0) or np.any(a > 1):
        problems.append("step sizes outside (0, 1]")
    t_err = np.abs(t[1:] - t[:-1] - a)
    if np.any(t_err > rel_tol * np.maximum(1.0, t[1:])):
        problems.append(f"t(n+1) - t(n) != a(n) (max error {t_err.max():.3e})")
    if a.shape[0]:
        step = a[:, None] * (y + M)
        resid = np.abs(x[1:] - (x[:-1] + step))
        scale = np.maximum(1.0, np.abs(x[:-1]) + np.abs(step))
        worst = float(np.max(resid / scale))
        if worst > rel_tol:
            problems.append(f"recursion identity violated (max relative residual {worst:.3e})")
        if h is not None:
            dist = membership_distances(h, x[:-1], y)
            if np.max(dist) > membership_tol:
                k = int(np.argmax(dist))
                problems.append(f"selection y_{k} not in h(x_{k}) (distance {dist[k]:.3e})")
    return problems
