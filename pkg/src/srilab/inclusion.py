"""Explicit Euler integration of ``dx/dt in h(x)``, attractor probing and limit sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, convex
from .convex import ConvexSet
from .errors import UsageError
from .maps import MarchaudMap, as_selection, evaluate, membership_distances

OVERFLOW_GUARD = 1e12


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    """Euler solution: ``states[k+1] = states[k] + dt * selections[k]``."""

    times: np.ndarray
    states: np.ndarray
    selections: np.ndarray
    dt: float
    diverged: bool = False

    def __post_init__(self):
        for name in ("times", "states", "selections"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate(h: MarchaudMap, x0, horizon: float, dt: float, policy="minimal_norm", rng=None,
              guard: float = OVERFLOW_GUARD) -> FlowTrajectory:
    """Integrate ``dx/dt in h(x)`` with one selection per Euler step.

    The number of steps is ``round(horizon / dt)``.  A state whose norm
    exceeds ``guard`` truncates the run and sets ``diverged``.
    """
    dt = float(dt)
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    if not horizon >= dt:
        raise UsageError(f"horizon {horizon} is shorter than dt {dt}")
    x0 = np.asarray(x0, float).reshape(-1)
    if x0.shape[0] != h.dimension:
        raise UsageError(f"dimension mismatch: x0 has dimension {x0.shape[0]}, map has {h.dimension}")
    sel = as_selection(policy)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n_steps = int(round(horizon / dt))
    d = h.dimension
    dirs = rng.standard_normal((n_steps, d)) if sel.needs_random else None
    form = h.affine_ball
    if form is not None:
        from .engine import _kernel_mode

        A, b, eps = form
        mode, offset = _kernel_mode(sel, eps, d, None)
        X, Y, _, n_done, diverged = _kernels.affine_ball_recursion(
            np.ascontiguousarray(A), np.ascontiguousarray(b), float(eps), mode, offset,
            dirs if dirs is not None else np.zeros((1, d)), np.full(n_steps, dt), np.zeros((n_steps, d)),
            0.0, False, x0, float(guard),
        )
    else:
        X = np.empty((n_steps + 1, d))
        Y = np.empty((n_steps, d))
        X[0] = x0
        n_done, diverged = n_steps, False
        for k in range(n_steps):
            Y[k] = sel.pick(evaluate(h, X[k]), None if dirs is None else dirs[k])
            X[k + 1] = X[k] + dt * Y[k]
            nx = np.linalg.norm(X[k + 1])
            if not np.isfinite(nx) or nx > guard:
                n_done, diverged = k + 1, True
                break
        X, Y = X[: n_done + 1], Y[:n_done]
    return FlowTrajectory(np.arange(n_done + 1) * dt, X, Y, dt, bool(diverged))


def verify_flow(flow: FlowTrajectory, h: MarchaudMap | None = None, rel_tol: float = 1e-12,
                membership_tol: float = 1e-7, gronwall_rel: float = 1e-6) -> list[str]:
    """Re-check the step identity, selection membership and the Gronwall envelope."""
    problems = []
    X, Y, dt = flow.states, flow.selections, flow.dt
    if Y.shape[0]:
        step = dt * Y
        resid = np.abs(X[1:] - X[:-1] - step)
        worst = float(np.max(resid / np.maximum(1.0, np.abs(X[:-1]) + np.abs(step))))
        if worst > rel_tol:
            problems.append(f"Euler step identity violated (max relative residual {worst:.3e})")
    if h is not None and Y.shape[0]:
        dist = membership_distances(h, X[:-1], Y)
        if np.max(dist) > membership_tol:
            k = int(np.argmax(dist))
            problems.append(f"selection {k} not in h(state {k}) (distance {dist[k]:.3e})")
        K = h.bound_K
        t = flow.times
        with np.errstate(over="ignore"):
            env = (np.linalg.norm(X[0]) + K * t) * np.exp(K * t)
        excess = np.linalg.norm(X, axis=1) > env * (1 + gronwall_rel)
        if np.any(excess):
            problems.append(f"Gronwall envelope exceeded at step {int(np.argmax(excess))}")
    return problems


# --------------------------------------------------------------------------
# attracting sets


def default_delta_chain(sup_norm_A: float, radius_a: float = 1.0) -> tuple:
    """``delta_1 = sup|A| / a`` and the rest equally spaced toward 1."""
    d1 = sup_norm_A / radius_a
    if not d1 < 1:
        raise UsageError(f"candidate set reaches norm {sup_norm_A} >= radius_a={radius_a}")
    step = (1.0 - d1) / 4.0
    return tuple(d1 + i * step for i in range(4))


@dataclass(frozen=True, eq=False)
class AttractorSpec:
    """Candidate attracting set with ``B_a(0)`` inside its fundamental neighborhood.

    ``delta_chain`` is in units of ``radius_a``.
    """

    set: ConvexSet
    radius_a: float = 1.0
    delta_chain: tuple | None = None

    def __post_init__(self):
        if not self.radius_a > 0:
            raise UsageError("radius_a must be positive")
        supA = convex.sup_norm(self.set)
        chain = default_delta_chain(supA, self.radius_a) if self.delta_chain is None else tuple(
            float(v) for v in self.delta_chain)
        validate_delta_chain(chain)
        if supA > chain[0] * self.radius_a * (1 + 1e-12) + 1e-15:
            raise UsageError(f"sup norm of A ({supA}) exceeds delta_1 * radius_a ({chain[0] * self.radius_a})")
        object.__setattr__(self, "delta_chain", chain)


def validate_delta_chain(chain) -> tuple:
    chain = tuple(float(v) for v in chain)
    if len(chain) != 4:
        raise UsageError("delta_chain needs four values")
    if not (0 <= chain[0] < chain[1] < chain[2] < chain[3] < 1):
        raise UsageError(f"delta_chain {chain} must satisfy 0 <= d1 < d2 < d3 < d4 < 1")
    return chain


@dataclass
class ProbeResult:
    attracting: bool
    T_eps: float | None
    eps: float
    trajectories: int
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"attracting": self.attracting, "T_eps": self.T_eps, "eps": self.eps,
                "trajectories": self.trajectories, "witness": self.witness, "details": self.details}


def default_init_grid(dimension: int, radius_a: float = 1.0) -> np.ndarray:
    return radius_a * convex.sphere_directions(dimension)


def probe_attractor(h: MarchaudMap, candidate: AttractorSpec, eps: float, init_grid=None,
                    policies=("minimal_norm",), rng=None, dt: float = 1e-3, horizon: float = 20.0) -> ProbeResult:
    """Estimate ``T(eps)``: the time after which every probed solution stays in ``N^eps(A)``.

    ``N^eps(A)`` is open, so a state at distance exactly ``eps`` counts as
    outside.  The probe returns the first grid time after the last exit,
    maximized over initial points and policies.  A solution that ends
    outside the neighborhood (or diverges) is a not-attracting witness.
    Corroboration covers only the sampled points and selections.
    """
    if not eps > 0:
        raise UsageError("eps must be positive")
    grid = default_init_grid(h.dimension, candidate.radius_a) if init_grid is None else np.atleast_2d(
        np.asarray(init_grid, float))
    if np.any(np.linalg.norm(grid, axis=1) > candidate.radius_a * (1 + 1e-12)):
        raise UsageError("init_grid must lie in the closed ball of radius radius_a")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    T = 0.0
    count = 0
    for policy in policies:
        for x0 in grid:
            flow = integrate(h, x0, horizon, dt, policy, rng)
            count += 1
            dist = convex.distance_many(flow.states, candidate.set)
            outside = dist >= eps
            if flow.diverged or outside[-1]:
                return ProbeResult(False, None, eps, count, {
                    "x0": x0.tolist(), "policy": str(policy), "final_state": flow.final.tolist(),
                    "final_distance": float(dist[-1]), "diverged": flow.diverged,
                })
            if outside.any():
                last = int(np.nonzero(outside)[0][-1])
                T = max(T, float(flow.times[last + 1]))
    return ProbeResult(True, T, eps, count, None, {"dt": dt, "horizon": horizon,
                                                   "note": "corroborated on sampled initial points and policies only"})


# --------------------------------------------------------------------------
# limit sets


@dataclass
class LimitSetEstimate:
    points: np.ndarray
    radius: float
    tail_fraction: float


def _times_states(traj):
    if hasattr(traj, "states"):
        return traj.times, traj.states
    return traj.t, traj.x


def limit_set_estimate(trajectories, tail_fraction: float, reference: ConvexSet) -> LimitSetEstimate:
    """Tail states of all trajectories and their max distance to ``reference``.

    The tail of each trajectory is the part with time at least
    ``(1 - tail_fraction)`` times its final time (always including the last state).
    """
    if not 0 < tail_fraction <= 1:
        raise UsageError("tail_fraction must lie in (0, 1]")
    clouds = []
    for traj in trajectories:
        t, X = _times_states(traj)
        cut = (1.0 - tail_fraction) * t[-1]
        idx = np.nonzero(t >= cut)[0]
        clouds.append(X[idx] if idx.size else X[-1:])
    if not clouds:
        raise UsageError("no trajectories supplied")
    pts = np.vstack(clouds)
    radius = float(np.max(convex.distance_many(pts, reference)))
    return LimitSetEstimate(pts, radius, tail_fraction)
