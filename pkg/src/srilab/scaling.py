"""The scaling family ``h_c(x) = h(c x) / c`` and its limit ``h_inf``.

Limits are represented through support functions on a direction grid:
for every direction ``u`` the sequence ``sigma_c(u) = max_{w in h_c(x)} u.w``
is sampled along the scale grid and summarized by its tail behavior.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection, QhullError

from . import convex
from .convex import ConvexSet, Polytope, Scaled, Singleton
from .errors import UsageError
from .maps import (
    CORROBORATED, FALSIFIED, Affine, ClosedFormInfinity, DriftWithBall, MarchaudMap, NegGradQuadratic,
    PropertyReport, ScaledBy, approximate_drift, evaluate, from_spec, single_value,
)

LIMINF = "liminf"
LIMSUP_HULL = "limsup_hull"
CLOSED_FORM = "closed_form"
ROUNDING_FLOOR = 1e-12


def default_grid() -> np.ndarray:
    return np.geomspace(1.0, 1e4, 40)


def scaled_map(base: MarchaudMap, c: float) -> MarchaudMap:
    """``h_c``: ``x -> h(c x) / c``; keeps the pointwise-bound and Lipschitz constants."""
    c = float(c)
    if not c >= 1:
        raise UsageError(f"scale c must be >= 1, got {c}")
    inner = base.evaluator
    return MarchaudMap(
        dimension=base.dimension,
        evaluator=lambda x: Scaled(inner(c * x), 1.0 / c),
        bound_K=base.bound_K,
        lipschitz_L=base.lipschitz_L,
        spec=None if base.spec is None else ScaledBy(base.spec, c),
        single_valued=base.single_valued,
    )


@dataclass(frozen=True, eq=False)
class ScalingFamily:
    base: MarchaudMap
    c_grid: np.ndarray = field(default_factory=default_grid)

    def __post_init__(self):
        grid = np.asarray(self.c_grid, float).reshape(-1)
        if grid.size < 2:
            raise UsageError("c_grid needs at least two points")
        if grid[0] < 1 or np.any(np.diff(grid) <= 0):
            raise UsageError("c_grid must be strictly increasing and start at c >= 1")
        grid.setflags(write=False)
        object.__setattr__(self, "c_grid", grid)

    @property
    def c_max(self) -> float:
        return float(self.c_grid[-1])

    def member(self, c: float) -> MarchaudMap:
        return scaled_map(self.base, c)


@dataclass(frozen=True, eq=False)
class InfinityEstimate:
    """Support-function estimate of ``h_inf(x)`` at one point.

    ``support[j]`` estimates the limiting support value in ``directions[j]``;
    ``residual`` is the raw support variation over the last grid decade.
    """

    mode: str
    x: np.ndarray
    directions: np.ndarray
    support: np.ndarray
    residual: float
    converged: bool
    tolerance: float
    details: dict = field(default_factory=dict)

    def distance_to(self, S: ConvexSet) -> float:
        """Directional Hausdorff gap ``max_u |support(u) - sigma_S(u)|``."""
        return float(np.max(np.abs(self.support - convex.support_many(S, self.directions))))

    def distance_between(self, other: "InfinityEstimate") -> float:
        if other.directions.shape != self.directions.shape or not np.array_equal(other.directions, self.directions):
            raise UsageError("estimates use different direction sets")
        return float(np.max(np.abs(self.support - other.support)))

    @property
    def set(self) -> ConvexSet:
        """A convex set whose supports reproduce the envelope."""
        return _set_from_supports(self.directions, self.support)


def _set_from_supports(U: np.ndarray, s: np.ndarray) -> ConvexSet:
    d = U.shape[1]
    scale = 1.0 + float(np.max(np.abs(s)))
    if d == 1:
        lo, hi = -s[U[:, 0] < 0].min(), s[U[:, 0] > 0].min()
        if hi - lo <= 1e-12 * scale:
            return Singleton([(lo + hi) / 2.0])
        return Polytope([[lo], [hi]])
    # least-squares point; exact when the envelope is (numerically) a point
    z = np.linalg.lstsq(U, s, rcond=None)[0]
    if np.max(np.abs(U @ z - s)) <= 1e-9 * scale:
        return Singleton(z)
    A_ub = np.hstack([U, np.ones((U.shape[0], 1))])
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=A_ub, b_ub=s, bounds=[(None, None)] * d + [(0, None)])
    if not res.success or res.x[-1] <= 1e-9 * scale:
        return Singleton(z)
    try:
        hs = HalfspaceIntersection(np.hstack([U, -s[:, None]]), res.x[:d])
    except QhullError:
        return Singleton(z)
    return Polytope(hs.intersections)


def estimate_h_infinity(family: ScalingFamily, x, mode: str = LIMSUP_HULL, directions=None,
                        tolerance: float = 1e-2) -> InfinityEstimate:
    """Numerical ``h_inf(x)`` from the scale grid.

    Per direction the tail half of the support sequence is fitted with
    ``alpha + beta / c`` and the ``beta / c`` transient is removed before
    taking the tail maximum (``limsup_hull``) or minimum (``liminf``).
    The transient model is exact for affine maps plus balls, whose supports
    are affine in ``1/c``.  Non-convergence is reported through ``converged``.
    """
    if mode not in (LIMINF, LIMSUP_HULL):
        raise UsageError(f"mode must be {LIMINF!r} or {LIMSUP_HULL!r}, got {mode!r}")
    base = family.base
    x = np.asarray(x, float).reshape(-1)
    if x.shape[0] != base.dimension:
        raise UsageError(f"dimension mismatch: x has dimension {x.shape[0]}, map has {base.dimension}")
    U = convex.sphere_directions(base.dimension) if directions is None else np.atleast_2d(np.asarray(directions, float))
    if U.shape[0] == 0:
        raise UsageError("directions must be nonempty")
    grid = family.c_grid
    sig = np.array([convex.support_many(evaluate(family.member(c), x), U) for c in grid])

    tail = slice(grid.size // 2, None)
    inv = 1.0 / grid[tail]
    design = np.column_stack([np.ones_like(inv), inv])
    coef = np.linalg.lstsq(design, sig[tail], rcond=None)[0]
    detrended = sig[tail] - inv[:, None] * coef[1][None, :]
    support = detrended.max(axis=0) if mode == LIMSUP_HULL else detrended.min(axis=0)

    decade = grid >= grid[-1] / 10.0
    residual = float(np.max(sig[decade].max(axis=0) - sig[decade].min(axis=0)))
    if residual <= ROUNDING_FLOOR * (1.0 + float(np.max(np.abs(sig[decade])))):
        residual = 0.0  # variation at rounding level: (c x) / c is not exact in floating point
    return InfinityEstimate(
        mode=mode, x=x, directions=U, support=support, residual=residual,
        converged=residual <= tolerance, tolerance=tolerance,
        details={"c_max": family.c_max, "transient_coefficient_max": float(np.max(np.abs(coef[1])))},
    )


def closed_form_h_infinity(spec) -> MarchaudMap:
    """Closed-form ``h_inf`` for affine, quadratic-gradient and drift-with-ball specs.

    A ``MarchaudMap`` argument keeps its pointwise-bound constant.
    """
    K = None
    if isinstance(spec, MarchaudMap):
        if spec.spec is None:
            raise UsageError("map has no closed spec; use estimate_h_infinity for a numerical limit")
        K, spec = spec.bound_K, spec.spec
    A = _homogeneous_part(spec)
    return from_spec(Affine(A, np.zeros(A.shape[0])), bound_K=K)


def _homogeneous_part(spec) -> np.ndarray:
    if isinstance(spec, Affine):
        return np.array(spec.A)
    if isinstance(spec, NegGradQuadratic):
        return -2.0 * np.array(spec.A)
    if isinstance(spec, (DriftWithBall, ScaledBy, ClosedFormInfinity)):
        return _homogeneous_part(spec.inner)
    raise UsageError(f"no closed form for {type(spec).__name__}; use estimate_h_infinity")


def check_lipschitz_preservation(base: MarchaudMap, c_list, sample_pairs) -> PropertyReport:
    """Falsify ``|h_c(x) - h_c(y)| <= L |x - y|`` for every ``c`` in ``c_list``."""
    if not base.single_valued:
        raise UsageError("Lipschitz preservation is defined for single-valued maps")
    if base.lipschitz_L is None:
        raise UsageError("base map declares no Lipschitz constant")
    L = float(base.lipschitz_L)
    rel = 1e-9
    tested = 0
    worst = 0.0
    for c in c_list:
        hc = scaled_map(base, c)
        for x, y in sample_pairs:
            x = np.asarray(x, float).reshape(-1)
            y = np.asarray(y, float).reshape(-1)
            gap = float(np.linalg.norm(single_value(hc, x) - single_value(hc, y)))
            limit = L * float(np.linalg.norm(x - y))
            tested += 1
            if limit > 0:
                worst = max(worst, gap / limit)
            if gap > limit * (1 + rel):
                return PropertyReport(
                    "lipschitz_preservation", FALSIFIED, tested, rel,
                    {"x": x.tolist(), "y": y.tolist(), "c": float(c), "value": gap, "limit": limit},
                    {"lipschitz_L": L},
                )
    return PropertyReport("lipschitz_preservation", CORROBORATED, tested, rel, None,
                          {"lipschitz_L": L, "worst_ratio": worst})


def check_scaled_bound(base: MarchaudMap, c_list, xs) -> PropertyReport:
    """Falsify ``sup_{w in h_c(x)} |w| <= K (1/c + |x|)`` on samples."""
    rel = 1e-9
    tested = 0
    for c in c_list:
        hc = scaled_map(base, c)
        for x in xs:
            x = np.asarray(x, float).reshape(-1)
            value = convex.sup_norm(evaluate(hc, x))
            limit = base.bound_K * (1.0 / c + np.linalg.norm(x))
            tested += 1
            if value > limit * (1 + rel):
                return PropertyReport("scaled_pointwise_bound", FALSIFIED, tested, rel,
                                      {"x": x.tolist(), "c": float(c), "value": value, "limit": limit})
    return PropertyReport("scaled_pointwise_bound", CORROBORATED, tested, rel)


def check_drift_equivalence(inner: MarchaudMap, eps: float, xs, tolerance: float = 1e-4,
                            family_grid=None, directions=None) -> PropertyReport:
    """Compare the ``h_inf`` estimates of ``inner`` and ``inner + B_eps`` at each sample."""
    grid = default_grid() if family_grid is None else family_grid
    f_inner = ScalingFamily(inner, grid)
    f_drift = ScalingFamily(approximate_drift(inner, eps), grid)
    limit = tolerance + float(eps) / f_inner.c_max
    worst = 0.0
    xs = [np.asarray(x, float).reshape(-1) for x in xs]
    for x in xs:
        a = estimate_h_infinity(f_inner, x, LIMSUP_HULL, directions)
        b = estimate_h_infinity(f_drift, x, LIMSUP_HULL, directions)
        gap = a.distance_between(b)
        worst = max(worst, gap)
        if gap > limit:
            return PropertyReport("drift_equivalence", FALSIFIED, len(xs), limit,
                                  {"x": x.tolist(), "value": gap}, {"eps": float(eps)})
    return PropertyReport("drift_equivalence", CORROBORATED, len(xs), limit, None,
                          {"eps": float(eps), "worst_hausdorff": worst, "c_max": f_inner.c_max})
