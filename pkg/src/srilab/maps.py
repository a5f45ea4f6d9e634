"""Marchaud set-valued maps, their spec algebra, selections and property probes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import convex
from .convex import ConvexSet, MinkowskiSum, Scaled, Singleton, minkowski_ball
from .errors import UsageError

CORROBORATED = "corroborated"
FALSIFIED = "falsified"


# --------------------------------------------------------------------------
# serializable map specs


@dataclass(frozen=True, eq=False)
class Affine:
    """``x -> {A x + b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise UsageError(f"affine spec needs square A matching b, got A{A.shape} and b{b.shape}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True, eq=False)
class NegGradQuadratic:
    """``x -> {-(2 A x + B)}``, the negative gradient of ``x'Ax + Bx + c`` (A symmetric)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.array(self.B, dtype=float).reshape(-1)
        if A.shape[0] != A.shape[1] or A.shape[0] != B.shape[0]:
            raise UsageError(f"quadratic spec needs square A matching B, got A{A.shape} and B{B.shape}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise UsageError("quadratic spec needs a symmetric A")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class DriftWithBall:
    inner: "MapSpec"
    eps: float

    def __post_init__(self):
        if not float(self.eps) >= 0:
            raise UsageError(f"eps must be nonnegative, got {self.eps!r}")
        object.__setattr__(self, "eps", float(self.eps))


@dataclass(frozen=True)
class ScaledBy:
    inner: "MapSpec"
    c: float

    def __post_init__(self):
        if not float(self.c) > 0:
            raise UsageError(f"scale c must be positive, got {self.c!r}")
        object.__setattr__(self, "c", float(self.c))


@dataclass(frozen=True)
class ClosedFormInfinity:
    inner: "MapSpec"


MapSpec = Union[Affine, NegGradQuadratic, DriftWithBall, ScaledBy, ClosedFormInfinity]


def spec_dimension(spec: MapSpec) -> int:
    if isinstance(spec, Affine):
        return spec.A.shape[0]
    if isinstance(spec, NegGradQuadratic):
        return spec.A.shape[0]
    return spec_dimension(spec.inner)


def affine_ball_form(spec: MapSpec):
    """Reduce a spec to ``(A, b, eps)`` with ``h(x) = {A x + b} + B_eps(0)``.

    The whole spec algebra closes on this form, which is what the compiled
    recursion kernels consume.
    """
    if isinstance(spec, Affine):
        return spec.A, spec.b, 0.0
    if isinstance(spec, NegGradQuadratic):
        return -2.0 * spec.A, -spec.B, 0.0
    if isinstance(spec, DriftWithBall):
        A, b, e = affine_ball_form(spec.inner)
        return A, b, e + spec.eps
    if isinstance(spec, ScaledBy):
        A, b, e = affine_ball_form(spec.inner)
        return A, b / spec.c, e / spec.c
    if isinstance(spec, ClosedFormInfinity):
        A, _, _ = affine_ball_form(spec.inner)
        return A, np.zeros(A.shape[0]), 0.0
    raise UsageError(f"unsupported map spec {type(spec).__name__}")


def _spec_evaluator(spec: MapSpec) -> Callable[[np.ndarray], ConvexSet]:
    if isinstance(spec, Affine):
        A, b = spec.A, spec.b
        return lambda x: Singleton(A @ x + b)
    if isinstance(spec, NegGradQuadratic):
        A, B = spec.A, spec.B
        return lambda x: Singleton(-(2.0 * (A @ x) + B))
    if isinstance(spec, DriftWithBall):
        inner, eps = _spec_evaluator(spec.inner), spec.eps
        return lambda x: minkowski_ball(inner(x), eps)
    if isinstance(spec, ScaledBy):
        inner, c = _spec_evaluator(spec.inner), spec.c
        return lambda x: Scaled(inner(c * x), 1.0 / c)
    if isinstance(spec, ClosedFormInfinity):
        A, _, _ = affine_ball_form(spec.inner)
        return lambda x: Singleton(A @ x)
    raise UsageError(f"unsupported map spec {type(spec).__name__}")


# --------------------------------------------------------------------------
# maps


@dataclass(frozen=True, eq=False)
class MarchaudMap:
    """A set-valued map ``x -> h(x)`` with its pointwise-bound constant.

    ``spec`` is set for maps built from the serializable spec algebra; maps
    with arbitrary evaluators carry ``spec=None`` and cannot be written to a
    config file.
    """

    dimension: int
    evaluator: Callable[[np.ndarray], ConvexSet]
    bound_K: float
    lipschitz_L: Optional[float] = None
    spec: Optional[MapSpec] = None
    single_valued: bool = False

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise UsageError("map dimension must be positive")
        if not float(self.bound_K) > 0:
            raise UsageError(f"bound_K must be positive, got {self.bound_K!r}")
        if self.lipschitz_L is not None and not float(self.lipschitz_L) > 0:
            raise UsageError(f"lipschitz_L must be positive, got {self.lipschitz_L!r}")

    def __call__(self, x) -> ConvexSet:
        return evaluate(self, x)

    @property
    def affine_ball(self):
        """``(A, b, eps)`` when the map has a closed spec, else ``None``."""
        return None if self.spec is None else affine_ball_form(self.spec)


def _positive_or(value, fallback):
    return value if value > 0 else fallback


def from_spec(spec: MapSpec, bound_K: float | None = None, lipschitz_L: float | None = None) -> MarchaudMap:
    """Build the map a spec denotes, deriving K and L when not supplied."""
    d = spec_dimension(spec)
    A, b, eps = affine_ball_form(spec)
    normA = float(np.linalg.norm(A, 2))
    if isinstance(spec, DriftWithBall):
        inner = from_spec(spec.inner)
        m = approximate_drift(inner, spec.eps)
        K, L = m.bound_K, None
    elif isinstance(spec, (ScaledBy, ClosedFormInfinity)):
        K = from_spec(spec.inner).bound_K
        L = normA if eps == 0 and normA > 0 else None
    else:
        K = _positive_or(max(normA, float(np.linalg.norm(b))), 1.0)
        L = normA if normA > 0 else None
    return MarchaudMap(
        dimension=d,
        evaluator=_spec_evaluator(spec),
        bound_K=float(bound_K if bound_K is not None else K),
        lipschitz_L=lipschitz_L if lipschitz_L is not None else L,
        spec=spec,
        single_valued=eps == 0,
    )


def affine_map(A, b, **kw) -> MarchaudMap:
    return from_spec(Affine(A, b), **kw)


def neg_grad_quadratic_map(A, B, **kw) -> MarchaudMap:
    return from_spec(NegGradQuadratic(A, B), **kw)


def custom_map(dimension, evaluator, bound_K, lipschitz_L=None, single_valued=False) -> MarchaudMap:
    """Wrap an arbitrary ``x -> ConvexSet`` callable (not serializable)."""
    return MarchaudMap(int(dimension), evaluator, float(bound_K), lipschitz_L, None, single_valued)


def evaluate(h: MarchaudMap, x) -> ConvexSet:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != h.dimension:
        raise UsageError(f"dimension mismatch: x has dimension {x.shape[0]}, map has {h.dimension}")
    S = h.evaluator(x)
    if S.dimension != h.dimension:
        raise UsageError(f"map evaluator returned a set of dimension {S.dimension}, expected {h.dimension}")
    return S


def single_value(h: MarchaudMap, x) -> np.ndarray:
    """The unique element of ``h(x)`` for a single-valued map."""
    if not h.single_valued:
        raise UsageError("map is set-valued; a single value is undefined")
    c = evaluate(h, x).canonical
    return c.vertices[0].copy()


def approximate_drift(inner: MarchaudMap, eps: float) -> MarchaudMap:
    """``H(x) = h(x) + B_eps(0)``.

    With a Lipschitz inner map the pointwise bound is
    ``K = (|h(0)| + eps) v L``; otherwise ``K_inner + eps`` is used.
    """
    eps = float(eps)
    if not eps >= 0:
        raise UsageError(f"eps must be nonnegative, got {eps!r}")
    if inner.lipschitz_L is not None and inner.single_valued:
        h0 = convex.sup_norm(evaluate(inner, np.zeros(inner.dimension)))
        K = max(h0 + eps, inner.lipschitz_L)
    else:
        K = inner.bound_K + eps
    K = _positive_or(K, 1.0)
    evaluator = inner.evaluator
    return MarchaudMap(
        dimension=inner.dimension,
        evaluator=lambda x: minkowski_ball(evaluator(x), eps),
        bound_K=K,
        lipschitz_L=inner.lipschitz_L if eps == 0 else None,
        spec=None if inner.spec is None else DriftWithBall(inner.spec, eps),
        single_valued=inner.single_valued and eps == 0,
    )


def estimate_bound_K(h: MarchaudMap, radii=(0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 1e2, 1e3, 1e4), directions=None) -> float:
    """Sampled pointwise-bound constant over a radius ladder, inflated by 10%."""
    U = convex.sphere_directions(h.dimension) if directions is None else np.asarray(directions, float)
    worst = 0.0
    for rad in radii:
        pts = [np.zeros(h.dimension)] if rad == 0 else [rad * u for u in U]
        for x in pts:
            worst = max(worst, convex.sup_norm(evaluate(h, x)) / (1.0 + np.linalg.norm(x)))
    return 1.1 * _positive_or(worst, 1.0 / 1.1)


# --------------------------------------------------------------------------
# selections

POLICIES = ("minimal_norm", "support_point", "random_extreme", "centroid")


@dataclass(frozen=True)
class Selection:
    """A rule for picking ``y`` from ``h(x)``.

    ``support_point`` with ``direction=None`` draws a fresh direction each
    call, which makes it identical to ``random_extreme``.
    """

    policy: str = "minimal_norm"
    direction: Optional[tuple] = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise UsageError(f"unknown selection policy {self.policy!r}; expected one of {POLICIES}")
        if self.direction is not None:
            if self.policy != "support_point":
                raise UsageError("only support_point takes a fixed direction")
            object.__setattr__(self, "direction", tuple(float(v) for v in np.ravel(self.direction)))

    @property
    def needs_random(self) -> bool:
        return self.policy == "random_extreme" or (self.policy == "support_point" and self.direction is None)

    def pick(self, S: ConvexSet, u=None) -> np.ndarray:
        """Select from S; ``u`` is the pre-drawn direction for random policies."""
        if self.policy == "minimal_norm":
            return convex.project(S, np.zeros(S.dimension))
        if self.policy == "centroid":
            return convex.centroid(S)
        if self.direction is not None:
            return convex.support_point(S, np.asarray(self.direction))
        if u is None:
            raise UsageError(f"{self.policy} needs a direction draw")
        return convex.support_point(S, u)


def as_selection(policy) -> Selection:
    if isinstance(policy, Selection):
        return policy
    if isinstance(policy, str):
        return Selection(policy)
    if isinstance(policy, dict):
        return Selection(policy.get("policy", "minimal_norm"), policy.get("direction"))
    raise UsageError(f"cannot interpret {policy!r} as a selection policy")


def select(policy, S: ConvexSet, rng: np.random.Generator) -> np.ndarray:
    """Pick an element of S under ``policy``, drawing directions from ``rng``."""
    sel = as_selection(policy)
    u = rng.standard_normal(S.dimension) if sel.needs_random else None
    return sel.pick(S, u)


# --------------------------------------------------------------------------
# property probes


@dataclass
class PropertyReport:
    property: str
    verdict: str
    samples_tested: int
    tolerance: float
    witness: Optional[dict] = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict == FALSIFIED and self.witness is None:
            raise UsageError("a falsified verdict must carry a witness")

    @property
    def corroborated(self) -> bool:
        return self.verdict == CORROBORATED

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "verdict": self.verdict,
            "samples_tested": self.samples_tested,
            "tolerance": self.tolerance,
            "witness": _jsonable(self.witness),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _witness(x, y, value):
    return {"x": np.asarray(x, float).tolist(), "y": np.asarray(y, float).tolist(), "value": float(value)}


def _sup_norm_point(S: ConvexSet) -> np.ndarray:
    c = S.canonical
    i = int(np.argmax(np.linalg.norm(c.vertices, axis=1)))
    v = c.vertices[i].copy()
    nv = np.linalg.norm(v)
    if c.radius > 0:
        v = v + c.radius * (v / nv if nv > 0 else np.eye(S.dimension)[0])
    return v


def check_pointwise_bound(h: MarchaudMap, xs) -> PropertyReport:
    """Falsify ``sup_{w in h(x)} |w| <= K (1 + |x|)`` on the sample points."""
    xs = [np.asarray(x, float).reshape(-1) for x in xs]
    if not xs:
        raise UsageError("check_pointwise_bound needs at least one sample")
    rel = 1e-9
    worst_ratio = 0.0
    for x in xs:
        S = evaluate(h, x)
        value = convex.sup_norm(S)
        limit = h.bound_K * (1.0 + np.linalg.norm(x))
        worst_ratio = max(worst_ratio, value / limit)
        if value > limit * (1 + rel):
            return PropertyReport(
                "pointwise_bound", FALSIFIED, len(xs), rel, {**_witness(x, _sup_norm_point(S), value), "limit": limit},
                {"bound_K": h.bound_K, "limit": limit},
            )
    return PropertyReport("pointwise_bound", CORROBORATED, len(xs), rel, None,
                          {"bound_K": h.bound_K, "worst_ratio": worst_ratio})


def check_usc(h: MarchaudMap, centers, shrink_steps: int = 30, rng=None, random_probes: int = 2) -> PropertyReport:
    """Falsification probe for upper semicontinuity.

    Around each center, points at radius ``2^-k`` along every coordinate axis
    (both signs) and a few random directions are evaluated; a random
    support point of ``h(x_k)`` is compared to ``h(x)``.  A distance above
    ``1e-3`` at the finest radius falsifies u.s.c.  A corroborated verdict
    only means no counterexample was found.
    """
    if shrink_steps < 2:
        raise UsageError("shrink_steps must be at least 2")
    rng = np.random.default_rng(0) if rng is None else rng
    tol = 1e-3
    d = h.dimension
    eye = np.eye(d)
    tested = 0
    worst = 0.0
    for x in centers:
        x = np.asarray(x, float).reshape(-1)
        hx = evaluate(h, x)
        probes = list(eye) + list(-eye)
        for _ in range(random_probes):
            g = rng.standard_normal(d)
            probes.append(g / np.linalg.norm(g))
        for p in probes:
            dists = []
            for k in range(1, shrink_steps + 1):
                xk = x + 2.0**-k * p
                yk = convex.support_point(evaluate(h, xk), rng.standard_normal(d))
                dists.append(convex.distance(yk, hx))
                tested += 1
            worst = max(worst, dists[-1])
            if dists[-1] > tol:
                return PropertyReport(
                    "upper_semicontinuity", FALSIFIED, tested, tol, _witness(xk, yk, dists[-1]),
                    {"center": x.tolist(), "final_radius": 2.0**-shrink_steps},
                )
    return PropertyReport("upper_semicontinuity", CORROBORATED, tested, tol, None,
                          {"worst_final_distance": worst, "note": "corroborated means not falsified, not proved"})


def check_graph_inclusion(inner: MarchaudMap, eps: float, xs, rng=None) -> PropertyReport:
    """Check pairs ``(x, y)``, ``y in inner(x) + B_eps``, lie within ``2 eps`` of Graph(inner).

    ``inner`` must be single-valued; the distance to the graph is bounded by
    the distance to ``(x, inner(x))`` in the product norm.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    H = approximate_drift(inner, eps)
    worst = 0.0
    xs = [np.asarray(x, float).reshape(-1) for x in xs]
    for x in xs:
        S = evaluate(H, x)
        u = rng.standard_normal(H.dimension)
        # random member of the ball: scale the support point toward the center
        y = single_value(inner, x) + rng.uniform() ** (1.0 / H.dimension) * (
            convex.support_point(S, u) - single_value(inner, x))
        if convex.distance(y, S) > 1e-8:
            return PropertyReport("graph_inclusion", FALSIFIED, len(xs), 1e-8,
                                  _witness(x, y, convex.distance(y, S)), {"reason": "sample not in H(x)"})
        gap = float(np.linalg.norm(y - single_value(inner, x)))
        worst = max(worst, gap)
        if gap > 2 * eps * (1 + 1e-12) + 1e-15:
            return PropertyReport("graph_inclusion", FALSIFIED, len(xs), 2 * eps, _witness(x, y, gap))
    return PropertyReport("graph_inclusion", CORROBORATED, len(xs), 2 * eps, None, {"worst_gap": worst})


def membership_distances(h: MarchaudMap, X, Y, scale=None) -> np.ndarray:
    """Row-wise ``d(Y[k], h_c(X[k]))`` with ``h_c(x) = h(c x) / c``.

    ``scale`` holds the per-row ``c`` (default 1).  Vectorized for maps with
    a closed spec; evaluated set by set otherwise.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    c = np.ones(X.shape[0]) if scale is None else np.broadcast_to(np.asarray(scale, float), (X.shape[0],))
    form = h.affine_ball
    if form is not None:
        A, b, eps = form
        centers = X @ A.T + b[None, :] / c[:, None]
        return np.maximum(np.linalg.norm(Y - centers, axis=1) - eps / c, 0.0)
    out = np.empty(X.shape[0])
    for k in range(X.shape[0]):
        S = evaluate(h, c[k] * X[k])
        if c[k] != 1.0:
            S = Scaled(S, 1.0 / c[k])
        out[k] = convex.distance(Y[k], S)
    return out
