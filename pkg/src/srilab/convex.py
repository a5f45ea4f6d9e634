"""Compact convex sets in R^d and the geometric primitives built on them.

Sets are kept symbolically as a constructor tree (singleton, ball, polytope,
Minkowski sum, positive scaling).  Every tree normalizes to a *canonical
form* ``P + B_r(0)``: a finite vertex set ``P`` whose hull is the polytope
part, plus the radius ``r`` of a centred ball.  Support functions,
projections and sup-norms are evaluated on that form, exactly for all
variants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import norm, qmc

from .errors import NumericalError, UsageError

PROJECTION_TOL = 1e-8
PROJECTION_MAX_ITER = 10_000

# Minkowski sums of polytopes are pruned to hull vertices above this count.
_PRUNE_THRESHOLD = 64


def _vector(v, name="vector"):
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.size == 0:
        raise UsageError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _check_dim(S: "ConvexSet", u: np.ndarray, name="u") -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != S.dimension:
        raise UsageError(f"dimension mismatch: {name} has dimension {u.shape[0]}, set has {S.dimension}")
    return u


@dataclass(frozen=True, eq=False)
class Canonical:
    """``conv(vertices) + B_radius(0)``."""

    vertices: np.ndarray
    radius: float

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]


class ConvexSet:
    """Abstract nonempty compact convex subset of R^d."""

    dimension: int

    @cached_property
    def canonical(self) -> Canonical:
        raise NotImplementedError

    def support(self, u) -> float:
        return support(self, u)

    def __add__(self, other: "ConvexSet") -> "MinkowskiSum":
        return MinkowskiSum(self, other)

    def __rmul__(self, factor: float) -> "Scaled":
        return Scaled(self, factor)


@dataclass(frozen=True, eq=False)
class Singleton(ConvexSet):
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vector(self.point, "point"))

    @property
    def dimension(self) -> int:
        return self.point.shape[0]

    @cached_property
    def canonical(self) -> Canonical:
        return Canonical(self.point[None, :], 0.0)


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vector(self.center, "center"))
        r = float(self.radius)
        if not np.isfinite(r) or r < 0:
            raise UsageError(f"ball radius must be a finite nonnegative number, got {self.radius!r}")
        object.__setattr__(self, "radius", r)

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    @cached_property
    def canonical(self) -> Canonical:
        return Canonical(self.center[None, :], self.radius)


@dataclass(frozen=True, eq=False)
class Polytope(ConvexSet):
    """Convex hull of a finite list of vertices (redundant points allowed)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.ndim != 2 or V.shape[0] < 1 or V.shape[1] < 1:
            raise UsageError("polytope needs at least one vertex of positive dimension")
        if not np.all(np.isfinite(V)):
            raise UsageError("polytope vertices must be finite")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @cached_property
    def canonical(self) -> Canonical:
        return Canonical(_prune(self.vertices), 0.0)


@dataclass(frozen=True, eq=False)
class MinkowskiSum(ConvexSet):
    left: ConvexSet
    right: ConvexSet

    def __post_init__(self):
        if self.left.dimension != self.right.dimension:
            raise UsageError(
                f"dimension mismatch in Minkowski sum: {self.left.dimension} vs {self.right.dimension}"
            )

    @property
    def dimension(self) -> int:
        return self.left.dimension

    @cached_property
    def canonical(self) -> Canonical:
        a, b = self.left.canonical, self.right.canonical
        V = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, self.dimension)
        return Canonical(_prune(V), a.radius + b.radius)


@dataclass(frozen=True, eq=False)
class Scaled(ConvexSet):
    inner: ConvexSet
    factor: float

    def __post_init__(self):
        f = float(self.factor)
        if not np.isfinite(f) or f <= 0:
            raise UsageError(f"scale factor must be positive, got {self.factor!r}")
        object.__setattr__(self, "factor", f)

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @cached_property
    def canonical(self) -> Canonical:
        c = self.inner.canonical
        V = c.vertices * self.factor
        V.setflags(write=False)
        return Canonical(V, c.radius * self.factor)


def _prune(V: np.ndarray) -> np.ndarray:
    V = np.unique(V, axis=0) if V.shape[0] > 1 else V
    d = V.shape[1]
    if d == 1 and V.shape[0] > 2:
        V = np.array([V.min(axis=0), V.max(axis=0)])
    elif V.shape[0] > _PRUNE_THRESHOLD and V.shape[0] > d + 1:
        try:
            V = V[ConvexHull(V).vertices]
        except QhullError:
            pass  # lower-dimensional point cloud: keep every point
    V = np.ascontiguousarray(V)
    V.setflags(write=False)
    return V


# --------------------------------------------------------------------------
# primitives


def support(S: ConvexSet, u) -> float:
    """Support function ``sup_{y in S} <u, y>``."""
    u = _check_dim(S, u)
    c = S.canonical
    return float(np.max(c.vertices @ u) + c.radius * np.linalg.norm(u))


def support_many(S: ConvexSet, U: np.ndarray) -> np.ndarray:
    """Support values for every row of ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != S.dimension:
        raise UsageError(f"dimension mismatch: directions have dimension {U.shape[1]}, set has {S.dimension}")
    c = S.canonical
    return np.max(U @ c.vertices.T, axis=1) + c.radius * np.linalg.norm(U, axis=1)


def support_point(S: ConvexSet, u) -> np.ndarray:
    """A maximizer of ``<u, .>`` over S (first maximizing vertex on ties)."""
    u = _check_dim(S, u)
    c = S.canonical
    v = c.vertices[int(np.argmax(c.vertices @ u))].copy()
    nu = np.linalg.norm(u)
    if c.radius > 0 and nu > 0:
        v += c.radius * u / nu
    return v


def centroid(S: ConvexSet) -> np.ndarray:
    """Vertex average of the canonical form (a point of S, representation dependent)."""
    return S.canonical.vertices.mean(axis=0)


def sup_norm(S: ConvexSet) -> float:
    """``sup_{w in S} ||w||``, exact: the max vertex norm plus the ball radius."""
    c = S.canonical
    return float(np.max(np.linalg.norm(c.vertices, axis=1)) + c.radius)


def project(S: ConvexSet, y) -> np.ndarray:
    """Euclidean projection of ``y`` onto S.

    Closed form for single-vertex and segment polytope parts; Wolfe's
    minimum-norm-point method otherwise.

    Raises
    ------
    NumericalError
        If the vertex QP does not converge within the iteration cap.
    """
    y = _check_dim(S, y, "y")
    c = S.canonical
    z = _project_hull(c.vertices, y)
    if c.radius > 0:
        w = y - z
        nw = np.linalg.norm(w)
        if nw <= c.radius:
            return y.copy()
        z = z + (c.radius / nw) * w
    return z


def distance(y, S: ConvexSet) -> float:
    """``d(y, S) = inf_{z in S} ||z - y||``."""
    y = _check_dim(S, y, "y")
    c = S.canonical
    return max(0.0, float(np.linalg.norm(y - _project_hull(c.vertices, y))) - c.radius)


def distance_many(Y: np.ndarray, S: ConvexSet) -> np.ndarray:
    """Row-wise ``d(y, S)``; vectorized when the polytope part is a point."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    c = S.canonical
    if c.vertices.shape[0] == 1:
        return np.maximum(np.linalg.norm(Y - c.vertices[0], axis=1) - c.radius, 0.0)
    return np.array([distance(y, S) for y in Y])


def hausdorff(S1: ConvexSet, S2: ConvexSet, directions=None) -> float:
    """Support-function lower bound on the Hausdorff distance.

    ``max_u |h_S1(u) - h_S2(u)|`` over the supplied unit directions; exact as
    the direction set becomes dense.  Defaults to ``64 * d`` quasi-uniform
    sphere directions.
    """
    if S1.dimension != S2.dimension:
        raise UsageError(f"dimension mismatch: {S1.dimension} vs {S2.dimension}")
    if directions is None:
        directions = sphere_directions(S1.dimension)
    U = np.asarray(directions, dtype=float)
    if U.size == 0:
        raise UsageError("hausdorff needs at least one direction")
    U = U.reshape(-1, S1.dimension)
    if S1 is S2:
        return 0.0
    return float(np.max(np.abs(support_many(S1, U) - support_many(S2, U))))


def minkowski_ball(S: ConvexSet, r: float) -> MinkowskiSum:
    """``S + B_r(0)``."""
    r = float(r)
    if not r >= 0:
        raise UsageError(f"ball radius must be nonnegative, got {r!r}")
    return MinkowskiSum(S, Ball(np.zeros(S.dimension), r))


@lru_cache(maxsize=64)
def _sphere_directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        U = np.array([[-1.0], [1.0]])
    elif d == 2:
        theta = 2 * np.pi * np.arange(count) / count
        U = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        pts = qmc.Halton(d, scramble=False).random(count + 1)[1:]
        G = norm.ppf(pts)
        U = G / np.linalg.norm(G, axis=1, keepdims=True)
        eye = np.eye(d)
        U = np.vstack([eye, -eye, U])
    U.setflags(write=False)
    return U


def sphere_directions(d: int, count: int | None = None) -> np.ndarray:
    """Deterministic quasi-uniform unit directions in R^d (default ``64 * d``).

    Equally spaced angles in 2-D, ``{-1, +1}`` in 1-D, and a Halton sequence
    pushed through the Gaussian quantile (plus the coordinate axes) above.
    """
    if d < 1:
        raise UsageError("dimension must be positive")
    return _sphere_directions(int(d), int(count if count is not None else 64 * d))


# --------------------------------------------------------------------------
# polytope projection


def _project_hull(V: np.ndarray, y: np.ndarray) -> np.ndarray:
    k = V.shape[0]
    if k == 1:
        return V[0].copy()
    if k == 2:
        e = V[1] - V[0]
        ee = e @ e
        if ee == 0.0:
            return V[0].copy()
        s = min(1.0, max(0.0, float((y - V[0]) @ e / ee)))
        return V[0] + s * e
    if V.shape[1] == 1:
        return np.clip(y, V.min(axis=0), V.max(axis=0))
    p, _ = min_norm_point(V - y)
    return y + p


def min_norm_point(P: np.ndarray, tol: float = 1e-12, max_iter: int = PROJECTION_MAX_ITER):
    """Minimum-norm point of ``conv(P)`` by Wolfe's algorithm.

    Returns the point and its barycentric weights over the rows of ``P``.
    Convergence is declared when the Wolfe gap ``min_j <x, p_c - p_j>``
    falls below ``tol * |x| * max_j |p_j|`` over vertices outside the current
    corral, or when ``|x|`` stops decreasing (rounding-level stall).
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    scale = max(float(np.max(np.einsum("ij,ij->i", P, P))), 1e-300)
    root_scale = np.sqrt(scale)
    eps_w = 1e-12
    corral = [int(np.argmin(np.einsum("ij,ij->i", P, P)))]
    lam = np.array([1.0])
    x = P[corral[0]].copy()
    gap = np.inf
    for _ in range(max_iter):
        # gap against a corral vertex: <x, p_c> = |x|^2 in exact arithmetic, and
        # differencing cancels the rounding error carried by x
        c = corral[int(np.argmax(lam))]
        g = (P - P[c]) @ x
        g[corral] = np.inf
        j = int(np.argmin(g))
        gap = float(-g[j])
        if gap <= tol * np.sqrt(x @ x) * root_scale:
            break
        prev, corral_prev, lam_prev = float(x @ x), list(corral), lam.copy()
        corral.append(j)
        lam = np.append(lam, 0.0)
        while True:
            w = _affine_minimizer(P[corral])
            if np.all(w > eps_w):
                lam = w
                break
            neg = w <= eps_w
            denom = lam[neg] - w[neg]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(denom > 0, lam[neg] / denom, np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = theta * w + (1 - theta) * lam
            lam[lam < eps_w] = 0.0
            keep = lam > 0
            corral = [c for c, kp in zip(corral, keep) if kp]
            lam = lam[keep]
            lam /= lam.sum()
            if len(corral) == 1:
                break
        x_new = lam @ P[corral]
        if float(x_new @ x_new) >= prev:
            # exact iterations decrease |x| strictly; a stall is rounding-level degeneracy
            corral, lam = corral_prev, lam_prev
            break
        x = x_new
    else:
        raise NumericalError(
            f"polytope projection did not converge in {max_iter} iterations", residual=np.sqrt(max(gap, 0.0))
        )
    weights = np.zeros(k)
    weights[corral] = lam
    return x, weights


def _affine_minimizer(Q: np.ndarray) -> np.ndarray:
    """Affine weights of the minimum-norm point of aff(Q), solved in edge coordinates."""
    if Q.shape[0] == 1:
        return np.ones(1)
    D = (Q[1:] - Q[0]).T
    mu = np.linalg.lstsq(D, -Q[0], rcond=None)[0]
    return np.r_[1.0 - mu.sum(), mu]
