import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from srilab import convex
from srilab.convex import Ball, MinkowskiSum, Polytope, Scaled, Singleton
from srilab.errors import UsageError

# ---------------------------------------------------------------- examples


def test_support_examples():
    assert convex.support(Ball([1, 0], 2), [0, 1]) == pytest.approx(2.0)
    assert convex.support(Singleton([3, 4]), [1, 0]) == 3.0
    assert convex.support(Polytope([[0, 0], [1, 0], [0, 1]]), [1, 1]) == 1.0


def test_support_dimension_mismatch():
    with pytest.raises(UsageError):
        convex.support(Ball([0, 0], 1), [1, 0, 0])


def test_project_examples():
    np.testing.assert_allclose(convex.project(Ball([3, 4], 1), [0, 0]), [2.4, 3.2], atol=1e-12)
    np.testing.assert_allclose(convex.project(Singleton([1, 1]), [5, 5]), [1, 1])
    np.testing.assert_allclose(convex.project(Polytope([[1, 0], [2, 0]]), [0, 0]), [1, 0], atol=1e-12)


def test_distance_examples():
    assert convex.distance([0, 0], Ball([0, 0], 1)) == 0.0
    assert convex.distance([2, 0], Ball([0, 0], 1)) == pytest.approx(1.0)
    assert convex.distance([0, 3], Polytope([[0, 0], [0, 1]])) == pytest.approx(2.0)


def test_hausdorff_examples():
    B = Ball([0, 0], 1)
    assert convex.hausdorff(B, B) == 0.0
    assert convex.hausdorff(B, Ball([0, 0], 1.5)) == pytest.approx(0.5)
    dirs = [[1, 0], [-1, 0], [0, 1], [0, -1]]
    assert convex.hausdorff(Singleton([1, 0]), Singleton([0, 0]), dirs) == 1.0
    with pytest.raises(UsageError):
        convex.hausdorff(B, B, np.zeros((0, 2)))


def test_minkowski_ball_examples():
    assert convex.support(convex.minkowski_ball(Singleton([1, 1]), 0.5), [1, 0]) == pytest.approx(1.5)
    assert convex.support(convex.minkowski_ball(Ball([0, 0], 1), 1), [1, 0]) == pytest.approx(2.0)
    S = Polytope([[0, 0], [1, 2], [3, -1]])
    U = convex.sphere_directions(2)
    np.testing.assert_allclose(convex.support_many(convex.minkowski_ball(S, 0), U), convex.support_many(S, U))
    with pytest.raises(UsageError):
        convex.minkowski_ball(S, -0.1)


def test_constructor_validation():
    with pytest.raises(UsageError):
        Ball([0, 0], -1)
    with pytest.raises(UsageError):
        Polytope(np.zeros((0, 2)))
    with pytest.raises(UsageError):
        MinkowskiSum(Singleton([0]), Singleton([0, 0]))
    with pytest.raises(UsageError):
        Scaled(Singleton([0]), 0.0)


def test_default_direction_count():
    assert convex.sphere_directions(2).shape == (128, 2)
    assert convex.sphere_directions(3).shape[0] >= 192
    U = convex.sphere_directions(3)
    np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0)


def test_projection_against_slsqp_oracle(rng):
    for _ in range(10):
        V = rng.standard_normal((7, 3))
        y = 3 * rng.standard_normal(3)
        S = Polytope(V)
        p = convex.project(S, y)
        # oracle: minimize over convex weights
        res = minimize(lambda w: np.sum((w @ V - y) ** 2), np.full(7, 1 / 7),
                       constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}], bounds=[(0, 1)] * 7,
                       method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert np.linalg.norm(p - y) <= np.sqrt(res.fun) + 1e-6


def test_projection_minkowski_sum_matches_brute_force(rng):
    S = MinkowskiSum(Polytope([[0, 0], [1, 0], [0, 1]]), Ball([0, 0], 0.5))
    y = np.array([3.0, 2.0])
    p = convex.project(S, y)
    # brute force: dense boundary sampling of the support representation
    theta = np.linspace(0, 2 * np.pi, 20001)
    U = np.column_stack([np.cos(theta), np.sin(theta)])
    best = min(np.linalg.norm(convex.support_point(S, u) - y) for u in U[::20])
    assert np.linalg.norm(p - y) <= best + 1e-9
    assert convex.distance(p, S) <= 1e-8


# ---------------------------------------------------------------- properties

coords = st.floats(-10, 10, allow_nan=False)


@st.composite
def convex_sets(draw, d=2, depth=2):
    kind = draw(st.sampled_from(["single", "ball", "poly"] + (["sum", "scaled"] if depth > 0 else [])))
    vec = st.lists(coords, min_size=d, max_size=d)
    if kind == "single":
        return Singleton(draw(vec))
    if kind == "ball":
        return Ball(draw(vec), draw(st.floats(0, 5)))
    if kind == "poly":
        return Polytope(draw(st.lists(vec, min_size=1, max_size=6)))
    if kind == "sum":
        return MinkowskiSum(draw(convex_sets(d, depth - 1)), draw(convex_sets(d, depth - 1)))
    return Scaled(draw(convex_sets(d, depth - 1)), draw(st.floats(0.01, 10)))


directions = st.lists(coords, min_size=2, max_size=2).filter(lambda u: np.linalg.norm(u) > 1e-3)


@given(convex_sets(), directions, st.floats(0, 100))
def test_support_positive_homogeneity(S, u, lam):
    u = np.array(u)
    lhs = convex.support(S, lam * u)
    rhs = lam * convex.support(S, u)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs)) * 10


@given(convex_sets(), directions, directions)
def test_support_subadditive(S, u, v):
    u, v = np.array(u), np.array(v)
    scale = max(1.0, convex.sup_norm(S) * (np.linalg.norm(u) + np.linalg.norm(v)))
    assert convex.support(S, u + v) <= convex.support(S, u) + convex.support(S, v) + 1e-12 * scale


@given(convex_sets(), st.lists(coords, min_size=2, max_size=2))
def test_projection_lands_in_set(S, y):
    p = convex.project(S, np.array(y))
    assert convex.distance(p, S) <= 1e-8 * max(1.0, convex.sup_norm(S))


@given(convex_sets())
def test_hausdorff_self_is_zero(S):
    assert convex.hausdorff(S, S) == 0.0


@given(convex_sets(), st.integers(0, 2**32 - 1))
def test_interior_samples_have_zero_distance(S, seed):
    r = np.random.default_rng(seed)
    c = S.canonical
    for _ in range(100):
        w = r.dirichlet(np.ones(c.vertices.shape[0]))
        g = r.standard_normal(S.dimension)
        y = w @ c.vertices + c.radius * r.uniform() * g / np.linalg.norm(g)
        assert convex.distance(y, S) <= 1e-8 * max(1.0, convex.sup_norm(S))


@given(convex_sets(), directions)
def test_support_point_attains_support(S, u):
    u = np.array(u)
    p = convex.support_point(S, u)
    assert p @ u == pytest.approx(convex.support(S, u), rel=1e-9, abs=1e-9)


def test_projection_on_thin_triangle():
    # interior point of a sliver whose Gram system is ill-conditioned
    S = Polytope([[0.0, 0.0], [0.0, 1e-7], [1.0, 0.0]])
    assert convex.distance([0.500152014, 1.4446627e-08], S) <= 1e-12
