import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srilab import maps
from srilab.engine import (
    Trajectory, interpolate, iterate, make_noise, make_schedule, piecewise_y, sample_noise, verify_trajectory,
)
from srilab.errors import UsageError, ValidationError
from srilab.maps import Affine, DriftWithBall

ZERO_NOISE = {"kind": "gaussian", "sigma": 0.0}


def test_schedule_examples():
    h = make_schedule({"family": "harmonic", "a0": 1})
    a = h.values(4)
    assert a[0] == 1.0 and a[3] == 0.25
    p = make_schedule({"family": "power", "a0": 1, "gamma": 0.6})
    assert p.values(3)[2] == pytest.approx(3 ** -0.6)
    with pytest.raises(ValidationError, match=r"sum of a\(n\)\^2 diverges"):
        make_schedule({"family": "power", "a0": 1, "gamma": 0.4})


def test_schedule_rejections():
    for bad in ({"family": "power", "gamma": 1.5}, {"family": "harmonic", "a0": 2.0},
                {"family": "custom", "values": [0.5, 1.2]}, {"family": "cosine"}):
        with pytest.raises(ValidationError):
            make_schedule(bad)
    sched = make_schedule({"family": "custom", "values": [0.5, 0.5]})
    with pytest.raises(UsageError):
        sched.values(3)


def test_noise_K_minimum():
    assert make_noise({"kind": "bounded_iid", "half_width": 1.0}, 3).bound_K == pytest.approx(1.0)
    assert make_noise({"kind": "gaussian", "sigma": 2.0}, 2).bound_K == pytest.approx(8.0)
    with pytest.raises(ValidationError) as err:
        make_noise({"kind": "gaussian", "sigma": 1.0, "K": 0.5}, 2)
    assert err.value.field == "noise.K"


def test_bounded_noise_clt_band(rng):
    model = make_noise({"kind": "bounded_iid", "half_width": 1.0}, 2)
    draws = model.shape(model.draw_raw(rng, 100_000), np.zeros(2))
    band = 3 * (1 / np.sqrt(3)) / np.sqrt(1e5)
    assert np.all(np.abs(draws.mean(axis=0)) <= band)
    assert np.all(np.abs(draws) <= 1.0)


def test_zero_sigma_noise_is_zero(rng):
    model = make_noise(ZERO_NOISE, 3)
    np.testing.assert_array_equal(sample_noise(model, [1e3, -2.0, 5.0], rng), np.zeros(3))


def test_state_scaled_second_moment(rng):
    d = 2
    model = make_noise({"kind": "state_scaled_gaussian", "sigma0": 1.0}, d)
    x = np.array([3.0, 0.0])
    draws = model.shape(model.draw_raw(rng, 100_000), x)
    assert np.mean(np.sum(draws**2, axis=1)) == pytest.approx(d * (1 + 9), rel=0.05)


def test_iterate_examples():
    zero = maps.affine_map([[0.0]], [0.0])
    traj = iterate(zero, {"family": "harmonic"}, ZERO_NOISE, "minimal_norm", [2.5], 50, rng=1)
    np.testing.assert_array_equal(traj.x[:, 0], 2.5)
    neg = maps.affine_map([[-1.0]], [0.0])
    traj = iterate(neg, {"family": "harmonic"}, ZERO_NOISE, "minimal_norm", [7.0], 5, rng=1)
    assert traj.x[1, 0] == 0.0
    rep = maps.affine_map([[1.0]], [0.0])
    traj = iterate(rep, {"family": "harmonic"}, ZERO_NOISE, "minimal_norm", [1.5], 2, rng=1)
    assert traj.x[2, 0] == pytest.approx(3 * 1.5)
    np.testing.assert_array_equal(traj.t, [0.0, 1.0, 1.5])


def test_repeller_grows_and_guards():
    rep = maps.affine_map([[1.0]], [0.0])
    traj = iterate(rep, {"family": "custom", "values": [1.0] * 100}, ZERO_NOISE, "minimal_norm", [1.0], 100,
                   rng=0, guard=1e6)
    assert traj.diverged
    assert traj.N == 20  # 2^20 > 1e6 is the first crossing
    assert not verify_trajectory(traj, rep)


def test_iterate_rejects_bad_input():
    h = maps.affine_map([[-1.0]], [0.0])
    with pytest.raises(UsageError):
        iterate(h, {"family": "harmonic"}, ZERO_NOISE, "minimal_norm", [1.0], 0)
    with pytest.raises(UsageError):
        iterate(h, {"family": "harmonic"}, ZERO_NOISE, "minimal_norm", [1.0, 2.0], 5)


def test_interpolation_examples():
    traj = Trajectory(x=[[0.0], [2.0], [3.0], [3.5]], y=[[2.0], [2.0], [1.0]], M=[[0.0]] * 3,
                      a=[1.0, 0.5, 0.5], t=[0.0, 1.0, 1.5, 2.0])
    assert interpolate(traj, 1.5)[0] == 3.0
    assert interpolate(traj, 0.5)[0] == 1.0
    np.testing.assert_array_equal(piecewise_y(traj, 1.5), traj.y[2])
    np.testing.assert_array_equal(piecewise_y(traj, 1.99), traj.y[2])
    np.testing.assert_array_equal(piecewise_y(traj, 1.0), traj.y[1])
    with pytest.raises(UsageError):
        interpolate(traj, 2.5)


def test_verify_detects_tampering():
    h = maps.affine_map([[-1.0]], [0.0])
    traj = iterate(h, {"family": "harmonic"}, {"kind": "bounded_iid", "half_width": 1.0}, "minimal_norm",
                   [5.0], 200, rng=3)
    assert verify_trajectory(traj, h) == []
    x = traj.x.copy()
    x[50, 0] += 1e-6
    bad = Trajectory(x, traj.y, traj.M, traj.a, traj.t)
    assert any("recursion" in p for p in verify_trajectory(bad, h))
    y = traj.y.copy()
    y[10, 0] += 0.5
    bad = Trajectory(traj.x, y, traj.M - np.r_[np.zeros(10), 0.5, np.zeros(189)][:, None], traj.a, traj.t)
    assert any("not in h" in p for p in verify_trajectory(bad, h))


def test_determinism_bitwise():
    H = maps.from_spec(DriftWithBall(Affine([[-1.0, 0.2], [0.0, -1.0]], [1.0, 0.0]), 0.3))
    args = (H, {"family": "harmonic"}, {"kind": "gaussian", "sigma": 1.0}, "random_extreme", [3.0, -1.0], 2000)
    a = iterate(*args, rng=42)
    b = iterate(*args, rng=42)
    for name in ("x", "y", "M", "a", "t"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.seed == 42


@pytest.mark.parametrize("policy", ["minimal_norm", "centroid", "random_extreme",
                                    maps.Selection("support_point", [1.0, -1.0])])
def test_fast_and_generic_paths_agree(policy):
    H = maps.from_spec(DriftWithBall(Affine([[-1.0, 0.5], [-0.5, -1.0]], [0.5, 0.0]), 0.2))
    custom = maps.custom_map(2, H.evaluator, H.bound_K)
    args = ({"family": "power", "a0": 0.5, "gamma": 0.7}, {"kind": "state_scaled_gaussian", "sigma0": 0.3},
            policy, [4.0, 2.0], 500)
    fast = iterate(H, *args, rng=7)
    slow = iterate(custom, *args, rng=7)
    np.testing.assert_allclose(fast.x, slow.x, atol=1e-12, rtol=1e-12)
    np.testing.assert_allclose(fast.y, slow.y, atol=1e-12, rtol=1e-12)
    assert verify_trajectory(fast, H) == []


@pytest.mark.parametrize("noise", [{"kind": "bounded_iid", "half_width": 1.0}, {"kind": "gaussian", "sigma": 0.5},
                                   {"kind": "state_scaled_gaussian", "sigma0": 0.7}])
def test_empirical_noise_moment(noise):
    h = maps.affine_map(-np.eye(2), [0.0, 0.0])
    traj = iterate(h, {"family": "harmonic"}, noise, "minimal_norm", [2.0, 2.0], 20_000, rng=11)
    K = make_noise(noise, 2).bound_K
    ratio = np.mean(np.sum(traj.M**2, axis=1) / (1 + traj.norms[:-1] ** 2))
    assert ratio <= K * 1.05


# ---------------------------------------------------------------- properties

coef = st.floats(-2, 2)


@settings(max_examples=40)
@given(st.lists(coef, min_size=4, max_size=4), st.lists(coef, min_size=2, max_size=2), st.floats(0, 1),
       st.sampled_from(["minimal_norm", "centroid", "random_extreme"]),
       st.sampled_from([{"kind": "bounded_iid", "half_width": 1.0}, {"kind": "gaussian", "sigma": 2.0},
                        {"kind": "state_scaled_gaussian", "sigma0": 0.5}]),
       st.integers(0, 2**31))
def test_trajectory_invariants(A, b, eps, policy, noise, seed):
    H = maps.from_spec(DriftWithBall(Affine(np.reshape(A, (2, 2)), b), eps))
    traj = iterate(H, {"family": "harmonic"}, noise, policy, [1.0, -1.0], 300, rng=seed)
    assert verify_trajectory(traj, H) == []
    assert np.all(np.diff(traj.t) > 0)
