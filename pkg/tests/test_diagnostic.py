import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srilab import diagnostic as dg
from srilab import maps
from srilab.engine import iterate
from srilab.maps import Affine, DriftWithBall

ZERO_NOISE = {"kind": "gaussian", "sigma": 0.0}
BOUNDED = {"kind": "bounded_iid", "half_width": 1.0}


def neg_x(d=1, eps=0.0):
    return maps.from_spec(DriftWithBall(Affine(-np.eye(d), np.zeros(d)), eps))


def run(h, schedule, noise, x0, N, seed=0, policy="minimal_norm"):
    return iterate(h, schedule, noise, policy, x0, N, rng=seed)


def test_anchors_harmonic():
    traj = run(neg_x(), {"family": "harmonic"}, ZERO_NOISE, [1.0], 20)
    anc = dg.anchors(traj, 2.0)
    assert anc[0] == (0.0, 0)
    assert anc[1][1] == 4
    assert anc[1][0] == pytest.approx(25 / 12)


def test_anchors_constant_steps():
    traj = run(neg_x(), {"family": "custom", "values": [0.5] * 40}, ZERO_NOISE, [1.0], 40)
    anc = dg.anchors(traj, 2.0)
    assert [t for t, _ in anc] == [2.0 * n for n in range(len(anc))]
    assert len(anc) == 11  # t(40) = 20


def test_anchors_short_horizon_warns():
    traj = run(neg_x(), {"family": "harmonic"}, ZERO_NOISE, [1.0], 3)
    with pytest.warns(UserWarning):
        assert dg.anchors(traj, 10.0) == [(0.0, 0)]


def test_rescale_examples():
    traj = run(neg_x(), {"family": "custom", "values": [0.5] * 8}, ZERO_NOISE, [0.5], 8)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0))
    assert seg.r[0] == 1.0
    np.testing.assert_array_equal(seg.x_hat[:4], traj.x[:4])
    traj = run(neg_x(), {"family": "custom", "values": [0.5] * 8}, ZERO_NOISE, [3.0], 8)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0))
    assert seg.r[0] == 3.0 and abs(seg.x_hat[0, 0]) == 1.0


def test_rescale_window_3_6_membership():
    rep = maps.affine_map([[1.0]], [0.0])
    traj = run(rep, {"family": "custom", "values": [1.0]}, ZERO_NOISE, [3.0], 1)
    np.testing.assert_array_equal(traj.x[:, 0], [3.0, 6.0])
    seg = dg.rescale(traj, [(0.0, 0)])
    assert seg.x_hat[0, 0] == 1.0 and seg.x_hat_next[0, 0] == 2.0
    assert maps.membership_distances(rep, seg.x_hat, seg.y_hat, seg.scale)[0] == 0.0


def test_rescale_radius_a():
    traj = run(neg_x(), {"family": "custom", "values": [0.5] * 8}, ZERO_NOISE, [3.0], 8)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0), radius_a=2.0)
    assert seg.r[0] == 1.5
    assert np.linalg.norm(seg.x_hat[0]) == pytest.approx(2.0)


def test_zeta_zero_noise():
    traj = run(neg_x(), {"family": "harmonic"}, ZERO_NOISE, [5.0], 500)
    z = dg.martingale_partial_sums(dg.rescale(traj, dg.anchors(traj, 2.0)))
    assert np.all(z.zeta == 0.0) and z.cauchy_statistic == 0.0 and z.M_omega == 0.0


def test_zeta_single_step():
    traj = run(neg_x(), {"family": "custom", "values": [0.5]}, BOUNDED, [0.2], 1, seed=4)
    seg = dg.rescale(traj, [(0.0, 0)])
    z = dg.martingale_partial_sums(seg)
    np.testing.assert_allclose(z.zeta[1], 0.5 * seg.M_hat[0])


def test_zeta_cauchy_bounded_noise():
    h = neg_x(eps=0.1)
    traj = run(h, {"family": "harmonic"}, BOUNDED, [5.0], 100_000, seed=9)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0))
    z = dg.martingale_partial_sums(seg)
    assert z.cauchy_statistic <= 0.1
    # the oracle: tail sum of a(k)^2 E|M|^2 over the last quarter
    tail = np.sum(traj.a[75_000:] ** 2) / 3.0
    assert tail < 1e-5
    assert z.cauchy_statistic <= dg.cauchy_oracle_bound(seg, z, 1 / 3)


def test_diameter_matches_bruteforce(rng):
    P = rng.standard_normal((300, 2))
    diff = P[:, None] - P[None]
    assert dg._diameter(P) == pytest.approx(np.sqrt((diff**2).sum(-1).max()))
    line = np.c_[np.linspace(0, 1, 50), np.linspace(0, 2, 50)]
    assert dg._diameter(line) == pytest.approx(np.sqrt(5.0))


def test_contraction_linear_flow():
    T = np.log(2.0) + 1.0
    steps = {"family": "custom", "values": [0.01] * 2000}
    traj = run(neg_x(), steps, ZERO_NOISE, [10.0], 2000)
    seg = dg.rescale(traj, dg.anchors(traj, T))
    rep = dg.contraction_report(seg, (0.0, 0.25, 0.5, 0.9), R0_estimate=1.0)
    gaps = np.diff([t for t, _ in seg.anchors])
    assert rep.constrained[0] and not rep.violations
    # discrete product of (1 - a) sits under exp(-gap)
    first = rep.ratios[0]
    assert first <= np.exp(-gaps[0]) and first <= np.exp(-T) + 1e-12
    assert first == pytest.approx(np.exp(-T), rel=0.02)


def test_contraction_repeller_fails_everywhere():
    rep = maps.affine_map([[1.0]], [0.0])
    traj = run(rep, {"family": "custom", "values": [0.1] * 60}, ZERO_NOISE, [2.0], 60)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0))
    cr = dg.contraction_report(seg, (0.0, 0.25, 0.5, 0.75), R0_estimate=1.0)
    assert np.all(cr.ratios > 1)
    assert cr.violations == list(range(cr.ratios.size))
    assert cr.R0_estimate == pytest.approx(seg.r[-2])


def test_contraction_exempts_small_windows():
    traj = run(neg_x(), {"family": "custom", "values": [0.5] * 20}, ZERO_NOISE, [0.5], 20)
    seg = dg.rescale(traj, dg.anchors(traj, 2.0))
    cr = dg.contraction_report(seg, (0.0, 0.25, 0.5, 0.75), R0_estimate=1.0)
    assert not cr.constrained.any() and cr.pass_fraction == 1.0


def test_verdict_examples():
    h = neg_x(eps=0.1)
    stable = dg.diagnose(run(h, {"family": "harmonic"}, BOUNDED, [5.0], 20_000, seed=2), h, noise_K=1 / 3)
    assert stable.verdict == dg.STABLE
    assert "evidence, not proof" in stable.rationale
    rep = maps.affine_map([[1.0]], [0.0])
    unstable = dg.diagnose(run(rep, {"family": "harmonic"}, BOUNDED, [1.0], 10_000, seed=2), rep)
    assert unstable.verdict == dg.UNSTABLE
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        short = dg.diagnose(run(h, {"family": "harmonic"}, BOUNDED, [5.0], 3, seed=2), h, T=5.0)
    assert short.verdict == dg.INCONCLUSIVE
    assert "evidence, not proof" in short.rationale


def test_verdict_overflow_flag():
    rep = maps.affine_map([[1.0]], [0.0])
    traj = iterate(rep, {"family": "custom", "values": [1.0] * 60}, ZERO_NOISE, "minimal_norm", [1.0], 60,
                   rng=0, guard=1e6)
    assert dg.diagnose(traj, rep, T=2.0).verdict == dg.UNSTABLE


def test_K_omega_arithmetic():
    assert dg.K_omega_bound(1.0, 2.0, 1.0) == pytest.approx(5 * np.e**3)
    assert dg.K_omega_bound(1.0, 2.0, 1.0) == pytest.approx(100.43, abs=5e-3)


def test_choose_T_probe_and_fallback():
    T, info = dg.choose_T(neg_x(), (0.0, 0.5, 0.6, 0.7))
    assert info["source"] == "probe"
    assert T == pytest.approx(np.log(2.0) + 1.0, abs=0.02)
    T, info = dg.choose_T(maps.affine_map([[1.0]], [0.0]))
    assert (T, info["source"]) == (dg.FALLBACK_T, "fallback")
    custom = maps.custom_map(1, neg_x().evaluator, 1.0)
    assert dg.choose_T(custom)[0] == dg.FALLBACK_T


def test_ratios_monotone_in_start_norm():
    h = maps.affine_map(-np.eye(2), [0.0, 0.0])
    traj = run(h, {"family": "power", "a0": 0.1, "gamma": 0.6}, ZERO_NOISE, [30.0, 40.0], 10_000)
    rep = dg.diagnose(traj, h)
    order = np.argsort(-rep.segments.anchor_norms[:-1])
    ratios = rep.contraction.ratios[order]
    assert np.all(np.diff(ratios) >= -1e-12)


def test_report_serializes():
    import json

    h = neg_x(eps=0.1)
    rep = dg.diagnose(run(h, {"family": "harmonic"}, BOUNDED, [5.0], 2000, seed=1), h, noise_K=1 / 3)
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["verdict"] == rep.verdict
    assert set(doc["invariants"]) == {"rescaled_recursion", "scaled_membership", "r_at_least_one",
                                      "anchor_spacing", "K_omega_envelope", "zeta_cauchy"}


# ---------------------------------------------------------------- properties

coef = st.floats(-1.5, 1.5)


@settings(max_examples=30)
@given(st.lists(coef, min_size=4, max_size=4), st.floats(0, 1),
       st.sampled_from([BOUNDED, {"kind": "state_scaled_gaussian", "sigma0": 0.5}]),
       st.floats(0.5, 4.0), st.integers(0, 2**31))
def test_rescaling_invariants(A, eps, noise, T, seed):
    H = maps.from_spec(DriftWithBall(Affine(np.reshape(A, (2, 2)), [0.5, -0.5]), eps))
    traj = run(H, {"family": "harmonic"}, noise, [20.0, -10.0], 3000, seed=seed, policy="random_extreme")
    from srilab.engine import make_noise

    K = make_noise(noise, 2).bound_K
    rep = dg.diagnose(traj, H, T=T, noise_K=K)
    for name in ("rescaled_recursion", "scaled_membership", "r_at_least_one", "anchor_spacing",
                 "K_omega_envelope"):
        assert rep.invariants[name]["passed"], (name, rep.invariants[name])
    assert np.all(rep.r >= 1.0)
