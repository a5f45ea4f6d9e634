"""Projective rescaling diagnostic for the boundedness of SRI iterates.

Time is cut into windows of length at least ``T`` anchored at knots
``T_n = t(m(n))``; each window is divided by ``r(n) = |x̄(T_n)| v 1``
and the window-end contraction ``|x̄(T_{n+1})| / |x̄(T_n)| < delta_4`` is
tested on windows that start far from the origin.  The outcome is
evidence about stability, never a proof.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import convex
from .convex import Singleton
from .engine import Trajectory
from .errors import UsageError
from .inclusion import AttractorSpec, probe_attractor, validate_delta_chain
from .maps import MarchaudMap, membership_distances

STABLE = "stable_evidence"
UNSTABLE = "unstable_evidence"
INCONCLUSIVE = "inconclusive"

FALLBACK_T = 1.0  # T(eps) + 1 with T(eps) = 0: the smallest value of the probe formula
DOOB_FAILURE_PROB = 1e-3


# --------------------------------------------------------------------------
# anchors and rescaling


def anchors(traj: Trajectory, T: float) -> list[tuple[float, int]]:
    """``T_0 = 0`` and ``T_n = min{t(m) : t(m) >= T_{n-1} + T}``, as ``(T_n, m(n))`` pairs."""
    if not T > 0:
        raise UsageError(f"window length T must be positive, got {T}")
    t = traj.t
    out = [(0.0, 0)]
    if t[-1] < T:
        warnings.warn(f"trajectory horizon t(N)={t[-1]:.4g} is shorter than T={T:.4g}; single anchor only",
                      stacklevel=2)
        return out
    m = 0
    while True:
        nxt = int(np.searchsorted(t, t[m] + T, side="left"))
        if nxt >= t.shape[0]:
            return out
        m = nxt
        out.append((float(t[m]), m))


@dataclass(frozen=True, eq=False)
class Segments:
    """Rescaled trajectory, indexed by step ``k`` (``0 <= k < N``).

    ``x_hat[k] = x_k / r(w)``, ``x_hat_next[k] = x_{k+1} / r(w)`` with ``w``
    the window of step ``k``, so the last step of a window carries
    ``x̂(T_{n+1}^-)``.  ``r[w]`` is the window scale, ``anchor_norms[w]``
    the unscaled ``|x̄(T_w)|``.
    """

    anchors: list
    r: np.ndarray
    anchor_norms: np.ndarray
    window: np.ndarray
    scale: np.ndarray
    x_hat: np.ndarray
    x_hat_next: np.ndarray
    y_hat: np.ndarray
    M_hat: np.ndarray
    a: np.ndarray
    radius_a: float

    @property
    def complete_windows(self) -> int:
        """Windows closed by a following anchor."""
        return len(self.anchors) - 1

    def window_end_values(self) -> np.ndarray:
        """``x̂(T_{n+1}^-)`` for every complete window."""
        ends = np.array([m for _, m in self.anchors[1:]], dtype=int) - 1
        return self.x_hat_next[ends]


def rescale(traj: Trajectory, anchor_list, radius_a: float = 1.0) -> Segments:
    """Divide each window by ``r(n) = max(|x̄(T_n)| / a, 1)`` (``a = radius_a``)."""
    if not radius_a > 0:
        raise UsageError("radius_a must be positive")
    starts = np.array([m for _, m in anchor_list], dtype=int)
    if starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] > traj.N:
        raise UsageError("anchors do not belong to this trajectory")
    anchor_norms = np.linalg.norm(traj.x[starts], axis=1)
    r = np.maximum(anchor_norms / radius_a, 1.0)
    N = traj.N
    window = np.searchsorted(starts, np.arange(N), side="right") - 1
    scale = r[window] if N else np.empty(0)
    inv = 1.0 / scale[:, None]
    return Segments(
        anchors=list(anchor_list), r=r, anchor_norms=anchor_norms, window=window, scale=scale,
        x_hat=traj.x[:-1] * inv, x_hat_next=traj.x[1:] * inv, y_hat=traj.y * inv, M_hat=traj.M * inv,
        a=np.asarray(traj.a), radius_a=float(radius_a),
    )


# --------------------------------------------------------------------------
# martingale partial sums


@dataclass
class ZetaSummary:
    zeta: np.ndarray
    cauchy_statistic: float
    M_omega: float
    tail_start: int


def _diameter(P: np.ndarray) -> float:
    if P.shape[0] < 2:
        return 0.0
    if P.shape[1] == 1:
        return float(P.max() - P.min())
    Q = np.unique(P, axis=0)
    if Q.shape[0] > 3 * P.shape[1]:
        try:
            Q = Q[ConvexHull(Q).vertices]
        except QhullError:
            # flat cloud: extreme points along the principal axes
            centered = Q - Q.mean(axis=0)
            _, _, Vt = np.linalg.svd(centered, full_matrices=False)
            proj = centered @ Vt.T
            keep = np.unique(np.r_[proj.argmin(axis=0), proj.argmax(axis=0)])
            Q = Q[keep]
    if Q.shape[0] > 4000:
        # upper bound: twice the radius about the first point
        return float(2 * np.max(np.linalg.norm(Q - Q[0], axis=1)))
    diff = Q[:, None, :] - Q[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def martingale_partial_sums(seg: Segments) -> ZetaSummary:
    """``ζ̂_n = sum_{k<n} a(k) M̂_{k+1}`` with its tail diameter and window increments.

    The Cauchy statistic is ``max |ζ̂_n - ζ̂_m|`` over the last quarter of
    indices; ``M_omega`` is the largest increment of ``ζ̂`` measured from a
    window start.
    """
    N, d = seg.M_hat.shape
    zeta = np.zeros((N + 1, d))
    np.cumsum(seg.a[:, None] * seg.M_hat, axis=0, out=zeta[1:])
    tail_start = (3 * N) // 4
    cauchy = _diameter(zeta[tail_start:])
    M_omega = 0.0
    if N:
        starts = np.array([m for _, m in seg.anchors], dtype=int)
        base = zeta[starts[seg.window]]
        M_omega = float(np.max(np.linalg.norm(zeta[1:] - base, axis=1)))
    return ZetaSummary(zeta, cauchy, M_omega, tail_start)


def cauchy_oracle_bound(seg: Segments, zeta: ZetaSummary, noise_K: float, p: float = DOOB_FAILURE_PROB) -> float:
    """Doob-inequality bound on the tail diameter of ``ζ̂``, exceeded with probability at most ``p``.

    With ``V = sum_{k >= tail} a(k)^2 K (1/r^2 + |x̂_k|^2)`` bounding the tail
    second moment, the tail stays within ``sqrt(V / p)`` of its start.
    """
    k = zeta.tail_start
    xs = seg.x_hat[k:]
    V = float(np.sum(seg.a[k:] ** 2 * noise_K * (1.0 / seg.scale[k:] ** 2 + np.einsum("ij,ij->i", xs, xs))))
    return 2.0 * np.sqrt(V / p)


# --------------------------------------------------------------------------
# contraction and verdict


@dataclass
class ContractionReport:
    ratios: np.ndarray
    constrained: np.ndarray
    passed: np.ndarray
    delta_4: float
    R0_estimate: float
    R0_used: float

    @property
    def violations(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.constrained & ~self.passed)[0]]

    @property
    def pass_fraction(self) -> float:
        n = int(self.constrained.sum())
        return 1.0 if n == 0 else float((self.constrained & self.passed).sum()) / n


def _ratios(seg: Segments) -> np.ndarray:
    num = seg.anchor_norms[1:]
    den = seg.anchor_norms[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return out


def estimate_R0(seg: Segments, delta_4: float) -> float:
    """Smallest ``R >= 1`` such that every complete window with ``r(n) > R`` contracts below ``delta_4``."""
    ratios = _ratios(seg)
    failing = seg.r[:-1][~(ratios < delta_4)]
    return float(max(1.0, failing.max())) if failing.size else 1.0


def contraction_report(seg: Segments, delta_chain, R0_estimate: float | None = None) -> ContractionReport:
    """Test ``ratio < delta_4`` on complete windows with ``r(n) > R0``."""
    chain = validate_delta_chain(delta_chain)
    d4 = chain[3]
    ratios = _ratios(seg)
    R0_est = estimate_R0(seg, d4)
    R0 = R0_est if R0_estimate is None else float(R0_estimate)
    constrained = seg.r[:-1] > R0
    return ContractionReport(ratios, constrained, ratios < d4, d4, R0_est, R0)


@dataclass(frozen=True)
class Thresholds:
    growth: float = 1e3
    divergence: float = 1e3
    quorum: float = 1.0

    def to_dict(self) -> dict:
        return {"growth": self.growth, "divergence": self.divergence, "quorum": self.quorum}


def verdict(report: "RescalingReport", thresholds: Thresholds | None = None) -> tuple[str, str]:
    """Map a report to ``stable_evidence``, ``unstable_evidence`` or ``inconclusive``.

    Stable evidence needs a complete window, bounded ``r(n)``, the window
    quorum, and a final anchor inside the contraction region
    ``r <= R0 / delta_4`` (a run still escaping is not stable evidence).
    """
    th = thresholds or report.thresholds
    caveat = "This is evidence, not proof."
    sup_r = float(report.r.max())
    if report.diverged:
        return UNSTABLE, f"overflow guard tripped (iterate norm above guard). {caveat}"
    if sup_r > th.divergence:
        return UNSTABLE, f"r(n) reached {sup_r:.4g} > divergence threshold {th.divergence:.4g}. {caveat}"
    c = report.contraction
    if c.ratios.size == 0:
        return INCONCLUSIVE, f"no complete window of length T={report.T:.4g}; horizon too short. {caveat}"
    if sup_r > th.growth:
        return INCONCLUSIVE, f"sup r(n)={sup_r:.4g} exceeds growth threshold {th.growth:.4g}. {caveat}"
    if c.pass_fraction < th.quorum:
        return INCONCLUSIVE, (f"{len(c.violations)} constrained window(s) failed contraction "
                              f"(pass fraction {c.pass_fraction:.3f} < quorum {th.quorum}). {caveat}")
    r_last = float(report.r[-1])
    if r_last > c.R0_used / c.delta_4:
        return INCONCLUSIVE, (f"final anchor r={r_last:.4g} lies beyond R0/delta_4={c.R0_used / c.delta_4:.4g}; "
                              f"iterates may still be escaping. {caveat}")
    return STABLE, (f"sup r(n)={sup_r:.4g} <= {th.growth:.4g}; all {int(c.constrained.sum())} windows with "
                    f"r(n) > R0={c.R0_used:.4g} contracted below delta_4={c.delta_4:.4g}. {caveat}")


# --------------------------------------------------------------------------
# window length


def choose_T(h: MarchaudMap, delta_chain=None, radius_a: float = 1.0, dt: float = 1e-3,
             horizon: float = 20.0) -> tuple[float, dict]:
    """``T = T(delta_2 - delta_1) + 1`` probed on the closed-form ``h_inf`` with ``A = {0}``.

    Falls back to ``T = 1`` when there is no closed form or the probe finds
    the origin not attracting for ``h_inf``.
    """
    from .scaling import closed_form_h_infinity

    spec = AttractorSpec(Singleton(np.zeros(h.dimension)), radius_a, delta_chain)
    eps = (spec.delta_chain[1] - spec.delta_chain[0]) * radius_a
    note = {"delta_chain": list(spec.delta_chain), "eps": eps}
    if h.spec is None:
        return FALLBACK_T, {**note, "source": "fallback", "reason": "map has no closed-form h_inf"}
    try:
        h_inf = closed_form_h_infinity(h)
    except UsageError as exc:
        return FALLBACK_T, {**note, "source": "fallback", "reason": str(exc)}
    probe = probe_attractor(h_inf, spec, eps, dt=dt, horizon=horizon)
    if not probe.attracting:
        return FALLBACK_T, {**note, "source": "fallback", "reason": "origin not attracting for h_inf",
                            "witness": probe.witness}
    return probe.T_eps + 1.0, {**note, "source": "probe", "T_eps": probe.T_eps}


# --------------------------------------------------------------------------
# full report


@dataclass
class RescalingReport:
    T: float
    T_details: dict
    anchors: list
    r: np.ndarray
    segments: Segments
    zeta: ZetaSummary
    contraction: ContractionReport
    K: float
    K_omega: float
    M_omega: float
    radius_a: float
    delta_chain: tuple
    thresholds: Thresholds
    diverged: bool
    verdict: str = INCONCLUSIVE
    rationale: str = ""
    invariants: dict = field(default_factory=dict)

    @property
    def R0_estimate(self) -> float:
        return self.contraction.R0_estimate

    def to_dict(self) -> dict:
        c = self.contraction
        return {
            "T": self.T,
            "T_details": _plain(self.T_details),
            "anchors": [[float(t), int(m)] for t, m in self.anchors],
            "r": self.r.tolist(),
            "ratios": [None if not np.isfinite(v) else float(v) for v in c.ratios],
            "constrained_windows": c.constrained.tolist(),
            "window_passed": c.passed.tolist(),
            "violations": c.violations,
            "R0_estimate": c.R0_estimate,
            "R0_used": c.R0_used,
            "delta_chain": list(self.delta_chain),
            "radius_a": self.radius_a,
            "K": self.K,
            "K_omega": self.K_omega,
            "M_omega": self.M_omega,
            "zeta_cauchy_statistic": self.zeta.cauchy_statistic,
            "window_end_values": self.segments.window_end_values().tolist(),
            "thresholds": self.thresholds.to_dict(),
            "diverged": self.diverged,
            "verdict": self.verdict,
            "rationale": self.rationale,
            "invariants": _plain(self.invariants),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.generic,)):
        return obj.item()
    return obj


def K_omega_bound(K: float, T: float, M_omega: float, radius_a: float = 1.0) -> float:
    """``(a + M_omega + (T + 1) K) exp(K (T + 1))`` with ``a = radius_a``."""
    return (radius_a + M_omega + (T + 1.0) * K) * np.exp(K * (T + 1.0))


def diagnose(traj: Trajectory, h: MarchaudMap, T="auto", delta_chain=None, radius_a: float = 1.0,
             thresholds: Thresholds | None = None, noise_K: float | None = None, R0=None,
             check: bool = True, T_details: dict | None = None) -> RescalingReport:
    """Full rescaling report for one trajectory.

    ``noise_K`` (the noise second-moment constant) enables the Doob bound
    on the ``ζ̂`` tail; ``check`` recomputes the algebraic invariants.
    """
    thresholds = thresholds or Thresholds()
    chain = AttractorSpec(Singleton(np.zeros(h.dimension)), radius_a, delta_chain).delta_chain
    if T == "auto" or T is None:
        T, T_details = choose_T(h, chain, radius_a)
    else:
        T, T_details = float(T), T_details or {"source": "override"}
    anc = anchors(traj, T)
    seg = rescale(traj, anc, radius_a)
    z = martingale_partial_sums(seg)
    cr = contraction_report(seg, chain, R0)
    K = float(h.bound_K)
    rep = RescalingReport(
        T=T, T_details=T_details, anchors=anc, r=seg.r, segments=seg, zeta=z, contraction=cr, K=K,
        K_omega=float(K_omega_bound(K, T, z.M_omega, radius_a)), M_omega=z.M_omega, radius_a=radius_a,
        delta_chain=chain, thresholds=thresholds, diverged=traj.diverged,
    )
    rep.verdict, rep.rationale = verdict(rep, thresholds)
    if check:
        rep.invariants = check_invariants(traj, h, rep, noise_K)
    return rep


def check_invariants(traj: Trajectory, h: MarchaudMap, rep: RescalingReport, noise_K: float | None = None,
                     rel_tol: float = 1e-12, membership_tol: float = 1e-7) -> dict:
    """Recompute the rescaling invariants; each entry is ``{"passed": bool, ...}``."""
    seg = rep.segments
    out = {}
    if traj.N:
        step = seg.a[:, None] * (seg.y_hat + seg.M_hat)
        resid = np.abs(seg.x_hat_next - (seg.x_hat + step))
        worst = float(np.max(resid / np.maximum(1.0, np.abs(seg.x_hat) + np.abs(step))))
    else:
        worst = 0.0
    out["rescaled_recursion"] = {"passed": worst <= rel_tol, "max_relative_residual": worst, "tolerance": rel_tol}

    if traj.N:
        dist = membership_distances(h, seg.x_hat, seg.y_hat, seg.scale)
        worst_m = float(dist.max())
    else:
        worst_m = 0.0
    out["scaled_membership"] = {"passed": worst_m <= membership_tol, "max_distance": worst_m,
                                "tolerance": membership_tol}

    start_norm = (np.linalg.norm(seg.x_hat[[m for _, m in rep.anchors if m < traj.N]], axis=1)
                  if traj.N else np.zeros(0))
    out["r_at_least_one"] = {
        "passed": bool(np.all(seg.r >= 1.0)
                       and np.all(start_norm <= seg.radius_a * (1 + 1e-12))),
        "min_r": float(seg.r.min()),
    }

    times = np.array([t for t, _ in rep.anchors])
    gaps = np.diff(times)
    slack = 1e-12 * max(1.0, float(times[-1]))
    out["anchor_spacing"] = {
        "passed": bool(np.all(gaps >= rep.T - slack) and np.all(gaps <= rep.T + 1 + slack)),
        "min_gap": float(gaps.min()) if gaps.size else None,
        "max_gap": float(gaps.max()) if gaps.size else None,
    }

    top = float(max(np.linalg.norm(seg.x_hat, axis=1).max(initial=0.0),
                    np.linalg.norm(seg.x_hat_next, axis=1).max(initial=0.0)))
    out["K_omega_envelope"] = {"passed": top <= rep.K_omega, "max_x_hat_norm": top, "K_omega": rep.K_omega}

    if noise_K is not None:
        bound = cauchy_oracle_bound(seg, rep.zeta, noise_K)
        out["zeta_cauchy"] = {"passed": rep.zeta.cauchy_statistic <= bound,
                              "statistic": rep.zeta.cauchy_statistic, "oracle_bound": float(bound),
                              "failure_probability": DOOB_FAILURE_PROB}
    for entry in out.values():
        entry["passed"] = bool(entry["passed"])
    return out
