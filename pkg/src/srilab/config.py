"""Scenario configuration: JSON documents to validated, runnable scenarios.

A scenario names a drift (either a map spec or an SGD block), a step
schedule, a noise model, a selection policy, the start point, horizon and
seed, plus diagnostic parameters.  Every key is validated on load and any
failure raises ``ValidationError`` naming the dotted field path.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .convex import Ball, ConvexSet, Singleton
from .diagnostic import Thresholds
from .engine import NoiseModel, StepSchedule, make_noise, make_schedule
from .errors import UsageError, ValidationError
from .gradients import EstimatorSpec, Quadratic, SGDScenario, sgd_scenario
from .inclusion import validate_delta_chain
from .maps import (
    Affine, ClosedFormInfinity, DriftWithBall, MarchaudMap, NegGradQuadratic, ScaledBy,
    affine_ball_form, as_selection, from_spec,
)

DEFAULT_TAIL_FRACTION = 0.01

_TOP_KEYS = {"name", "dimension", "map", "sgd", "schedule", "noise", "selection", "x0", "N", "seed",
             "diagnostic", "output_dir", "description"}
_DIAG_KEYS = {"T", "delta_chain", "radius_a", "thresholds", "R0", "reference", "tail_fraction"}


# --------------------------------------------------------------------------
# map specs <-> JSON


def _matrix(value, d, where):
    try:
        A = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("expected a numeric matrix", where) from None
    if A.ndim == 0 and d == 1:
        A = A.reshape(1, 1)
    if A.ndim != 2 or (d is not None and A.shape != (d, d)):
        raise ValidationError(f"expected a {d}x{d} matrix, got shape {A.shape}", where)
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix entries must be finite", where)
    return A


def _vector(value, d, where):
    try:
        v = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ValidationError("expected a numeric vector", where) from None
    if d is not None and v.shape[0] != d:
        raise ValidationError(f"expected {d} entries, got {v.shape[0]}", where)
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector entries must be finite", where)
    return v


def _number(value, where, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("expected a number", where)
    v = float(value)
    if not np.isfinite(v) or (positive and v <= 0) or (nonneg and v < 0):
        raise ValidationError("must be " + ("positive" if positive else "nonnegative" if nonneg else "finite"), where)
    return v


def map_spec_from_dict(d: dict, dimension: int | None = None, where: str = "map"):
    """Parse ``{"type": ..., ...}`` into a map spec."""
    if not isinstance(d, dict):
        raise ValidationError("expected an object", where)
    kind = d.get("type")
    if kind is None:
        raise ValidationError("missing 'type'", f"{where}.type")
    try:
        if kind == "affine":
            A = _matrix(d.get("A"), dimension, f"{where}.A")
            return Affine(A, _vector(d.get("b", np.zeros(A.shape[0])), A.shape[0], f"{where}.b"))
        if kind == "neg_grad_quadratic":
            A = _matrix(d.get("A"), dimension, f"{where}.A")
            return NegGradQuadratic(A, _vector(d.get("B", np.zeros(A.shape[0])), A.shape[0], f"{where}.B"))
        if kind == "drift_with_ball":
            return DriftWithBall(map_spec_from_dict(d.get("inner"), dimension, f"{where}.inner"),
                                 _number(d.get("eps"), f"{where}.eps", nonneg=True))
        if kind == "scaled":
            return ScaledBy(map_spec_from_dict(d.get("inner"), dimension, f"{where}.inner"),
                            _number(d.get("c"), f"{where}.c", positive=True))
        if kind == "closed_form_infinity":
            return ClosedFormInfinity(map_spec_from_dict(d.get("inner"), dimension, f"{where}.inner"))
    except ValidationError:
        raise
    except UsageError as exc:
        raise ValidationError(str(exc), where) from None
    raise ValidationError(f"unknown map type {kind!r}", f"{where}.type")


def map_spec_to_dict(spec) -> dict:
    if isinstance(spec, Affine):
        return {"type": "affine", "A": spec.A.tolist(), "b": spec.b.tolist()}
    if isinstance(spec, NegGradQuadratic):
        return {"type": "neg_grad_quadratic", "A": spec.A.tolist(), "B": spec.B.tolist()}
    if isinstance(spec, DriftWithBall):
        return {"type": "drift_with_ball", "inner": map_spec_to_dict(spec.inner), "eps": spec.eps}
    if isinstance(spec, ScaledBy):
        return {"type": "scaled", "inner": map_spec_to_dict(spec.inner), "c": spec.c}
    if isinstance(spec, ClosedFormInfinity):
        return {"type": "closed_form_infinity", "inner": map_spec_to_dict(spec.inner)}
    raise UsageError(f"cannot serialize {type(spec).__name__}")


def load_map_document(doc: dict) -> MarchaudMap:
    """Map from a spec document: a bare spec, or ``{"map": spec, "bound_K": .., "lipschitz_L": ..}``."""
    if not isinstance(doc, dict):
        raise ValidationError("expected a JSON object")
    if "type" in doc:
        spec_doc, meta = doc, {}
    elif "map" in doc:
        spec_doc, meta = doc["map"], doc
    elif "sgd" in doc:
        return build_sgd(doc["sgd"], doc.get("dimension")).map
    else:
        raise ValidationError("expected a map spec ('type') or a document with a 'map' key", "map")
    dim = meta.get("dimension")
    spec = map_spec_from_dict(spec_doc, int(dim) if dim is not None else None)
    K = meta.get("bound_K")
    L = meta.get("lipschitz_L")
    return from_spec(
        spec,
        bound_K=None if K is None else _number(K, "bound_K", positive=True),
        lipschitz_L=None if L is None else _number(L, "lipschitz_L", positive=True),
    )


def build_sgd(d: dict, dimension: int | None = None, where: str = "sgd") -> SGDScenario:
    if not isinstance(d, dict):
        raise ValidationError("expected an object", where)
    obj = d.get("objective")
    if not isinstance(obj, dict) or obj.get("type", "quadratic") != "quadratic":
        raise ValidationError("only quadratic objectives can be configured from files", f"{where}.objective")
    A = _matrix(obj.get("A"), dimension, f"{where}.objective.A")
    F = Quadratic(A, _vector(obj.get("B", np.zeros(A.shape[0])), A.shape[0], f"{where}.objective.B"),
                  _number(obj.get("c", 0.0), f"{where}.objective.c"))
    est = d.get("estimator")
    if not isinstance(est, dict):
        raise ValidationError("expected an object", f"{where}.estimator")
    try:
        spec = EstimatorSpec(est.get("kind"), est.get("c", 0.0), est.get("samples_per_call", 1))
    except ValidationError as exc:
        raise ValidationError(exc.reason, f"{where}.{exc.field}" if exc.field else where) from None
    eps = d.get("eps")
    return sgd_scenario(F, spec, None if eps is None else _number(eps, f"{where}.eps", nonneg=True))


def reference_from_dict(d, dimension: int, where="diagnostic.reference") -> ConvexSet:
    if not isinstance(d, dict):
        raise ValidationError("expected an object", where)
    kind = d.get("type", "point")
    center = _vector(d.get("center", np.zeros(dimension)), dimension, f"{where}.center")
    if kind == "point":
        return Singleton(center)
    if kind == "ball":
        return Ball(center, _number(d.get("radius"), f"{where}.radius", nonneg=True))
    raise ValidationError(f"unknown reference type {kind!r}", f"{where}.type")


def reference_to_dict(S: ConvexSet) -> dict:
    if isinstance(S, Ball):
        return {"type": "ball", "center": S.center.tolist(), "radius": S.radius}
    return {"type": "point", "center": convex.centroid(S).tolist()}


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class DiagnosticParams:
    T: object = "auto"
    delta_chain: tuple | None = None
    radius_a: float = 1.0
    thresholds: Thresholds = field(default_factory=Thresholds)
    R0: float | None = None
    reference: ConvexSet | None = None
    tail_fraction: float = DEFAULT_TAIL_FRACTION


@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated, runnable experiment."""

    name: str
    map: MarchaudMap
    schedule: StepSchedule
    noise: NoiseModel
    policy: object
    x0: np.ndarray
    N: int
    seed: int
    diagnostic: DiagnosticParams
    raw: dict
    sgd: SGDScenario | None = None
    output_dir: str | None = None

    @property
    def dimension(self) -> int:
        return self.map.dimension

    @property
    def noise_K(self) -> float:
        """Second-moment constant of the recorded noise (external plus estimator fluctuation)."""
        return self.noise.bound_K + (self.sgd.fluctuation_K if self.sgd is not None else 0.0)

    @property
    def reference(self) -> ConvexSet:
        return self.diagnostic.reference if self.diagnostic.reference is not None else default_reference(self)

    def with_seed(self, seed: int) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return scenario_from_dict(raw)


def default_reference(scn: Scenario) -> ConvexSet:
    """The equilibrium of the affine part of the drift (or the minimizer for SGD), else the origin."""
    d = scn.dimension
    if scn.sgd is not None:
        x = scn.sgd.objective.minimizers()
        return Singleton(np.zeros(d) if x is None else x)
    if scn.map.spec is not None:
        A, b, _ = affine_ball_form(scn.map.spec)
        try:
            return Singleton(np.linalg.solve(A, -b))
        except np.linalg.LinAlgError:
            pass
    return Singleton(np.zeros(d))


def _selection_from(value, where="selection"):
    try:
        sel = as_selection(value)
    except UsageError as exc:
        raise ValidationError(str(exc), where) from None
    return sel


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a scenario document and build its components."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown key(s) {sorted(unknown)}", sorted(unknown)[0])
    if "seed" not in doc or doc["seed"] is None:
        raise ValidationError("seed required", "seed")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed must be a nonnegative integer", "seed")
    name = doc.get("name")
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\"):
        raise ValidationError("name required (a non-empty string without path separators)", "name")
    dim = doc.get("dimension")
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise ValidationError("dimension must be a positive integer", "dimension")

    sgd = None
    if ("map" in doc) == ("sgd" in doc):
        raise ValidationError("exactly one of 'map' or 'sgd' is required", "map")
    if "map" in doc:
        h = from_spec(map_spec_from_dict(doc["map"], dim))
    else:
        sgd = build_sgd(doc["sgd"], dim)
        h = sgd.map

    for key in ("schedule", "noise"):
        if not isinstance(doc.get(key), dict):
            raise ValidationError("expected an object", key)
    schedule = make_schedule(doc["schedule"])
    noise = make_noise(doc["noise"], dim)

    if sgd is not None:
        if "selection" in doc:
            raise ValidationError("sgd scenarios select through the estimator; drop 'selection'", "selection")
        policy = sgd.selection
    else:
        policy = _selection_from(doc.get("selection", "minimal_norm"))
        if policy.direction is not None and len(policy.direction) != dim:
            raise ValidationError(f"direction needs {dim} entries", "selection.direction")

    x0 = _vector(doc.get("x0"), dim, "x0")
    N = doc.get("N")
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ValidationError("N must be a positive integer", "N")
    if schedule.family == "custom" and len(schedule.custom) < N:
        raise ValidationError(f"custom schedule has {len(schedule.custom)} values, N={N}", "schedule.values")

    diag = _diagnostic_from(doc.get("diagnostic", {}), dim)
    out = doc.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ValidationError("expected a path string", "output_dir")
    return Scenario(name, h, schedule, noise, policy, x0, N, seed, diag, copy.deepcopy(doc), sgd, out)


def _diagnostic_from(d, dim) -> DiagnosticParams:
    if not isinstance(d, dict):
        raise ValidationError("expected an object", "diagnostic")
    unknown = set(d) - _DIAG_KEYS
    if unknown:
        raise ValidationError(f"unknown key(s) {sorted(unknown)}", f"diagnostic.{sorted(unknown)[0]}")
    T = d.get("T", "auto")
    if T != "auto" and T is not None:
        T = _number(T, "diagnostic.T", positive=True)
    chain = d.get("delta_chain")
    if chain is not None:
        try:
            chain = validate_delta_chain(chain)
        except (UsageError, TypeError) as exc:
            raise ValidationError(str(exc), "diagnostic.delta_chain") from None
    radius_a = _number(d.get("radius_a", 1.0), "diagnostic.radius_a", positive=True)
    th = d.get("thresholds", {})
    if not isinstance(th, dict):
        raise ValidationError("expected an object", "diagnostic.thresholds")
    thresholds = Thresholds(
        growth=_number(th.get("growth", 1e3), "diagnostic.thresholds.growth", positive=True),
        divergence=_number(th.get("divergence", 1e3), "diagnostic.thresholds.divergence", positive=True),
        quorum=_number(th.get("quorum", 1.0), "diagnostic.thresholds.quorum", nonneg=True),
    )
    if thresholds.quorum > 1:
        raise ValidationError("quorum is a fraction in [0, 1]", "diagnostic.thresholds.quorum")
    R0 = d.get("R0")
    if R0 is not None:
        R0 = _number(R0, "diagnostic.R0", positive=True)
    ref = d.get("reference")
    reference = None if ref is None else reference_from_dict(ref, dim)
    tail = _number(d.get("tail_fraction", DEFAULT_TAIL_FRACTION), "diagnostic.tail_fraction", positive=True)
    if tail > 1:
        raise ValidationError("tail_fraction must lie in (0, 1]", "diagnostic.tail_fraction")
    return DiagnosticParams(T, chain, radius_a, thresholds, R0, reference, tail)


def load_json(path) -> dict:
    """Read a UTF-8 JSON document; parse errors become validation errors."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_scenario(path) -> Scenario:
    return scenario_from_dict(load_json(path))


def with_eps(doc: dict, eps: float) -> dict:
    """Copy of a scenario document with its drift error set to ``eps``.

    Map scenarios get (or gain) an outer ball of radius ``eps``; SGD
    scenarios with ``kw_forward`` get the perturbation whose bias bound is
    ``eps``.
    """
    from .gradients import perturbation_for_eps

    out = copy.deepcopy(doc)
    if "map" in out:
        m = out["map"]
        if isinstance(m, dict) and m.get("type") == "drift_with_ball":
            m["eps"] = float(eps)
        else:
            out["map"] = {"type": "drift_with_ball", "inner": m, "eps": float(eps)}
        return out
    if "sgd" in out:
        sgd = out["sgd"]
        est = sgd.get("estimator", {})
        if est.get("kind") != "kw_forward":
            raise ValidationError("eps sweeps over SGD scenarios need the kw_forward estimator",
                                  "sgd.estimator.kind")
        F = build_sgd(sgd, out.get("dimension")).objective
        if eps == 0:
            raise ValidationError("kw_forward cannot reach eps = 0; use kw_central", "eps_grid")
        est["c"] = perturbation_for_eps("kw_forward", F, eps)
        sgd.pop("eps", None)
        return out
    raise ValidationError("scenario has neither 'map' nor 'sgd'", "map")
