"""Constant-error gradient estimators and the SGD scenarios they drive.

Every estimator uses a fixed perturbation ``c``.  In a scenario the
estimate ``g`` of ``grad F(x)`` is split into its conditional mean
``m(x) = E[g | x]`` and the zero-mean remainder: ``y_n = -m(x_n)`` lies in
``-grad F(x_n) + B_eps(0)`` and ``-(g - m)`` joins the martingale noise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UsageError, ValidationError
from .maps import DriftWithBall, MarchaudMap, NegGradQuadratic, from_spec

KINDS = ("kw_forward", "kw_central", "spsa", "smoothed_functional")
MAX_ENUMERATION_DIM = 12
HERMITE_POINTS = 10


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``F(x) = x'Ax + B'x + c`` with symmetric ``A``."""

    A: np.ndarray
    B: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, float))
        B = np.array(self.B, float).reshape(-1)
        if A.shape[0] != A.shape[1] or A.shape[0] != B.shape[0]:
            raise ValidationError(f"need square A matching B, got A{A.shape} and B{B.shape}", "objective")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValidationError("A must be symmetric", "objective.A")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, float)
        return float(x @ self.A @ x + self.B @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * (self.A @ np.asarray(x, float)) + self.B

    def minimizers(self) -> np.ndarray | None:
        """The stationary point ``-A^{-1} B / 2`` when ``A`` is invertible."""
        try:
            return np.linalg.solve(2.0 * self.A, -self.B)
        except np.linalg.LinAlgError:
            return None


@dataclass(frozen=True, eq=False)
class Custom:
    """Arbitrary smooth objective with a known gradient (for testing)."""

    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    dimension: int

    def value(self, x) -> float:
        return float(self.f(np.asarray(x, float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, float)), float)


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    c: float
    samples_per_call: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown estimator {self.kind!r}; expected one of {KINDS}", "estimator.kind")
        if not float(self.c) > 0:
            raise ValidationError("perturbation c must be positive", "estimator.c")
        if int(self.samples_per_call) < 1:
            raise ValidationError("samples_per_call must be a positive integer", "estimator.samples_per_call")
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "samples_per_call", int(self.samples_per_call))

    @property
    def deterministic(self) -> bool:
        return self.kind in ("kw_forward", "kw_central")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c, "samples_per_call": self.samples_per_call}


def estimate_gradient(est: EstimatorSpec, F, x, rng: np.random.Generator | None = None) -> np.ndarray:
    """One estimate of ``+grad F(x)``; random estimators average ``samples_per_call`` draws."""
    x = np.asarray(x, float).reshape(-1)
    d, c = x.shape[0], est.c
    if est.kind == "kw_forward":
        f0 = F.value(x)
        return np.array([(F.value(x + c * e) - f0) / c for e in np.eye(d)])
    if est.kind == "kw_central":
        return np.array([(F.value(x + c * e) - F.value(x - c * e)) / (2 * c) for e in np.eye(d)])
    if rng is None:
        raise UsageError(f"{est.kind} needs a random generator")
    total = np.zeros(d)
    if est.kind == "spsa":
        for _ in range(est.samples_per_call):
            delta = rng.choice((-1.0, 1.0), size=d)
            total += (F.value(x + c * delta) - F.value(x - c * delta)) / (2 * c * delta)
    else:
        f0 = F.value(x)
        for _ in range(est.samples_per_call):
            delta = rng.standard_normal(d)
            total += delta / c * (F.value(x + c * delta) - f0)
    return total / est.samples_per_call


def conditional_mean(est: EstimatorSpec, F, x) -> np.ndarray:
    """``E[estimate | x]``: exact for quadratics, by enumeration or quadrature otherwise."""
    x = np.asarray(x, float).reshape(-1)
    d, c = x.shape[0], est.c
    if est.deterministic:
        return estimate_gradient(est, F, x)
    if isinstance(F, Quadratic):
        # odd Rademacher / Gaussian moments vanish on quadratics
        return F.gradient(x)
    if est.kind == "spsa":
        if d > MAX_ENUMERATION_DIM:
            raise UsageError(f"exact SPSA mean enumerates 2^d sign patterns; d={d} is too large")
        total = np.zeros(d)
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            delta = np.array(signs)
            total += (F.value(x + c * delta) - F.value(x - c * delta)) / (2 * c * delta)
        return total / 2**d
    if d > 4:
        raise UsageError("Gauss-Hermite smoothed-functional mean supports d <= 4")
    nodes, weights = np.polynomial.hermite_e.hermegauss(HERMITE_POINTS)
    weights = weights / weights.sum()
    f0 = F.value(x)
    total = np.zeros(d)
    for idx in itertools.product(range(HERMITE_POINTS), repeat=d):
        delta = nodes[list(idx)]
        w = np.prod(weights[list(idx)])
        total += w * delta / c * (F.value(x + c * delta) - f0)
    return total


def error_bound_quadratic(est: EstimatorSpec, F: Quadratic) -> float:
    """Deterministic bias bound ``eps`` on a quadratic.

    ``kw_forward`` has the state-independent bias ``c diag(A)``; the other
    estimators are unbiased on quadratics (their sampling terms belong to the
    martingale noise).
    """
    if not isinstance(F, Quadratic):
        raise UsageError("closed-form error bounds exist for quadratics only; use measure_error_bound")
    if est.kind == "kw_forward":
        return float(est.c * np.linalg.norm(np.diag(F.A)))
    return 0.0


def measure_error_bound(est: EstimatorSpec, F, xs) -> float:
    """Empirical ``max_x |E[estimate | x] - grad F(x)|`` over samples, inflated by 10%."""
    worst = max(float(np.linalg.norm(conditional_mean(est, F, x) - F.gradient(x))) for x in xs)
    return 1.1 * worst


def fluctuation_bound_K(est: EstimatorSpec, F) -> float:
    """``K`` with ``E|g - m|^2 <= K (1 + |x|^2)`` for the estimator fluctuation on a quadratic."""
    if est.deterministic:
        return 0.0
    if not isinstance(F, Quadratic):
        raise UsageError("fluctuation bounds are closed-form for quadratics only")
    d = F.dimension
    nA = float(np.linalg.norm(F.A, 2))
    # |grad F(x)|^2 <= G (1 + |x|^2)
    G = max(8 * nA**2, 2 * float(F.B @ F.B))
    s = est.samples_per_call
    if est.kind == "spsa":
        return (d - 1) * G / s
    return (2 * (d + 2) * G + 2 * est.c**2 * nA**2 * d * (d + 2) * (d + 4)) / s


@dataclass(frozen=True, eq=False)
class EstimatorSelection:
    """Selection source driven by a gradient estimator.

    ``draw`` returns ``(-m(x), -(g - m(x)))``.  ``affine_offset`` is the
    constant selection offset relative to ``-grad F`` when the estimator is
    deterministic on a quadratic, which lets the compiled recursion run it.
    """

    estimator: EstimatorSpec
    objective: object

    def draw(self, x, rng):
        m = conditional_mean(self.estimator, self.objective, x)
        if self.estimator.deterministic:
            return -m, np.zeros_like(m)
        g = estimate_gradient(self.estimator, self.objective, x, rng)
        return -m, -(g - m)

    @property
    def affine_offset(self):
        F = self.objective
        if not (self.estimator.deterministic and isinstance(F, Quadratic)):
            return None
        if self.estimator.kind == "kw_forward":
            return -self.estimator.c * np.diag(F.A)
        return np.zeros(F.dimension)


@dataclass(frozen=True, eq=False)
class SGDScenario:
    """The pieces an SGD run needs: drift map, selection source, noise constants."""

    objective: object
    estimator: EstimatorSpec
    eps: float
    map: MarchaudMap
    selection: EstimatorSelection
    fluctuation_K: float
    eps_source: str


def sgd_scenario(F, est: EstimatorSpec, eps: float | None = None, fluctuation_K: float | None = None) -> SGDScenario:
    """Wire an estimator into the approximate drift ``-grad F + B_eps(0)``.

    ``eps`` defaults to the closed-form bias bound on quadratics; other
    objectives need a caller-measured ``eps``.
    """
    if eps is None:
        if not isinstance(F, Quadratic):
            raise ValidationError("non-quadratic objective: supply a measured eps (see measure_error_bound)", "eps")
        eps, source = error_bound_quadratic(est, F), "closed_form"
    else:
        eps, source = float(eps), "declared"
        if eps < 0:
            raise ValidationError("eps must be nonnegative", "eps")
    if isinstance(F, Quadratic):
        h = from_spec(DriftWithBall(NegGradQuadratic(F.A, F.B), eps))
        fK = fluctuation_bound_K(est, F) if fluctuation_K is None else float(fluctuation_K)
    else:
        from .maps import approximate_drift, custom_map
        from .convex import Singleton

        if fluctuation_K is None:
            if not est.deterministic:
                raise ValidationError("custom objective with a random estimator: supply fluctuation_K",
                                      "fluctuation_K")
            fluctuation_K = 0.0
        grad = F.gradient
        inner = custom_map(F.dimension, lambda x: Singleton(-grad(x)), bound_K=1.0, single_valued=True)
        h = approximate_drift(inner, eps)
        fK = float(fluctuation_K)
    if source == "declared" and isinstance(F, Quadratic):
        bias = error_bound_quadratic(est, F)
        if eps + 1e-12 < bias:
            raise ValidationError(f"declared eps={eps} is below the estimator bias {bias}", "eps")
    return SGDScenario(F, est, eps, h, EstimatorSelection(est, F), fK, source)


def perturbation_for_eps(kind: str, F: Quadratic, eps: float) -> float:
    """Perturbation ``c`` whose ``kw_forward`` bias bound equals ``eps``."""
    if kind != "kw_forward":
        raise UsageError("only kw_forward has a bias proportional to c on quadratics")
    diag = float(np.linalg.norm(np.diag(F.A)))
    if diag == 0:
        raise UsageError("kw_forward is unbiased when diag(A) = 0")
    return eps / diag


def admissible_eps(delta: float, drift) -> float:
    """Largest drift error ``eps`` keeping the limit set in the ``delta``-ball of the equilibrium.

    ``drift`` is either the matrix ``J`` of a linear drift ``-J (x - x*)`` or a
    ``Quadratic`` (``J = 2A``).  With ``lambda`` the smallest eigenvalue of
    the symmetric part of ``J``, ``|x - x*|^2`` decreases along
    ``-J (x - x*) + B_eps`` outside radius ``eps / lambda``, so
    ``eps = lambda * delta``.
    """
    J = 2.0 * drift.A if isinstance(drift, Quadratic) else np.atleast_2d(np.asarray(drift, float))
    lam = float(np.linalg.eigvalsh(0.5 * (J + J.T)).min())
    if lam <= 0:
        raise UsageError("admissible eps needs a drift with positive definite symmetric part")
    return lam * float(delta)
