"""Simulation and diagnostics for stochastic recursive inclusions.

Modules
-------
convex      compact convex sets, supports, projections, Hausdorff distance
maps        set-valued (Marchaud) maps, specs, selections, property probes
scaling     the scaling family h_c and the limit map h_inf
inclusion   Euler integration of dx/dt in h(x), attractor probing
engine      the recursion x_{n+1} = x_n + a(n)[y_n + M_{n+1}]
diagnostic  projective rescaling stability diagnostic
gradients   constant-error gradient estimators and SGD scenarios
config      JSON scenario configuration
runner      single runs, seed batches, eps sweeps
cli         the ``srilab`` command
"""
from .errors import NumericalError, SrilabError, UsageError, ValidationError

__version__ = "0.1.0"

__all__ = ["NumericalError", "SrilabError", "UsageError", "ValidationError", "__version__"]
