"""Running scenarios: single runs, seed batches and eps sweeps."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import convex
from .config import Scenario, scenario_from_dict, with_eps
from .convex import ConvexSet
from .diagnostic import RescalingReport, choose_T, diagnose
from .engine import Trajectory, iterate, verify_trajectory


@dataclass
class RunResult:
    scenario: Scenario
    trajectory: Trajectory
    report: RescalingReport
    summary: dict
    problems: list


def resolve_T(scn: Scenario) -> tuple[float, dict]:
    """Window length for a scenario, probed once and shared across its seeds."""
    T = scn.diagnostic.T
    if T == "auto" or T is None:
        return choose_T(scn.map, scn.diagnostic.delta_chain, scn.diagnostic.radius_a)
    return float(T), {"source": "config"}


def tail_distance(traj: Trajectory, reference: ConvexSet, tail_fraction: float) -> float:
    """``max`` distance to ``reference`` over the last ``tail_fraction`` of the iterates."""
    n = traj.x.shape[0]
    k = max(1, int(np.ceil(tail_fraction * n)))
    return float(np.max(convex.distance_many(traj.x[n - k:], reference)))


def summarize(scn: Scenario, traj: Trajectory, report: RescalingReport, wall_time: float) -> dict:
    ref = scn.reference
    return {
        "scenario": scn.name,
        "seed": scn.seed,
        "verdict": report.verdict,
        "sup_norm": float(np.max(traj.norms)),
        "final_distance": float(convex.distance(traj.x[-1], ref)),
        "tail_distance": tail_distance(traj, ref, scn.diagnostic.tail_fraction),
        "tail_fraction": scn.diagnostic.tail_fraction,
        "N_executed": traj.N,
        "diverged": traj.diverged,
        "T": report.T,
        "R0_estimate": report.R0_estimate,
        "sup_r": float(report.r.max()),
        "wall_time_s": wall_time,
    }


def run_scenario(scn: Scenario, T: tuple | None = None) -> RunResult:
    """iterate, then rescaling diagnosis and trajectory verification."""
    start = time.perf_counter()
    traj = iterate(scn.map, scn.schedule, scn.noise, scn.policy, scn.x0, scn.N, rng=scn.seed, scenario_id=scn.name)
    T_val, T_details = resolve_T(scn) if T is None else T
    report = diagnose(traj, scn.map, T=T_val, delta_chain=scn.diagnostic.delta_chain,
                      radius_a=scn.diagnostic.radius_a, thresholds=scn.diagnostic.thresholds,
                      noise_K=scn.noise_K, R0=scn.diagnostic.R0, T_details=T_details)
    problems = verify_trajectory(traj, scn.map)
    problems += [f"rescaling invariant {k} failed" for k, v in report.invariants.items() if not v["passed"]]
    summary = summarize(scn, traj, report, time.perf_counter() - start)
    return RunResult(scn, traj, report, summary, problems)


def run_seeds(scn: Scenario, seeds) -> list[RunResult]:
    T = resolve_T(scn)
    return [run_scenario(scn.with_seed(s), T) for s in seeds]


def _sweep_task(args):
    doc, seed = args
    scn = scenario_from_dict({**doc, "seed": seed})
    res = run_scenario(scn)
    return res.summary["tail_distance"], res.report.verdict, res.problems


def sweep(doc: dict, eps_grid, seeds=None, jobs: int = 1, band: float = 0.01) -> dict:
    """One run per ``(eps, seed)``; ``delta_hat(eps)`` is the worst tail distance over seeds.

    ``band`` is the noise allowance for the monotonicity check: a drop of
    ``delta_hat`` by more than ``band`` between consecutive grid values is
    flagged.
    """
    eps_grid = [float(e) for e in eps_grid]
    seeds = [doc["seed"]] if seeds is None else list(seeds)
    tasks = [(with_eps(doc, e), s) for e in eps_grid for s in seeds]
    scenario_from_dict({**tasks[0][0], "seed": seeds[0]})  # validate before spawning workers
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_sweep_task, tasks))
    else:
        outs = [_sweep_task(t) for t in tasks]
    rows = []
    for i, e in enumerate(eps_grid):
        chunk = outs[i * len(seeds):(i + 1) * len(seeds)]
        verdicts = [v for _, v, _ in chunk]
        rows.append({
            "eps": e,
            "delta_hat": max(d for d, _, _ in chunk),
            "verdict": max(set(verdicts), key=verdicts.count),
            "verdict_counts": {v: verdicts.count(v) for v in sorted(set(verdicts))},
            "seeds": len(seeds),
            "problems": sorted({p for _, _, ps in chunk for p in ps}),
        })
    order = np.argsort(eps_grid, kind="stable")
    deltas = [rows[i]["delta_hat"] for i in order]
    drops = [i for i in range(1, len(deltas)) if deltas[i] < deltas[i - 1] - band]
    return {"rows": rows, "monotone": not drops, "band": band,
            "violations": [[eps_grid[order[i - 1]], eps_grid[order[i]]] for i in drops]}
