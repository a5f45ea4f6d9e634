"""Batch command-line front end.

Exit codes: 0 completion (whatever the verdict), 2 validation error,
3 IO error, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import convex, io
from .config import (
    load_json, load_map_document, map_spec_to_dict, reference_to_dict, scenario_from_dict,
)
from .engine import verify_trajectory
from .errors import UsageError, ValidationError
from .inclusion import integrate
from .maps import DriftWithBall, check_pointwise_bound, check_usc, from_spec
from .scaling import check_drift_equivalence, check_lipschitz_preservation, check_scaled_bound

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4
DEFAULT_OUT = "srilab-out"


def _out_root(args, scn_out=None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if scn_out:
        return Path(scn_out)
    return Path(os.environ.get("SRILAB_OUT") or DEFAULT_OUT)


def _emit(obj):
    print(json.dumps(obj, sort_keys=False, default=io._default))


# --------------------------------------------------------------------------
# run


def _run_one(doc: dict, seed: int, out_root: str, svg: bool, T=None) -> dict:
    from .runner import run_scenario

    scn = scenario_from_dict({**doc, "seed": seed})
    res = run_scenario(scn, T)
    bundle = Path(out_root) / scn.name / f"seed-{seed}"
    io.write_json(bundle / "config.json", scn.raw)
    io.write_trajectory_csv(res.trajectory, bundle / "trajectory.csv")
    report = res.report.to_dict()
    report["trajectory_problems"] = res.problems
    io.write_json(bundle / "report.json", report)
    summary = {**res.summary, "reference": reference_to_dict(scn.reference), "bundle": str(bundle),
               "invariants_ok": not res.problems}
    io.write_json(bundle / "summary.json", summary)
    if svg:
        traj, rep = res.trajectory, res.report
        io.atomic_write_text(bundle / "norms.svg", io.svg_line_chart(
            traj.t, traj.norms, f"{scn.name}: |x_n| vs t", "t", "|x_n|", log_y=True))
        io.atomic_write_text(bundle / "r.svg", io.svg_line_chart(
            np.arange(rep.r.size), rep.r, f"{scn.name}: r(n)", "n", "r(n)", log_y=True))
    return summary


def cmd_run(args) -> int:
    from .runner import resolve_T

    doc = load_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    scn = scenario_from_dict(doc)
    seeds = [scn.seed + i for i in range(args.seeds)] if args.seeds else [scn.seed]
    root = str(_out_root(args, scn.output_dir))
    T = resolve_T(scn)
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, doc, s, root, args.svg, T) for s in seeds]
            summaries = [f.result() for f in futures]
    else:
        summaries = [_run_one(doc, s, root, args.svg, T) for s in seeds]
    for s in summaries:
        _emit(s)
    return EXIT_OK if all(s["invariants_ok"] for s in summaries) else EXIT_INVARIANT


# --------------------------------------------------------------------------
# sweep


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}", what) from None
    if not vals:
        raise ValidationError("empty list", what)
    return vals


def cmd_sweep(args) -> int:
    from .runner import sweep

    doc = load_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    scenario_from_dict(doc)
    if not args.eps_grid:
        raise ValidationError("--eps-grid is required", "eps_grid")
    grid = _parse_floats(args.eps_grid, "eps_grid")
    if any(e < 0 for e in grid):
        raise ValidationError("eps values must be nonnegative", "eps_grid")
    seeds = [doc["seed"] + i for i in range(args.seeds)] if args.seeds else None
    result = sweep(doc, grid, seeds, jobs=args.jobs)
    root = _out_root(args, doc.get("output_dir")) / doc["name"]
    table = "eps,delta_hat,verdict\n" + "".join(
        f"{io._fmt(r['eps'])},{io._fmt(r['delta_hat'])},{r['verdict']}\n" for r in result["rows"])
    io.atomic_write_text(root / "sweep.csv", table)
    io.write_json(root / "sweep.json", result)
    _emit(result)
    return EXIT_OK if not any(r["problems"] for r in result["rows"]) else EXIT_INVARIANT


# --------------------------------------------------------------------------
# diagnose / verify


def _sibling_config(traj_path: Path, given):
    if given:
        return load_json(given)
    cand = traj_path.parent / "config.json"
    return load_json(cand) if cand.exists() else None


def cmd_diagnose(args) -> int:
    from .diagnostic import diagnose

    traj_path = Path(args.trajectory)
    doc = _sibling_config(traj_path, args.config)
    if doc is None:
        raise ValidationError("a scenario config is required (--config, or config.json beside the table)", "config")
    scn = scenario_from_dict(doc)
    traj = io.read_trajectory_csv(traj_path)
    if traj.dimension != scn.dimension:
        raise ValidationError(f"table has dimension {traj.dimension}, config {scn.dimension}", "dimension")
    p = scn.diagnostic
    rep = diagnose(traj, scn.map, T=p.T, delta_chain=p.delta_chain, radius_a=p.radius_a,
                   thresholds=p.thresholds, noise_K=scn.noise_K, R0=p.R0)
    out = Path(args.out) if args.out else traj_path.parent / "report.json"
    io.write_json(out, rep.to_dict())
    _emit({"report": str(out), "verdict": rep.verdict, "rationale": rep.rationale})
    return EXIT_OK if all(v["passed"] for v in rep.invariants.values()) else EXIT_INVARIANT


def cmd_verify(args) -> int:
    traj_path = Path(args.trajectory)
    traj = io.read_trajectory_csv(traj_path)
    doc = _sibling_config(traj_path, args.config)
    h = scenario_from_dict(doc).map if doc is not None else None
    problems = verify_trajectory(traj, h)
    summary_path = traj_path.parent / "summary.json"
    checked_summary = False
    if doc is not None and summary_path.exists():
        summary = load_json(summary_path)
        scn = scenario_from_dict(doc)
        ref = scn.reference
        recomputed = {
            "sup_norm": float(np.max(traj.norms)),
            "final_distance": float(convex.distance(traj.x[-1], ref)),
            "N_executed": traj.N,
        }
        for k, v in recomputed.items():
            if k in summary and summary[k] != v:
                problems.append(f"summary {k}={summary[k]!r} does not match table value {v!r}")
        checked_summary = True
    _emit({"trajectory": str(traj_path), "steps": traj.N, "membership_checked": h is not None,
           "summary_checked": checked_summary, "problems": problems, "ok": not problems})
    return EXIT_OK if not problems else EXIT_INVARIANT


# --------------------------------------------------------------------------
# check-map / flow


def cmd_check_map(args) -> int:
    doc = load_json(args.config)
    h = load_map_document(doc)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    d = h.dimension
    U = convex.sphere_directions(d)
    ladder = (0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0)
    xs = [np.zeros(d)] + [r * u for r in ladder for u in U]
    checks = [check_pointwise_bound(h, xs).to_dict()]
    centers = [np.zeros(d)] + [r * u for r in (1.0, 10.0) for u in np.vstack([np.eye(d), -np.eye(d)])]
    checks.append(check_usc(h, centers, rng=rng).to_dict())
    checks.append(check_scaled_bound(h, (1.0, 10.0, 100.0), xs[: 1 + 2 * len(U)]).to_dict())
    if h.lipschitz_L is not None and h.single_valued:
        pairs = [(rng.standard_normal(d) * 10, rng.standard_normal(d) * 10) for _ in range(1000)]
        checks.append(check_lipschitz_preservation(h, (1.0, 10.0, 100.0), pairs).to_dict())
    if isinstance(h.spec, DriftWithBall):
        inner = from_spec(h.spec.inner)
        pts = [np.zeros(d)] + [r * u for r in (1.0, 10.0) for u in np.eye(d)]
        checks.append(check_drift_equivalence(inner, h.spec.eps, pts).to_dict())
    report = {
        "map": map_spec_to_dict(h.spec),
        "bound_K": h.bound_K,
        "lipschitz_L": h.lipschitz_L,
        "checks": checks,
        "all_corroborated": all(c["verdict"] == "corroborated" for c in checks),
        "note": "corroborated verdicts mean no counterexample was found on the samples",
    }
    out = Path(args.out) if args.out else _out_root(args) / "check-map.json"
    io.write_json(out, report)
    _emit({"report": str(out), "all_corroborated": report["all_corroborated"],
           "verdicts": {c["property"]: c["verdict"] for c in checks}})
    return EXIT_OK


def cmd_flow(args) -> int:
    doc = load_json(args.config)
    h = load_map_document(doc)
    x0 = np.array(_parse_floats(args.x0, "x0"))
    if x0.shape[0] != h.dimension:
        raise ValidationError(f"x0 has {x0.shape[0]} entries, map dimension is {h.dimension}", "x0")
    policy = args.policy
    if args.direction:
        policy = {"policy": "support_point", "direction": _parse_floats(args.direction, "direction")}
    try:
        flow = integrate(h, x0, args.horizon, args.dt, policy, np.random.default_rng(args.seed))
    except UsageError as exc:
        raise ValidationError(str(exc), "flow") from None
    out = Path(args.out) if args.out else _out_root(args) / "flow.csv"
    io.write_flow_csv(flow, out)
    _emit({"table": str(out), "steps": flow.selections.shape[0], "final_state": flow.final.tolist(),
           "diverged": flow.diverged})
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srilab", description="Stochastic recursive inclusion laboratory.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config or map spec file")
        sp.add_argument("--out", help="output directory or file (default: $SRILAB_OUT or ./srilab-out)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    r = sub.add_parser("run", help="run a scenario and write its bundle")
    common(r)
    r.add_argument("--seeds", type=int, default=0, help="batch: run seeds seed..seed+N-1")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--svg", action="store_true", help="also write SVG charts")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="eps -> delta calibration sweep")
    common(s)
    s.add_argument("--eps-grid", required=True, help="comma-separated eps values")
    s.add_argument("--seeds", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diagnose", help="rescaling report for a trajectory table")
    common(d, config_required=False)
    d.add_argument("--trajectory", required=True)
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("check-map", help="property checks for a map spec")
    common(c)
    c.set_defaults(func=cmd_check_map)

    f = sub.add_parser("flow", help="integrate the differential inclusion")
    common(f)
    f.add_argument("--x0", required=True, help="comma-separated start point")
    f.add_argument("--horizon", "-T", type=float, required=True)
    f.add_argument("--dt", type=float, default=1e-3)
    f.add_argument("--policy", default="minimal_norm")
    f.add_argument("--direction", help="fixed support direction (comma-separated)")
    f.set_defaults(func=cmd_flow)

    v = sub.add_parser("verify", help="re-validate a trajectory table offline")
    common(v, config_required=False)
    v.add_argument("--trajectory", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if getattr(args, "seeds", 0) < 0:
        parser.error("--seeds must be nonnegative")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except UsageError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
