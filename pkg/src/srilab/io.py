"""File formats: trajectory and flow tables (CSV), reports (JSON), SVG line charts.

All writes are atomic: content goes to a temporary file in the target
directory and is renamed into place.
"""
from __future__ import annotations

import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .engine import OVERFLOW_GUARD, Trajectory
from .errors import ValidationError
from .inclusion import FlowTrajectory

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False, allow_nan=False, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# --------------------------------------------------------------------------
# trajectory tables


def trajectory_header(d: int) -> list[str]:
    return (["n", "t"] + [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d)]
            + [f"M_{i}" for i in range(d)] + ["a"])


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def trajectory_csv(traj: Trajectory) -> str:
    """Row ``n`` holds ``t(n)``, ``x_n`` and, for ``n < N``, ``y_n``, ``M_{n+1}``, ``a(n)``.

    The final row ``n = N`` leaves the step columns empty.
    """
    N, d = traj.N, traj.dimension
    buf = io.StringIO()
    buf.write(",".join(trajectory_header(d)) + "\n")
    if N:
        body = np.column_stack([np.arange(N), traj.t[:-1], traj.x[:-1], traj.y, traj.M, traj.a])
        np.savetxt(buf, body, fmt=["%d"] + [FLOAT_FMT] * (body.shape[1] - 1), delimiter=",")
    last = [str(N), _fmt(traj.t[-1])] + [_fmt(v) for v in traj.x[-1]] + [""] * (2 * d + 1)
    buf.write(",".join(last) + "\n")
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    return atomic_write_text(path, trajectory_csv(traj))


def read_trajectory_csv(path, guard: float = OVERFLOW_GUARD) -> Trajectory:
    """Parse a trajectory table; ``diverged`` is inferred from the guard."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValidationError("empty trajectory table", str(path))
    head = lines[0].split(",")
    if len(head) < 6 or (len(head) - 3) % 3 != 0:
        raise ValidationError(f"unexpected header {lines[0]!r}", str(path))
    d = (len(head) - 3) // 3
    if head != trajectory_header(d):
        raise ValidationError(f"header does not match the trajectory contract for d={d}", str(path))
    if len(lines) < 2:
        raise ValidationError("trajectory table has no rows", str(path))
    try:
        body = (np.loadtxt(io.StringIO("\n".join(lines[1:-1])), delimiter=",", ndmin=2)
                if len(lines) > 2 else np.zeros((0, 3 * d + 3)))
        last = lines[-1].split(",")
        xN = np.array([float(v) for v in last[2:2 + d]])
        tN = float(last[1])
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed trajectory row: {exc}", str(path)) from None
    if body.shape[1] != 3 * d + 3 or any(v != "" for v in last[2 + d:]) or len(last) != 3 * d + 3:
        raise ValidationError("rows do not match the header", str(path))
    N = body.shape[0]
    if not np.array_equal(body[:, 0], np.arange(N)) or int(last[0]) != N:
        raise ValidationError("row index column is not 0..N", str(path))
    x = np.vstack([body[:, 2:2 + d], xN[None, :]])
    t = np.r_[body[:, 1], tN]
    nx = np.linalg.norm(xN)
    return Trajectory(x=x, y=body[:, 2 + d:2 + 2 * d], M=body[:, 2 + 2 * d:2 + 3 * d], a=body[:, -1], t=t,
                      diverged=bool(not np.isfinite(nx) or nx > guard))


def flow_csv(flow: FlowTrajectory) -> str:
    """Header ``n,t,x_*,y_*,diverged``; the row whose state tripped the guard has ``diverged=1``.

    The last row carries no selection.
    """
    K, d = flow.selections.shape[0], flow.states.shape[1]
    head = ["n", "t"] + [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d)] + ["diverged"]
    buf = io.StringIO()
    buf.write(",".join(head) + "\n")
    if K:
        body = np.column_stack([np.arange(K), flow.times[:-1], flow.states[:-1], flow.selections, np.zeros(K)])
        np.savetxt(buf, body, fmt=["%d"] + [FLOAT_FMT] * (1 + 2 * d) + ["%d"], delimiter=",")
    last = [str(K), _fmt(flow.times[-1])] + [_fmt(v) for v in flow.states[-1]] + [""] * d + [
        "1" if flow.diverged else "0"]
    buf.write(",".join(last) + "\n")
    return buf.getvalue()


def write_flow_csv(flow: FlowTrajectory, path) -> Path:
    return atomic_write_text(path, flow_csv(flow))


# --------------------------------------------------------------------------
# SVG


def svg_line_chart(x, y, title: str = "", xlabel: str = "", ylabel: str = "", log_y: bool = False,
                   width: int = 640, height: int = 400, max_points: int = 2000) -> str:
    """Minimal standalone SVG polyline chart."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size > max_points:
        idx = np.unique(np.linspace(0, x.size - 1, max_points).astype(int))
        x, y = x[idx], y[idx]
    if log_y:
        y = np.log10(np.maximum(y, 1e-300))
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    y0, y1 = (float(y.min()), float(y.max())) if y.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    px = ml + (x - x0) / (x1 - x0) * pw
    py = mt + ph - (y - y0) / (y1 - y0) * ph
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    ylab = f"log10 {ylabel}" if log_y else ylabel

    def tick(v):
        return f"{v:.3g}" if math.isfinite(v) else ""

    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>\n'
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>\n'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.2" points="{pts}"/>\n'
        f'<text x="{ml}" y="{height - 30}" font-size="11">{tick(x0)}</text>\n'
        f'<text x="{ml + pw}" y="{height - 30}" font-size="11" text-anchor="end">{tick(x1)}</text>\n'
        f'<text x="{ml - 5}" y="{mt + ph}" font-size="11" text-anchor="end">{tick(y0)}</text>\n'
        f'<text x="{ml - 5}" y="{mt + 10}" font-size="11" text-anchor="end">{tick(y1)}</text>\n'
        f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" font-size="12" text-anchor="middle">{_esc(xlabel)}</text>\n'
        f'<text x="15" y="{mt + ph / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 15 {mt + ph / 2:.0f})">{_esc(ylab)}</text>\n'
        "</svg>\n"
    )


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
