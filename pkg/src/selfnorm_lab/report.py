"""CSV tables and the ratio-curve figure."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .errors import DomainError
from .gauss import phi_tail
from .mc_lab import TailCurve

TAIL_COLUMNS = ("x", "count", "phat", "wilson_lo", "wilson_hi", "ratio", "log_ratio", "envelope")
COVERAGE_COLUMNS = ("level", "coverage", "lo", "hi", "R")
CI_COLUMNS = ("n0", "n", "mhat", "sigma_hat", "level", "lower", "upper")

_SVG_RC = {"svg.hashsalt": "selfnorm-lab", "svg.fonttype": "none", "path.simplify": False}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    if v is None:
        return ""
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, np.floating):
        return format_value(float(v))
    return str(v)


def emit_csv(records: Iterable, path, columns: Sequence[str] | None = None) -> Path:
    """Write records (dicts or dataclasses) with a header row, reals at 17 digits."""
    rows = [r if isinstance(r, dict) else vars(r) for r in records]
    if columns is None:
        if not rows:
            raise DomainError("columns are required for an empty record list")
        columns = list(rows[0])
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    return path


def tail_records(curve: TailCurve) -> list[dict]:
    return [vars(p) for p in curve.points]


def emit_svg(curve: TailCurve, path) -> Path:
    """Ratio ``phat / (1 - Phi(x))`` against ``x`` with the Wilson band and,
    when the curve carries envelope values, the band ``exp(+-envelope)``."""
    if not curve.points:
        raise DomainError("cannot plot an empty tail curve")
    xs = [p.x for p in curve.points]
    den = [phi_tail(p.x).value for p in curve.points]
    ratio = [p.ratio for p in curve.points]
    lo = [p.wilson_lo / d if d else math.nan for p, d in zip(curve.points, den)]
    hi = [p.wilson_hi / d if d else math.nan for p, d in zip(curve.points, den)]
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(6.0, 4.0))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot()
        ax.axhline(1.0, color="0.6", lw=0.8, ls=":", gid="series-unit")
        ax.plot(xs, lo, color="C0", lw=0.8, ls="--", gid="series-wilson-lo", label="Wilson 95%")
        ax.plot(xs, hi, color="C0", lw=0.8, ls="--", gid="series-wilson-hi")
        if all(math.isfinite(p.envelope) for p in curve.points):
            ax.plot(xs, [math.exp(p.envelope) for p in curve.points], color="C3", lw=1.0,
                    gid="series-envelope-hi", label="envelope")
            ax.plot(xs, [math.exp(-p.envelope) for p in curve.points], color="C3", lw=1.0,
                    gid="series-envelope-lo")
        ax.plot(xs, ratio, color="k", marker="o", ms=3, lw=1.2, gid="series-ratio", label="ratio")
        ax.set_xlabel("x")
        ax.set_ylabel(r"$\hat p\,/\,(1-\Phi(x))$")
        ax.set_title(f"{curve.statistic}, n = {curve.n}, R = {curve.replications}")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
