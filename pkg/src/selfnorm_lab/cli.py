"""``selfnorm-lab`` command line.

Exit codes: 0 success, 2 config error, 3 runtime or degeneracy error,
4 an ``expect`` range failed under ``--assert``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bpre_infer, mc_lab, report
from .config import SUBCOMMANDS, Experiment, RunConfig, parse_config
from .errors import ConfigError, SelfNormError

log = logging.getLogger("selfnorm_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 2, 3, 4


class _Outcome:
    """Files, log fields and checked metric values of one experiment."""

    def __init__(self):
        self.log: dict = {}
        self.metric: list[float] = []


def _suffix(exp: Experiment, n: int) -> str:
    return exp.name if len(exp.n_values) == 1 else f"{exp.name}_n{n}"


def _tail(exp, rc, out, res, svg=True):
    cfg = exp.config
    curves = {}
    for n in exp.n_values:
        curves[n] = mc_lab.estimate_tail_curve(replace(cfg, n=n), rc.workers)
    fit_n = exp.extra.get("fit_at", exp.n_values[0])
    if fit_n not in curves:
        raise ConfigError("fit_at must be one of the n values", key="fit_at")
    if cfg.envelope is not None:
        c = cfg.envelope.c
        if c is None:
            try:
                c, _ = mc_lab.fit_envelope_constant(curves[fit_n])
                res.log["c_fit"] = c
                res.log["fit_at"] = fit_n
            except SelfNormError as exc:
                res.log["envelope_fit_error"] = str(exc)
                c = math.nan
        for n, curve in curves.items():
            scale = c / curve.envelope_params.c
            curve.points = [replace(p, envelope=p.envelope * scale) for p in curve.points]
            curve.envelope_params = replace(curve.envelope_params, c=c if math.isfinite(c) else 1.0)
        if math.isfinite(c) and len(curves) > 1:
            res.log["uniformity"] = {
                str(n): w for n, w in mc_lab.check_envelope_uniformity(c, list(curves.values())).items()
            }
    for n, curve in curves.items():
        stem = _suffix(exp, n)
        report.emit_csv(report.tail_records(curve), out / f"{stem}.csv", report.TAIL_COLUMNS)
        if svg and curve.points:
            report.emit_svg(curve, out / f"{stem}.svg")
        res.log.setdefault("excluded", {})[str(n)] = curve.excluded
        res.log.setdefault("degenerate", {})[str(n)] = curve.degenerate
        res.metric += [p.ratio for p in curve.points]
    return curves


def _logratio(exp, rc, out, res):
    for n in exp.n_values:
        curve = mc_lab.estimate_tail_curve(replace(exp.config, n=n), rc.workers)
        lr = mc_lab.log_ratio_curve(curve)
        counts = {p.x: p for p in curve.points}
        rows = [{"x": x, "count": counts[x].count, "phat": counts[x].phat, "value": v} for x, v in lr.points]
        report.emit_csv(rows, out / f"{_suffix(exp, n)}.csv", ("x", "count", "phat", "value"))
        res.log.setdefault("excluded", {})[str(n)] = curve.excluded + lr.excluded
        res.log.setdefault("degenerate", {})[str(n)] = curve.degenerate
        res.metric += [v for _, v in lr.points]


def _mdp(exp, rc, out, res):
    rows = []
    gaps: dict[float, list[float]] = {}
    for n in exp.n_values:
        diag = mc_lab.mdp_diagnostic(replace(exp.config, n=n), exp.extra["a_values"], exp.extra["b"], rc.workers)
        for r in diag.rows:
            rows.append({"n": n, **r})
            gaps.setdefault(r["a"], []).append(abs(r["rate"] - r["target"]))
        res.log.setdefault("excluded", {})[str(n)] = diag.excluded
        res.metric += [r["rate"] for r in diag.rows]
    cols = ("n", "a", "b", "threshold", "count", "phat", "rate", "target")
    report.emit_csv(rows, out / f"{exp.name}.csv", cols)
    res.log["gap_decreasing"] = {str(a): all(g[i + 1] < g[i] for i in range(len(g) - 1)) for a, g in gaps.items()}


def _ks(exp, rc, out, res):
    rows = []
    for n in exp.n_values:
        kd = mc_lab.kolmogorov_distance(replace(exp.config, n=n), rc.workers)
        rows.append({"n": n, "replications": exp.config.replications, "d": kd.d, "at": kd.at})
        res.metric.append(kd.d)
    report.emit_csv(rows, out / f"{exp.name}.csv", ("n", "replications", "d", "at"))
    if len(rows) >= 2:
        slope = np.polyfit(np.log([r["n"] for r in rows]), np.log([r["d"] for r in rows]), 1)[0]
        res.log["loglog_slope"] = float(slope)


def _exceedance(exp, rc, out, res, fn):
    for n in exp.n_values:
        curve = fn(replace(exp.config, n=n), rc.workers)
        rows = [{"x": x, "count": c, "phat": p} for x, c, p in curve.points]
        report.emit_csv(rows, out / f"{_suffix(exp, n)}.csv", ("x", "count", "phat"))
        res.log.setdefault("slope", {})[str(n)] = curve.slope
        if curve.reference:
            res.log.setdefault("reference", {})[str(n)] = curve.reference
        res.metric += [p for _, _, p in curve.points]


def _bpre_sim(exp, rc, out, res):
    horizon = exp.extra["horizon"]
    cfg = replace(exp.config, n=horizon, n0=0, statistic="W")
    batches = mc_lab.run_blocks(cfg, mc_lab._bpre_paths, rc.workers)
    summary = []
    r = 0
    for batch in batches:
        for i in range(len(batch)):
            traj = batch[i]
            rows = [{"generation": g, "population": float(z)} for g, z in enumerate(traj.z)]
            report.emit_csv(rows, out / f"{exp.name}_traj{r}.csv", ("generation", "population"))
            summary.append({
                "replication": r,
                "horizon": horizon,
                "approx_from": -1 if traj.approx_from is None else traj.approx_from,
                "final_population": float(traj.z[-1]),
            })
            r += 1
    report.emit_csv(summary, out / f"{exp.name}_summary.csv",
                    ("replication", "horizon", "approx_from", "final_population"))


def _bpre_ci(exp, rc, out, res):
    path = Path(exp.extra["trajectory"])
    if not path.is_absolute():
        path = rc.base_dir / path
    traj, first = bpre_infer.read_trajectory_csv(path)
    n0 = exp.extra["n0"]
    if n0 < first:
        raise ConfigError(f"n0={n0} precedes the first generation {first} in the file", key="n0")
    w = bpre_infer.window_from_trajectory(traj, n0 - first, exp.extra["n"])
    row = bpre_infer.window_summary(w, exp.extra["level"])
    row["n0"] = n0
    report.emit_csv([row], out / f"{exp.name}.csv", report.CI_COLUMNS)
    res.metric.append(row["mhat"])


def _coverage(exp, rc, out, res):
    rep = mc_lab.coverage_experiment(exp.config, exp.extra.get("level", 0.95), rc.workers)
    row = {"level": rep.level, "coverage": rep.coverage, "lo": rep.lo, "hi": rep.hi, "R": rep.replications}
    report.emit_csv([row], out / f"{exp.name}.csv", report.COVERAGE_COLUMNS)
    res.log["degenerate"] = rep.degenerate
    res.metric.append(rep.coverage)


_HANDLERS = {
    "tail": _tail,
    "logratio": _logratio,
    "mdp": _mdp,
    "ks": _ks,
    "probe-a1": lambda e, rc, o, r: _exceedance(e, rc, o, r, mc_lab.probe_condition_a1),
    "lnz-tail": lambda e, rc, o, r: _exceedance(e, rc, o, r, mc_lab.ln_z_tail_probe),
    "bpre-sim": _bpre_sim,
    "bpre-ci": _bpre_ci,
    "coverage": _coverage,
}


def run(subcommand: str, config: RunConfig, assert_thresholds: bool = False) -> int:
    """Run every experiment block, write outputs, return the exit code."""
    out = config.out_dir or Path(".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_RUNTIME
    failed = []
    log_path = out / "run.jsonl"
    with log_path.open("w") as log_fh:
        for exp in config.experiments:
            res = _Outcome()
            t0 = time.perf_counter()
            try:
                _HANDLERS[subcommand](exp, config, out, res)
            except ConfigError as exc:
                log.error("%s: %s", exp.name, exc)
                return EXIT_CONFIG
            except (SelfNormError, OSError) as exc:
                log.error("%s: %s", exp.name, exc)
                return EXIT_RUNTIME
            entry = {
                "experiment": exp.name,
                "subcommand": subcommand,
                "config_hash": config.config_hash,
                "seed": config.seed,
                "n": exp.n_values,
                "replications": exp.config.replications if exp.config else None,
                **res.log,
            }
            wall = time.perf_counter() - t0
            # the only nondeterministic field; CSV and SVG outputs are byte-stable
            entry["wall_time_s"] = round(wall, 3)
            log.info("%s finished in %.2f s", exp.name, wall)
            expect = exp.extra.get("expect")
            if expect is not None:
                ok = bool(res.metric) and all(expect[0] <= v <= expect[1] for v in res.metric)
                entry["expect"] = expect
                entry["expect_ok"] = ok
                if not ok:
                    failed.append(exp.name)
            log_fh.write(json.dumps(entry, sort_keys=True, default=str) + "\n")
    if assert_thresholds and failed:
        log.error("expectation failed for: %s", ", ".join(failed))
        return EXIT_ASSERT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfnorm-lab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="64-bit seed (required for stochastic subcommands)")
    p.add_argument("--workers", type=int, help="worker threads (default $SELFNORM_LAB_WORKERS or 1)")
    p.add_argument("--assert", dest="assert_thresholds", action="store_true",
                   help="exit 4 when an experiment's 'expect' range is violated")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    workers = args.workers
    if workers is None and os.environ.get("SELFNORM_LAB_WORKERS"):
        try:
            workers = int(os.environ["SELFNORM_LAB_WORKERS"])
        except ValueError:
            log.error("SELFNORM_LAB_WORKERS must be an integer")
            return EXIT_CONFIG
    try:
        text = args.config.read_text()
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    try:
        rc = parse_config(text, args.subcommand, out_dir=args.out, seed=args.seed,
                          workers=workers, base_dir=args.config.parent)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return run(args.subcommand, rc, args.assert_thresholds)


if __name__ == "__main__":
    sys.exit(main())
