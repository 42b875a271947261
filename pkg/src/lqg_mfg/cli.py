"""Command-line entry point: ``lqg-mfg {riccati,rates,nash-check}``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 statistically inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, RunConfig, load_config
from .experiments import EXPERIMENTS, RUNNERS, band_verdict, nash_deviation_check
from .params import ConfigurationError, TimeGrid
from .plot import loglog_svg
from .riccati import (
    IntegrationDiverged,
    QuadratureError,
    a1N_closed,
    extract_pattern,
    solve_full_matrix_riccati,
    solve_mfg_system_rk4,
    solve_riccati,
    solve_seven_system,
    MAX_MATRIX_N,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _dump(obj: Any, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path], verdicts: dict, started: str, extra=None) -> Path:
    m = {
        "schema_version": SCHEMA_VERSION,
        "tool": "lqg-mfg",
        "tool_version": __version__,
        "command": command,
        "master_seed": cfg.seed,
        "config": cfg.raw,
        "random_streams": "Philox(SeedSequence(master_seed, spawn_key=(study, N, replication)))",
        "started": started,
        "finished": _now(),
        "outputs": [p.name for p in outputs],
        "verdicts": verdicts,
    }
    if extra:
        m.update(extra)
    return _dump(m, out / f"manifest_{command}.json")


def _check(value: float, tol: float) -> dict[str, Any]:
    return {"value": float(value), "tol": tol, "pass": bool(value <= tol)}


def cmd_riccati(cfg: RunConfig, out: Path) -> int:
    started = _now()
    section = cfg.section("riccati")
    N = section["N"] if section["N"] is not None else cfg.params.N
    params = cfg.params.with_N(N)
    grid = TimeGrid(params.T, section["steps"])
    table = solve_riccati(params, grid)
    outputs = [table.to_csv(out / "riccati.csv")]
    rk4 = solve_mfg_system_rk4(params, grid)
    closed = np.stack([table.a, table.b, table.c, table.d], axis=1)
    seven, _ = solve_seven_system(params, grid)
    sr = seven.report()
    checks: dict[str, Any] = {
        "terminal_zero": _check(float(np.max(np.abs(closed[-1]))), 0.0),
        "closed_form_vs_rk4": _check(float(np.max(np.abs(closed - rk4))), 1e-8),
        "max_ode_residual": _check(max(table.residuals(params.k).values()), 1e-6),
        "seven_system_2a_plus_g": _check(sr["sup_2a_plus_g"], 1e-8),
        "seven_system_e": _check(sr["sup_e"], 1e-8),
        "seven_system_f": _check(sr["sup_f"], 1e-8),
    }
    notes = []
    if N is not None:
        if N <= MAX_MATRIX_N:
            sol = solve_full_matrix_riccati(params, grid)
            pc = extract_pattern(sol, 0)
            checks["pattern_max_deviation"] = _check(pc.max_pattern_deviation, 1e-6)
            checks["B_sup"] = _check(float(np.max(np.abs(sol.B))), 1e-8)
            checks["a3_plus_a1_over_N_minus_1"] = _check(float(np.max(np.abs(pc.a3 + pc.a1 / (N - 1)))), 1e-6)
            checks["a1_vs_closed_form"] = _check(
                float(np.max(np.abs(pc.a1 - a1N_closed(params.k, params.T, N, grid.nodes)))), 1e-6)
            checks["a2_vs_reduced_ode"] = _check(float(np.max(np.abs(pc.a2 - table.a2N))), 1e-6)
        else:
            notes.append(f"full matrix system skipped for N={N} > {MAX_MATRIX_N}")
    ok = all(c["pass"] for c in checks.values())
    report = {"schema_version": SCHEMA_VERSION, "k": params.k, "T": params.T, "N": N, "steps": grid.steps,
              "checks": checks, "notes": notes, "pass": ok}
    outputs.append(_dump(report, out / "pattern_report.json"))
    _manifest(out, "riccati", cfg, outputs, {"riccati": "pass" if ok else "fail"}, started)
    for name, c in checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name}: {c['value']:.3e} (tol {c['tol']:g})")
    return EXIT_PASS if ok else EXIT_FAIL


def _band(bands: dict, label: str, p: float):
    per_p = bands.get(label, {})
    return per_p.get(format(p, "g"), per_p.get(str(p)))


def cmd_rates(cfg: RunConfig, out: Path, experiment: str, workers: int) -> int:
    started = _now()
    ec = cfg.experiment_config(workers)
    result = RUNNERS[experiment](ec)
    stem = experiment.replace("-", "_")
    outputs = [_write_csv(out / f"{stem}.csv", ["experiment", "p", "t", "N", "replication", "value"], result.rows)]
    verdicts, entries = [], []
    for e in result.estimates:
        band = _band(cfg.bands(), e.label, e.p)
        verdict = band_verdict(e, *band) if band else "unchecked"
        verdicts.append(verdict)
        entries.append({**e.to_dict(), "band": band, "verdict": verdict})
    overall = "fail" if "fail" in verdicts else "inconclusive" if "inconclusive" in verdicts else "pass"
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "seed": cfg.seed,
        "config": ec.echo(),
        "estimates": entries,
        "extras": result.extras,
        "verdict": overall,
    }
    outputs.append(_dump(summary, out / f"{stem}_summary.json"))
    outputs.append(loglog_svg(result.estimates, f"{experiment}: mean distance against N", out / f"{stem}.svg"))
    _manifest(out, f"rates_{stem}", cfg, outputs, {experiment: overall}, started, {"workers": workers})
    for e, v in zip(entries, verdicts):
        print(f"{v.upper()} {e['label']} p={e['p']:g}: slope {e['slope']:.4f} CI [{e['ci95'][0]:.4f}, {e['ci95'][1]:.4f}]"
              f" band {e['band']}")
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[overall]


def cmd_nash_check(cfg: RunConfig, out: Path, workers: int) -> int:
    started = _now()
    n = cfg.section("nash")
    params = cfg.params.with_N(n["N"])
    report = nash_deviation_check(params, n["epsilons"], n["replications"], cfg.seed, n["steps"], workers,
                                  n["min_replications"])
    rows = zip(report.epsilons, report.cost, report.cost_se, report.oracle_continuous, report.oracle_discrete)
    outputs = [_write_csv(out / "nash.csv", ["epsilon", "cost", "se", "oracle_continuous", "oracle_euler"], rows)]
    outputs.append(_dump({"schema_version": SCHEMA_VERSION, "N": n["N"], "seed": cfg.seed, **report.to_dict()},
                         out / "nash_report.json"))
    _manifest(out, "nash_check", cfg, outputs, {"nash": report.status}, started, {"workers": workers})
    c, se = report.coef, report.coef_se
    print(f"{report.status.upper()} c1={c[1]:.3e} (SE {se[1]:.1e}), c2={c[2]:.4f} (SE {se[2]:.1e})")
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[report.status]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqg-mfg", description="LQG mean-field game convergence lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="JSON configuration file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes")

    common(sub.add_parser("riccati", help="coefficient tables and reduction checks"))
    rates = sub.add_parser("rates", help="convergence-rate study")
    common(rates)
    rates.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    common(sub.add_parser("nash-check", help="unilateral deviation test"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigurationError("--workers", f"must be >=1, got {args.workers}")
        cfg = load_config(args.config, args.seed)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError("--out", f"cannot create {args.out}: {exc.strerror}") from None
        if args.command == "riccati":
            return cmd_riccati(cfg, args.out)
        if args.command == "rates":
            return cmd_rates(cfg, args.out, args.experiment, args.workers)
        return cmd_nash_check(cfg, args.out, args.workers)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationDiverged, QuadratureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
