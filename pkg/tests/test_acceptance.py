"""Acceptance criteria at full scale; each test prints one PASS/FAIL line."""

import itertools
import json
import math

import numpy as np
import pytest

from lqg_mfg.cli import main as cli_main
from lqg_mfg.dynamics import build_kernels
from lqg_mfg.experiments import (
    ExperimentConfig,
    fixed_point_check,
    nash_deviation_check,
    run_delta_scaling,
    run_iid_baseline,
    run_q1,
    run_q2,
    run_q3,
    validate_q1_variance,
)
from lqg_mfg.params import InitialLawSpec, ModelParams, TimeGrid
from lqg_mfg.riccati import (
    a1N_closed,
    a_closed,
    extract_pattern,
    solve_full_matrix_riccati,
    solve_mfg_system,
    solve_mfg_system_rk4,
    solve_riccati,
)
from lqg_mfg.transport import EmpiricalMeasure1D, coupling_oracle, pushforward_check, wp_empirical

SEED = 20261016
GAUSS = ModelParams(1.0, 1.0, initial_law=InitialLawSpec.gaussian(0.0, 1.0))
RATE_CONFIG = dict(N_schedule=tuple(2**j for j in range(3, 11)), replications=200)


@pytest.fixture(scope="module")
def q2():
    return run_q2(ExperimentConfig(GAUSS, seed=SEED, **RATE_CONFIG))


@pytest.fixture(scope="module")
def q3():
    return run_q3(ExperimentConfig(GAUSS, seed=SEED, **RATE_CONFIG))


def test_c01_riccati_closed_form_vs_rk4(record):
    worst = 0.0
    for k, T in itertools.product((0.5, 1.0, 2.0), repeat=2):
        p = ModelParams(k, T)
        grid = TimeGrid(T, 4096)
        t = solve_mfg_system(p, grid)
        rk4 = solve_mfg_system_rk4(p, grid)
        worst = max(worst, float(np.max(np.abs(np.stack([t.a, t.b, t.c, t.d], 1) - rk4))))
    assert record("1", worst <= 1e-8, f"Riccati closed form vs RK4, worst sup-norm {worst:.2e} (tol 1e-8)")


def test_c02_matrix_riccati_reduction(record):
    details, ok = [], True
    for N in (3, 4, 5):
        grid = TimeGrid(1.0, 1024)
        sol = solve_full_matrix_riccati(ModelParams(1.0, 1.0, N=N), grid)
        pc = extract_pattern(sol, 0)
        dev = pc.max_pattern_deviation
        bsup = float(np.max(np.abs(sol.B)))
        a3 = float(np.max(np.abs(pc.a3 + pc.a1 / (N - 1))))
        a1 = float(np.max(np.abs(pc.a1 - a1N_closed(1.0, 1.0, N, grid.nodes))))
        ok &= dev <= 1e-6 and bsup <= 1e-8 and a3 <= 1e-6 and a1 <= 1e-6
        details.append(f"N={N}: pattern {dev:.1e}, B {bsup:.1e}, a3 {a3:.1e}, a1 {a1:.1e}")
    assert record("2", ok, "matrix Riccati reduction; " + "; ".join(details))


def test_c03a_a1N_first_order_estimate(record):
    k, T, N = 1.0, 1.0, 1000
    t = TimeGrid(T, 4096).nodes
    gap = float(np.max(np.abs(N * (a1N_closed(k, T, N, t) - a_closed(k, T, t)) - k * (T - t))))
    assert record("3a", gap <= 0.05 * k * T,
                  f"sup |N(a1N - a) - k(T-t)| = {gap:.3f} at N=1000 (tol {0.05 * k * T:.3f})")


def test_c03b_kernel_first_order_estimate(record):
    N = 1000
    ker = build_kernels(solve_riccati(GAUSS.with_N(N), TimeGrid(1.0, 4096)))
    t = ker.grid.nodes
    gap = float(np.max(np.abs(N * (ker.E2ahat - ker.E2a) - 2 * t * (1 - t))))
    assert record("3b", gap <= 0.05, f"sup |N(E(2aHat) - E(2a)) - 2t(T-t)| = {gap:.3f} at N=1000 (tol 0.05)")


def test_c04_fixed_point(record):
    rows = fixed_point_check(GAUSS, seed=SEED, M=100_000)
    zm = max(abs(r["z_mean"]) for r in rows)
    zv = max(abs(r["z_var"]) for r in rows)
    ok = len(rows) == 10 and zm <= 4 and zv <= 5
    assert record("4", ok, f"fixed point over 10 checkpoints: max |z| mean {zm:.2f} (<=4), variance {zv:.2f} (<=5)")


def test_c05_delta_scaling(record):
    rep = run_delta_scaling(ExperimentConfig(GAUSS, seed=SEED, **RATE_CONFIG), Ns=(64, 256, 1024))
    r = rep["ratios"]
    ok = all(0.5 <= x <= 2 for x in r["delta"]) and all(0.3 <= x <= 3 for x in r["I"] + r["III"])
    fmt = lambda xs: "[" + ", ".join(f"{x:.2f}" for x in xs) + "]"
    assert record("5", ok, f"Delta scaling ratios: N sup Delta^2 {fmt(r['delta'])}, N^2 sup I^2 {fmt(r['I'])}, "
                           f"N^2 sup III^2 {fmt(r['III'])}")


def test_c06_transport_engine(record):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        p = float(rng.choice([1.0, 1.5, 2.0]))
        a = EmpiricalMeasure1D.from_samples(rng.normal(size=n) * rng.uniform(0.1, 10))
        b = EmpiricalMeasure1D.from_samples(rng.normal(size=n) * rng.uniform(0.1, 10))
        worst = max(worst, abs(wp_empirical(a, b, p) - coupling_oracle(a, b, p)))
    shift_ok = True
    for _ in range(200):
        # dyadic atoms and shifts keep every difference exact in floating point
        a = EmpiricalMeasure1D.from_samples(rng.integers(-64, 64, size=7) / 8)
        b = EmpiricalMeasure1D.from_samples(rng.integers(-64, 64, size=5) / 8)
        c = float(rng.integers(-64, 64)) / 4
        shift_ok &= wp_empirical(a.shifted(c), b.shifted(c), 1.0) == wp_empirical(a, b, 1.0)
    push_ok = True
    for _ in range(100):
        a = EmpiricalMeasure1D.from_samples(rng.normal(size=int(rng.integers(1, 9))))
        b = EmpiricalMeasure1D.from_samples(rng.normal(size=int(rng.integers(1, 9))))
        lip = float(rng.uniform(0.1, 3))
        lhs, rhs = pushforward_check(a, b, lambda x: lip * np.tanh(x), lip, 2.0)
        push_ok &= lhs <= rhs + 1e-12
    ok = worst <= 1e-12 and shift_ok and push_ok
    assert record("6", ok, f"transport: sorted vs exhaustive max gap {worst:.1e}, translation exact {shift_ok}, "
                           f"pushforward contraction {push_ok}")


def test_c07_q2_p1(q2, record):
    e = q2.estimate(1.0)
    assert record("7", -0.57 <= e.slope <= -0.43, f"Q2 p=1 slope {e.slope:.3f} (CI {e.ci[0]:.3f}, {e.ci[1]:.3f}) in [-0.57, -0.43]")


def test_c08_q2_p2(q2, record):
    e = q2.estimate(2.0)
    assert record("8", e.slope <= -0.5, f"Q2 p=2 slope of E[W2^2] {e.slope:.3f} <= -0.5")


def test_c09_q3(q3, record):
    e1, e2 = q3.estimate(1.0), q3.estimate(2.0)
    ok = -0.55 <= e1.slope <= -0.35 and e2.slope <= -0.5
    assert record("9", ok, f"Q3 sup-grid slopes: p=1 {e1.slope:.3f} in [-0.55, -0.35], p=2 {e2.slope:.3f} <= -0.5")


def test_c10_q1(record):
    val = validate_q1_variance(GAUSS.with_N(8), 1.0, 100_000, seed=SEED)
    res = run_q1(ExperimentConfig(GAUSS, seed=SEED, N_schedule=tuple(2**j for j in range(3, 13)),
                                  replications=200, p_list=(2.0,)))
    e = res.estimate(2.0)
    scaled = e.means * np.sqrt(e.Ns)
    ok = abs(val["z"]) <= 5 and bool(np.all(np.diff(scaled) <= 0)) and e.slope <= -0.5
    assert record("10", ok, f"Q1 closed form: variance check z={val['z']:.2f}, W2 N^1/2 nonincreasing "
                            f"{bool(np.all(np.diff(scaled) <= 0))}, slope {e.slope:.3f}")


def test_c11_iid(record):
    e = run_iid_baseline(ExperimentConfig(GAUSS, seed=SEED, **RATE_CONFIG)).estimate(1.0)
    assert record("11", -0.57 <= e.slope <= -0.43, f"i.i.d. baseline p=1 slope {e.slope:.3f} in [-0.57, -0.43]")


def test_c12_nash(record):
    rep = nash_deviation_check(GAUSS.with_N(4), R=20_000, seed=SEED)
    c, se = rep.coef, rep.coef_se
    ok = c[2] - 1.96 * se[2] > 0 and abs(c[1]) <= 3 * se[1]
    assert record("12", ok, f"Nash deviation N=4: c2={c[2]:.4f} (SE {se[2]:.1e}), c1={c[1]:.2e} "
                            f"({abs(c[1]) / se[1]:.2f} SE)")


def test_c13_reproducibility(tmp_path, record):
    cfg = {
        "seed": SEED,
        "model": {"k": 1, "T": 1, "N": 4},
        "riccati": {"steps": 1024},
        "rates": {"N_schedule": [8, 16, 32, 64, 128], "replications": 60, "bootstrap": 500},
        "nash": {"N": 3, "replications": 400, "steps": 100},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    runs = {"a": ["--workers", "1"], "b": ["--workers", "1"], "c": ["--workers", "4"]}
    for name, extra in runs.items():
        out = str(tmp_path / name)
        cli_main(["riccati", "--config", str(path), "--out", out, *extra])
        for exp in ("q2", "q3", "iid", "common-noise"):
            cli_main(["rates", "--config", str(path), "--out", out, "--experiment", exp, *extra])
        cli_main(["nash-check", "--config", str(path), "--out", out, *extra])
    files = sorted(p.name for p in (tmp_path / "a").iterdir()
                   if p.suffix in (".csv", ".json") and not p.name.startswith("manifest"))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / r / f).read_bytes() for f in files for r in "bc")
    assert record("13", same and len(files) >= 12,
                  f"{len(files)} CSV/JSON outputs byte-identical across reruns and workers 1 vs 4: {same}")
