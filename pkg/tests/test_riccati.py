import math

import numpy as np
import pytest

from lqg_mfg.params import ModelParams, TimeGrid
from lqg_mfg.riccati import (
    IntegrationDiverged,
    a1N_closed,
    a_closed,
    extract_pattern,
    generic_ode_rk4,
    pattern_a3_rhs,
    riccati_tanh_closed,
    solve_full_matrix_riccati,
    solve_mfg_system,
    solve_mfg_system_rk4,
    solve_nplayer_system,
    solve_riccati,
    solve_seven_system,
)


def test_a_terminal_and_plateau():
    t = np.linspace(0, 20, 5)
    a = a_closed(1.0, 20.0, t)
    assert a[-1] == 0.0
    assert abs(a[0] - math.sqrt(0.5)) < 1e-12


@pytest.mark.parametrize("k,T", [(0.5, 2.0), (2.0, 0.5)])
def test_a_solves_its_ode(k, T):
    t = np.linspace(0, T, 2001)
    h = 1e-6
    deriv = (a_closed(k, T, t + h) - a_closed(k, T, t - h)) / (2 * h)
    assert np.max(np.abs(deriv - 2 * a_closed(k, T, t) ** 2 + k)) < 1e-6


def test_tanh_closed_form_generic():
    # y' = c^2 y^2 - d^2 with y(T) = 0
    grid = TimeGrid(1.5, 2000)
    ref = generic_ode_rk4(lambda _t, y: 9.0 * y**2 - 0.49, 0.0, grid)
    assert np.max(np.abs(riccati_tanh_closed(3.0, 0.7, 1.5, grid.nodes) - ref)) < 1e-10


def test_closed_form_vs_rk4_k1():
    p = ModelParams(1.0, 1.0)
    grid = TimeGrid(1.0, 4096)
    table = solve_mfg_system(p, grid)
    rk4 = solve_mfg_system_rk4(p, grid)
    assert np.max(np.abs(np.stack([table.a, table.b, table.c, table.d], 1) - rk4)) < 1e-8
    assert table.a[-1] == table.b[-1] == table.c[-1] == table.d[-1] == 0.0


def test_c_matches_its_integral_formula():
    # independent evaluation of c(t) = k ∫_t^T exp(-4∫_t^s a) ds with scipy quad
    from scipy import integrate

    k, T = 2.0, 1.0
    table = solve_mfg_system(ModelParams(k, T), TimeGrid(T, 512))
    for j in (0, 100, 400):
        t = table.grid.nodes[j]
        inner = lambda s: integrate.quad(lambda r: a_closed(k, T, r), t, s)[0]
        c = k * integrate.quad(lambda s: math.exp(-4 * inner(s)), t, T)[0]
        assert abs(c - table.c[j]) < 1e-8


def test_seven_system_fixed_point_identities():
    table, w = solve_seven_system(ModelParams(1.0, 1.0), TimeGrid(1.0, 1024))
    rep = table.report()
    assert rep["sup_2a_plus_g"] < 1e-10
    assert rep["sup_e"] == 0.0 and rep["sup_f"] == 0.0
    assert np.allclose(w.w6, 2.0)
    assert np.allclose(w.w4, -4 * table.a)


def test_seven_system_agrees_with_reduced():
    p = ModelParams(1.0, 1.0)
    grid = TimeGrid(1.0, 1024)
    seven, _ = solve_seven_system(p, grid)
    four = solve_mfg_system(p, grid)
    for name in "abcd":
        assert np.max(np.abs(getattr(seven, name) - getattr(four, name))) < 1e-8


def test_nplayer_coefficients():
    p = ModelParams(1.0, 1.0, N=10)
    table = solve_riccati(p, TimeGrid(1.0, 2048))
    assert np.allclose(table.aHatN, 10 / 9 * table.a1N)
    assert table.a2N[-1] == 0.0
    # a1N converges to a
    big = solve_nplayer_system(p.with_N(100_000), TimeGrid(1.0, 256))
    assert np.max(np.abs(big.a1N - big.a)) < 1e-4


def test_a1N_solves_reduced_riccati():
    # a1' = 2 (N+1)/(N-1) a1^2 - k (N-1)/N
    k, T, N = 1.3, 0.8, 6
    grid = TimeGrid(T, 4000)
    ref = generic_ode_rk4(lambda _t, y: 2 * (N + 1) / (N - 1) * y**2 - k * (N - 1) / N, 0.0, grid)
    assert np.max(np.abs(a1N_closed(k, T, N, grid.nodes) - ref)) < 1e-10


def _lim_a1(k, T, t):
    tau = T - t
    kap = math.sqrt(2 * k)
    return -1.5 * a_closed(k, T, t) + 0.5 * kap * tau * math.sqrt(k / 2) / np.cosh(kap * tau) ** 2


@pytest.mark.parametrize("k,T", [(1.0, 1.0), (0.5, 2.0)])
def test_first_order_expansion_of_a1N(k, T):
    # derived by expanding the closed form in 1/N
    N = 1000
    grid = TimeGrid(T, 512)
    t = grid.nodes
    diff = N * (a1N_closed(k, T, N, t) - a_closed(k, T, t))
    assert np.max(np.abs(diff - _lim_a1(k, T, t))) < 0.05
    hat = N / (N - 1) * a1N_closed(k, T, N, t)
    assert np.max(np.abs(N * (hat - a_closed(k, T, t)) - (_lim_a1(k, T, t) + a_closed(k, T, t)))) < 0.05


@pytest.mark.parametrize("N", [3, 5])
def test_full_matrix_reduces_to_pattern(N):
    p = ModelParams(1.0, 1.0, N=N)
    grid = TimeGrid(1.0, 512)
    sol = solve_full_matrix_riccati(p, grid)
    for i in range(N):
        pc = extract_pattern(sol, i)
        assert pc.max_pattern_deviation < 1e-10
        assert np.max(np.abs(pc.a1 - a1N_closed(1.0, 1.0, N, grid.nodes))) < 1e-10
        assert np.max(np.abs(pc.a3 + pc.a1 / (N - 1))) < 1e-10
    assert np.max(np.abs(sol.B)) == 0.0
    pc = extract_pattern(sol, 0)
    table = solve_riccati(p, grid)
    assert np.max(np.abs(pc.a2 - table.a2N)) < 1e-8
    first, second = pattern_a3_rhs(pc, N, 1.0)
    assert np.max(np.abs(first - second)) < 1e-10
    if N >= 3:
        assert np.max(np.abs(pc.a4 - (pc.a1 / (N - 2) + pc.a3 - pc.a2 / (N - 2)))) < 1e-10


def test_constant_term_matches_second_moment_oracle():
    # with B = 0 and zero-mean gaussian start, E[X^T A_1 X] at 0 plus C_1(0)
    # is the expected cost of player 1, which the Lyapunov oracle computes
    from lqg_mfg.experiments import deviation_cost_oracle

    N = 3
    p = ModelParams(1.0, 1.0, N=N)
    grid = TimeGrid(1.0, 2000)
    sol = solve_full_matrix_riccati(p, grid)
    value = np.trace(sol.A[0, 0]) + sol.C[0, 0]  # initial covariance is I
    cost = deviation_cost_oracle(p, 0.0, 2000, euler=False)
    assert abs(value - cost) < 1e-6


def test_divergence_detected():
    with pytest.raises(IntegrationDiverged):
        generic_ode_rk4(lambda _t, y: -(y**2) - 1.0, 0.0, TimeGrid(5.0, 1000))


def test_csv_export(tmp_path):
    table = solve_riccati(ModelParams(1.0, 1.0, N=4), TimeGrid(1.0, 64))
    path = table.to_csv(tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,a,b,c,d,a1N,a2N,aHatN"
    assert len(lines) == 66
    assert lines[-1].startswith("1,0,0,0,0,0,")
