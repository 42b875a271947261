"""Deterministic coefficient functions of the LQG mean-field and N-player games.

Closed forms are used where they exist (``a``, ``a1N``, and integral
representations of ``b``, ``c``, ``d``); everything else is integrated
backward from the terminal condition with classical RK4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson

from .params import ConfigurationError, ModelParams, TimeGrid

# magnitude beyond which a backward integration is declared diverged
DIVERGENCE_CAP = 1e12


class IntegrationDiverged(ArithmeticError):
    def __init__(self, node: int, t: float):
        super().__init__(f"backward integration diverged at node {node} (t={t:.6g})")
        self.node = node
        self.t = t


class QuadratureError(ArithmeticError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"quadrature residual {residual:.3e} exceeds tolerance {tol:.1e}")
        self.residual = residual


def generic_ode_rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    terminal,
    grid: TimeGrid,
    cap: float = DIVERGENCE_CAP,
    post_step: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Integrate ``v' = rhs(t, v)`` backward from ``v(T) = terminal``.

    Returns an array of shape ``(steps + 1, *terminal.shape)`` indexed by grid
    node.  ``post_step`` is applied to the state after each step (used to
    re-symmetrize matrix states).
    """
    v = np.array(terminal, dtype=float)
    t = grid.nodes
    h = -grid.dt
    out = np.empty((grid.steps + 1,) + v.shape)
    out[-1] = v
    for j in range(grid.steps, 0, -1):
        tj = t[j]
        k1 = rhs(tj, v)
        k2 = rhs(tj + h / 2, v + h / 2 * k1)
        k3 = rhs(tj + h / 2, v + h / 2 * k2)
        k4 = rhs(tj + h, v + h * k3)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if post_step is not None:
            v = post_step(v)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > cap:
            raise IntegrationDiverged(j - 1, t[j - 1])
        out[j - 1] = v
    return out


def a_closed(k: float, T: float, t) -> np.ndarray:
    """a(t) = sqrt(k/2) tanh(sqrt(2k) (T - t)), solution of a' = 2a^2 - k, a(T)=0."""
    return math.sqrt(k / 2) * np.tanh(math.sqrt(2 * k) * (T - np.asarray(t, dtype=float)))


def a1N_closed(k: float, T: float, N: int, t) -> np.ndarray:
    """Own-state coefficient of the N-player value function.

    Solves a1' = 2(N+1)/(N-1) a1^2 - (N-1)/N k with a1(T) = 0.
    """
    amp = math.sqrt(k / 2 * (N - 1) ** 2 / (N * (N + 1)))
    rate = math.sqrt(2 * (N + 1) * k / N)
    return amp * np.tanh(rate * (T - np.asarray(t, dtype=float)))


def riccati_tanh_closed(c: float, d: float, T: float, t) -> np.ndarray:
    """Solution of v' - c^2 v^2 + d^2 = 0, v(T) = 0."""
    e = np.exp(2 * d * c * (np.asarray(t, dtype=float) - T))
    return d / c * (1 - e) / (1 + e)


def solve_a_closed(params: ModelParams, grid: TimeGrid) -> np.ndarray:
    return a_closed(params.k, params.T, grid.nodes)


def _integral_to_T(y: np.ndarray, dx: float) -> np.ndarray:
    """∫_{t_j}^{T} y on every node by composite Simpson."""
    if len(y) < 3:
        cum = np.concatenate([[0.0], np.cumsum((y[1:] + y[:-1]) * dx / 2)])
    else:
        cum = cumulative_simpson(y, dx=dx, initial=0.0)
    return cum[-1] - cum


def _integral_from_0(y: np.ndarray, dx: float) -> np.ndarray:
    if len(y) < 3:
        return np.concatenate([[0.0], np.cumsum((y[1:] + y[:-1]) * dx / 2)])
    return cumulative_simpson(y, dx=dx, initial=0.0)


def _log_cosh(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    return x + np.log1p(np.exp(-2 * x)) - math.log(2.0)


def _fd_derivative(y: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central differences on nodes 2..n-3 (NaN elsewhere)."""
    d = np.full_like(y, np.nan)
    if len(y) >= 5:
        d[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * dx)
    return d


@dataclass
class RiccatiTable:
    grid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    a1N: np.ndarray | None = None
    a2N: np.ndarray | None = None
    aHatN: np.ndarray | None = None
    N: int | None = None

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.grid.nodes, "a": self.a, "b": self.b, "c": self.c, "d": self.d}
        for name in ("a1N", "a2N", "aHatN"):
            value = getattr(self, name)
            if value is not None:
                cols[name] = value
        return cols

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = self.columns()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([format(float(x), ".17g") for x in row])
        return path

    def residuals(self, k: float) -> dict[str, float]:
        """Sup-norm residuals of the four-function system on interior nodes."""
        dx = self.grid.dt
        a, b, c, d = self.a, self.b, self.c, self.d
        res = {
            "a": _fd_derivative(a, dx) - 2 * a**2 + k,
            "b": _fd_derivative(b, dx) - 2 * a**2 + 4 * a * c,
            "c": _fd_derivative(c, dx) - 4 * a * c + k,
            "d": _fd_derivative(d, dx) + b + 2 * c,
        }
        return {name: float(np.nanmax(np.abs(r))) if len(r) >= 5 else 0.0 for name, r in res.items()}


def solve_mfg_system(params: ModelParams, grid: TimeGrid, residual_tol: float = 1e-6) -> RiccatiTable:
    """Mean-field coefficients a, b, c, d on ``grid``.

    ``a`` is closed form; ``c(t) = k ∫_t^T exp(-4∫_t^s a) ds``,
    ``b(t) = ∫_t^T (4ac - 2a^2)`` and ``d(t) = ∫_t^T (b + 2c)`` are evaluated
    by composite Simpson quadrature.  ``exp(-4∫_t^s a)`` uses the exact
    primitive of ``a`` (a log-cosh) to avoid overflow at large ``kT``.
    """
    k, T = params.k, params.T
    t = grid.nodes
    dx = grid.dt
    a = solve_a_closed(params, grid)
    kappa = math.sqrt(2 * k)
    # 4 ∫_t^T a = 2 log cosh(kappa (T - t))
    L = 2 * _log_cosh(kappa * (T - t))
    # c(t) = k e^{-L(t)} ∫_t^T e^{L(s)} ds, computed as k ∫_t^T e^{L(s) - L(t)} ds
    # through a running maximum shift; L is decreasing in t so L(s) <= L(t).
    shift = L[0]
    inner = _integral_to_T(np.exp(L - shift), dx)
    c = k * inner * np.exp(shift - L)
    c[-1] = 0.0
    b = _integral_to_T(4 * a * c - 2 * a**2, dx)
    d = _integral_to_T(b + 2 * c, dx)
    a[-1] = b[-1] = d[-1] = 0.0
    table = RiccatiTable(grid, a, b, c, d)
    if residual_tol is not None and grid.steps >= 64:
        res = max(table.residuals(k).values())
        if not res <= residual_tol:
            raise QuadratureError(res, residual_tol)
    return table


def solve_nplayer_system(params: ModelParams, grid: TimeGrid, table: RiccatiTable | None = None) -> RiccatiTable:
    """Attach the N-player coefficients a1N (closed form), a2N (RK4) and
    aHatN = N/(N-1) a1N to a mean-field table."""
    N = params.require_N()
    k, T = params.k, params.T
    if table is None:
        table = solve_mfg_system(params, grid)

    def a1(s):
        return a1N_closed(k, T, N, s)

    def rhs(s, v):
        a1s = a1(s)
        return -2 / (N - 1) ** 2 * a1s**2 + 4 * N / (N - 1) * a1s * v - k / N

    a1N = a1(grid.nodes)
    a1N[-1] = 0.0
    a2N = generic_ode_rk4(rhs, 0.0, grid)
    return RiccatiTable(
        table.grid, table.a, table.b, table.c, table.d,
        a1N=a1N, a2N=a2N, aHatN=N / (N - 1) * a1N, N=N,
    )


def solve_riccati(params: ModelParams, grid: TimeGrid) -> RiccatiTable:
    """Full table: mean-field part always, N-player part when ``params.N`` is set."""
    table = solve_mfg_system(params, grid)
    if params.N is not None:
        table = solve_nplayer_system(params, grid, table)
    return table


# ---------------------------------------------------------------------------
# seven-function system with the fixed-point identities substituted


@dataclass
class SevenSystemTable:
    grid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def report(self) -> dict[str, float]:
        return {
            "sup_2a_plus_g": float(np.max(np.abs(2 * self.a + self.g))),
            "sup_e": float(np.max(np.abs(self.e))),
            "sup_f": float(np.max(np.abs(self.f))),
        }


@dataclass
class ReducedCoefficients:
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    w5: np.ndarray
    w6: np.ndarray


def fixed_point_coefficients(a, e, g) -> ReducedCoefficients:
    """Drift coefficients of the conditional moment dynamics implied by the
    fixed point: w1=-2a-g, w2=-e, w3=-2e, w4=-4a, w5=-2g, w6=2."""
    a, e, g = (np.asarray(x, dtype=float) for x in (a, e, g))
    return ReducedCoefficients(-2 * a - g, -e, -2 * e, -4 * a, -2 * g, np.full_like(a, 2.0))


def _seven_rhs(k: float):
    def rhs(_t, v):
        a, b, c, d, e, f, g = v
        w = fixed_point_coefficients(a, e, g)
        return np.array([
            2 * a**2 - k,
            0.5 * g**2 - 2 * b * w.w1 - c * w.w5,
            -c * w.w4 - k,
            0.5 * e**2 - f * w.w2 - c * w.w6 - 2 * a - b - g,
            2 * a * e - w.w2 * g,
            e * g - w.w1 * f - 2 * b * w.w2 - c * w.w3,
            2 * a * g - w.w1 * g + 2 * k,
        ])

    return rhs


def solve_seven_system(params: ModelParams, grid: TimeGrid) -> tuple[SevenSystemTable, ReducedCoefficients]:
    """Backward RK4 of the value-function ODEs (a..g) closed with the
    fixed-point identities for w1..w6."""
    sol = generic_ode_rk4(_seven_rhs(params.k), np.zeros(7), grid)
    table = SevenSystemTable(grid, *sol.T)
    return table, fixed_point_coefficients(table.a, table.e, table.g)


def solve_mfg_system_rk4(params: ModelParams, grid: TimeGrid) -> np.ndarray:
    """Independent RK4 solution of the reduced four-function system, columns a, b, c, d."""
    k = params.k

    def rhs(_t, v):
        a, b, c, _d = v
        return np.array([2 * a**2 - k, 2 * a**2 - 4 * a * c, 4 * a * c - k, -b - 2 * c])

    return generic_ode_rk4(rhs, np.zeros(4), grid)


# ---------------------------------------------------------------------------
# full N-player matrix Riccati system

MAX_MATRIX_N = 8


@dataclass
class MatrixRiccatiSolution:
    """A[j, i] is player i's N x N matrix at node j; B[j, i] its vector; C[j, i] its scalar."""

    grid: TimeGrid
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def N(self) -> int:
        return self.A.shape[1]


def _matrix_rhs(N: int, k: float):
    eye = np.eye(N)
    # K[i] = (k/N) sum_{j != i} (e_i - e_j)(e_i - e_j)^T
    K = np.empty((N, N, N))
    for i in range(N):
        diff = eye[i][None, :] - eye  # row j is e_i - e_j
        K[i] = (k / N) * np.einsum("jp,jq->pq", diff, diff)
    own = np.arange(N)

    def rhs(_t, state):
        A = state[:, :N, :]
        B = state[:, N, :]
        U = A[own, :, own]  # U[i] = A_i e_i
        b_own = B[own, own]  # (B_i)_i
        # sum_{j != i} A_j e_j e_j^T A_i  ->  U^T A_i minus the j = i term
        cross = np.einsum("jp,ijq->ipq", U, A) - np.einsum("ip,iq->ipq", U, A[own, own, :])
        dA = 2 * np.einsum("ip,iq->ipq", U, U) + 2 * (cross + cross.transpose(0, 2, 1)) - K
        # B_i' = 2 A_i e_i (B_i)_i + 2 sum_{j != i} (A_i e_j (B_j)_j + A_j e_j (B_i)_j)
        dB = 2 * U * b_own[:, None]
        dB = dB + 2 * (np.einsum("ipj,j->ip", A, b_own) - A[own, :, own] * b_own[:, None])
        dB = dB + 2 * (np.einsum("jp,ij->ip", U, B) - U * b_own[:, None])
        out = np.empty_like(state)
        out[:, :N, :] = dA
        out[:, N, :] = dB
        return out

    return rhs


def _constant_rhs(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """C_i' from the generator of the state: ½ (B_i)_i^2 + Σ_{j≠i} (B_j)_j (B_i)_j
    - tr(A_i) - 1^T A_i 1 (unit idiosyncratic plus unit common noise)."""
    N = A.shape[-1]
    own = np.arange(N)
    b_own = B[..., own, own]
    quad = 0.5 * b_own**2 + np.einsum("...j,...ij->...i", b_own, B) - b_own**2
    return quad - np.trace(A, axis1=-2, axis2=-1) - A.sum(axis=(-2, -1))


def solve_full_matrix_riccati(params: ModelParams, grid: TimeGrid) -> MatrixRiccatiSolution:
    """Backward RK4 of the coupled (A_i, B_i, C_i) system for all players.

    Only meant as an oracle for the symmetric reduction, so ``N <= 8``.
    ``A_i`` is symmetrized after every step.
    """
    N = params.require_N()
    if N > MAX_MATRIX_N:
        raise ConfigurationError("N", f"full matrix system limited to N<={MAX_MATRIX_N}, got {N}")
    k = params.k
    ab_rhs = _matrix_rhs(N, k)

    def rhs(t, v):
        ab = v[:, : N + 1, :]
        out = np.empty_like(v)
        out[:, : N + 1, :] = ab_rhs(t, ab)
        out[:, N + 1, 0] = _constant_rhs(ab[:, :N, :], ab[:, N, :])
        out[:, N + 1, 1:] = 0.0
        return out

    def symmetrize(v):
        A = v[:, :N, :]
        v[:, :N, :] = 0.5 * (A + A.transpose(0, 2, 1))
        return v

    # state[i] stacks A_i (N rows), B_i (one row) and C_i (first entry of last row)
    sol = generic_ode_rk4(rhs, np.zeros((N, N + 2, N)), grid, cap=1e8, post_step=symmetrize)
    return MatrixRiccatiSolution(grid, sol[:, :, :N, :], sol[:, :, N, :], sol[:, :, N + 1, 0])


@dataclass
class PatternCoefficients:
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray | None
    max_pattern_deviation: float


def extract_pattern(sol: MatrixRiccatiSolution, i: int = 0) -> PatternCoefficients:
    """Read the four distinct entries of player ``i``'s matrix and measure how
    far the remaining entries stray from them."""
    A = sol.A[:, i]
    N = sol.N
    others = [j for j in range(N) if j != i]
    diag_other = A[:, others, others]
    row = np.concatenate([A[:, i, others], A[:, others, i]], axis=1)
    a1 = A[:, i, i]
    groups = [diag_other, row]
    a4 = None
    if N >= 3:
        mask = ~np.eye(N - 1, dtype=bool)
        off = A[:, others][:, :, others][:, mask]
        groups.append(off)
        a4 = off.mean(axis=1)
    dev = max(float(np.max(np.ptp(g, axis=1))) if g.shape[1] else 0.0 for g in groups)
    return PatternCoefficients(a1, diag_other.mean(axis=1), row.mean(axis=1), a4, dev)


def pattern_a3_rhs(pc: PatternCoefficients, N: int, k: float) -> tuple[np.ndarray, np.ndarray]:
    """The two expressions for a3' obtained from the row and column entries."""
    a1, a2, a3, a4 = pc.a1, pc.a2, pc.a3, pc.a4
    first = 6 * a1 * a3 + 4 * (N - 2) * a3**2 + k / N
    second = 2 * a1 * a3 + 4 * a2 * a3 + 4 * (N - 2) * a3 * a4 + k / N
    return first, second
