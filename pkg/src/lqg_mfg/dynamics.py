"""Equilibrium paths of the mean-field game and of the N-player game.

Both games are linear with additive noise, so the centred state is an
Ornstein-Uhlenbeck process with time-dependent rate.  Writing
``E_t(f) = exp(∫_0^t f)``, the mean-field deviation satisfies
``E_t(2a) (X_t - mu_t) = X_0 - m_0 + ∫_0^t E_s(2a) dW_s`` and the N-player
deviation from the cross-sectional mean satisfies the same relation with
``aHatN`` and ``W_i - W_bar``.  Sampling the Wiener integrals jointly with
the Brownian increments gives an exact simulator; Euler-Maruyama is
provided alongside as a cross-check of the SDE form.

Arrays use the last axis for time and the second-to-last for players, so
every routine also accepts leading batch dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .params import ConfigurationError, ModelParams, TimeGrid
from .riccati import RiccatiTable, _integral_from_0
from .transport import EmpiricalMeasure1D, Law1D

# reference sample size per player for non-gaussian conditional laws
REFERENCE_FACTOR = 100


@dataclass
class OuKernel:
    """E_t(2a), sigma_t^2 = ∫_0^t E_s(4a) ds, and the same pair for aHatN."""

    grid: TimeGrid
    E2a: np.ndarray
    sigma2: np.ndarray
    E2ahat: np.ndarray | None = None
    sigma2hat: np.ndarray | None = None
    N: int | None = None

    def index(self, t: float) -> int:
        return self.grid.index_of(t)

    def conditional_variance(self, t: float, var0: float) -> float:
        """v_t = E_t(2a)^-2 (Var X_0 + sigma_t^2): variance of the mean-field
        state given the common noise."""
        j = self.index(t)
        return float((var0 + self.sigma2[j]) / self.E2a[j] ** 2)

    def nplayer_marginal_variance(self, t: float, var0: float) -> float:
        """Unconditional variance of one player's state in the N-player game."""
        if self.E2ahat is None:
            raise ConfigurationError("N", "kernel built without the N-player coefficient")
        j = self.index(t)
        N = self.N
        tt = self.grid.nodes[j]
        return float((1 - 1 / N) * (var0 + self.sigma2hat[j]) / self.E2ahat[j] ** 2 + (var0 + tt) / N + tt)

    def mfg_marginal_variance(self, t: float, var0: float) -> float:
        return self.conditional_variance(t, var0) + float(self.grid.nodes[self.index(t)])

    def at(self, grid: TimeGrid, name: str) -> np.ndarray:
        """Values of a kernel array on the nodes of a nested coarser grid."""
        m = self.grid.stride_to(grid)
        return getattr(self, name)[: grid.steps * m + 1 : m]

    def gram_increments(self, grid: TimeGrid) -> np.ndarray:
        """Covariance of (ΔW, ∫E(2aHat) dW, ∫E(2a) dW) over each step of ``grid``.

        Without the N-player coefficient the middle component is dropped.
        Shape ``(steps, d, d)`` with ``d`` 3 or 2.
        """
        m = self.grid.stride_to(grid)
        dx = self.grid.dt
        funcs = [np.ones_like(self.E2a)]
        if self.E2ahat is not None:
            funcs.append(self.E2ahat)
        funcs.append(self.E2a)
        d = len(funcs)
        gram = np.empty((grid.steps, d, d))
        for p in range(d):
            for q in range(p, d):
                cum = _integral_from_0(funcs[p] * funcs[q], dx)[: grid.steps * m + 1 : m]
                gram[:, p, q] = gram[:, q, p] = np.diff(cum)
        return gram


def _ou_arrays(grid: TimeGrid, rate: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    log_E = 2 * _integral_from_0(rate, grid.dt)
    E = np.exp(log_E)
    sigma2 = _integral_from_0(E * E, grid.dt)
    return E, sigma2


def build_kernels(riccati: RiccatiTable) -> OuKernel:
    E, s2 = _ou_arrays(riccati.grid, riccati.a)
    kern = OuKernel(riccati.grid, E, s2)
    if riccati.aHatN is not None:
        kern.E2ahat, kern.sigma2hat = _ou_arrays(riccati.grid, riccati.aHatN)
        kern.N = riccati.N
    return kern


def _psd_factor(gram: np.ndarray) -> np.ndarray:
    """Symmetric square roots of a stack of PSD matrices (robust to near-singularity)."""
    w, v = np.linalg.eigh(gram)
    return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


@dataclass
class NoiseBundle:
    """Brownian input of one replication on ``grid``.

    ``idio`` holds per-player increments; ``wiener_a`` / ``wiener_ahat``
    the matching increments of ∫E_s(2a) dW_i and ∫E_s(2aHatN) dW_i.
    """

    grid: TimeGrid
    initials: np.ndarray
    common: np.ndarray
    idio: np.ndarray
    wiener_a: np.ndarray | None = None
    wiener_ahat: np.ndarray | None = None
    seed: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.idio.shape[-2]

    def common_path(self) -> np.ndarray:
        return _path(self.common)

    def coarsen(self, factor: int) -> NoiseBundle:
        """Aggregate ``factor`` consecutive steps; Wiener integrals add exactly."""
        if self.grid.steps % factor:
            raise ValueError("factor must divide the number of steps")
        def agg(x):
            if x is None:
                return None
            return x.reshape(x.shape[:-1] + (x.shape[-1] // factor, factor)).sum(axis=-1)
        return NoiseBundle(
            TimeGrid(self.grid.T, self.grid.steps // factor), self.initials, agg(self.common),
            agg(self.idio), agg(self.wiener_a), agg(self.wiener_ahat), dict(self.seed),
        )


def _path(increments: np.ndarray) -> np.ndarray:
    out = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def draw_noise(
    params: ModelParams,
    kernels: OuKernel,
    grid: TimeGrid,
    rng: np.random.Generator,
    count: int | None = None,
    batch: tuple[int, ...] = (),
    common: np.ndarray | None = None,
    seed: dict[str, Any] | None = None,
) -> NoiseBundle:
    """Draw initials, common increments and per-player (ΔW, Wiener-integral) tuples.

    ``count`` defaults to ``params.N``.  A given ``common`` increment array is
    used as is (fixed common path).  Draw order is fixed so a generator
    state determines the bundle bit for bit.
    """
    n = count if count is not None else params.require_N()
    gram = kernels.gram_increments(grid)
    L = _psd_factor(gram)
    d = gram.shape[-1]
    initials = params.initial_law.sample(rng, batch + (n,))
    if common is None:
        common = math.sqrt(grid.dt) * rng.standard_normal(batch + (grid.steps,))
    z = rng.standard_normal(batch + (n, grid.steps, d))
    w = np.einsum("tpq,...tq->...tp", L, z)
    bundle = NoiseBundle(grid, initials, np.asarray(common, dtype=float), w[..., 0], seed=dict(seed or {}))
    bundle.wiener_a = w[..., -1]
    if d == 3:
        bundle.wiener_ahat = w[..., 1]
    return bundle


# ---------------------------------------------------------------------------
# mean-field game


@dataclass
class MfgPath:
    """``x`` holds independent copies (rows) sharing one common-noise path."""

    grid: TimeGrid
    x: np.ndarray
    mu: np.ndarray
    controls: np.ndarray


def _values_on(table_grid: TimeGrid, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    m = table_grid.stride_to(grid)
    return values[: grid.steps * m + 1 : m]


def simulate_mfg_euler(params: ModelParams, riccati: RiccatiTable, noise: NoiseBundle) -> MfgPath:
    """Explicit Euler for dX = -2a(t)(X - mu) dt + dW + dW~ with mu = m_0 + W~."""
    grid = noise.grid
    if grid.steps < 2:
        raise ConfigurationError("steps", "Euler simulation needs at least 2 steps")
    a = _values_on(riccati.grid, riccati.a, grid)
    m0 = params.initial_law.mean
    mu = m0 + noise.common_path()
    x = np.empty(noise.idio.shape[:-1] + (grid.steps + 1,))
    x[..., 0] = noise.initials
    dt = grid.dt
    for j in range(grid.steps):
        x[..., j + 1] = (
            x[..., j] - 2 * a[j] * (x[..., j] - mu[..., j, None]) * dt
            + noise.idio[..., j] + noise.common[..., j, None]
        )
    return MfgPath(grid, x, mu, -2 * a * (x - mu[..., None, :]))


def simulate_mfg_exact(params: ModelParams, riccati: RiccatiTable, kernels: OuKernel, noise: NoiseBundle) -> MfgPath:
    """Exact transition of the mean-field state from the sampled Wiener integrals."""
    grid = noise.grid
    E = kernels.at(grid, "E2a")
    a = _values_on(riccati.grid, riccati.a, grid)
    m0 = params.initial_law.mean
    mu = m0 + noise.common_path()
    y = (noise.initials - m0)[..., None] + _path(noise.wiener_a)
    x = y / E + mu[..., None, :]
    return MfgPath(grid, x, mu, -2 * a * (x - mu[..., None, :]))


def exact_sample_mfg(
    params: ModelParams,
    kernels: OuKernel,
    t: float,
    common_shift: float,
    count: int,
    rng: np.random.Generator,
) -> EmpiricalMeasure1D:
    """Draw the mean-field state at ``t`` given W~_t = common_shift, without time stepping."""
    j = kernels.index(t)
    law = params.initial_law
    x0 = law.sample(rng, count) - law.mean
    z = rng.standard_normal(count)
    core = (x0 + math.sqrt(kernels.sigma2[j]) * z) / kernels.E2a[j]
    return EmpiricalMeasure1D.from_samples(core + law.mean + common_shift)


@dataclass
class ConditionalLaw:
    mean: float
    var: float
    law: Law1D
    representation: str


def conditional_law(
    params: ModelParams,
    kernels: OuKernel,
    t: float,
    common_shift: float,
    reference_size: int | None = None,
    rng: np.random.Generator | None = None,
    reference: EmpiricalMeasure1D | None = None,
) -> ConditionalLaw:
    """Law of the mean-field state at ``t`` given the common noise.

    Gaussian initial laws give N(m_0 + shift, v_t).  Otherwise the law is a
    convolution without closed-form quantiles, represented by a reference
    sample drawn with zero shift (or passed in as ``reference``) and
    translated by ``common_shift``.
    """
    law = params.initial_law
    mean = law.mean + common_shift
    var = kernels.conditional_variance(t, law.var)
    if law.is_gaussian:
        return ConditionalLaw(mean, var, Law1D.gaussian(mean, var), "gaussian")
    if reference is None:
        if rng is None:
            raise ValueError("a generator is needed to build the reference sample")
        size = reference_size or REFERENCE_FACTOR * (params.N or 100)
        reference = exact_sample_mfg(params, kernels, t, 0.0, size, rng)
    return ConditionalLaw(mean, var, Law1D.shift(Law1D.empirical(reference), common_shift), "reference_sample")


# ---------------------------------------------------------------------------
# N-player game


@dataclass
class PathEnsemble:
    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    common: np.ndarray
    idio: np.ndarray
    method: str

    def mean_field(self) -> np.ndarray:
        return self.states.mean(axis=-2)


def _check_dims(params: ModelParams, noise: NoiseBundle):
    N = params.require_N()
    if noise.idio.shape[-2:] != (N, noise.grid.steps) or noise.initials.shape[-1] != N:
        raise ConfigurationError("noise", f"noise shaped {noise.idio.shape} does not match N={N}, steps={noise.grid.steps}")
    if noise.common.shape[-1] != noise.grid.steps:
        raise ConfigurationError("noise", "common-noise increments do not match the grid")
    return N


def nplayer_drift(a1N: float, x: np.ndarray) -> np.ndarray:
    """-2 a1N (X_i - mean of the other players), the drift as written."""
    N = x.shape[-1]
    others = (x.sum(axis=-1, keepdims=True) - x) / (N - 1)
    return -2 * a1N * (x - others)


def simulate_nplayer(
    params: ModelParams,
    riccati: RiccatiTable,
    noise: NoiseBundle,
    method: str = "exact",
    kernels: OuKernel | None = None,
) -> PathEnsemble:
    """N-player equilibrium states on ``noise.grid``.

    ``euler`` steps the drift as written; ``exact`` rebuilds the states from
    the cross-sectional mean X_bar = X_bar_0 + W_bar + W~ and the centred
    Wiener integrals ∫E(2aHat) d(W_i - W_bar).
    """
    N = _check_dims(params, noise)
    grid = noise.grid
    if riccati.aHatN is None:
        raise ConfigurationError("N", "Riccati table lacks the N-player coefficients")
    a1 = _values_on(riccati.grid, riccati.a1N, grid)
    ahat = _values_on(riccati.grid, riccati.aHatN, grid)
    common = _path(noise.common)
    if method == "euler":
        x = np.empty(noise.idio.shape[:-1] + (grid.steps + 1,))
        x[..., 0] = noise.initials
        xj = noise.initials
        first = nplayer_drift(a1[0], xj)
        rewrite = -2 * ahat[0] * (xj - xj.mean(axis=-1, keepdims=True))
        scale = max(1.0, float(np.max(np.abs(xj), initial=0.0)))
        if not np.allclose(first, rewrite, rtol=0, atol=1e-12 * scale * max(1.0, abs(a1[0]))):
            raise AssertionError("mean-field rewrite of the drift disagrees with the stated drift")
        for j in range(grid.steps):
            xj = xj + nplayer_drift(a1[j], xj) * grid.dt + noise.idio[..., j] + noise.common[..., j, None]
            x[..., j + 1] = xj
    elif method == "exact":
        if kernels is None or noise.wiener_ahat is None:
            raise ConfigurationError("method", "exact simulation needs kernels and Wiener-integral increments")
        Eh = kernels.at(grid, "E2ahat")
        xbar0 = noise.initials.mean(axis=-1)
        wbar = _path(noise.idio.mean(axis=-2))
        xbar = xbar0[..., None] + wbar + common
        G = _path(noise.wiener_ahat)
        G = G - G.mean(axis=-2, keepdims=True)
        y = (noise.initials - xbar0[..., None])[..., None] + G
        x = y / Eh + xbar[..., None, :]
    else:
        raise ConfigurationError("method", f"unknown simulation method {method!r}")
    xbar = x.mean(axis=-2, keepdims=True)
    controls = -2 * ahat * (x - xbar)
    return PathEnsemble(grid, x, controls, common, noise.idio, method)


@dataclass
class DeltaDecomposition:
    """Gap between the N-player state and its mean-field surrogate,
    delta = I + II + III + IV on every node; II..IV are common to all players."""

    I: np.ndarray
    II: np.ndarray
    III: np.ndarray
    IV: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.I + (self.II + self.III + self.IV)[..., None, :]

    def sup_sq(self) -> dict[str, np.ndarray]:
        """sup over the grid of each squared component (per player for I and delta)."""
        return {
            "delta": np.max(self.delta**2, axis=-1),
            "I": np.max(self.I**2, axis=-1),
            "II": np.max(self.II**2, axis=-1),
            "III": np.max(self.III**2, axis=-1),
            "IV": np.max(self.IV**2, axis=-1),
        }


def compute_delta(params: ModelParams, kernels: OuKernel, noise: NoiseBundle) -> DeltaDecomposition:
    """I  = ∫(E(2aHat) - E(2a)) dW_i,   II = -∫E(2aHat) dW_bar,
    III = (E(2aHat) - E(2a)) (m_0 + W~), IV = E(2aHat) (X_bar_0 - m_0 + W_bar)."""
    _check_dims(params, noise)
    grid = noise.grid
    E = kernels.at(grid, "E2a")
    Eh = kernels.at(grid, "E2ahat")
    m0 = params.initial_law.mean
    Ih = _path(noise.wiener_ahat)
    I = Ih - _path(noise.wiener_a)
    II = -Ih.mean(axis=-2)
    III = (Eh - E) * (m0 + _path(noise.common))
    IV = Eh * ((noise.initials.mean(axis=-1) - m0)[..., None] + _path(noise.idio.mean(axis=-2)))
    return DeltaDecomposition(I, II, III, IV)
