"""Monte Carlo studies of the N-player to mean-field convergence rates.

Each study is a set of independent replications keyed by
``(master seed, study, N, replication)``; replications are farmed out to
a process pool in index-ordered blocks and folded in index order, so
results do not depend on the worker count.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import streams
from .dynamics import (
    OuKernel,
    build_kernels,
    conditional_law,
    draw_noise,
    exact_sample_mfg,
    simulate_nplayer,
    compute_delta,
)
from .params import ConfigurationError, ModelParams, TimeGrid
from .riccati import RiccatiTable, a1N_closed, generic_ode_rk4, solve_riccati
from .transport import (
    EmpiricalMeasure1D,
    Law1D,
    wp_empirical,
    wp_empirical_vs_gaussian,
    wp_empirical_vs_law,
    wp_gaussian,
)

DEFAULT_SCHEDULE = tuple(2**j for j in range(3, 11))
MIN_REPLICATIONS = 50
# replications per Nash task; fixed so results cannot depend on the worker count
NASH_BLOCK = 500
EXPERIMENTS = ("q1", "q2", "q3", "iid", "common-noise")


class RateDomainError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything a rate study needs; ``checkpoints`` defaults to ``(T,)``."""

    params: ModelParams
    seed: int
    N_schedule: tuple[int, ...] = DEFAULT_SCHEDULE
    replications: int = 200
    checkpoints: tuple[float, ...] | None = None
    p_list: tuple[float, ...] = (1.0, 2.0)
    method: str = "exact"
    sup_nodes: int = 64
    include_initial: bool = False
    kernel_steps: int = 4096
    euler_steps: int = 256
    reference_factor: int = 100
    reference_floor: int = 200
    q1_mode: str = "closed_form"
    iid_dim: int = 1
    sigma: float = 0.5
    sigma_grid: int = 17
    bootstrap: int = 2000
    workers: int = 1

    def __post_init__(self):
        self.N_schedule = tuple(int(n) for n in self.N_schedule)
        self.p_list = tuple(float(p) for p in self.p_list)
        if self.checkpoints is None:
            self.checkpoints = (float(self.params.T),)
        self.checkpoints = tuple(float(t) for t in self.checkpoints)
        if len(self.N_schedule) < 4:
            raise ConfigurationError("N_schedule", "needs at least 4 entries to fit a slope")
        if any(b <= a for a, b in zip(self.N_schedule, self.N_schedule[1:])) or self.N_schedule[0] < 2:
            raise ConfigurationError("N_schedule", "must be strictly ascending integers >= 2")
        if self.replications < MIN_REPLICATIONS:
            raise ConfigurationError("replications", f"must satisfy R>={MIN_REPLICATIONS}, got {self.replications}")
        if self.method not in ("exact", "euler"):
            raise ConfigurationError("method", f"must be 'exact' or 'euler', got {self.method!r}")
        if self.q1_mode not in ("closed_form", "monte_carlo"):
            raise ConfigurationError("q1_mode", f"must be 'closed_form' or 'monte_carlo', got {self.q1_mode!r}")
        if self.iid_dim not in (1, 2):
            raise ConfigurationError("iid_dim", f"must be 1 or 2, got {self.iid_dim}")
        for p in self.p_list:
            if not 1 <= p <= 2:
                raise ConfigurationError("p_list", f"must satisfy 1<=p<=2, got {p}")
        fine = TimeGrid(self.params.T, self.kernel_steps)
        for name, steps in (("sup_nodes", self.sup_nodes), ("euler_steps", self.euler_steps)):
            if steps < 1 or self.kernel_steps % steps:
                raise ConfigurationError(name, f"must divide kernel_steps={self.kernel_steps}, got {steps}")
        for t in self.checkpoints:
            try:
                fine.index_of(t)
                if self.method == "euler":
                    TimeGrid(self.params.T, self.euler_steps).index_of(t)
            except ValueError:
                raise ConfigurationError("checkpoints", f"t={t} is not a node of the simulation grid") from None
            if t <= 0:
                raise ConfigurationError("checkpoints", f"must satisfy t>0, got {t}")
        if not 0 <= self.sigma <= 1:
            raise ConfigurationError("sigma", f"must satisfy 0<=sigma<=1, got {self.sigma}")
        if self.workers < 1:
            raise ConfigurationError("workers", f"must be >=1, got {self.workers}")

    def echo(self) -> dict[str, Any]:
        d = asdict(self)
        d["params"] = {
            "k": self.params.k, "T": self.params.T, "N": self.params.N, "p": self.params.p,
            "initial_law": self.params.initial_law.to_dict(),
        }
        d.pop("workers")
        return d


@dataclass
class RateEstimate:
    Ns: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    slope: float
    intercept: float
    r2: float
    ci: tuple[float, float]
    label: str = ""
    p: float | None = None
    t: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label, "p": self.p, "t": self.t,
            "N": [int(n) for n in self.Ns],
            "mean": [float(m) for m in self.means],
            "se": [float(s) for s in self.ses],
            "slope": self.slope, "intercept": self.intercept, "r2": self.r2,
            "ci95": [self.ci[0], self.ci[1]],
        }


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), min(max(r2, 0.0), 1.0)


def fit_rate(
    Ns: Sequence[int],
    means: Sequence[float],
    ses: Sequence[float] | None = None,
    samples: Sequence[np.ndarray] | None = None,
    n_boot: int = 2000,
    seed: int = 0,
    label: str = "",
    p: float | None = None,
    t: float | None = None,
) -> RateEstimate:
    """Least-squares slope of log(mean) against log(N) with a bootstrap 95% CI.

    With per-replication ``samples`` the bootstrap resamples replications
    within each N; otherwise it perturbs each mean by a normal draw of
    its standard error.
    """
    Ns = np.asarray(Ns, dtype=float)
    means = np.asarray(means, dtype=float)
    if Ns.size < 4 or Ns.size != means.size:
        raise RateDomainError("need at least 4 (N, mean) pairs")
    if not np.all(means > 0) or not np.all(np.isfinite(means)):
        raise RateDomainError("all means must be positive and finite to take logarithms")
    ses = np.zeros_like(means) if ses is None else np.asarray(ses, dtype=float)
    x = np.log(Ns)
    slope, intercept, r2 = _ols(x, np.log(means))
    rng = streams.stream(seed, streams.BOOTSTRAP)
    if samples is not None:
        boot = np.empty((n_boot, Ns.size))
        for j, s in enumerate(samples):
            s = np.asarray(s, dtype=float)
            boot[:, j] = s[rng.integers(0, s.size, (n_boot, s.size))].mean(axis=1)
    else:
        boot = means + ses * rng.standard_normal((n_boot, Ns.size))
    boot = np.log(np.clip(boot, np.finfo(float).tiny, None))
    xc = x - x.mean()
    slopes = (boot - boot.mean(axis=1, keepdims=True)) @ xc / float(xc @ xc)
    lo, hi = np.percentile(slopes, [2.5, 97.5]) if n_boot > 0 else (slope, slope)
    ci = (float(min(lo, slope)), float(max(hi, slope)))
    return RateEstimate(Ns.astype(int), means, ses, slope, intercept, r2, ci, label, p, t)


def band_verdict(est: RateEstimate, lo: float | None, hi: float | None) -> str:
    """``pass`` when the slope lies in [lo, hi]; ``fail`` when the whole CI
    misses the band; ``inconclusive`` otherwise."""
    lo = -math.inf if lo is None else lo
    hi = math.inf if hi is None else hi
    if lo <= est.slope <= hi:
        return "pass"
    if est.ci[1] < lo or est.ci[0] > hi:
        return "fail"
    return "inconclusive"


@dataclass
class StudyResult:
    experiment: str
    estimates: list[RateEstimate]
    rows: list[tuple[str, float, float, int, int, float]]
    extras: dict[str, Any] = field(default_factory=dict)

    def estimate(self, p: float, t: float | None = None, label: str | None = None) -> RateEstimate:
        for e in self.estimates:
            if e.p == p and (t is None or e.t == t) and (label is None or e.label == label):
                return e
        raise KeyError((p, t, label))


# ---------------------------------------------------------------------------
# shared machinery


@functools.lru_cache(maxsize=64)
def _model(params: ModelParams, steps: int) -> tuple[RiccatiTable, OuKernel]:
    table = solve_riccati(params, TimeGrid(params.T, steps))
    return table, build_kernels(table)


def _blocks(R: int, workers: int) -> list[range]:
    size = max(1, math.ceil(R / (4 * workers)))
    return [range(s, min(R, s + size)) for s in range(0, R, size)]


def _run_tasks(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _gather(fn: Callable, config: ExperimentConfig, Ns: Sequence[int], extra: Any = None) -> dict[int, np.ndarray]:
    """Run ``fn((config, N, reps, extra))`` over replication blocks and
    stack the per-replication outputs of each N in index order."""
    tasks, owners = [], []
    for N in Ns:
        for reps in _blocks(config.replications, config.workers):
            tasks.append((config, N, reps, extra))
            owners.append(N)
    out: dict[int, list] = {N: [] for N in Ns}
    for N, res in zip(owners, _run_tasks(fn, tasks, config.workers)):
        out[N].append(res)
    return {N: np.concatenate(v, axis=0) for N, v in out.items()}


def wp_power(emp: EmpiricalMeasure1D, law: Law1D | None, p: float, mean: float = 0.0, var: float = 1.0) -> float:
    """W_p^p from an atomic measure to a gaussian (``law`` None) or a general law."""
    if law is None or law.kind == "gaussian":
        if law is not None:
            mean, var = law.mean, law.var
        w = wp_empirical_vs_gaussian(emp, mean, var, p)
    else:
        w = wp_empirical_vs_law(emp, law, p)
    return w if p == 1 else w * w if p == 2 else w**p


def _summaries(experiment: str, values: dict[int, np.ndarray], config: ExperimentConfig, labels: list[tuple]) -> StudyResult:
    """``values[N]`` has shape (R, len(labels)); label entries are (p, t, tag)."""
    rows, estimates = [], []
    Ns = sorted(values)
    for col, (p, t, tag) in enumerate(labels):
        samples = [values[N][:, col] for N in Ns]
        means = np.array([s.mean() for s in samples])
        ses = np.array([s.std(ddof=1) / math.sqrt(s.size) for s in samples])
        seed = config.seed + col
        estimates.append(fit_rate(Ns, means, ses, samples, config.bootstrap, seed, tag, p, t))
        for N, s in zip(Ns, samples):
            rows.extend((tag, p, t, N, r, float(v)) for r, v in enumerate(s))
    return StudyResult(experiment, estimates, rows)


# ---------------------------------------------------------------------------
# Q1: law of a representative player


def q1_marginal_variances(params: ModelParams, kernels: OuKernel, t: float) -> tuple[float, float]:
    """(mean-field, N-player) variances of a single player's state at ``t``."""
    var0 = params.initial_law.var
    return kernels.mfg_marginal_variance(t, var0), kernels.nplayer_marginal_variance(t, var0)


def validate_q1_variance(params: ModelParams, t: float, R: int, seed: int, kernel_steps: int = 4096, block: int = 20000) -> dict[str, float]:
    """Compare the N-player marginal variance formula with the exact simulator."""
    table, kernels = _model(params, kernel_steps)
    grid = TimeGrid(t, 1)
    xs = []
    for b, start in enumerate(range(0, R, block)):
        rng = streams.stream(seed, streams.Q1_VALIDATION, params.require_N(), b)
        size = min(block, R - start)
        noise = draw_noise(params, kernels, grid, rng, batch=(size,))
        xs.append(simulate_nplayer(params, table, noise, "exact", kernels).states[:, 0, -1])
    x = np.concatenate(xs)
    dev = x - x.mean()
    var = float(np.mean(dev**2)) * R / (R - 1)
    se = math.sqrt(max(float(np.mean(dev**4)) - float(np.mean(dev**2)) ** 2, 0.0) / R)
    formula = q1_marginal_variances(params, kernels, t)[1]
    return {"sample_var": var, "formula_var": formula, "se": se, "z": (var - formula) / se}


def run_q1(config: ExperimentConfig) -> StudyResult:
    params = config.params
    law = params.initial_law
    if config.q1_mode == "closed_form" and not law.is_gaussian:
        raise ConfigurationError(
            "q1_mode", "closed-form marginals need a gaussian initial law; use q1_mode='monte_carlo'")
    rows, estimates = [], []
    for t in config.checkpoints:
        for p in config.p_list:
            means = []
            for N in config.N_schedule:
                pN = params.with_N(N)
                if config.q1_mode == "closed_form":
                    _, kernels = _model(pN, config.kernel_steps)
                    v_mfg, v_n = q1_marginal_variances(pN, kernels, t)
                    w = wp_gaussian(law.mean, math.sqrt(v_mfg), law.mean, math.sqrt(v_n), p)
                else:
                    w = _q1_monte_carlo(pN, config, t, p)
                means.append(w)
                rows.append(("q1", p, t, N, 0, float(w)))
            estimates.append(fit_rate(config.N_schedule, means, None, None, 0, config.seed, "q1", p, t))
    return StudyResult("q1", estimates, rows)


def _q1_monte_carlo(params: ModelParams, config: ExperimentConfig, t: float, p: float) -> float:
    """Two-sample W_p between R draws of player 1 and R draws of the mean-field state."""
    N = params.require_N()
    table, kernels = _model(params, config.kernel_steps)
    rng = streams.stream(config.seed, streams.Q1_MC, N)
    R = config.replications
    noise = draw_noise(params, kernels, TimeGrid(t, 1), rng, batch=(R,))
    x_n = simulate_nplayer(params, table, noise, "exact", kernels).states[:, 0, -1]
    x_m = exact_sample_mfg(params, kernels, t, 0.0, R, rng).x + math.sqrt(t) * rng.standard_normal(R)
    return wp_empirical(EmpiricalMeasure1D.from_samples(x_n), EmpiricalMeasure1D.from_samples(x_m), p)


# ---------------------------------------------------------------------------
# Q2 / Q3: empirical cross-section against the conditional law


@functools.lru_cache(maxsize=256)
def _reference(params: ModelParams, steps: int, t: float, size: int, seed: int) -> EmpiricalMeasure1D:
    _, kernels = _model(params, steps)
    j = kernels.index(t)
    rng = streams.stream(seed, streams.REFERENCE, params.require_N(), j)
    return exact_sample_mfg(params, kernels, t, 0.0, size, rng)


def _law_at(params: ModelParams, config: ExperimentConfig, kernels: OuKernel, t: float, shift: float):
    if params.initial_law.is_gaussian:
        return conditional_law(params, kernels, t, shift).law
    size = config.reference_factor * params.require_N()
    if size < config.reference_floor:
        raise ConfigurationError(
            "reference_factor", f"reference sample of {size} draws is below the floor {config.reference_floor}")
    ref = _reference(params, config.kernel_steps, t, size, config.seed)
    return conditional_law(params, kernels, t, shift, reference=ref).law


def _cross_section_values(params, config, table, kernels, horizon: float, nodes: int, r: int) -> np.ndarray:
    """W_p^p at grid nodes of [0, horizon] for replication r: shape (nodes', len(p_list))."""
    N = params.require_N()
    rng = streams.stream(config.seed, streams.CROSS_SECTION, N, r)
    seed = streams.seed_record(config.seed, streams.CROSS_SECTION, N, r)
    if config.method == "exact":
        grid = TimeGrid(horizon, nodes)
        noise = draw_noise(params, kernels, grid, rng, seed=seed)
        ens = simulate_nplayer(params, table, noise, "exact", kernels)
        states, common = ens.states, ens.common
    else:
        fine = round(horizon / params.T * config.euler_steps)
        if fine % nodes:
            raise ConfigurationError("euler_steps", "sup grid is not nested in the Euler grid")
        noise = draw_noise(params, kernels, TimeGrid(horizon, fine), rng, seed=seed)
        ens = simulate_nplayer(params, table, noise, "euler")
        m = fine // nodes
        states, common = ens.states[:, ::m], ens.common[::m]
    times = TimeGrid(horizon, nodes).nodes
    first = 0 if config.include_initial else 1
    out = np.empty((nodes + 1 - first, len(config.p_list)))
    for row, j in enumerate(range(first, nodes + 1)):
        emp = EmpiricalMeasure1D.from_samples(states[:, j])
        law = _law_at(params, config, kernels, float(times[j]), float(common[j]))
        out[row] = [wp_power(emp, law, p) for p in config.p_list]
    return out


def _q2_task(task) -> np.ndarray:
    config, N, reps, _ = task
    params = config.params.with_N(N)
    table, kernels = _model(params, config.kernel_steps)
    out = np.empty((len(reps), len(config.checkpoints) * len(config.p_list)))
    for i, r in enumerate(reps):
        vals = [_cross_section_values(params, config, table, kernels, t, 1, r)[-1] for t in config.checkpoints]
        out[i] = np.concatenate(vals)
    return out


def run_q2(config: ExperimentConfig) -> StudyResult:
    """Mean of W_p^p between the N-player cross-section at t and the conditional
    mean-field law; one fresh common-noise path per replication."""
    values = _gather(_q2_task, config, config.N_schedule)
    labels = [(p, t, "q2") for t in config.checkpoints for p in config.p_list]
    return _summaries("q2", values, config, labels)


def _q3_task(task) -> np.ndarray:
    config, N, reps, horizon = task
    params = config.params.with_N(N)
    table, kernels = _model(params, config.kernel_steps)
    out = np.empty((len(reps), len(config.p_list)))
    for i, r in enumerate(reps):
        vals = _cross_section_values(params, config, table, kernels, horizon, config.sup_nodes, r)
        out[i] = vals.max(axis=0)
    return out


def run_q3(config: ExperimentConfig, horizon: float | None = None) -> StudyResult:
    """Mean over replications of the largest W_p^p over the sup grid on [0, horizon]."""
    horizon = config.params.T if horizon is None else float(horizon)
    values = _gather(_q3_task, config, config.N_schedule, horizon)
    labels = [(p, horizon, "q3") for p in config.p_list]
    result = _summaries("q3", values, config, labels)
    result.extras["sup_grid"] = {"nodes": config.sup_nodes, "include_initial": config.include_initial,
                                 "note": "discrete sup over grid nodes; a lower bound for the continuous sup"}
    return result


# ---------------------------------------------------------------------------
# i.i.d. and common-noise sequences


def _sigma_grid(config: ExperimentConfig) -> np.ndarray:
    return np.linspace(0.0, 1.0, config.sigma_grid)


def _iid_task(task) -> np.ndarray:
    config, N, reps, _ = task
    out = np.empty((len(reps), len(config.p_list)))
    for i, r in enumerate(reps):
        rng = streams.stream(config.seed, streams.IID, N, r)
        if config.iid_dim == 1:
            emp = EmpiricalMeasure1D.from_samples(rng.standard_normal(N))
            out[i] = [wp_power(emp, None, p, 0.0, 1.0) for p in config.p_list]
        else:
            g, a = rng.standard_normal((2, N))
            out[i] = [max(wp_power(EmpiricalMeasure1D.from_samples(g + s * a), None, p, 0.0, 1 + s * s)
                          for s in _sigma_grid(config)) for p in config.p_list]
    return out


def run_iid_baseline(config: ExperimentConfig) -> StudyResult:
    """i.i.d. standard normal samples against N(0, 1).  With ``iid_dim=2`` the
    pairs (g, a) are measured through the worst projection g + s a over the
    sigma grid."""
    values = _gather(_iid_task, config, config.N_schedule)
    tag = f"iid_d{config.iid_dim}"
    return _summaries("iid", values, config, [(p, None, tag) for p in config.p_list])


def _common_noise_task(task) -> np.ndarray:
    config, N, reps, _ = task
    P = len(config.p_list)
    out = np.empty((len(reps), 2 * P + 1))
    sig = config.sigma
    for i, r in enumerate(reps):
        rng = streams.stream(config.seed, streams.COMMON_NOISE, N, r)
        g, a = rng.standard_normal((2, N))
        beta = float(rng.standard_normal())
        emp = EmpiricalMeasure1D.from_samples(g + sig * a + beta)
        var = 1 + sig * sig
        direct = [wp_power(emp, None, p, beta, var) for p in config.p_list]
        reduced = [wp_power(emp.shifted(-beta), None, p, 0.0, var) for p in config.p_list]
        uniform = [max(wp_power(EmpiricalMeasure1D.from_samples(g + s * a + beta), None, p, beta, 1 + s * s)
                       for s in _sigma_grid(config)) for p in config.p_list]
        out[i, :P] = direct
        out[i, P:2 * P] = uniform
        out[i, -1] = max(abs(x - y) for x, y in zip(direct, reduced))
    return out


def run_common_noise_sequence(config: ExperimentConfig) -> StudyResult:
    """X_i = g_i + sigma a_i + beta against N(beta, 1 + sigma^2), at the configured
    sigma and uniformly over the sigma grid; also records the largest
    per-replication gap between the direct and beta-translated distances."""
    values = _gather(_common_noise_task, config, config.N_schedule)
    gap = max(float(v[:, -1].max()) for v in values.values())
    trimmed = {N: v[:, :-1] for N, v in values.items()}
    labels = [(p, None, "common_noise") for p in config.p_list] + [(p, None, "common_noise_uniform") for p in config.p_list]
    result = _summaries("common-noise", trimmed, config, labels)
    result.extras["translation_gap"] = gap
    return result


RUNNERS: dict[str, Callable[[ExperimentConfig], StudyResult]] = {
    "q1": run_q1,
    "q2": run_q2,
    "q3": run_q3,
    "iid": run_iid_baseline,
    "common-noise": run_common_noise_sequence,
}


# ---------------------------------------------------------------------------
# fixed point and Delta scaling


def fixed_point_check(
    params: ModelParams,
    seed: int,
    M: int = 100_000,
    checkpoints: Sequence[float] | None = None,
    steps: int = 1000,
    kernel_steps: int = 4000,
) -> list[dict[str, float]]:
    """Euler-simulate M independent copies of the mean-field SDE against a
    single common-noise path and compare the cross-section at each
    checkpoint with m_0 + W~_t and v_t."""
    T = params.T
    grid = TimeGrid(T, steps)
    if checkpoints is None:
        checkpoints = [T * j / 10 for j in range(1, 11)]
    idx = {grid.index_of(t): t for t in checkpoints}
    table, kernels = _model(params.with_N(None), kernel_steps)
    a = table.a[:: kernels.grid.stride_to(grid)]
    rng = streams.stream(seed, streams.FIXED_POINT)
    law = params.initial_law
    common = math.sqrt(grid.dt) * rng.standard_normal(steps)
    x = law.sample(rng, M)
    mu = law.mean
    out = []
    for j in range(steps):
        x += -2 * a[j] * (x - mu) * grid.dt + math.sqrt(grid.dt) * rng.standard_normal(M) + common[j]
        mu = law.mean + common[: j + 1].sum()
        if j + 1 in idx:
            t = idx[j + 1]
            dev = x - x.mean()
            m2 = float(np.mean(dev**2))
            var = m2 * M / (M - 1)
            se_mean = math.sqrt(var / M)
            se_var = math.sqrt(max(float(np.mean(dev**4)) - m2 * m2, 0.0) / M)
            v_t = kernels.conditional_variance(t, law.var)
            out.append({
                "t": t, "mean": float(x.mean()), "target_mean": mu, "se_mean": se_mean,
                "z_mean": (float(x.mean()) - mu) / se_mean,
                "var": var, "v_t": v_t, "se_var": se_var, "z_var": (var - v_t) / se_var,
            })
    return out


def _delta_task(task) -> np.ndarray:
    config, N, reps, steps = task
    params = config.params.with_N(N)
    _, kernels = _model(params, config.kernel_steps)
    grid = TimeGrid(params.T, steps)
    out = np.empty((len(reps), 6))
    for i, r in enumerate(reps):
        rng = streams.stream(config.seed, streams.DELTA, N, r)
        noise = draw_noise(params, kernels, grid, rng)
        sq = compute_delta(params, kernels, noise).sup_sq()
        out[i] = [sq["delta"][0], sq["I"][0], sq["II"], sq["III"], sq["IV"], sq["delta"].mean()]
    return out


def run_delta_scaling(config: ExperimentConfig, Ns: Sequence[int] = (64, 256, 1024), steps: int = 64) -> dict[str, Any]:
    """Scaled sup-norm moments of the Delta decomposition: N E sup Delta_1^2,
    N^2 E sup I^2, N E sup II^2, N^2 E sup III^2, N E sup IV^2."""
    values = _gather(_delta_task, config, Ns, steps)
    table = {}
    for N in Ns:
        v = values[N]
        R = v.shape[0]
        scale = np.array([N, N * N, N, N * N, N, N], dtype=float)
        means = scale * v.mean(axis=0)
        ses = scale * v.std(axis=0, ddof=1) / math.sqrt(R)
        names = ("delta", "I", "II", "III", "IV", "delta_player_mean")
        table[N] = {n: {"mean": float(m), "se": float(s)} for n, m, s in zip(names, means, ses)}
    ratios = {
        name: [table[b][name]["mean"] / table[a][name]["mean"] for a, b in zip(Ns, Ns[1:])]
        for name in ("delta", "I", "II", "III", "IV")
    }
    return {"Ns": list(Ns), "scaled": table, "ratios": ratios}


# ---------------------------------------------------------------------------
# costs and the Nash deviation check


def evaluate_nplayer_cost(states: np.ndarray, controls: np.ndarray, params: ModelParams, dt: float) -> np.ndarray:
    """Per-player cost ∫ ½α² + (k/N) Σ_j (X_i - X_j)² dt by the trapezoid rule.

    ``states`` and ``controls`` have shape (..., N, steps+1); the result
    has shape (..., N).
    """
    N = states.shape[-2]
    s1 = states.sum(axis=-2, keepdims=True)
    s2 = (states**2).sum(axis=-2, keepdims=True)
    F = params.k / N * (N * states**2 - 2 * states * s1 + s2)
    run = 0.5 * controls**2 + F
    return dt * (run.sum(axis=-1) - 0.5 * (run[..., 0] + run[..., -1]))


@dataclass
class CostReport:
    epsilons: np.ndarray
    cost: np.ndarray
    cost_se: np.ndarray
    coef: np.ndarray  # c0, c1, c2 and the cubic nuisance c3 when fitted
    coef_se: np.ndarray
    antisymmetric: dict[float, tuple[float, float]]
    oracle_continuous: np.ndarray
    oracle_discrete: np.ndarray
    replications: int
    status: str
    common_random_numbers: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilon": [float(e) for e in self.epsilons],
            "cost": [float(c) for c in self.cost],
            "cost_se": [float(c) for c in self.cost_se],
            "c": [float(c) for c in self.coef],
            "c_se": [float(c) for c in self.coef_se],
            "antisymmetric": {format(e, "g"): list(v) for e, v in self.antisymmetric.items()},
            "oracle_continuous": [float(c) for c in self.oracle_continuous],
            "oracle_euler": [float(c) for c in self.oracle_discrete],
            "replications": self.replications,
            "common_random_numbers": self.common_random_numbers,
            "status": self.status,
        }


def _deviation_matrix(a1: float, N: int, eps: float) -> np.ndarray:
    """Feedback matrix G with α = G X; player 0's gain is scaled by 1+eps."""
    G = -2 * a1 * (np.eye(N) - (np.ones((N, N)) - np.eye(N)) / (N - 1))
    G[0] *= 1 + eps
    return G


def _cost_weight(G: np.ndarray, k: float) -> np.ndarray:
    N = G.shape[0]
    e = np.eye(N)
    QF = sum(np.outer(e[0] - e[j], e[0] - e[j]) for j in range(N)) * (k / N)
    return 0.5 * np.outer(G[0], G[0]) + QF


def deviation_cost_oracle(params: ModelParams, eps: float, steps: int, euler: bool) -> float:
    """Player-1 cost under the deviation from second moments P = E[X X^T].

    ``euler=False`` integrates P' = GP + PG^T + I + 11^T by RK4;
    ``euler=True`` propagates the Euler recursion exactly, matching the
    expectation of the Euler Monte Carlo estimator on the same grid.
    """
    N = params.require_N()
    k, T = params.k, params.T
    grid = TimeGrid(T, steps)
    law = params.initial_law
    P0 = law.var * np.eye(N) + law.mean**2 * np.ones((N, N))
    S = np.eye(N) + np.ones((N, N))
    t = grid.nodes
    if euler:
        P = P0.copy()
        run = np.empty(steps + 1)
        for j in range(steps + 1):
            G = _deviation_matrix(float(a1N_closed(k, T, N, t[j])), N, eps)
            run[j] = float(np.sum(_cost_weight(G, k) * P))
            if j < steps:
                A = np.eye(N) + G * grid.dt
                P = A @ P @ A.T + S * grid.dt
        return float(grid.dt * (run.sum() - 0.5 * (run[0] + run[-1])))

    def rhs(s, v):
        G = _deviation_matrix(float(a1N_closed(k, T, N, s)), N, eps)
        P = v[:-1].reshape(N, N)
        dP = G @ P + P @ G.T + S
        return np.concatenate([dP.ravel(), [np.sum(_cost_weight(G, k) * P)]])

    # integrate forward in time by reversing the clock of the backward solver
    def back(s, v):
        return -rhs(T - s, v)

    sol = generic_ode_rk4(back, np.concatenate([P0.ravel(), [0.0]]), grid)
    # node 0 of the reversed clock is real time T
    return float(sol[0, -1])


def _nash_task(task) -> np.ndarray:
    params, eps_list, reps, steps, seed = task
    N = params.require_N()
    k, T = params.k, params.T
    grid = TimeGrid(T, steps)
    a1 = a1N_closed(k, T, N, grid.nodes)
    a1[-1] = 0.0
    B, E = len(reps), len(eps_list)
    dws, commons, x0s = [], [], []
    for r in reps:
        rng = streams.stream(seed, streams.NASH, N, r)
        x0s.append(params.initial_law.sample(rng, N))
        commons.append(math.sqrt(grid.dt) * rng.standard_normal(steps))
        dws.append(math.sqrt(grid.dt) * rng.standard_normal((steps, N)))
    common = np.stack(commons)
    dW = np.stack(dws)
    # all deviations advance together on the same noise
    x = np.broadcast_to(np.stack(x0s), (E, B, N)).copy()
    states = np.empty((E, B, N, steps + 1))
    controls = np.empty((E, B, N, steps + 1))
    for j in range(steps + 1):
        G = np.stack([_deviation_matrix(a1[j], N, e) for e in eps_list])
        # explicit reduction: BLAS paths may round differently for other batch sizes
        alpha = (G[:, None, :, :] * x[:, :, None, :]).sum(axis=-1)
        states[..., j] = x
        controls[..., j] = alpha
        if j < steps:
            x = x + alpha * grid.dt + dW[:, j] + common[:, j, None]
    return evaluate_nplayer_cost(states, controls, params, grid.dt)[..., 0].T


def nash_deviation_check(
    params: ModelParams,
    epsilons: Sequence[float] = (-0.2, -0.1, 0.0, 0.1, 0.2),
    R: int = 20_000,
    seed: int = 0,
    steps: int = 1000,
    workers: int = 1,
    min_replications: int = 100,
) -> CostReport:
    """Scale player 1's equilibrium feedback by 1+eps, keep the others at
    equilibrium, and estimate player 1's cost on common random numbers.

    A quadratic in eps is fitted per replication, with a cubic nuisance
    term when the schedule has five or more points: the cost is visibly
    asymmetric at |eps| = 0.2 and a pure quadratic would leak that into c1.
    The verdict is ``pass`` when c2 > 0 at 95% and |c1| <= 3 SE, ``fail``
    when |c1| > 3 SE or c2 < 0 at 95%, and ``inconclusive`` otherwise.
    """
    N = params.require_N()
    if N > 8:
        raise ConfigurationError("N", f"Nash check supports N<=8, got {N}")
    eps = np.array(sorted(float(e) for e in epsilons))
    if 0.0 not in eps:
        raise ConfigurationError("epsilons", "schedule must contain 0")
    if eps.size < 3:
        raise ConfigurationError("epsilons", "need at least 3 values to fit a quadratic")
    if R < min_replications:
        raise ConfigurationError("replications", f"must satisfy R>={min_replications}, got {R}")
    size = NASH_BLOCK
    tasks = [(params, tuple(eps), range(s, min(R, s + size)), steps, seed) for s in range(0, R, size)]
    J = np.concatenate(_run_tasks(_nash_task, tasks, workers), axis=0)
    V = np.vander(eps, 4 if eps.size >= 5 else 3, increasing=True)
    coefs = np.linalg.lstsq(V, J.T, rcond=None)[0].T  # (R, degree + 1)
    coef = coefs.mean(axis=0)
    coef_se = coefs.std(axis=0, ddof=1) / math.sqrt(R)
    anti = {}
    for e in eps[eps > 0]:
        if -e in eps:
            d = J[:, np.searchsorted(eps, e)] - J[:, np.searchsorted(eps, -e)]
            anti[float(e)] = (float(d.mean()), float(d.std(ddof=1) / math.sqrt(R)))
    c1, c2 = coef[1], coef[2]
    if abs(c1) > 3 * coef_se[1] or c2 + 1.96 * coef_se[2] < 0:
        status = "fail"
    elif c2 - 1.96 * coef_se[2] > 0:
        status = "pass"
    else:
        status = "inconclusive"
    oc = np.array([deviation_cost_oracle(params, e, 4 * steps, euler=False) for e in eps])
    od = np.array([deviation_cost_oracle(params, e, steps, euler=True) for e in eps])
    return CostReport(eps, J.mean(axis=0), J.std(axis=0, ddof=1) / math.sqrt(R), coef, coef_se,
                      anti, oc, od, R, status)
