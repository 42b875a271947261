"""Model constants, initial-state laws and uniform time grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special


class ConfigurationError(ValueError):
    """Invalid model or experiment parameters.

    ``field`` names the offending entry so front ends can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


_LAW_KINDS = ("gaussian", "two_point", "shifted_exponential")


@dataclass(frozen=True)
class InitialLawSpec:
    """Law of the initial state X_0.

    All three families have finite moments of every order, so the q > 4
    moment requirement holds for each of them.
    """

    kind: str
    mean_: float = 0.0
    var_: float = 1.0
    x_lo: float = 0.0
    x_hi: float = 1.0
    prob_hi: float = 0.5
    rate: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _LAW_KINDS:
            raise ConfigurationError("initial_law.kind", f"must be one of {_LAW_KINDS}, got {self.kind!r}")
        if self.kind == "gaussian" and not self.var_ >= 0:
            raise ConfigurationError("initial_law.var", f"must satisfy var>=0, got {self.var_}")
        if self.kind == "two_point":
            if not 0 < self.prob_hi < 1:
                raise ConfigurationError("initial_law.prob_hi", f"must satisfy 0<prob_hi<1, got {self.prob_hi}")
            if not self.x_lo <= self.x_hi:
                raise ConfigurationError("initial_law.x_hi", "must satisfy x_lo<=x_hi")
        if self.kind == "shifted_exponential" and not self.rate > 0:
            raise ConfigurationError("initial_law.rate", f"must satisfy rate>0, got {self.rate}")

    @classmethod
    def gaussian(cls, mean: float = 0.0, var: float = 1.0) -> InitialLawSpec:
        return cls("gaussian", mean_=float(mean), var_=float(var))

    @classmethod
    def two_point(cls, x_lo: float, x_hi: float, prob_hi: float) -> InitialLawSpec:
        return cls("two_point", x_lo=float(x_lo), x_hi=float(x_hi), prob_hi=float(prob_hi))

    @classmethod
    def shifted_exponential(cls, rate: float, shift: float = 0.0) -> InitialLawSpec:
        return cls("shifted_exponential", rate=float(rate), shift=float(shift))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> InitialLawSpec:
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {
            "gaussian": ("mean", "var"),
            "two_point": ("x_lo", "x_hi", "prob_hi"),
            "shifted_exponential": ("rate", "shift"),
        }
        if kind not in allowed:
            raise ConfigurationError("initial_law.kind", f"must be one of {_LAW_KINDS}, got {kind!r}")
        extra = set(d) - set(allowed[kind])
        if extra:
            raise ConfigurationError(f"initial_law.{sorted(extra)[0]}", f"unknown field for kind {kind!r}")
        for key, value in d.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigurationError(f"initial_law.{key}", "must be a number")
        if kind == "gaussian":
            return cls.gaussian(d.get("mean", 0.0), d.get("var", 1.0))
        if kind == "two_point":
            return cls.two_point(d.get("x_lo", 0.0), d.get("x_hi", 1.0), d.get("prob_hi", 0.5))
        return cls.shifted_exponential(d.get("rate", 1.0), d.get("shift", 0.0))

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "gaussian":
            return {"kind": self.kind, "mean": self.mean_, "var": self.var_}
        if self.kind == "two_point":
            return {"kind": self.kind, "x_lo": self.x_lo, "x_hi": self.x_hi, "prob_hi": self.prob_hi}
        return {"kind": self.kind, "rate": self.rate, "shift": self.shift}

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def mean(self) -> float:
        if self.kind == "gaussian":
            return self.mean_
        if self.kind == "two_point":
            return self.x_lo + self.prob_hi * (self.x_hi - self.x_lo)
        return self.shift + 1.0 / self.rate

    @property
    def var(self) -> float:
        if self.kind == "gaussian":
            return self.var_
        if self.kind == "two_point":
            return self.prob_hi * (1 - self.prob_hi) * (self.x_hi - self.x_lo) ** 2
        return 1.0 / self.rate**2

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean_ + math.sqrt(self.var_) * rng.standard_normal(size)
        if self.kind == "two_point":
            hi = rng.random(size) < self.prob_hi
            return np.where(hi, self.x_hi, self.x_lo)
        return self.shift + rng.standard_exponential(size) / self.rate

    def quantile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return self.mean_ + math.sqrt(self.var_) * special.ndtri(u)
        if self.kind == "two_point":
            return np.where(u <= 1 - self.prob_hi, self.x_lo, self.x_hi)
        return self.shift - np.log1p(-u) / self.rate


@dataclass(frozen=True)
class ModelParams:
    """Game constants: cost weight ``k``, horizon ``T``, player count ``N``
    (``None`` for the mean-field game alone) and Wasserstein order ``p``."""

    k: float
    T: float
    N: int | None = None
    p: float = 1.0
    initial_law: InitialLawSpec = field(default_factory=InitialLawSpec.gaussian)

    def __post_init__(self):
        if not (isinstance(self.k, (int, float)) and self.k > 0 and math.isfinite(self.k)):
            raise ConfigurationError("k", f"must satisfy k>0, got {self.k}")
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ConfigurationError("T", f"must satisfy T>0, got {self.T}")
        if self.N is not None and (not isinstance(self.N, (int, np.integer)) or self.N < 2):
            raise ConfigurationError("N", f"must be an integer with N>=2, got {self.N}")
        if not 1 <= self.p <= 2:
            raise ConfigurationError("p", f"must satisfy 1<=p<=2, got {self.p}")

    def with_N(self, N: int | None) -> ModelParams:
        return ModelParams(self.k, self.T, N, self.p, self.initial_law)

    def require_N(self) -> int:
        if self.N is None:
            raise ConfigurationError("N", "player count required for the N-player game")
        return int(self.N)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j T / steps, j = 0..steps."""

    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError("T", f"must satisfy T>0, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError("steps", f"must be an integer >=1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * (self.T / self.steps)
        t[-1] = self.T
        return t

    def index_of(self, t: float) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        j = int(round(t / self.dt))
        if not 0 <= j <= self.steps or abs(j * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a node of {self}")
        return j

    def stride_to(self, coarse: TimeGrid) -> int:
        """Number of fine steps per step of ``coarse`` (which must be nested)."""
        if abs(coarse.T - self.T) > 1e-12 * self.T and coarse.T > self.T:
            raise ValueError("coarse grid extends past fine grid")
        ratio = coarse.dt / self.dt
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9:
            raise ValueError(f"{coarse} is not nested in {self}")
        return m
