"""Scenario generation and interval construction.

A prediction interval here is not a parametric bound: it is the pointwise
hull (or an inner quantile band) of S scenarios drawn from the trained
generator at a chosen noise scale sigma. Because every scenario is a
realizable generator output, the band cannot widen beyond what the model
can actually produce, no matter how large sigma gets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gan import ModelCheckpoint, generator_forward
from .numerics import make_rng, nearest_rank

DEFAULT_SCENARIO_COUNT = 100


@dataclass
class ScenarioSet:
    """S generated scenarios for one condition at one noise scale."""

    scenarios: np.ndarray
    sigma: float
    condition_id: int
    seed_used: int

    def __post_init__(self):
        self.scenarios = np.asarray(self.scenarios, dtype=np.float64)
        if self.scenarios.ndim != 2 or self.scenarios.shape[0] < 2:
            raise ValueError("scenarios must be a 2-D matrix with at least 2 rows")
        if not np.all(np.isfinite(self.scenarios)):
            raise ValueError("scenarios must be finite")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.shape[0]

    @property
    def target_dim(self) -> int:
        return self.scenarios.shape[1]


@dataclass
class IntervalSeries:
    """Pointwise lower/upper band over one day, tagged with how it was built."""

    lower: np.ndarray
    upper: np.ndarray
    sigma: float
    method: str

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D and congruent")
        if np.any(self.lower > self.upper):
            raise ValueError("lower must not exceed upper anywhere")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def generate_scenarios(checkpoint: ModelCheckpoint, condition, sigma: float,
                       n_scenarios: int = DEFAULT_SCENARIO_COUNT, seed: int = 0,
                       condition_id: int = 0) -> ScenarioSet:
    """Draw n_scenarios generator outputs for one condition at scale sigma.

    All noise comes from a fresh seeded stream: one (S, noise_dim) standard
    normal block scaled by sigma, so the same seed at sigma and k*sigma
    yields z differing exactly by the factor k. Deterministic in
    (checkpoint, condition, sigma, n_scenarios, seed).
    """
    if n_scenarios < 2:
        raise ValueError("n_scenarios must be >= 2")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    rng = make_rng(seed)
    z = rng.standard_normal((n_scenarios, checkpoint.noise_dim)) * sigma
    scenarios = generator_forward(checkpoint, z, condition)
    return ScenarioSet(scenarios=scenarios, sigma=float(sigma),
                       condition_id=int(condition_id), seed_used=int(seed))


def build_interval(scenarios: ScenarioSet, method: str = "envelope") -> IntervalSeries:
    """Collapse a ScenarioSet to a band.

    "envelope" takes the pointwise min/max over scenarios, so the band
    contains every scenario by construction. "quantile:A" (0 < A < 1, e.g.
    "quantile:0.10") takes the nearest-rank A/2 and 1-A/2 empirical
    quantiles per point, trimming the extremes.
    """
    mat = scenarios.scenarios
    if method == "envelope":
        lower = mat.min(axis=0)
        upper = mat.max(axis=0)
    elif method.startswith("quantile:"):
        alpha = float(method.split(":", 1)[1])
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"quantile alpha {alpha} must lie in (0, 1)")
        srt = np.sort(mat, axis=0)
        n = mat.shape[0]
        lower = srt[nearest_rank(alpha / 2.0, n) - 1]
        upper = srt[nearest_rank(1.0 - alpha / 2.0, n) - 1]
    else:
        raise ValueError(f"unknown interval method {method!r}")
    return IntervalSeries(lower=lower, upper=upper, sigma=scenarios.sigma, method=method)


def predict_day(checkpoint: ModelCheckpoint, condition, sigma: float,
                n_scenarios: int = DEFAULT_SCENARIO_COUNT, seed: int = 0,
                method: str = "envelope", condition_id: int = 0) -> tuple[IntervalSeries, ScenarioSet]:
    """Scenario draw plus band construction in one call."""
    sset = generate_scenarios(checkpoint, condition, sigma, n_scenarios, seed, condition_id)
    return build_interval(sset, method), sset
