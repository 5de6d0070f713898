"""Price series production and preparation.

Synthetic spike-bearing day-cycle prices, CSV ingestion, train-split min-max
scaling, and windowing into day-ahead (condition, target) samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .numerics import make_rng

# Phase offset of the daily sine: trough at the start of each day, peak mid-day.
DAY_PHASE_OFFSET = -math.pi / 2.0

# Period of the day-index phase encoding appended to each condition vector.
PHASE_PERIOD_DAYS = 7


class CsvFormatError(ValueError):
    """Malformed price CSV; carries the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class PriceSeries:
    """A scalar series spanning whole days, raw or normalized."""

    values: np.ndarray
    points_per_day: int
    start_index: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("values must be 1-D")
        if self.points_per_day < 1:
            raise ValueError("points_per_day must be >= 1")
        if self.values.size == 0 or self.values.size % self.points_per_day != 0:
            raise ValueError(
                f"series length {self.values.size} is not a positive multiple of "
                f"points_per_day {self.points_per_day}"
            )
        if self.start_index < 0:
            raise ValueError("start_index must be >= 0")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    @property
    def n_days(self) -> int:
        return self.values.size // self.points_per_day

    def day(self, k: int) -> np.ndarray:
        """Values of day k (0-based within this series)."""
        if not 0 <= k < self.n_days:
            raise ValueError(f"day {k} out of range 0..{self.n_days - 1}")
        p = self.points_per_day
        return self.values[k * p:(k + 1) * p]


@dataclass
class Scaler:
    """Min-max scaler mapping [min, max] onto [0, 1]."""

    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError("scaler bounds must be finite")
        if self.max <= self.min:
            raise ValueError("scaler requires max > min")

    @property
    def span(self) -> float:
        return self.max - self.min

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min) / self.span

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.span + self.min


@dataclass
class SynthConfig:
    """Synthetic price generator settings: daily sine + noise + rare spikes."""

    days: int
    points_per_day: int = 48
    base_level: float = 60.0
    daily_amplitude: float = 20.0
    noise_std: float = 3.0
    spike_probability: float = 0.02
    spike_magnitude_range: tuple[float, float] = (40.0, 120.0)
    seed: int = 12345

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.points_per_day < 1:
            raise ValueError("points_per_day must be >= 1")
        if not 0.0 <= self.spike_probability <= 1.0:
            raise ValueError("spike_probability must lie in [0, 1]")
        if self.daily_amplitude < 0 or self.noise_std < 0:
            raise ValueError("daily_amplitude and noise_std must be >= 0")
        lo, hi = self.spike_magnitude_range
        if lo > hi:
            raise ValueError("spike_magnitude_range must be (lo, hi) with lo <= hi")


def synth_prices(config: SynthConfig) -> PriceSeries:
    """Generate a synthetic series: base + daily sine + Gaussian noise + spikes.

    Spikes occur independently per point with probability
    ``spike_probability`` and add a uniform draw from
    ``spike_magnitude_range``. Draw order is frozen (noise, spike mask,
    spike magnitudes) so a seed pins the series exactly.
    """
    rng = make_rng(config.seed)
    n = config.days * config.points_per_day
    t = np.arange(n)
    shape = config.base_level + config.daily_amplitude * np.sin(
        2.0 * math.pi * t / config.points_per_day + DAY_PHASE_OFFSET
    )
    noise = rng.standard_normal(n) * config.noise_std
    spike_mask = rng.random(n) < config.spike_probability
    lo, hi = config.spike_magnitude_range
    magnitudes = rng.uniform(lo, hi, n)
    values = shape + noise + np.where(spike_mask, magnitudes, 0.0)
    return PriceSeries(values=values, points_per_day=config.points_per_day)


def load_csv(path, points_per_day: int = 48) -> PriceSeries:
    """Read a `t,price` CSV into a PriceSeries.

    `t` must run 0, 1, 2, ... and `price` must be a finite decimal; the row
    count must be a positive multiple of points_per_day. Errors name the
    offending physical line.
    """
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "empty file, expected header 't,price'") from None
        if [c.strip() for c in header] != ["t", "price"]:
            raise CsvFormatError(reader.line_num, f"expected header 't,price', got {','.join(header)!r}")
        expected_t = 0
        for row in reader:
            line = reader.line_num
            if len(row) != 2:
                raise CsvFormatError(line, f"expected 2 columns, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise CsvFormatError(line, f"t is not an integer: {row[0]!r}") from None
            if t != expected_t:
                raise CsvFormatError(line, f"t must ascend from 0 without gaps; expected {expected_t}, got {t}")
            try:
                price = float(row[1])
            except ValueError:
                raise CsvFormatError(line, f"price is not a number: {row[1]!r}") from None
            if not math.isfinite(price):
                raise CsvFormatError(line, f"price is not finite: {row[1]!r}")
            values.append(price)
            expected_t += 1
    if not values:
        raise CsvFormatError(2, "no data rows")
    if len(values) % points_per_day != 0:
        raise CsvFormatError(
            len(values) + 1,
            f"{len(values)} rows is not a multiple of points_per_day {points_per_day}",
        )
    return PriceSeries(values=np.array(values), points_per_day=points_per_day)


def write_csv(series: PriceSeries, path) -> None:
    """Write a PriceSeries in the `t,price` schema read by load_csv."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "price"])
        for t, v in enumerate(series.values):
            writer.writerow([t, repr(float(v))])


def fit_normalize(series: PriceSeries, fit_days: int | None = None) -> tuple[PriceSeries, Scaler]:
    """Min-max normalize a series; the scaler is fit on the first fit_days only.

    fit_days=None fits on the whole series. Values outside the fit window
    are transformed with the same scaler and may leave [0, 1]; nothing is
    clipped, which is what lets spiky test targets stay representable.
    """
    if fit_days is None:
        fit_days = series.n_days
    if not 1 <= fit_days <= series.n_days:
        raise ValueError(f"fit_days must lie in 1..{series.n_days}")
    window = series.values[: fit_days * series.points_per_day]
    lo, hi = float(window.min()), float(window.max())
    if hi <= lo:
        raise ValueError("cannot normalize a constant series (max == min over the fit window)")
    scaler = Scaler(min=lo, max=hi)
    return (
        PriceSeries(values=scaler.transform(series.values),
                    points_per_day=series.points_per_day,
                    start_index=series.start_index),
        scaler,
    )


def day_phase(day_index: int) -> np.ndarray:
    """(sin, cos) encoding of the day index on a PHASE_PERIOD_DAYS cycle."""
    angle = 2.0 * math.pi * (day_index % PHASE_PERIOD_DAYS) / PHASE_PERIOD_DAYS
    return np.array([math.sin(angle), math.cos(angle)])


def day_condition(series: PriceSeries, day: int) -> np.ndarray:
    """Condition vector for predicting day: previous-day values + day phase."""
    if day < 1:
        raise ValueError("day must be >= 1 (needs a previous day)")
    prev = series.day(day - 1)
    absolute_day = series.start_index // series.points_per_day + day
    return np.concatenate([prev, day_phase(absolute_day)])


@dataclass
class SampleSet:
    """Parallel arrays of (condition, target) day samples.

    true_indices[i] is the index into the source series of the first point
    of sample i's target day, so every sample can be re-extracted by index
    arithmetic.
    """

    conditions: np.ndarray
    targets: np.ndarray
    true_indices: np.ndarray
    points_per_day: int

    def __post_init__(self):
        self.conditions = np.ascontiguousarray(self.conditions, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        self.true_indices = np.ascontiguousarray(self.true_indices, dtype=np.int64)
        if self.conditions.ndim != 2 or self.targets.ndim != 2 or self.true_indices.ndim != 1:
            raise ValueError("conditions/targets must be 2-D and true_indices 1-D")
        n = self.conditions.shape[0]
        if self.targets.shape[0] != n or self.true_indices.shape[0] != n:
            raise ValueError("conditions, targets and true_indices must agree on sample count")
        if self.targets.shape[1] != self.points_per_day:
            raise ValueError("target width must equal points_per_day")

    @property
    def n_samples(self) -> int:
        return self.conditions.shape[0]

    @property
    def condition_dim(self) -> int:
        return self.conditions.shape[1]

    @property
    def n_eval_points(self) -> int:
        return self.n_samples * self.points_per_day

    def __len__(self) -> int:
        return self.n_samples


def make_windows(series: PriceSeries, test_days: int) -> tuple[SampleSet, SampleSet]:
    """Window a series into day-ahead samples and split chronologically.

    Day d (d >= 1) becomes one sample conditioned on day d-1. The test set
    is the final test_days days; everything earlier is training. No
    shuffling, no look-ahead.
    """
    if test_days < 1:
        raise ValueError("test_days must be >= 1")
    if series.n_days < test_days + 2:
        raise ValueError(
            f"series spans {series.n_days} days; needs at least test_days + 2 = {test_days + 2}"
        )
    p = series.points_per_day
    conditions = []
    targets = []
    indices = []
    for d in range(1, series.n_days):
        conditions.append(day_condition(series, d))
        targets.append(series.day(d))
        indices.append(d * p)
    split = len(conditions) - test_days
    train = SampleSet(
        conditions=np.array(conditions[:split]),
        targets=np.array(targets[:split]),
        true_indices=np.array(indices[:split]),
        points_per_day=p,
    )
    test = SampleSet(
        conditions=np.array(conditions[split:]),
        targets=np.array(targets[split:]),
        true_indices=np.array(indices[split:]),
        points_per_day=p,
    )
    return train, test
