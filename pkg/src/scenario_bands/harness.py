"""Deterministic experiment runner: train, sweep sigma, emit figure data.

A run trains (or loads) one model, then for every noise scale sigma in the
grid performs R independent interval simulations over the test days and
reduces them to coverage/width metrics. Every simulation's randomness
comes from a seed derived from (master_seed, sigma index, repeat, day), so
repeats are order-independent: serial and thread-parallel execution write
byte-identical files.

Emitted files, one directory per run:
  fig6_sigma<k>.csv  per-point truth/band/ecp/eaw at grid index k
  fig7.csv           the worst-covered point tracked across the grid
  fig8.csv           per-repeat ecpas/eawapi for every sigma
  fig9.csv           confidence-level table for every sigma
  checkpoint.json    the trained model
  manifest.json      config snapshot, checksums, timings
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .data import (
    PriceSeries,
    SynthConfig,
    fit_normalize,
    load_csv,
    make_windows,
    synth_prices,
)
from .gan import GanHyper, ModelCheckpoint, load_checkpoint, save_checkpoint, train
from .intervals import build_interval, generate_scenarios
from .metrics import CoverageMatrix, compute_report, coverage_matrix, ecp_per_sample

THREADS_ENV_VAR = "SCENARIO_BANDS_THREADS"

DEFAULT_SIGMA_GRID = tuple((k + 1) / 3.0 for k in range(9))
DEFAULT_CL_GRID = tuple((50 + 5 * k) / 100.0 for k in range(10))

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, labels) -> int:
    """Mix a master seed and a label path into one 64-bit seed.

    Frozen algorithm: 64-bit FNV-1a over the master seed's 8 little-endian
    bytes followed by each label's tagged encoding (ints as b"i" + 8-byte
    signed little-endian, strings as b"s" + UTF-8, each terminated by
    0xFF), then a splitmix64 finalizer pass. Stable across platforms and
    releases; distinct label paths collide only by 64-bit accident.
    """
    h = _FNV_OFFSET
    def mix(data: bytes):
        nonlocal h
        for byte in data:
            h ^= byte
            h = (h * _FNV_PRIME) & _MASK64
    mix(int(master_seed).to_bytes(8, "little", signed=False))
    for label in labels:
        if isinstance(label, bool) or not isinstance(label, (int, str)):
            raise TypeError(f"labels must be ints or strings, got {type(label).__name__}")
        if isinstance(label, int):
            mix(b"i" + label.to_bytes(8, "little", signed=True))
        else:
            mix(b"s" + label.encode("utf-8"))
        mix(b"\xff")
    z = (h + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class ExperimentConfig:
    """Everything a run needs; defaults give the reference experiment."""

    synth: SynthConfig | None = None
    csv_path: str | None = None
    points_per_day: int = 48
    test_days: int = 5
    sigma_grid: tuple[float, ...] = DEFAULT_SIGMA_GRID
    repeats: int = 100
    scenarios_per_interval: int = 100
    interval_method: str = "envelope"
    cl_grid: tuple[float, ...] = DEFAULT_CL_GRID
    hyper: GanHyper = field(default_factory=GanHyper)
    master_seed: int = 2024
    output_dir: str = "run_output"
    checkpoint_path: str | None = None
    widths_in_price_units: bool = False

    def __post_init__(self):
        if (self.synth is None) == (self.csv_path is None):
            raise ValueError("exactly one of synth and csv_path must be set")
        if self.test_days < 1:
            raise ValueError("test_days must be >= 1")
        if len(self.sigma_grid) == 0 or any(s <= 0 for s in self.sigma_grid):
            raise ValueError("sigma_grid entries must be > 0")
        lo, hi = self.hyper.train_sigma_range
        bad = [s for s in self.sigma_grid if not lo <= s <= hi]
        if bad:
            raise ValueError(
                f"sigma_grid entries {bad} fall outside train_sigma_range [{lo}, {hi}]; "
                "inference must not extrapolate the trained noise distribution"
            )
        if self.repeats < 1 or self.scenarios_per_interval < 2:
            raise ValueError("repeats must be >= 1 and scenarios_per_interval >= 2")
        if any(not 0.0 < c < 1.0 for c in self.cl_grid):
            raise ValueError("cl_grid entries must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        kwargs = {}
        if "synth" in doc and "csv_path" in doc:
            raise ValueError("config must set synth or csv_path, not both")
        if "synth" in doc:
            synth_doc = dict(doc.pop("synth"))
            spike_range = synth_doc.pop("spike_magnitude_range", None)
            if spike_range is not None:
                synth_doc["spike_magnitude_range"] = tuple(spike_range)
            kwargs["synth"] = SynthConfig(**synth_doc)
        if "csv_path" in doc:
            kwargs["csv_path"] = str(doc.pop("csv_path"))
        if "gan" in doc:
            gan_doc = dict(doc.pop("gan"))
            for key in ("hidden_widths", "train_sigma_range"):
                if key in gan_doc:
                    gan_doc[key] = tuple(gan_doc[key])
            kwargs["hyper"] = GanHyper(**gan_doc)
        for key in ("points_per_day", "test_days", "repeats", "scenarios_per_interval",
                    "interval_method", "master_seed", "output_dir", "checkpoint_path",
                    "widths_in_price_units"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        if "sigma_grid" in doc:
            kwargs["sigma_grid"] = tuple(float(s) for s in doc.pop("sigma_grid"))
        if "cl_grid" in doc:
            kwargs["cl_grid"] = tuple(float(c) for c in doc.pop("cl_grid"))
        if doc:
            raise ValueError(f"unknown config keys: {sorted(doc)}")
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        doc = {
            "points_per_day": self.points_per_day,
            "test_days": self.test_days,
            "sigma_grid": list(self.sigma_grid),
            "repeats": self.repeats,
            "scenarios_per_interval": self.scenarios_per_interval,
            "interval_method": self.interval_method,
            "cl_grid": list(self.cl_grid),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "widths_in_price_units": self.widths_in_price_units,
            "gan": {
                "noise_dim": self.hyper.noise_dim,
                "hidden_widths": list(self.hyper.hidden_widths),
                "critic_steps_per_gen_step": self.hyper.critic_steps_per_gen_step,
                "gp_weight": self.hyper.gp_weight,
                "batch_size": self.hyper.batch_size,
                "iterations": self.hyper.iterations,
                "learning_rate": self.hyper.learning_rate,
                "beta1": self.hyper.beta1,
                "beta2": self.hyper.beta2,
                "train_sigma_range": list(self.hyper.train_sigma_range),
            },
        }
        if self.synth is not None:
            doc["synth"] = {
                "days": self.synth.days,
                "points_per_day": self.synth.points_per_day,
                "base_level": self.synth.base_level,
                "daily_amplitude": self.synth.daily_amplitude,
                "noise_std": self.synth.noise_std,
                "spike_probability": self.synth.spike_probability,
                "spike_magnitude_range": list(self.synth.spike_magnitude_range),
                "seed": self.synth.seed,
            }
        if self.csv_path is not None:
            doc["csv_path"] = self.csv_path
        if self.checkpoint_path is not None:
            doc["checkpoint_path"] = self.checkpoint_path
        return doc


@dataclass
class RunManifest:
    config: dict
    checkpoint_path: str
    checksums: dict[str, str]
    tool_version: str
    timings: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "checkpoint_path": self.checkpoint_path,
            "checksums": self.checksums,
            "tool_version": self.tool_version,
            "timings": self.timings,
        }


def thread_count() -> int:
    """Worker count: SCENARIO_BANDS_THREADS if set, else available cores."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is not None:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _load_series(config: ExperimentConfig) -> PriceSeries:
    if config.synth is not None:
        return synth_prices(config.synth)
    return load_csv(config.csv_path, points_per_day=config.points_per_day)


def prepare_datasets(config: ExperimentConfig, scaler=None):
    """Load the price series and split it into train/test sample sets.

    With scaler=None the scaler is fit on the training days only (the test
    days must not leak into normalization); passing a scaler (e.g. from a
    loaded checkpoint) applies it instead. Returns (series, scaler,
    train_set, test_set).
    """
    series = _load_series(config)
    if scaler is None:
        normalized, scaler = fit_normalize(series, fit_days=series.n_days - config.test_days)
    else:
        normalized = PriceSeries(values=scaler.transform(series.values),
                                 points_per_day=series.points_per_day,
                                 start_index=series.start_index)
    train_set, test_set = make_windows(normalized, config.test_days)
    return series, scaler, train_set, test_set


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _simulate_repeat(checkpoint: ModelCheckpoint, test_set, sigma: float, sigma_index: int,
                     repeat: int, master_seed: int, n_scenarios: int, method: str):
    """One full simulation: a band per test day, concatenated across days.

    Returns (lower, upper) rows over all N test points. Seeded per
    (sigma, repeat, day), so the result is independent of execution order
    and any (sigma, repeat, day) cell can be replayed in isolation.
    """
    n_days = test_set.n_samples
    ppd = test_set.points_per_day
    lower = np.empty(n_days * ppd)
    upper = np.empty(n_days * ppd)
    for day in range(n_days):
        seed = derive_seed(master_seed, ("sigma", sigma_index, "repeat", repeat, "day", day))
        sset = generate_scenarios(checkpoint, test_set.conditions[day], sigma,
                                  n_scenarios=n_scenarios, seed=seed, condition_id=day)
        band = build_interval(sset, method)
        lower[day * ppd:(day + 1) * ppd] = band.lower
        upper[day * ppd:(day + 1) * ppd] = band.upper
    return lower, upper


def _write_fig6(path: Path, truth: np.ndarray, lower0: np.ndarray, upper0: np.ndarray,
                ecp: np.ndarray, eaw: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "truth", "lower", "upper", "ecp", "eaw"])
        for t in range(truth.size):
            writer.writerow([t, repr(float(truth[t])), repr(float(lower0[t])),
                             repr(float(upper0[t])), repr(float(ecp[t])), repr(float(eaw[t]))])


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Execute the full sweep and write all artifacts into output_dir."""
    t_start = time.monotonic()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    if config.checkpoint_path is not None:
        checkpoint = load_checkpoint(config.checkpoint_path)
        _, scaler, train_set, test_set = prepare_datasets(config, scaler=checkpoint.scaler)
    else:
        _, scaler, train_set, test_set = prepare_datasets(config)
        train_seed = derive_seed(config.master_seed, ("train",))
        checkpoint, _ = train(train_set, config.hyper, train_seed, scaler=scaler)
    train_time = time.monotonic() - t0

    lo, hi = checkpoint.train_sigma_range
    bad = [s for s in config.sigma_grid if not lo <= s <= hi]
    if bad:
        raise ValueError(
            f"sigma_grid entries {bad} fall outside the checkpoint's train_sigma_range "
            f"[{lo}, {hi}]; refusing to extrapolate"
        )

    truth = test_set.targets.reshape(-1)
    n_points = truth.size
    width_scale = scaler.span if config.widths_in_price_units else 1.0

    t0 = time.monotonic()
    workers = thread_count()

    def run_cell(args):
        sigma_index, repeat = args
        return _simulate_repeat(checkpoint, test_set, config.sigma_grid[sigma_index],
                                sigma_index, repeat, config.master_seed,
                                config.scenarios_per_interval, config.interval_method)

    cells = [(k, r) for k in range(len(config.sigma_grid)) for r in range(config.repeats)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    predict_time = time.monotonic() - t0

    matrices: list[CoverageMatrix] = []
    reports = []
    first_bands = []
    for k, sigma in enumerate(config.sigma_grid):
        lower = np.empty((config.repeats, n_points))
        upper = np.empty((config.repeats, n_points))
        for r in range(config.repeats):
            lo_row, up_row = results[k * config.repeats + r]
            lower[r] = lo_row
            upper[r] = up_row
        m = coverage_matrix(lower, upper, truth)
        matrices.append(m)
        reports.append(compute_report(m, sigma, config.cl_grid, width_scale=width_scale))
        first_bands.append((lower[0], upper[0]))

    checkpoint_path = out / "checkpoint.json"
    save_checkpoint(checkpoint, checkpoint_path)

    files = ["checkpoint.json"]
    for k in range(len(config.sigma_grid)):
        name = f"fig6_sigma{k}.csv"
        lower0, upper0 = first_bands[k]
        _write_fig6(out / name, truth, lower0, upper0, reports[k].ecp, reports[k].eaw)
        files.append(name)

    # the worst-covered point is chosen once, at the grid sigma closest to 1
    anchor = int(np.argmin(np.abs(np.asarray(config.sigma_grid) - 1.0)))
    worst = int(np.argmin(ecp_per_sample(matrices[anchor])))
    with open(out / "fig7.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sigma", "ecp_worst", "eaw_worst"])
        for k, sigma in enumerate(config.sigma_grid):
            writer.writerow([repr(float(sigma)),
                             repr(float(reports[k].ecp[worst])),
                             repr(float(reports[k].eaw[worst]))])
    files.append("fig7.csv")

    with open(out / "fig8.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sigma", "repeat", "ecpas", "eawapi"])
        for k, sigma in enumerate(config.sigma_grid):
            for r in range(config.repeats):
                writer.writerow([repr(float(sigma)), r,
                                 repr(float(reports[k].ecpas[r])),
                                 repr(float(reports[k].eawapi[r]))])
    files.append("fig8.csv")

    with open(out / "fig9.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sigma", "cl", "ecpas_at_cl", "eawapi_at_cl"])
        for k, sigma in enumerate(config.sigma_grid):
            for cl, e, w in reports[k].confidence_table:
                writer.writerow([repr(float(sigma)), repr(float(cl)), repr(float(e)), repr(float(w))])
    files.append("fig9.csv")

    checksums = {name: _sha256(out / name) for name in sorted(files)}
    manifest = RunManifest(
        config=config.to_dict(),
        checkpoint_path=str(checkpoint_path),
        checksums=checksums,
        tool_version=__version__,
        timings={
            "train_seconds": train_time,
            "predict_seconds": predict_time,
            "total_seconds": time.monotonic() - t_start,
        },
    )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
