"""Coverage and width metrics over repeated interval simulations.

Everything derives from one object: the R x N coverage matrix of a run
(R repeated simulations, N evaluation points). Its column means are the
per-sample view (ECP, EAW: how often is THIS point covered, and how wide
is ITS interval on average); its row means are the all-sample view
(ECPAS, EAWAPI: what fraction of ALL points did THIS simulation cover,
at what average width). The two views share a grand mean but answer
different questions, and conflating them is exactly the fallacy the
report at the bottom of this module makes visible: a run can cover 98.75%
of points in every single simulation while a handful of points are never
covered at all.

Confidence statistics turn the R per-repeat values into guaranteed
bounds: a coverage level that at least a CL fraction of repeats meet or
exceed, and a width level that at least a CL fraction stay within. Both
are nearest-rank empirical quantiles - no interpolation, so results are
exactly reproducible across languages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import nearest_rank_quantile

DEFAULT_LOW_ECP_THRESHOLD = 0.5


@dataclass
class CoverageMatrix:
    """R x N containment indicators and interval widths for one sigma."""

    covered: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.covered = np.asarray(self.covered, dtype=bool)
        self.widths = np.asarray(self.widths, dtype=np.float64)
        if self.covered.ndim != 2 or self.covered.shape[0] < 1 or self.covered.shape[1] < 1:
            raise ValueError("covered must be a non-empty 2-D matrix")
        if self.widths.shape != self.covered.shape:
            raise ValueError(f"widths shape {self.widths.shape} != covered shape {self.covered.shape}")
        if np.any(self.widths < 0) or not np.all(np.isfinite(self.widths)):
            raise ValueError("widths must be finite and >= 0")

    @property
    def n_repeats(self) -> int:
        return self.covered.shape[0]

    @property
    def n_points(self) -> int:
        return self.covered.shape[1]


def coverage_matrix(lower, upper, truth) -> CoverageMatrix:
    """Containment of truth[i] in [lower[r,i], upper[r,i]], bounds inclusive.

    Inclusive bounds matter: an envelope band must count its own extreme
    scenario as covered when the truth lands exactly on it.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if lower.ndim != 2 or lower.shape != upper.shape:
        raise ValueError(f"lower {lower.shape} and upper {upper.shape} must be congruent 2-D arrays")
    if truth.shape != (lower.shape[1],):
        raise ValueError(f"truth shape {truth.shape} != ({lower.shape[1]},)")
    if np.any(lower > upper):
        raise ValueError("lower must not exceed upper anywhere")
    covered = (lower <= truth[None, :]) & (truth[None, :] <= upper)
    return CoverageMatrix(covered=covered, widths=upper - lower)


def ecp_per_sample(m: CoverageMatrix) -> np.ndarray:
    """Column means of covered: per-point coverage frequency over repeats."""
    return m.covered.mean(axis=0)


def eaw_per_sample(m: CoverageMatrix) -> np.ndarray:
    """Column means of widths: per-point average interval width."""
    return m.widths.mean(axis=0)


def ecpas_per_repeat(m: CoverageMatrix) -> np.ndarray:
    """Row means of covered: per-simulation fraction of points covered."""
    return m.covered.mean(axis=1)


def eawapi_per_repeat(m: CoverageMatrix) -> np.ndarray:
    """Row means of widths: per-simulation average interval width."""
    return m.widths.mean(axis=1)


def confidence_stat(values, cl: float, kind: str) -> float:
    """Guaranteed bound over repeats at confidence level cl.

    kind "coverage_lower": the nearest-rank (1-cl)-quantile - a level that
    at least ceil(cl*R) of the R values meet or exceed. kind "width_upper":
    the nearest-rank cl-quantile - a level at least ceil(cl*R) values stay
    at or below. Raising cl therefore weakens the coverage bound and widens
    the width bound.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("values must be a non-empty 1-D array")
    if not 0.0 < cl < 1.0:
        raise ValueError(f"confidence level {cl} must lie in (0, 1)")
    if kind == "coverage_lower":
        return nearest_rank_quantile(values, 1.0 - cl)
    if kind == "width_upper":
        return nearest_rank_quantile(values, cl)
    raise ValueError(f"unknown confidence_stat kind {kind!r}")


@dataclass
class MetricsReport:
    """All metric views of one coverage matrix at one sigma."""

    sigma: float
    ecp: np.ndarray
    eaw: np.ndarray
    ecpas: np.ndarray
    eawapi: np.ndarray
    confidence_table: list[tuple[float, float, float]]

    def to_json_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "ecp": self.ecp.tolist(),
            "eaw": self.eaw.tolist(),
            "ecpas": self.ecpas.tolist(),
            "eawapi": self.eawapi.tolist(),
            "confidence_table": [
                {"cl": cl, "ecpas_at_cl": e, "eawapi_at_cl": w}
                for cl, e, w in self.confidence_table
            ],
        }

    def write_csvs(self, point_path, repeat_path, confidence_path) -> None:
        """Three tables: one row per point, per repeat, and per CL."""
        with open(point_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["point", "ecp", "eaw"])
            for i, (e, w) in enumerate(zip(self.ecp, self.eaw)):
                writer.writerow([i, repr(float(e)), repr(float(w))])
        with open(repeat_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["repeat", "ecpas", "eawapi"])
            for r, (e, w) in enumerate(zip(self.ecpas, self.eawapi)):
                writer.writerow([r, repr(float(e)), repr(float(w))])
        with open(confidence_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["cl", "ecpas_at_cl", "eawapi_at_cl"])
            for cl, e, w in self.confidence_table:
                writer.writerow([repr(float(cl)), repr(float(e)), repr(float(w))])


def compute_report(m: CoverageMatrix, sigma: float, cl_grid,
                   width_scale: float = 1.0) -> MetricsReport:
    """Assemble every metric view of one matrix.

    width_scale re-expresses widths (e.g. a scaler span turns normalized
    widths back into price units); coverage is unaffected.
    """
    if not width_scale > 0:
        raise ValueError("width_scale must be > 0")
    ecpas = ecpas_per_repeat(m)
    eawapi = eawapi_per_repeat(m) * width_scale
    table = [
        (float(cl),
         confidence_stat(ecpas, float(cl), "coverage_lower"),
         confidence_stat(eawapi, float(cl), "width_upper"))
        for cl in cl_grid
    ]
    return MetricsReport(
        sigma=float(sigma),
        ecp=ecp_per_sample(m),
        eaw=eaw_per_sample(m) * width_scale,
        ecpas=ecpas,
        eawapi=eawapi,
        confidence_table=table,
    )


@dataclass
class FallacyReport:
    """Per-simulation aggregate versus the points it silently misses.

    Holds the distribution of per-repeat coverage (ECPAS) next to the list
    of individual points whose own coverage frequency (ECP) falls below a
    threshold. A high, tight ECPAS distribution says nothing about those
    points: they can be missed by every single repeat.
    """

    low_ecp_threshold: float
    low_ecp_points: list[tuple[int, float]]
    ecpas_min: float
    ecpas_median: float
    ecpas_max: float
    n_points: int
    n_repeats: int

    def to_dict(self) -> dict:
        return {
            "low_ecp_threshold": self.low_ecp_threshold,
            "low_ecp_points": [{"point": i, "ecp": e} for i, e in self.low_ecp_points],
            "ecpas": {"min": self.ecpas_min, "median": self.ecpas_median, "max": self.ecpas_max},
            "n_points": self.n_points,
            "n_repeats": self.n_repeats,
        }

    def to_text(self) -> str:
        lines = [
            f"Coverage over {self.n_repeats} repeats of {self.n_points} points:",
            f"  per-simulation coverage (ECPAS): min {self.ecpas_min:.4f}, "
            f"median {self.ecpas_median:.4f}, max {self.ecpas_max:.4f}",
            f"  points with individual coverage (ECP) below {self.low_ecp_threshold:g}: "
            f"{len(self.low_ecp_points)}",
        ]
        for i, e in self.low_ecp_points:
            lines.append(f"    point {i}: ecp {e:.4f}")
        if self.low_ecp_points:
            lines.append(
                "  note: the per-simulation aggregate stays high even though the points"
            )
            lines.append(
                "  above are rarely or never covered - the two views must not be conflated."
            )
        else:
            lines.append("  no point falls below the threshold.")
        return "\n".join(lines)


def fallacy_report(m: CoverageMatrix,
                   low_ecp_threshold: float = DEFAULT_LOW_ECP_THRESHOLD) -> FallacyReport:
    """Contrast the ECPAS distribution with individually under-covered points."""
    ecp = ecp_per_sample(m)
    ecpas = ecpas_per_repeat(m)
    return fallacy_report_from_stats(ecp, ecpas, low_ecp_threshold)


def fallacy_report_from_stats(ecp, ecpas,
                              low_ecp_threshold: float = DEFAULT_LOW_ECP_THRESHOLD) -> FallacyReport:
    """fallacy_report when only the derived ECP/ECPAS vectors are at hand."""
    ecp = np.asarray(ecp, dtype=np.float64)
    ecpas = np.asarray(ecpas, dtype=np.float64)
    if ecp.ndim != 1 or ecpas.ndim != 1 or ecp.size == 0 or ecpas.size == 0:
        raise ValueError("ecp and ecpas must be non-empty 1-D arrays")
    low = [(int(i), float(ecp[i])) for i in np.flatnonzero(ecp < low_ecp_threshold)]
    return FallacyReport(
        low_ecp_threshold=float(low_ecp_threshold),
        low_ecp_points=low,
        ecpas_min=float(ecpas.min()),
        ecpas_median=float(np.median(ecpas)),
        ecpas_max=float(ecpas.max()),
        n_points=ecp.size,
        n_repeats=ecpas.size,
    )
