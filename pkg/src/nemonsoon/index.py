"""Candidate index Z(t), seasonal correlations, and the squared-correlation
objective used to score an (A, B) area pair."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import geogrid
from .errors import (
    EmptyAreaError,
    InsufficientSeasonSamplesError,
    NoOceanCellsError,
    ZeroVarianceError,
)
from .geogrid import AreaSet, SSTField

ONSET_MONTHS = frozenset({10, 11, 12, 1, 2, 3})
RETREAT_MONTHS = frozenset({4, 5, 6, 7, 8, 9})


@dataclass(frozen=True)
class SeasonMask:
    """Partition of the 12 calendar months into onset and retreat seasons."""

    onset_months: frozenset = ONSET_MONTHS
    retreat_months: frozenset = RETREAT_MONTHS

    def __post_init__(self):
        if self.onset_months | self.retreat_months != frozenset(range(1, 13)):
            raise ValueError("season masks must cover all 12 months")
        if self.onset_months & self.retreat_months:
            raise ValueError("season masks must be disjoint")


@dataclass
class ObjectiveReport:
    """Outcome of scoring one (A, B) pair."""

    r_onset: float
    r_retreat: float
    q: float
    valid: bool
    violation: str | None = None


def raw_index(field: SSTField, area_a: AreaSet, area_b: AreaSet) -> np.ndarray:
    """Monthly mean-SST difference, B minus A, in degC."""
    return geogrid.area_mean_series(field, area_b) - geogrid.area_mean_series(field, area_a)


def normalise_series(series: np.ndarray, reference: slice | np.ndarray | None = None) -> np.ndarray:
    """Z-score the whole series against mean/std (population) of the
    reference window; reference defaults to the full series."""
    series = np.asarray(series, dtype=float)
    ref = series if reference is None else series[reference]
    if ref.size < 2:
        raise ZeroVarianceError("reference window needs at least 2 points")
    mean = ref.mean()
    std = ref.std()  # population
    if std == 0.0:
        raise ZeroVarianceError("reference window has zero variance")
    return (series - mean) / std


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-D series")
    if x.size < 2:
        raise ValueError("pearson needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0:
        raise ZeroVarianceError("first series is constant")
    if sy == 0.0:
        raise ZeroVarianceError("second series is constant")
    r = float((xc * yc).sum() / (sx * sy))
    return min(1.0, max(-1.0, r))


def seasonal_correlations(
    z: np.ndarray,
    y_onset: np.ndarray,
    y_retreat: np.ndarray,
    months: np.ndarray,
    mask: SeasonMask | None = None,
) -> tuple[float, float]:
    """Pearson r of z against each target, restricted to that target's
    season. `months` gives the calendar month (1..12) of each index."""
    mask = mask or SeasonMask()
    months = np.asarray(months)
    if not (len(z) == len(y_onset) == len(y_retreat) == len(months)):
        raise ValueError("series must share one time axis")
    sel_on = np.isin(months, list(mask.onset_months))
    sel_re = np.isin(months, list(mask.retreat_months))
    if sel_on.sum() < 3 or sel_re.sum() < 3:
        raise InsufficientSeasonSamplesError(
            f"need >= 3 samples per season, got onset={int(sel_on.sum())}, "
            f"retreat={int(sel_re.sum())}"
        )
    r_onset = pearson(np.asarray(z)[sel_on], np.asarray(y_onset)[sel_on])
    r_retreat = pearson(np.asarray(z)[sel_re], np.asarray(y_retreat)[sel_re])
    return r_onset, r_retreat


def objective_q(r_onset: float, r_retreat: float) -> float:
    """Season-aware objective: mean of the two squared correlations."""
    if not (-1.0 <= r_onset <= 1.0 and -1.0 <= r_retreat <= 1.0):
        raise ValueError("correlations must lie in [-1, 1]")
    return 0.5 * (r_onset * r_onset + r_retreat * r_retreat)


def evaluate_pair(
    field: SSTField,
    area_a: AreaSet,
    area_b: AreaSet,
    y_onset: np.ndarray,
    y_retreat: np.ndarray,
    mask: SeasonMask | None = None,
    min_ocean: float = 0.8,
    reference: slice | np.ndarray | None = None,
) -> ObjectiveReport:
    """Score an (A, B) pair; constraint violations and degenerate series are
    reported as invalid, never raised, so an optimizer can penalize them."""
    ocean = field.ocean_mask()
    try:
        frac_a = geogrid.ocean_fraction(area_a, ocean, field.spec)
        frac_b = geogrid.ocean_fraction(area_b, ocean, field.spec)
    except EmptyAreaError as exc:
        return ObjectiveReport(np.nan, np.nan, np.nan, False, f"empty area: {exc}")
    if frac_a < min_ocean:
        return ObjectiveReport(
            np.nan, np.nan, np.nan, False,
            f"ocean_fraction(A)={frac_a:.3f} < {min_ocean}",
        )
    if frac_b < min_ocean:
        return ObjectiveReport(
            np.nan, np.nan, np.nan, False,
            f"ocean_fraction(B)={frac_b:.3f} < {min_ocean}",
        )
    try:
        z = normalise_series(raw_index(field, area_a, area_b), reference)
        r_onset, r_retreat = seasonal_correlations(
            z, y_onset, y_retreat, field.spec.months(), mask
        )
    except (NoOceanCellsError, ZeroVarianceError, InsufficientSeasonSamplesError) as exc:
        return ObjectiveReport(np.nan, np.nan, np.nan, False, str(exc))
    return ObjectiveReport(r_onset, r_retreat, objective_q(r_onset, r_retreat), True)


def write_objective_csv(report: ObjectiveReport, path: str | os.PathLike) -> None:
    """Emit `r_onset,r_retreat,q,valid,violation`."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r_onset", "r_retreat", "q", "valid", "violation"])
        w.writerow([
            _fmt(report.r_onset), _fmt(report.r_retreat), _fmt(report.q),
            str(report.valid).lower(), report.violation or "",
        ])
    os.replace(tmp, path)


def write_index_csv(z: np.ndarray, t0: str, path: str | os.PathLike) -> None:
    """Emit `year,month,z` for a monthly index series starting at t0."""
    nt = len(z)
    years = geogrid.year_axis(t0, nt)
    months = geogrid.month_axis(t0, nt)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "month", "z"])
        for y, m, v in zip(years, months, z):
            w.writerow([int(y), int(m), repr(float(v))])
    os.replace(tmp, path)


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))
