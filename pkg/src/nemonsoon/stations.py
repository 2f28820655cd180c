"""Rain-gauge handling: QC by per-month completeness, monthly-median
imputation, feature building, PCA, and greedy centroid-linkage clustering."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateColumnError, FormatError, NoObservationsError
from .geogrid import month_axis, parse_ym, year_axis

FEATURE_NAMES = ["lat", "lon"] + [f"clim_{m:02d}" for m in range(1, 13)]


@dataclass(frozen=True)
class Station:
    """One gauge station with a monthly rainfall series (NaN = missing),
    aligned to a common axis starting at t0."""

    id: str
    lat: float
    lon: float
    t0: str
    rain: np.ndarray

    def __post_init__(self):
        if not -90 <= self.lat <= 90:
            raise ValueError(f"station {self.id}: lat {self.lat} out of range")
        if not -180 <= self.lon <= 180:
            raise ValueError(f"station {self.id}: lon {self.lon} out of range")
        present = self.rain[~np.isnan(self.rain)]
        if present.size and present.min() < 0:
            raise ValueError(f"station {self.id}: negative rainfall")


@dataclass(frozen=True)
class Cluster:
    id: int
    member_ids: frozenset
    centroid: np.ndarray


@dataclass(frozen=True)
class ClusterParams:
    """Merging threshold d (in post-PCA feature space) and PCA dimension n."""

    d: float = 2.0
    n: int = 2

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("threshold d must be positive")
        if not 1 <= self.n <= len(FEATURE_NAMES):
            raise ValueError(f"n must be in [1, {len(FEATURE_NAMES)}]")


def qc_filter(stations: list[Station], completeness: float = 0.8) -> list[Station]:
    """Keep a station only if every calendar month has at least the given
    fraction of its slots observed."""
    if not 0 < completeness <= 1:
        raise ValueError("completeness must be in (0, 1]")
    kept = []
    for st in stations:
        months = month_axis(st.t0, len(st.rain))
        ok = True
        for m in range(1, 13):
            slots = months == m
            total = int(slots.sum())
            if total == 0:
                continue
            present = int((~np.isnan(st.rain[slots])).sum())
            if present / total < completeness:
                ok = False
                break
        if ok:
            kept.append(st)
    return kept


def impute_monthly_median(station: Station) -> Station:
    """Fill each missing value with the median of that calendar month's
    observed values at the same station."""
    rain = station.rain.copy()
    months = month_axis(station.t0, len(rain))
    missing = np.isnan(rain)
    if not missing.any():
        return station
    for m in range(1, 13):
        slots = months == m
        gaps = slots & missing
        if not gaps.any():
            continue
        observed = rain[slots & ~missing]
        if observed.size == 0:
            raise NoObservationsError(m)
        rain[gaps] = np.median(observed)
    return replace(station, rain=rain)


def monthly_climatology(station: Station) -> np.ndarray:
    """Mean rainfall per calendar month (12 values); station must be imputed."""
    months = month_axis(station.t0, len(station.rain))
    out = np.empty(12)
    for m in range(1, 13):
        vals = station.rain[months == m]
        if vals.size == 0 or np.isnan(vals).any():
            raise NoObservationsError(m)
        out[m - 1] = vals.mean()
    return out


def build_features(stations: list[Station]) -> np.ndarray:
    """Per-station rows [lat, lon, 12-month climatology], each column
    standardized to zero mean and unit population variance."""
    if len(stations) < 2:
        raise ValueError("need at least 2 stations to standardize features")
    raw = np.array(
        [[st.lat, st.lon, *monthly_climatology(st)] for st in stations]
    )
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)  # population
    for k, s in enumerate(std):
        if s == 0.0:
            raise DegenerateColumnError(FEATURE_NAMES[k])
    return (raw - mean) / std


def pca_reduce(matrix: np.ndarray, n: int) -> np.ndarray:
    """Project onto the top-n eigenvectors of the column covariance matrix.

    Components are ordered by descending eigenvalue; each eigenvector's
    sign is fixed so its largest-magnitude loading is positive.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not 1 <= n <= matrix.shape[1]:
        raise ValueError(f"n must be in [1, {matrix.shape[1]}]")
    centered = matrix - matrix.mean(axis=0)
    cov = centered.T @ centered / matrix.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n]
    basis = eigvecs[:, order]
    for k in range(basis.shape[1]):
        col = basis[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, k] = -col
    return centered @ basis


def cluster_stations(
    stations: list[Station], features: np.ndarray, params: ClusterParams
) -> list[Cluster]:
    """Greedy centroid-linkage agglomeration: repeatedly merge the closest
    pair of clusters while their centroid distance is below d.

    Ties pick the lexicographically smallest pair of working ids (a working
    id is the smallest member row index). Final ids run 1..K by descending
    size, then by smallest member id.
    """
    if features.shape[0] != len(stations):
        raise ValueError("features rows must match stations")
    groups: dict[int, list[int]] = {i: [i] for i in range(len(stations))}
    centroids: dict[int, np.ndarray] = {i: features[i].copy() for i in range(len(stations))}
    while len(groups) > 1:
        best = None
        ids = sorted(groups)
        for a_pos, a in enumerate(ids):
            for b in ids[a_pos + 1:]:
                dist = float(np.linalg.norm(centroids[a] - centroids[b]))
                if best is None or dist < best[0] - 1e-12:
                    best = (dist, a, b)
        if best is None or best[0] >= params.d:
            break
        _, a, b = best
        groups[a].extend(groups[b])
        del groups[b], centroids[b]
        centroids[a] = features[groups[a]].mean(axis=0)
    ordered = sorted(
        groups.values(), key=lambda members: (-len(members), min(members))
    )
    return [
        Cluster(
            id=k + 1,
            member_ids=frozenset(stations[i].id for i in members),
            centroid=features[members].mean(axis=0),
        )
        for k, members in enumerate(ordered)
    ]


def cluster_mean_series(cluster: Cluster, stations: list[Station]) -> np.ndarray:
    """Pointwise unweighted mean rainfall across the cluster's members."""
    members = [st for st in stations if st.id in cluster.member_ids]
    if not members:
        raise ValueError(f"cluster {cluster.id} has no members among given stations")
    t0 = members[0].t0
    if any(st.t0 != t0 or len(st.rain) != len(members[0].rain) for st in members):
        raise ValueError("cluster members must share one time axis")
    return np.mean([st.rain for st in members], axis=0)


def run_clustering(stations: list[Station], params: ClusterParams) -> list[Cluster]:
    """QC -> impute -> features -> PCA -> agglomerate, in one call."""
    kept = [impute_monthly_median(st) for st in qc_filter(stations)]
    features = pca_reduce(build_features(kept), params.n)
    return cluster_stations(kept, features, params)


def read_stations_csv(path: str | os.PathLike) -> list[Station]:
    """Read `station_id,lat,lon,year,month,rain_mm` rows onto a common
    monthly axis (missing rain = empty field or absent row)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["station_id", "lat", "lon", "year", "month", "rain_mm"]
        if reader.fieldnames != expected:
            raise FormatError(f"station CSV header must be {expected}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((
                    row["station_id"], float(row["lat"]), float(row["lon"]),
                    int(row["year"]), int(row["month"]),
                    float(row["rain_mm"]) if row["rain_mm"] != "" else np.nan,
                ))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"bad station CSV row at line {lineno}: {exc}") from exc
    if not rows:
        raise FormatError("station CSV has no data rows")
    first = min((y, m) for _, _, _, y, m, _ in rows)
    last = max((y, m) for _, _, _, y, m, _ in rows)
    t0 = f"{first[0]:04d}-{first[1]:02d}"
    nt = (last[0] - first[0]) * 12 + (last[1] - first[1]) + 1
    by_id: dict[str, dict] = {}
    for sid, lat, lon, y, m, rain in rows:
        rec = by_id.setdefault(sid, {"lat": lat, "lon": lon, "rain": np.full(nt, np.nan)})
        rec["rain"][(y - first[0]) * 12 + (m - first[1])] = rain
    return [
        Station(id=sid, lat=rec["lat"], lon=rec["lon"], t0=t0, rain=rec["rain"])
        for sid, rec in sorted(by_id.items())
    ]


def write_stations_csv(stations: list[Station], path: str | os.PathLike) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "lat", "lon", "year", "month", "rain_mm"])
        for st in stations:
            years = year_axis(st.t0, len(st.rain))
            months = month_axis(st.t0, len(st.rain))
            for y, m, v in zip(years, months, st.rain):
                w.writerow([
                    st.id, repr(st.lat), repr(st.lon), int(y), int(m),
                    "" if np.isnan(v) else repr(float(v)),
                ])
    os.replace(tmp, path)


def write_clusters_csv(clusters: list[Cluster], path: str | os.PathLike) -> None:
    """Emit `cluster_id,station_id`, members sorted within each cluster."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster_id", "station_id"])
        for cl in clusters:
            for sid in sorted(cl.member_ids):
                w.writerow([cl.id, sid])
    os.replace(tmp, path)


def read_clusters_csv(path: str | os.PathLike) -> dict[int, set[str]]:
    out: dict[int, set[str]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["cluster_id", "station_id"]:
            raise FormatError(f"cluster CSV header wrong: {reader.fieldnames}")
        for row in reader:
            out.setdefault(int(row["cluster_id"]), set()).add(row["station_id"])
    return out
