"""Gridded SST data model: grid geometry, rectangles, area reductions, and
the on-disk grid format (grid.json + sst.f32)."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyAreaError, FormatError, NoOceanCellsError

_EPS = 1e-9
_YM_RE = re.compile(r"^(\d{4})-(\d{2})$")

GRID_JSON_KEYS = {"lat0", "lon0", "dlat", "dlon", "nlat", "nlon", "t0", "nt"}


def parse_ym(t0: str) -> tuple[int, int]:
    """Parse 'YYYY-MM' into (year, month). Raises FormatError on bad input."""
    m = _YM_RE.match(t0)
    if m is None:
        raise FormatError(f"bad month stamp {t0!r}, expected YYYY-MM")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise FormatError(f"bad month stamp {t0!r}: month out of range")
    return year, month


def month_axis(t0: str, nt: int) -> np.ndarray:
    """Calendar month (1..12) for each time index."""
    _, m0 = parse_ym(t0)
    return (m0 - 1 + np.arange(nt)) % 12 + 1


def year_axis(t0: str, nt: int) -> np.ndarray:
    """Calendar year for each time index."""
    y0, m0 = parse_ym(t0)
    return y0 + (m0 - 1 + np.arange(nt)) // 12


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid with a monthly time axis.

    (lat0, lon0) is the center of the first cell; cell (i, j) has center
    (lat0 + i*dlat, lon0 + j*dlon).
    """

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int
    t0: str
    nt: int

    def __post_init__(self):
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("dlat and dlon must be positive")
        if self.nlat < 1 or self.nlon < 1 or self.nt < 1:
            raise ValueError("nlat, nlon, nt must be >= 1")
        parse_ym(self.t0)

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    @property
    def lons(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.nlon)

    def months(self) -> np.ndarray:
        return month_axis(self.t0, self.nt)

    def years(self) -> np.ndarray:
        return year_axis(self.t0, self.nt)


@dataclass(frozen=True)
class Rect:
    """Closed lat/lon rectangle with strictly positive extent."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"rect must have positive extent: {self}")

    def as_list(self) -> list[float]:
        return [self.lat_min, self.lat_max, self.lon_min, self.lon_max]

    def contains(self, other: "Rect") -> bool:
        return (
            self.lat_min <= other.lat_min
            and other.lat_max <= self.lat_max
            and self.lon_min <= other.lon_min
            and other.lon_max <= self.lon_max
        )


@dataclass(frozen=True)
class AreaSet:
    """Ordered, nonempty collection of rectangles treated as one area."""

    rects: tuple[Rect, ...]

    def __post_init__(self):
        if len(self.rects) == 0:
            raise ValueError("AreaSet needs at least one rect")

    @classmethod
    def of(cls, *rects: Rect) -> "AreaSet":
        return cls(tuple(rects))

    def as_lists(self) -> list[list[float]]:
        return [r.as_list() for r in self.rects]


@dataclass
class SSTField:
    """Monthly SST values on a GridSpec; land cells are NaN at every t."""

    spec: GridSpec
    values: np.ndarray  # (nt, nlat, nlon), float32

    def __post_init__(self):
        expected = (self.spec.nt, self.spec.nlat, self.spec.nlon)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")

    def ocean_mask(self) -> np.ndarray:
        """Boolean (nlat, nlon) ocean mask derived from the NaN sentinels."""
        return ~np.isnan(self.values[0])

    def validate(self) -> None:
        """Check the field invariants: constant land layout, sane values."""
        nan = np.isnan(self.values)
        if not (nan == nan[0]).all():
            raise ValueError("land/ocean layout varies across time")
        finite = self.values[~nan]
        if finite.size and (finite.min() < -5.0 or finite.max() > 45.0):
            raise ValueError("non-land SST outside [-5, 45] degC")


def rect_cells(rect: Rect, spec: GridSpec) -> set[tuple[int, int]]:
    """Grid cells whose centers fall inside the closed rectangle."""
    i0, i1, j0, j1 = _rect_index_bounds(rect, spec)
    if i0 > i1 or j0 > j1:
        return set()
    return {(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)}


def _rect_index_bounds(rect: Rect, spec: GridSpec) -> tuple[int, int, int, int]:
    i0 = max(0, math.ceil((rect.lat_min - spec.lat0) / spec.dlat - _EPS))
    i1 = min(spec.nlat - 1, math.floor((rect.lat_max - spec.lat0) / spec.dlat + _EPS))
    j0 = max(0, math.ceil((rect.lon_min - spec.lon0) / spec.dlon - _EPS))
    j1 = min(spec.nlon - 1, math.floor((rect.lon_max - spec.lon0) / spec.dlon + _EPS))
    return i0, i1, j0, j1


def area_cells(area: AreaSet, spec: GridSpec) -> set[tuple[int, int]]:
    """Union of the cells of every rect (overlaps counted once)."""
    cells: set[tuple[int, int]] = set()
    for rect in area.rects:
        cells |= rect_cells(rect, spec)
    return cells


def _area_index_arrays(area: AreaSet, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    flat: set[int] = set()
    for rect in area.rects:
        i0, i1, j0, j1 = _rect_index_bounds(rect, spec)
        if i0 > i1 or j0 > j1:
            continue
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        flat.update((ii * spec.nlon + jj).ravel().tolist())
    idx = np.fromiter(flat, dtype=np.int64, count=len(flat))
    idx.sort()
    return idx // spec.nlon, idx % spec.nlon


def ocean_fraction(area: AreaSet, mask: np.ndarray, spec: GridSpec) -> float:
    """Share of the area's (deduplicated) cells that are ocean."""
    ii, jj = _area_index_arrays(area, spec)
    if ii.size == 0:
        raise EmptyAreaError(f"area covers no grid cells: {area}")
    return float(mask[ii, jj].sum()) / ii.size


def area_mean_series(field: SSTField, area: AreaSet) -> np.ndarray:
    """Mean SST over the area's ocean cells, for every month (length nt)."""
    ii, jj = _area_index_arrays(area, field.spec)
    if ii.size == 0:
        raise EmptyAreaError(f"area covers no grid cells: {area}")
    sub = field.values[:, ii, jj]  # (nt, ncells)
    ocean = ~np.isnan(sub[0])
    if not ocean.any():
        raise NoOceanCellsError(f"area has no ocean cells: {area}")
    return sub[:, ocean].mean(axis=1)


def area_mean_sst(field: SSTField, area: AreaSet, t: int) -> float:
    """Mean SST over the area's ocean cells at month index t."""
    if not 0 <= t < field.spec.nt:
        raise IndexError(f"month index {t} out of range [0, {field.spec.nt})")
    return float(area_mean_series(field, area)[t])


def save_sst(field: SSTField, path: str | os.PathLike) -> None:
    """Write the grid directory format: grid.json + sst.f32 (LE float32,
    time-major). Files are written atomically."""
    os.makedirs(path, exist_ok=True)
    spec = field.spec
    header = {
        "lat0": spec.lat0, "lon0": spec.lon0,
        "dlat": spec.dlat, "dlon": spec.dlon,
        "nlat": spec.nlat, "nlon": spec.nlon,
        "t0": spec.t0, "nt": spec.nt,
    }
    _atomic_write_bytes(
        os.path.join(path, "grid.json"),
        (json.dumps(header, indent=2) + "\n").encode(),
    )
    payload = np.ascontiguousarray(field.values, dtype="<f4").tobytes()
    _atomic_write_bytes(os.path.join(path, "sst.f32"), payload)


def load_sst(path: str | os.PathLike) -> SSTField:
    """Read the grid directory format back into an SSTField."""
    header_path = os.path.join(path, "grid.json")
    data_path = os.path.join(path, "sst.f32")
    try:
        with open(header_path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {header_path}: {exc}") from exc
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"grid.json is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or set(header) != GRID_JSON_KEYS:
        raise FormatError(
            f"grid.json keys must be exactly {sorted(GRID_JSON_KEYS)}, "
            f"got {sorted(header) if isinstance(header, dict) else type(header)}"
        )
    try:
        spec = GridSpec(
            lat0=float(header["lat0"]), lon0=float(header["lon0"]),
            dlat=float(header["dlat"]), dlon=float(header["dlon"]),
            nlat=int(header["nlat"]), nlon=int(header["nlon"]),
            t0=str(header["t0"]), nt=int(header["nt"]),
        )
    except (TypeError, ValueError, FormatError) as exc:
        raise FormatError(f"bad grid.json field: {exc}") from exc
    expected_bytes = 4 * spec.nt * spec.nlat * spec.nlon
    try:
        payload = open(data_path, "rb").read()
    except OSError as exc:
        raise FormatError(f"cannot read {data_path}: {exc}") from exc
    if len(payload) != expected_bytes:
        raise FormatError(
            f"sst.f32 has {len(payload)} bytes, header implies {expected_bytes}"
            f" (mismatch at byte {min(len(payload), expected_bytes)})"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(spec.nt, spec.nlat, spec.nlon)
    return SSTField(spec=spec, values=values.copy())


def _atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
