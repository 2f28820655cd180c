"""Sequential decision environment over rectangle placements: discrete
shift/resize actions, constraint checking, delta-objective reward."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import geogrid, index
from .errors import EpisodeOverError, InvalidInitialAreasError
from .geogrid import AreaSet, Rect, SSTField
from .index import SeasonMask

SHIFT_ONLY = "shift-only"
SHIFT_AND_RESIZE = "shift-resize"


@dataclass(frozen=True)
class Action:
    target: str  # 'A' or 'B'
    axis: str    # 'lat' or 'lon'
    kind: str    # 'shift+', 'shift-', 'expand', 'shrink'


def enumerate_actions(mode: str) -> list[Action]:
    """Deterministic action ordering: target (A, B) x axis (lat, lon) x
    kind (shift+, shift-[, expand, shrink]). Length 8 or 16."""
    if mode == SHIFT_ONLY:
        kinds = ["shift+", "shift-"]
    elif mode == SHIFT_AND_RESIZE:
        kinds = ["shift+", "shift-", "expand", "shrink"]
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return [
        Action(target, axis, kind)
        for target in ("A", "B")
        for axis in ("lat", "lon")
        for kind in kinds
    ]


@dataclass(frozen=True)
class EnvConfig:
    mode: str
    domain: Rect
    init_a: AreaSet
    init_b: AreaSet
    step: float = 0.5
    episode_len: int = 64
    min_ocean: float = 0.8
    invalid_penalty: float = 0.05
    jitter: int = 0

    def __post_init__(self):
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be positive")
        enumerate_actions(self.mode)


@dataclass
class EnvState:
    area_a: AreaSet
    area_b: AreaSet
    t_step: int
    last_q: float


def _move_rect(rect: Rect, action: Action, step: float) -> Rect | None:
    lat_min, lat_max = rect.lat_min, rect.lat_max
    lon_min, lon_max = rect.lon_min, rect.lon_max
    sign = 1.0 if action.kind in ("shift+", "expand") else -1.0
    if action.kind in ("shift+", "shift-"):
        if action.axis == "lat":
            lat_min += sign * step
            lat_max += sign * step
        else:
            lon_min += sign * step
            lon_max += sign * step
    else:
        # resize 0.5 deg total, symmetric about the rect's own center
        half = sign * step / 2.0
        if action.axis == "lat":
            lat_min -= half
            lat_max += half
        else:
            lon_min -= half
            lon_max += half
    if lat_min >= lat_max - 1e-9 or lon_min >= lon_max - 1e-9:
        return None
    return Rect(lat_min, lat_max, lon_min, lon_max)


def apply_action(
    area_a: AreaSet,
    area_b: AreaSet,
    action: Action,
    config: EnvConfig,
    ocean: np.ndarray | None = None,
    spec=None,
) -> tuple[AreaSet, AreaSet] | None:
    """Apply one action; returns the new (A, B) or None if the move is
    invalid (leaves the domain, kills an extent, or breaks min_ocean)."""
    target = area_a if action.target == "A" else area_b
    moved = []
    for rect in target.rects:
        new = _move_rect(rect, action, config.step)
        if new is None or not config.domain.contains(new):
            return None
        moved.append(new)
    new_area = AreaSet(tuple(moved))
    new_a, new_b = (new_area, area_b) if action.target == "A" else (area_a, new_area)
    if ocean is not None:
        for area in (new_a, new_b):
            try:
                if geogrid.ocean_fraction(area, ocean, spec) < config.min_ocean:
                    return None
            except geogrid.EmptyAreaError:
                return None
    return new_a, new_b


def encode_state(area_a: AreaSet, area_b: AreaSet, domain: Rect) -> np.ndarray:
    """Rect bounds min-max scaled to [0, 1] against the domain, A's rects
    then B's, 4 numbers per rect."""
    dlat = domain.lat_max - domain.lat_min
    dlon = domain.lon_max - domain.lon_min
    out = []
    for area in (area_a, area_b):
        for r in area.rects:
            out.extend([
                (r.lat_min - domain.lat_min) / dlat,
                (r.lat_max - domain.lat_min) / dlat,
                (r.lon_min - domain.lon_min) / dlon,
                (r.lon_max - domain.lon_min) / dlon,
            ])
    return np.array(out)


def _geometry_key(area_a: AreaSet, area_b: AreaSet) -> tuple:
    return tuple(
        round(v * 1e6)
        for area in (area_a, area_b)
        for r in area.rects
        for v in r.as_list()
    )


class AreaEnv:
    """Stateful episode environment over one read-only SST field and fixed
    rainfall targets. Objective values are cached per geometry."""

    def __init__(
        self,
        field: SSTField,
        y_onset: np.ndarray,
        y_retreat: np.ndarray,
        config: EnvConfig,
        mask: SeasonMask | None = None,
        reference: slice | np.ndarray | None = None,
    ):
        self.field = field
        self.y_onset = np.asarray(y_onset, dtype=float)
        self.y_retreat = np.asarray(y_retreat, dtype=float)
        self.config = config
        self.mask = mask or SeasonMask()
        self.reference = reference
        self.ocean = field.ocean_mask()
        self.actions = enumerate_actions(config.mode)
        self.n_actions = len(self.actions)
        self.obs_dim = len(encode_state(config.init_a, config.init_b, config.domain))
        self._q_cache: dict[tuple, float | None] = {}
        self.state: EnvState | None = None
        self._done = True

    # -- objective plumbing ------------------------------------------------

    def _q_of(self, area_a: AreaSet, area_b: AreaSet) -> float | None:
        """Objective of a geometry, or None if the report is invalid."""
        key = _geometry_key(area_a, area_b)
        if key not in self._q_cache:
            report = index.evaluate_pair(
                self.field, area_a, area_b, self.y_onset, self.y_retreat,
                mask=self.mask, min_ocean=self.config.min_ocean,
                reference=self.reference,
            )
            self._q_cache[key] = report.q if report.valid else None
        return self._q_cache[key]

    def _is_valid(self, area_a: AreaSet, area_b: AreaSet) -> bool:
        for area in (area_a, area_b):
            for r in area.rects:
                if not self.config.domain.contains(r):
                    return False
            try:
                if geogrid.ocean_fraction(area, self.ocean, self.field.spec) < self.config.min_ocean:
                    return False
            except geogrid.EmptyAreaError:
                return False
        return True

    # -- episode lifecycle -------------------------------------------------

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        if not self._is_valid(cfg.init_a, cfg.init_b) or self._q_of(cfg.init_a, cfg.init_b) is None:
            raise InvalidInitialAreasError("configured initial areas violate constraints")
        for _ in range(1000):
            area_a = self._jitter_area(cfg.init_a, rng)
            area_b = self._jitter_area(cfg.init_b, rng)
            if self._is_valid(area_a, area_b):
                q = self._q_of(area_a, area_b)
                if q is not None:
                    break
        else:  # pragma: no cover - jitter always admits the unjittered areas
            area_a, area_b = cfg.init_a, cfg.init_b
            q = self._q_of(area_a, area_b)
        self.state = EnvState(area_a, area_b, t_step=0, last_q=q)
        self._done = False
        return encode_state(area_a, area_b, cfg.domain)

    def _jitter_area(self, area: AreaSet, rng: np.random.Generator) -> AreaSet:
        j = self.config.jitter
        if j == 0:
            return area
        rects = []
        for r in area.rects:
            dlat = int(rng.integers(-j, j + 1)) * self.config.step
            dlon = int(rng.integers(-j, j + 1)) * self.config.step
            rects.append(Rect(r.lat_min + dlat, r.lat_max + dlat,
                              r.lon_min + dlon, r.lon_max + dlon))
        return AreaSet(tuple(rects))

    def step(self, action_idx: int) -> tuple[np.ndarray, float, bool]:
        if self._done or self.state is None:
            raise EpisodeOverError("call reset() before stepping")
        cfg = self.config
        st = self.state
        action = self.actions[action_idx]
        result = apply_action(st.area_a, st.area_b, action, cfg,
                              ocean=self.ocean, spec=self.field.spec)
        new_q = self._q_of(*result) if result is not None else None
        if result is None or new_q is None:
            reward = -cfg.invalid_penalty
            next_state = EnvState(st.area_a, st.area_b, st.t_step + 1, st.last_q)
        else:
            reward = new_q - st.last_q
            next_state = EnvState(result[0], result[1], st.t_step + 1, new_q)
        self.state = next_state
        self._done = next_state.t_step >= cfg.episode_len
        obs = encode_state(next_state.area_a, next_state.area_b, cfg.domain)
        return obs, reward, self._done

    def current_candidate(self) -> tuple[AreaSet, AreaSet, float] | None:
        """Current geometry and its objective, for best-state tracking."""
        if self.state is None:
            return None
        return self.state.area_a, self.state.area_b, self.state.last_q


def areas_to_json(area_a: AreaSet, area_b: AreaSet) -> dict:
    return {"A": area_a.as_lists(), "B": area_b.as_lists()}


def areas_from_json(doc: dict) -> tuple[AreaSet, AreaSet]:
    def build(rows):
        return AreaSet(tuple(Rect(*map(float, row)) for row in rows))

    return build(doc["A"]), build(doc["B"])


def save_areas(area_a: AreaSet, area_b: AreaSet, path: str | os.PathLike) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(areas_to_json(area_a, area_b), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def load_areas(path: str | os.PathLike) -> tuple[AreaSet, AreaSet]:
    with open(path) as fh:
        return areas_from_json(json.load(fh))
