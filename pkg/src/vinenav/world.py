"""Procedural vineyard worlds: parametric rows, plant placement, geometric queries.

Rows are planar arclength-parametric curves (straight, constant-curvature arc,
or a hybrid of a straight lead-in and an arc, C1-continuous at the joint).
Plants are placed along each row at randomized spacing with positional jitter,
skipping declared gap intervals. Worlds are immutable after generation and all
queries are read-only.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .util import stream_rng, wrap_angle

DEFAULT_TRUNK_RADIUS = 0.06
DEFAULT_CANOPY_HALF_WIDTH = 0.25
DEFAULT_PLANT_HEIGHT = 1.8
DEFAULT_CANOPY_BASE = 0.6
DEFAULT_JITTER = 0.08
EXIT_MARGIN = 0.5

WORLD_FORMAT_VERSION = 1


class WorldConfigError(ValueError):
    """Raised for invalid world configuration (bad ranges, self-intersecting rows)."""


@dataclass(frozen=True)
class RowCurve:
    """Arclength-parametric planar curve for one vineyard row centerline."""

    kind: str                 # "straight" | "arc" | "hybrid"
    start: tuple[float, float]
    heading: float            # tangent heading at s=0, radians
    length: float
    curvature: float = 0.0    # 1/m; arc part only, signed (+ bends left)
    straight_frac: float = 0.5  # hybrid: fraction of length that is straight

    def __post_init__(self):
        if self.length <= 0:
            raise WorldConfigError(f"row length must be positive, got {self.length}")
        if self.kind not in ("straight", "arc", "hybrid"):
            raise WorldConfigError(f"unknown row kind {self.kind!r}")
        if self.kind in ("arc", "hybrid") and self.curvature != 0.0:
            arc_len = self.length if self.kind == "arc" else (1.0 - self.straight_frac) * self.length
            if abs(self.curvature) * arc_len >= 2.0 * math.pi:
                raise WorldConfigError("arc sweep >= 2*pi would self-intersect the row")
        if self.kind == "hybrid" and not (0.0 < self.straight_frac < 1.0):
            raise WorldConfigError("hybrid straight_frac must be in (0, 1)")

    def point(self, s: float) -> tuple[float, float]:
        x, y = self._points(np.array([s], dtype=np.float64))
        return float(x[0]), float(y[0])

    def tangent(self, s: float) -> float:
        """Tangent heading (radians) at arclength s."""
        if self.kind == "straight" or self.curvature == 0.0:
            return self.heading
        if self.kind == "arc":
            return wrap_angle(self.heading + self.curvature * s)
        s_joint = self.straight_frac * self.length
        if s <= s_joint:
            return self.heading
        return wrap_angle(self.heading + self.curvature * (s - s_joint))

    def _points(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=np.float64)
        x0, y0 = self.start
        h0 = self.heading
        if self.kind == "straight" or self.curvature == 0.0:
            return x0 + s * math.cos(h0), y0 + s * math.sin(h0)
        k = self.curvature
        if self.kind == "arc":
            h = h0 + k * s
            x = x0 + (np.sin(h) - math.sin(h0)) / k
            y = y0 - (np.cos(h) - math.cos(h0)) / k
            return x, y
        # hybrid: straight lead-in, then arc from the joint
        s_joint = self.straight_frac * self.length
        xj = x0 + s_joint * math.cos(h0)
        yj = y0 + s_joint * math.sin(h0)
        sa = np.maximum(s - s_joint, 0.0)
        h = h0 + k * sa
        x_arc = xj + (np.sin(h) - math.sin(h0)) / k
        y_arc = yj - (np.cos(h) - math.cos(h0)) / k
        x_str = x0 + s * math.cos(h0)
        y_str = y0 + s * math.sin(h0)
        on_straight = s <= s_joint
        return np.where(on_straight, x_str, x_arc), np.where(on_straight, y_str, y_arc)

    def sample(self, n: int) -> np.ndarray:
        """n points at evenly spaced arclength fractions, shape (n, 2)."""
        s = np.linspace(0.0, self.length, n)
        x, y = self._points(s)
        return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class PlantInstance:
    """One vine: position on the ground plane plus cylinder dimensions."""

    position: tuple[float, float]
    trunk_radius: float = DEFAULT_TRUNK_RADIUS
    canopy_half_width: float = DEFAULT_CANOPY_HALF_WIDTH
    height: float = DEFAULT_PLANT_HEIGHT
    canopy_base: float = DEFAULT_CANOPY_BASE


@dataclass(frozen=True)
class RowSpec:
    """A row centerline with its realized plants and declared gaps."""

    curve: RowCurve
    plant_spacing_range: tuple[float, float]
    gap_intervals: tuple[tuple[float, float], ...]
    plants: tuple[PlantInstance, ...]
    plant_arclengths: tuple[float, ...]

    @property
    def length(self) -> float:
        return self.curve.length


@dataclass(frozen=True)
class WorldConfig:
    """Declarative description of a vineyard world.

    `row_shapes` holds one entry per row: (kind, curvature, straight_frac,
    length); a non-positive length means "use row_length". Inter-row offsets
    at s=0 are drawn from `inter_row_range` per adjacent pair unless
    `explicit_offsets` pins them (needed for concentric curved row groups).
    Gaps are either given explicitly per row (arclength intervals) or drawn
    as `gaps_per_row` random intervals of width `gap_width`.
    """

    rows: int = 6
    row_length: float = 15.0
    row_shapes: Optional[tuple[tuple[str, float, float, float], ...]] = None
    explicit_offsets: Optional[tuple[float, ...]] = None
    inter_row_range: tuple[float, float] = (1.5, 2.0)
    spacing_range: tuple[float, float] = (0.7, 1.0)
    jitter: float = DEFAULT_JITTER
    gaps_per_row: int = 0
    gap_width: float = 2.5
    explicit_gaps: Optional[tuple[tuple[tuple[float, float], ...], ...]] = None
    trunk_radius: float = DEFAULT_TRUNK_RADIUS
    canopy_half_width: float = DEFAULT_CANOPY_HALF_WIDTH
    plant_height: float = DEFAULT_PLANT_HEIGHT
    canopy_base: float = DEFAULT_CANOPY_BASE
    corridor_labels: Optional[tuple[tuple[str, int], ...]] = None

    def validate(self) -> None:
        if self.rows < 2:
            raise WorldConfigError("need at least 2 rows")
        for name, rng in (("spacing_range", self.spacing_range),
                          ("inter_row_range", self.inter_row_range)):
            lo, hi = rng
            if lo > hi or lo <= 0:
                raise WorldConfigError(f"invalid {name}: {rng}")
        if self.row_shapes is not None and len(self.row_shapes) != self.rows:
            raise WorldConfigError("row_shapes length must equal rows")
        if self.explicit_offsets is not None and len(self.explicit_offsets) != self.rows - 1:
            raise WorldConfigError("explicit_offsets length must equal rows - 1")
        if self.explicit_gaps is not None:
            if len(self.explicit_gaps) != self.rows:
                raise WorldConfigError("explicit_gaps length must equal rows")
            for row_gaps in self.explicit_gaps:
                last_end = -math.inf
                for s0, s1 in sorted(row_gaps):
                    if s0 < 0 or s1 > self.row_length or s1 <= s0:
                        raise WorldConfigError(f"gap interval {(s0, s1)} outside row")
                    if s0 < last_end:
                        raise WorldConfigError("gap intervals must be disjoint")
                    last_end = s1


class VineyardWorld:
    """Immutable generated vineyard: rows, plants, spatial index, bounds."""

    def __init__(self, rows: Sequence[RowSpec], inter_row_distances: Sequence[float],
                 seed: int, config: WorldConfig):
        self.rows: tuple[RowSpec, ...] = tuple(rows)
        self.inter_row_distances: tuple[float, ...] = tuple(inter_row_distances)
        self.seed = int(seed)
        self.config = config
        self.corridor_count = len(self.rows) - 1

        plants = [p for row in self.rows for p in row.plants]
        self._plants: tuple[PlantInstance, ...] = tuple(plants)
        if plants:
            xy = np.array([p.position for p in plants], dtype=np.float64)
        else:
            xy = np.zeros((0, 2), dtype=np.float64)
        self._plant_xy = xy
        self._plant_radius = np.array([p.trunk_radius for p in plants], dtype=np.float64)

        margin = 2.0
        if len(xy):
            self.bounds = (float(xy[:, 0].min() - margin), float(xy[:, 1].min() - margin),
                           float(xy[:, 0].max() + margin), float(xy[:, 1].max() + margin))
        else:
            self.bounds = (-margin, -margin, margin, margin)

        # uniform grid over plant positions for disc queries
        self._cell = 1.0
        grid: dict[tuple[int, int], list[int]] = {}
        for i, (px, py) in enumerate(xy):
            key = (int(math.floor(px / self._cell)), int(math.floor(py / self._cell)))
            grid.setdefault(key, []).append(i)
        self._grid = grid

    @property
    def plants(self) -> tuple[PlantInstance, ...]:
        return self._plants

    @property
    def plant_positions(self) -> np.ndarray:
        """(N, 2) array of all plant positions (read-only view)."""
        return self._plant_xy

    def corridor_rows(self, corridor_id: int) -> tuple[RowSpec, RowSpec]:
        if not (0 <= corridor_id < self.corridor_count):
            raise IndexError(f"corridor_id {corridor_id} out of range")
        return self.rows[corridor_id], self.rows[corridor_id + 1]

    def corridor_width(self, corridor_id: int) -> float:
        return self.inter_row_distances[corridor_id]

    @property
    def corridor_labels(self) -> dict[str, int]:
        """Named evaluation corridors (e.g. "1".."5" for the test layout)."""
        if self.config.corridor_labels:
            return dict(self.config.corridor_labels)
        return {str(i + 1): i for i in range(self.corridor_count)}

    def nearby_plants(self, center: tuple[float, float], radius: float) -> list[PlantInstance]:
        """Plants whose trunk circle intersects the query disc."""
        idx = self.nearby_plant_indices(center, radius)
        return [self._plants[i] for i in idx]

    def nearby_plant_indices(self, center: tuple[float, float], radius: float) -> list[int]:
        if radius <= 0:
            raise ValueError("radius must be positive")
        if not len(self._plant_xy):
            return []
        cx, cy = center
        reach = radius + float(self._plant_radius.max())
        i0 = int(math.floor((cx - reach) / self._cell))
        i1 = int(math.floor((cx + reach) / self._cell))
        j0 = int(math.floor((cy - reach) / self._cell))
        j1 = int(math.floor((cy + reach) / self._cell))
        cand: list[int] = []
        for ii in range(i0, i1 + 1):
            for jj in range(j0, j1 + 1):
                cand.extend(self._grid.get((ii, jj), ()))
        if not cand:
            return []
        cand_arr = np.array(sorted(cand), dtype=np.intp)
        d = np.hypot(self._plant_xy[cand_arr, 0] - cx, self._plant_xy[cand_arr, 1] - cy)
        hit = d <= radius + self._plant_radius[cand_arr]
        return [int(i) for i in cand_arr[hit]]


@dataclass(frozen=True)
class CorridorFrame:
    """Directional frame of one corridor: median polyline, entry and EoR points."""

    corridor_id: int
    direction: str                     # "F" | "R"
    median: np.ndarray                 # (n, 2) in travel order
    arclengths: np.ndarray             # (n,) cumulative, starting at 0
    entry: tuple[float, float]
    eor: tuple[float, float]           # end-of-row target, EXIT_MARGIN past the last pair
    width: float

    @property
    def length(self) -> float:
        return float(self.arclengths[-1])

    def tangent_at(self, s: float) -> float:
        """Travel-direction tangent heading at median arclength s."""
        i = int(np.searchsorted(self.arclengths, s))
        i = min(max(i, 1), len(self.median) - 1)
        dx, dy = self.median[i] - self.median[i - 1]
        return math.atan2(dy, dx)

    def nearest_arclength(self, point: tuple[float, float]) -> float:
        d = np.hypot(self.median[:, 0] - point[0], self.median[:, 1] - point[1])
        return float(self.arclengths[int(np.argmin(d))])

    def local_tangent(self, point: tuple[float, float]) -> float:
        return self.tangent_at(self.nearest_arclength(point))

    def gate_progress(self, point: tuple[float, float]) -> float:
        """Signed distance past the EoR gate plane (positive = beyond the exit)."""
        h = self.tangent_at(self.length)
        return ((point[0] - self.eor[0]) * math.cos(h)
                + (point[1] - self.eor[1]) * math.sin(h))

    def distance_to_eor(self, point: tuple[float, float]) -> float:
        return math.hypot(point[0] - self.eor[0], point[1] - self.eor[1])


def median_points(world: VineyardWorld, corridor_id: int, n_samples: int) -> np.ndarray:
    """Pointwise average of the two bounding centerlines at matched arclength fractions."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    row_a, row_b = world.corridor_rows(corridor_id)
    return 0.5 * (row_a.curve.sample(n_samples) + row_b.curve.sample(n_samples))


def corridor_frame(world: VineyardWorld, corridor_id: int, direction: str = "F",
                   samples_per_meter: float = 20.0) -> CorridorFrame:
    """Directional corridor frame with a dense median cache.

    The EoR point sits EXIT_MARGIN past the median end in the travel
    direction, so EoR(F) equals entry(R) and vice versa.
    """
    if direction not in ("F", "R"):
        raise ValueError("direction must be 'F' or 'R'")
    row_a, row_b = world.corridor_rows(corridor_id)
    n = max(16, int(samples_per_meter * max(row_a.length, row_b.length)))
    med = median_points(world, corridor_id, n)
    if direction == "R":
        med = med[::-1].copy()
    seg = np.hypot(*(med[1:] - med[:-1]).T)
    arcs = np.concatenate([[0.0], np.cumsum(seg)])
    h_end = math.atan2(*(med[-1] - med[-2])[::-1])
    h_start = math.atan2(*(med[1] - med[0])[::-1])
    eor = (med[-1][0] + EXIT_MARGIN * math.cos(h_end),
           med[-1][1] + EXIT_MARGIN * math.sin(h_end))
    entry = (med[0][0] - EXIT_MARGIN * math.cos(h_start),
             med[0][1] - EXIT_MARGIN * math.sin(h_start))
    return CorridorFrame(
        corridor_id=corridor_id, direction=direction, median=med, arclengths=arcs,
        entry=entry, eor=eor, width=world.corridor_width(corridor_id))


def _draw_gaps(rng: np.random.Generator, length: float, count: int, width: float,
               ) -> tuple[tuple[float, float], ...]:
    """Random disjoint gap intervals kept away from the row ends."""
    gaps: list[tuple[float, float]] = []
    attempts = 0
    lo, hi = 0.2 * length, 0.8 * length - width
    while len(gaps) < count and attempts < 100:
        attempts += 1
        if hi <= lo:
            break
        s0 = float(rng.uniform(lo, hi))
        s1 = s0 + width
        if all(s1 < g0 - 0.5 or s0 > g1 + 0.5 for g0, g1 in gaps):
            gaps.append((s0, s1))
    return tuple(sorted(gaps))


def _place_plants(curve: RowCurve, spacing_range: tuple[float, float],
                  gaps: tuple[tuple[float, float], ...], jitter: float,
                  dims: tuple[float, float, float, float],
                  rng: np.random.Generator) -> tuple[tuple[PlantInstance, ...], tuple[float, ...]]:
    trunk_r, canopy, height, canopy_base = dims
    lo, hi = spacing_range
    plants: list[PlantInstance] = []
    arcs: list[float] = []
    s = 0.0
    while s <= curve.length + 1e-9:
        in_gap = next(((g0, g1) for g0, g1 in gaps if g0 <= s < g1), None)
        if in_gap is not None:
            s = in_gap[1]
            continue
        px, py = curve.point(min(s, curve.length))
        if jitter > 0:
            px += float(rng.uniform(-jitter, jitter))
            py += float(rng.uniform(-jitter, jitter))
        plants.append(PlantInstance((px, py), trunk_r, canopy, height, canopy_base))
        arcs.append(s)
        s += float(rng.uniform(lo, hi))
    return tuple(plants), tuple(arcs)


def _min_separation(curve_a: RowCurve, curve_b: RowCurve, n: int = 400) -> float:
    """Smallest point-pair distance between two densely sampled centerlines."""
    pa = curve_a.sample(n)
    pb = curve_b.sample(n)
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    return float(math.sqrt(d2.min()))


def generate_world(config: WorldConfig, seed: int) -> VineyardWorld:
    """Deterministically realize a world from its config and seed."""
    config.validate()
    rng = stream_rng(seed, "world")

    if config.explicit_offsets is not None:
        offsets = np.asarray(config.explicit_offsets, dtype=np.float64)
    else:
        offsets = rng.uniform(config.inter_row_range[0], config.inter_row_range[1],
                              size=config.rows - 1)
    shapes = config.row_shapes or tuple(
        ("straight", 0.0, 0.5, 0.0) for _ in range(config.rows))

    curves: list[RowCurve] = []
    y = 0.0
    for i, (kind, curvature, frac, length) in enumerate(shapes):
        if i > 0:
            y += float(offsets[i - 1])
        if length <= 0:
            length = config.row_length
        curves.append(RowCurve(kind=kind, start=(0.0, y), heading=0.0, length=length,
                               curvature=curvature, straight_frac=frac))

    dims = (config.trunk_radius, config.canopy_half_width,
            config.plant_height, config.canopy_base)
    rows: list[RowSpec] = []
    for i, curve in enumerate(curves):
        if config.explicit_gaps is not None:
            gaps = tuple(sorted(config.explicit_gaps[i]))
        elif config.gaps_per_row > 0:
            gaps = _draw_gaps(rng, curve.length, config.gaps_per_row, config.gap_width)
        else:
            gaps = ()
        plants, arcs = _place_plants(curve, config.spacing_range, gaps,
                                     config.jitter, dims, rng)
        rows.append(RowSpec(curve=curve, plant_spacing_range=config.spacing_range,
                            gap_intervals=gaps, plants=plants, plant_arclengths=arcs))

    seps = [_min_separation(a.curve, b.curve) for a, b in zip(rows, rows[1:])]
    lo, hi = config.inter_row_range
    for i, sep in enumerate(seps):
        if not (lo - 1e-6 <= sep <= hi + 1e-6):
            raise WorldConfigError(
                f"rows {i} and {i + 1} have min separation {sep:.3f} m outside "
                f"[{lo}, {hi}]; check curvatures")
    return VineyardWorld(rows, seps, seed, config)


def train_world_config(rows: int = 6, row_length: float = 15.0) -> WorldConfig:
    """Training field: parallel straight rows, no gaps."""
    return WorldConfig(rows=rows, row_length=row_length)


def test_world_config(row_length: float = 15.0) -> WorldConfig:
    """Testing field: straight, hybrid and curved corridors with per-row gaps.

    Eight rows bottom-to-top: three straight (two straight corridors), a
    concentric hybrid pair (the hybrid corridor), and three concentric arcs
    (two curved corridors). Curved groups share an arc center so each labeled
    corridor keeps constant width; rows between groups only diverge, so every
    adjacent pair still meets the separation band at its closest approach.
    Corridor ids 2 and 4 are unlabeled transitions between the shape groups.
    """
    radius = row_length / 0.6          # 0.6 rad sweep for the full-arc rows
    offsets = (1.7, 1.9, 1.8, 1.8, 1.7, 1.8, 1.6)
    half = 0.5 * row_length
    sweep_h = half / radius            # hybrid arc sweep
    r4 = radius - offsets[3]           # inner hybrid, concentric arc part
    len4 = half + r4 * sweep_h
    r6 = radius - offsets[5]           # arcs concentric with row 5
    r7 = r6 - offsets[6]
    sweep_a = row_length / radius
    shapes = (
        ("straight", 0.0, 0.5, 0.0),
        ("straight", 0.0, 0.5, 0.0),
        ("straight", 0.0, 0.5, 0.0),
        ("hybrid", 1.0 / radius, 0.5, 0.0),
        ("hybrid", 1.0 / r4, half / len4, len4),
        ("arc", 1.0 / radius, 0.5, 0.0),
        ("arc", 1.0 / r6, 0.5, r6 * sweep_a),
        ("arc", 1.0 / r7, 0.5, r7 * sweep_a),
    )
    labels = (("1", 0), ("2", 1), ("3", 3), ("4", 5), ("5", 6))
    return WorldConfig(rows=8, row_length=row_length, row_shapes=shapes,
                       explicit_offsets=offsets, gaps_per_row=1, gap_width=2.5,
                       corridor_labels=labels)


# --- world file round-trip -------------------------------------------------

def world_to_dict(world: VineyardWorld) -> dict:
    cfg = dataclasses.asdict(world.config)
    return {
        "format": "vinenav-world",
        "version": WORLD_FORMAT_VERSION,
        "seed": world.seed,
        "config": cfg,
        "inter_row_distances": list(world.inter_row_distances),
        "rows": [
            {
                "curve": dataclasses.asdict(row.curve),
                "spacing_range": list(row.plant_spacing_range),
                "gaps": [list(g) for g in row.gap_intervals],
                "plant_arclengths": list(row.plant_arclengths),
                "plants": [
                    [p.position[0], p.position[1], p.trunk_radius,
                     p.canopy_half_width, p.height, p.canopy_base]
                    for p in row.plants
                ],
            }
            for row in world.rows
        ],
    }


def _config_from_dict(d: dict) -> WorldConfig:
    def tup(v):
        if v is None:
            return None
        return tuple(tuple(x) if isinstance(x, list) else x for x in v)

    return WorldConfig(
        rows=d["rows"], row_length=d["row_length"], row_shapes=tup(d.get("row_shapes")),
        explicit_offsets=(tuple(d["explicit_offsets"])
                          if d.get("explicit_offsets") is not None else None),
        inter_row_range=tuple(d["inter_row_range"]), spacing_range=tuple(d["spacing_range"]),
        jitter=d["jitter"], gaps_per_row=d["gaps_per_row"], gap_width=d["gap_width"],
        explicit_gaps=(tuple(tuple(tuple(g) for g in row) for row in d["explicit_gaps"])
                       if d.get("explicit_gaps") is not None else None),
        trunk_radius=d["trunk_radius"], canopy_half_width=d["canopy_half_width"],
        plant_height=d["plant_height"], canopy_base=d["canopy_base"],
        corridor_labels=tup(d.get("corridor_labels")))


def world_from_dict(d: dict) -> VineyardWorld:
    if d.get("format") != "vinenav-world":
        raise ValueError("not a vinenav world file")
    if d.get("version") != WORLD_FORMAT_VERSION:
        raise ValueError(f"unsupported world file version {d.get('version')}")
    config = _config_from_dict(d["config"])
    rows = []
    for rd in d["rows"]:
        cd = dict(rd["curve"])
        cd["start"] = tuple(cd["start"])
        curve = RowCurve(**cd)
        plants = tuple(PlantInstance((p[0], p[1]), p[2], p[3], p[4], p[5])
                       for p in rd["plants"])
        rows.append(RowSpec(
            curve=curve, plant_spacing_range=tuple(rd["spacing_range"]),
            gap_intervals=tuple(tuple(g) for g in rd["gaps"]),
            plants=plants, plant_arclengths=tuple(rd["plant_arclengths"])))
    return VineyardWorld(rows, d["inter_row_distances"], d["seed"], config)


def save_world(world: VineyardWorld, path: str) -> None:
    with open(path, "w") as f:
        json.dump(world_to_dict(world), f, indent=1)
        f.write("\n")


def load_world(path: str) -> VineyardWorld:
    with open(path) as f:
        return world_from_dict(json.load(f))
