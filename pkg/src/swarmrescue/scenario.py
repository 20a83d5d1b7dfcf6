"""Scenario definition, synthetic generation, validation, and file IO.

A scenario fixes everything static about an episode: the world grid,
terrain rasters, hazard parameters, survivor groups, depots, the vehicle
fleet, and the seed.  Generation is a pure function of
(seed, hazard kind, preset), so the same inputs always yield the same
scenario, byte for byte.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ScenarioFormatError, ScenarioValidationError

SCHEMA_VERSION = 1

HAZARD_FLOOD = "flood"
HAZARD_WILDFIRE = "wildfire"
HAZARD_KINDS = (HAZARD_FLOOD, HAZARD_WILDFIRE)

GROUND = "ground"
DRONE = "drone"

# defaults; the paper-scale fleet uses these unless a preset overrides them
GROUND_SPEED_KMH = 40.0
DRONE_SPEED_KMH = 80.0
GROUND_CAPACITY = 30
DRONE_CAPACITY = 5


@dataclass(frozen=True)
class GridSpec:
    side_cells: int
    cell_size_m: float = 100.0

    @property
    def area_km2(self) -> float:
        return (self.side_cells * self.cell_size_m / 1000.0) ** 2


@dataclass
class TerrainField:
    elevation: np.ndarray  # meters, (n, n)
    fuel: np.ndarray       # [0, 1], (n, n)
    road: np.ndarray       # bool, (n, n)

    def __eq__(self, other):
        if not isinstance(other, TerrainField):
            return NotImplemented
        return (
            np.array_equal(self.elevation, other.elevation)
            and np.array_equal(self.fuel, other.fuel)
            and np.array_equal(self.road, other.road)
        )


@dataclass(frozen=True)
class HazardParams:
    # flood
    rainfall_mm_per_tick: float = 0.0
    blockage_depth_m: float = 0.3
    source_cells: tuple = ()
    # wildfire
    ignition_cells: tuple = ()
    wind_dir_rad: float = 0.0
    wind_speed: float = 0.0          # normalized to [0, 1]
    base_spread_prob: float = 0.0
    burn_duration_ticks: int = 4
    # both: per-cell chance of a transient extra blockage each tick
    transient_block_prob: float = 0.01


@dataclass(frozen=True)
class VehicleSpec:
    kind: str
    cell: tuple
    capacity: int
    speed_kmh: float


@dataclass(frozen=True)
class SurvivorGroup:
    cell: tuple
    size: int


@dataclass(frozen=True)
class Depot:
    cell: tuple
    stock: int


@dataclass
class ScenarioSpec:
    grid: GridSpec
    terrain: TerrainField
    hazard_kind: str
    hazard: HazardParams
    survivors: list
    depots: list
    vehicles: list
    supply_total: int
    seed: int

    def __eq__(self, other):
        if not isinstance(other, ScenarioSpec):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.terrain == other.terrain
            and self.hazard_kind == other.hazard_kind
            and self.hazard == other.hazard
            and self.survivors == other.survivors
            and self.depots == other.depots
            and self.vehicles == other.vehicles
            and self.supply_total == other.supply_total
            and self.seed == other.seed
        )


@dataclass(frozen=True)
class PresetParams:
    """Knobs for synthetic generation; the named presets are instances."""

    side_cells: int = 50
    cell_size_m: float = 100.0
    n_ground: int = 12
    n_drones: int = 3
    survivor_count: int = 600
    mean_group_size: int = 15
    n_clusters: int = 8
    cluster_sigma_frac: float = 0.035  # gaussian scatter, fraction of side
    cluster_zipf: float = 0.0          # 0 = equal clusters; >0 skews mass to few
    n_depots: int = 3
    supply_total: int = 120
    road_spacing: int = 12
    obstacle_jitter_cells: int = 2
    # hazard strengths
    flood_rainfall_mm: float = 60.0
    flood_sources: int = 12
    fire_ignitions: int = 2
    fire_base_spread_prob: float = 0.28
    fire_wind_speed: float = 0.6
    transient_block_prob: float = 0.01


BENCHMARK = PresetParams(
    side_cells=100,
    n_ground=60,
    n_drones=12,
    survivor_count=6000,
    mean_group_size=15,
    n_clusters=24,
    n_depots=6,
    supply_total=1200,
    flood_sources=30,
    fire_ignitions=3,
)

DESK = PresetParams()

_PRESETS = {"benchmark": BENCHMARK, "desk": DESK}


def _resolve_preset(preset) -> PresetParams:
    if isinstance(preset, PresetParams):
        return preset
    try:
        return _PRESETS[preset]
    except (KeyError, TypeError):
        raise ConfigError(f"unknown preset {preset!r}; use 'benchmark', 'desk', or PresetParams")


def _check_params(p: PresetParams):
    if p.side_cells < 4:
        raise ConfigError(f"side_cells must be >= 4, got {p.side_cells}")
    if p.cell_size_m <= 0:
        raise ConfigError(f"cell_size_m must be positive, got {p.cell_size_m}")
    for name in ("n_ground", "n_drones", "survivor_count", "n_depots", "supply_total"):
        if getattr(p, name) < 0:
            raise ConfigError(f"{name} must be >= 0, got {getattr(p, name)}")
    if p.n_depots == 0 and p.supply_total > 0:
        raise ConfigError("supply_total > 0 requires n_depots >= 1")
    if p.mean_group_size < 1:
        raise ConfigError(f"mean_group_size must be >= 1, got {p.mean_group_size}")
    if not 0.0 <= p.fire_base_spread_prob <= 1.0:
        raise ConfigError(f"fire_base_spread_prob must be in [0,1], got {p.fire_base_spread_prob}")
    if p.flood_rainfall_mm < 0:
        raise ConfigError(f"flood_rainfall_mm must be >= 0, got {p.flood_rainfall_mm}")


def side_cells_for_area(area_km2: float, cell_size_m: float = 100.0) -> int:
    """Nearest square grid to a stated area (round(sqrt(area) * 1000/cell))."""
    return max(4, round(math.sqrt(area_km2) * 1000.0 / cell_size_m))


def generate_scenario(seed: int, hazard_kind: str, preset="benchmark") -> ScenarioSpec:
    """Deterministically generate a scenario for (seed, hazard kind, preset)."""
    if hazard_kind not in HAZARD_KINDS:
        raise ConfigError(f"hazard_kind must be one of {HAZARD_KINDS}, got {hazard_kind!r}")
    p = _resolve_preset(preset)
    _check_params(p)
    n = p.side_cells
    kind_code = HAZARD_KINDS.index(hazard_kind)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, kind_code, 0x5C3A])

    # terrain: smooth noise over a tilted plane; a basin for floods
    noise = gaussian_filter(rng.normal(0.0, 1.0, (n, n)), sigma=max(2.0, n / 12.0))
    noise = noise / max(1e-9, np.abs(noise).max())
    theta = rng.uniform(0, 2 * math.pi)
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    plane = (np.cos(theta) * rr + np.sin(theta) * cc) / n
    elevation = 12.0 * noise + 8.0 * plane
    elevation = elevation - elevation.min()

    fuel = 0.55 + 0.45 * gaussian_filter(rng.normal(0.0, 1.0, (n, n)), sigma=max(2.0, n / 10.0))
    fuel = np.clip(fuel / max(1e-9, np.abs(fuel).max() / 0.8 + 0.2), 0.0, 1.0)
    fuel = np.clip(0.5 + 0.5 * (fuel - fuel.mean()) / max(1e-9, fuel.std()) * 0.35, 0.0, 1.0)

    road = np.zeros((n, n), dtype=bool)
    spacing = max(4, p.road_spacing)
    offsets_r = rng.integers(2, spacing, max(1, n // spacing))
    offsets_c = rng.integers(2, spacing, max(1, n // spacing))
    for i, off in enumerate(offsets_r):
        r = min(n - 1, i * spacing + int(off))
        road[r, :] = True
    for i, off in enumerate(offsets_c):
        c = min(n - 1, i * spacing + int(off))
        road[:, c] = True

    terrain = TerrainField(elevation=elevation, fuel=fuel, road=road)

    # survivor clusters: rejection-sampled centers, gaussian scatter
    survivors = []
    if p.survivor_count > 0:
        centers = []
        min_sep = n / (math.sqrt(p.n_clusters) + 1.0)
        attempts = 0
        while len(centers) < p.n_clusters and attempts < 2000:
            cand = rng.uniform(0.1 * n, 0.9 * n, 2)
            attempts += 1
            if all(np.hypot(*(cand - c)) >= min_sep for c in centers):
                centers.append(cand)
        n_groups = max(1, p.survivor_count // p.mean_group_size)
        extra = rng.multinomial(p.survivor_count - n_groups, np.full(n_groups, 1.0 / n_groups))
        sizes = 1 + extra
        sigma = p.cluster_sigma_frac * n
        weights = (1.0 + np.arange(len(centers))) ** -p.cluster_zipf
        weights /= weights.sum()
        for g in range(n_groups):
            center = centers[int(rng.choice(len(centers), p=weights))]
            cell = np.clip(np.round(center + rng.normal(0.0, sigma, 2)), 0, n - 1).astype(int)
            survivors.append(SurvivorGroup(cell=(int(cell[0]), int(cell[1])), size=int(sizes[g])))

    # depots on road cells, spread apart; stock = equal split of the total
    depots = []
    if p.n_depots > 0:
        road_cells = np.argwhere(road)
        if len(road_cells) == 0:
            road_cells = np.array([[n // 2, n // 2]])
        chosen = []
        order = rng.permutation(len(road_cells))
        min_sep = n / (p.n_depots + 1)
        for idx in order:
            cand = road_cells[idx]
            if all(np.abs(cand - c).max() >= min_sep for c in chosen):
                chosen.append(cand)
            if len(chosen) == p.n_depots:
                break
        while len(chosen) < p.n_depots:  # crowded grids: relax separation
            chosen.append(road_cells[int(rng.integers(0, len(road_cells)))])
        base, rem = divmod(p.supply_total, p.n_depots)
        for i, cell in enumerate(chosen):
            stock = base + (1 if i < rem else 0)
            depots.append(Depot(cell=(int(cell[0]), int(cell[1])), stock=int(stock)))

    vehicles = []
    if depots:
        depot_cells = [d.cell for d in depots]
    else:
        depot_cells = [(n // 2, n // 2)]
    for i in range(p.n_ground):
        vehicles.append(
            VehicleSpec(GROUND, depot_cells[i % len(depot_cells)], GROUND_CAPACITY, GROUND_SPEED_KMH)
        )
    for i in range(p.n_drones):
        vehicles.append(
            VehicleSpec(DRONE, depot_cells[(i + 1) % len(depot_cells)], DRONE_CAPACITY, DRONE_SPEED_KMH)
        )

    # hazard seeds, with perturbation augmentation (placement jitter)
    j = p.obstacle_jitter_cells

    def _jitter(cells):
        out = []
        for r, c in cells:
            dr, dc = rng.integers(-j, j + 1, 2) if j > 0 else (0, 0)
            out.append((int(np.clip(r + dr, 0, n - 1)), int(np.clip(c + dc, 0, n - 1))))
        return tuple(out)

    if hazard_kind == HAZARD_FLOOD:
        k_src = min(p.flood_sources, n * n)
        flat_order = np.argsort(elevation, axis=None, kind="stable")[: 4 * k_src]
        picks = rng.choice(len(flat_order), size=k_src, replace=False)
        sources = [(int(f // n), int(f % n)) for f in flat_order[np.sort(picks)]]
        hazard = HazardParams(
            rainfall_mm_per_tick=p.flood_rainfall_mm,
            source_cells=_jitter(sources),
            transient_block_prob=p.transient_block_prob,
        )
    else:
        high_fuel = np.argwhere(fuel > np.quantile(fuel, 0.75))
        if len(high_fuel) == 0:
            high_fuel = np.array([[n // 2, n // 2]])
        picks = rng.choice(len(high_fuel), size=min(p.fire_ignitions, len(high_fuel)), replace=False)
        ignitions = [(int(r), int(c)) for r, c in high_fuel[np.sort(picks)]]
        hazard = HazardParams(
            ignition_cells=_jitter(ignitions),
            wind_dir_rad=float(rng.uniform(0, 2 * math.pi)),
            wind_speed=p.fire_wind_speed,
            base_spread_prob=p.fire_base_spread_prob,
            transient_block_prob=p.transient_block_prob,
        )

    spec = ScenarioSpec(
        grid=GridSpec(side_cells=n, cell_size_m=p.cell_size_m),
        terrain=terrain,
        hazard_kind=hazard_kind,
        hazard=hazard,
        survivors=survivors,
        depots=depots,
        vehicles=vehicles,
        supply_total=p.supply_total,
        seed=seed,
    )
    validate_scenario(spec)
    return spec


def validate_scenario(spec: ScenarioSpec):
    """Re-check every structural invariant; raise naming the offending field."""
    n = spec.grid.side_cells
    if n < 4:
        raise ScenarioValidationError(f"grid.side_cells: must be >= 4, got {n}")
    if spec.grid.cell_size_m <= 0:
        raise ScenarioValidationError(f"grid.cell_size_m: must be positive, got {spec.grid.cell_size_m}")
    for name in ("elevation", "fuel", "road"):
        arr = getattr(spec.terrain, name)
        if arr.shape != (n, n):
            raise ScenarioValidationError(f"terrain.{name}: shape {arr.shape} != ({n}, {n})")
    if np.any(spec.terrain.fuel < 0) or np.any(spec.terrain.fuel > 1):
        raise ScenarioValidationError("terrain.fuel: values outside [0, 1]")
    if spec.hazard_kind not in HAZARD_KINDS:
        raise ScenarioValidationError(f"hazard_kind: {spec.hazard_kind!r} not in {HAZARD_KINDS}")
    h = spec.hazard
    if h.rainfall_mm_per_tick < 0:
        raise ScenarioValidationError(f"hazard.rainfall_mm_per_tick: negative ({h.rainfall_mm_per_tick})")
    if not 0.0 <= h.base_spread_prob <= 1.0:
        raise ScenarioValidationError(f"hazard.base_spread_prob: {h.base_spread_prob} not in [0, 1]")
    if not 0.0 <= h.transient_block_prob <= 1.0:
        raise ScenarioValidationError(f"hazard.transient_block_prob: {h.transient_block_prob} not in [0, 1]")
    if h.blockage_depth_m < 0:
        raise ScenarioValidationError(f"hazard.blockage_depth_m: negative ({h.blockage_depth_m})")
    if h.burn_duration_ticks < 1:
        raise ScenarioValidationError(f"hazard.burn_duration_ticks: must be >= 1 ({h.burn_duration_ticks})")

    def _check_cell(cell, what):
        r, c = cell
        if not (0 <= r < n and 0 <= c < n):
            raise ScenarioValidationError(f"{what}: cell {cell} out of bounds for {n}x{n} grid")

    for cells, what in ((h.source_cells, "hazard.source_cells"), (h.ignition_cells, "hazard.ignition_cells")):
        for cell in cells:
            _check_cell(cell, what)
    for i, s in enumerate(spec.survivors):
        _check_cell(s.cell, f"survivors[{i}]")
        if s.size < 1:
            raise ScenarioValidationError(f"survivors[{i}].size: must be >= 1, got {s.size}")
    for i, d in enumerate(spec.depots):
        _check_cell(d.cell, f"depots[{i}]")
        if d.stock < 0:
            raise ScenarioValidationError(f"depots[{i}].stock: negative ({d.stock})")
    for i, v in enumerate(spec.vehicles):
        _check_cell(v.cell, f"vehicles[{i}]")
        if v.kind not in (GROUND, DRONE):
            raise ScenarioValidationError(f"vehicles[{i}].kind: {v.kind!r}")
        if v.capacity < 0:
            raise ScenarioValidationError(f"vehicles[{i}].capacity: negative ({v.capacity})")
        if v.speed_kmh <= 0:
            raise ScenarioValidationError(f"vehicles[{i}].speed_kmh: must be positive ({v.speed_kmh})")
    if spec.supply_total < 0:
        raise ScenarioValidationError(f"supply_total: negative ({spec.supply_total})")
    depot_sum = sum(d.stock for d in spec.depots)
    if depot_sum != spec.supply_total:
        raise ScenarioValidationError(
            f"supply_total: depot stock sums to {depot_sum}, supply_total is {spec.supply_total}"
        )


def save_scenario(spec: ScenarioSpec, path):
    doc = {
        "version": SCHEMA_VERSION,
        "grid": {"side_cells": spec.grid.side_cells, "cell_size_m": spec.grid.cell_size_m},
        "terrain": {
            "elevation": [float(x) for x in spec.terrain.elevation.ravel()],
            "fuel": [float(x) for x in spec.terrain.fuel.ravel()],
            "road": [int(x) for x in spec.terrain.road.ravel()],
        },
        "hazard": {
            "kind": spec.hazard_kind,
            "rainfall_mm_per_tick": spec.hazard.rainfall_mm_per_tick,
            "blockage_depth_m": spec.hazard.blockage_depth_m,
            "source_cells": [list(c) for c in spec.hazard.source_cells],
            "ignition_cells": [list(c) for c in spec.hazard.ignition_cells],
            "wind_dir_rad": spec.hazard.wind_dir_rad,
            "wind_speed": spec.hazard.wind_speed,
            "base_spread_prob": spec.hazard.base_spread_prob,
            "burn_duration_ticks": spec.hazard.burn_duration_ticks,
            "transient_block_prob": spec.hazard.transient_block_prob,
        },
        "survivors": [[s.cell[0], s.cell[1], s.size] for s in spec.survivors],
        "depots": [[d.cell[0], d.cell[1], d.stock] for d in spec.depots],
        "vehicles": [
            {"kind": v.kind, "cell": list(v.cell), "capacity": v.capacity, "speed_kmh": v.speed_kmh}
            for v in spec.vehicles
        ],
        "supply_total": spec.supply_total,
        "seed": spec.seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_scenario(path) -> ScenarioSpec:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioFormatError(f"{path}: invalid scenario file at line {e.lineno}: {e.msg}")
    try:
        version = doc["version"]
        if version != SCHEMA_VERSION:
            raise ScenarioFormatError(f"{path}: unsupported schema version {version}")
        n = int(doc["grid"]["side_cells"])
        grid = GridSpec(side_cells=n, cell_size_m=float(doc["grid"]["cell_size_m"]))
        t = doc["terrain"]
        terrain = TerrainField(
            elevation=np.array(t["elevation"], dtype=np.float64).reshape(n, n),
            fuel=np.array(t["fuel"], dtype=np.float64).reshape(n, n),
            road=np.array(t["road"], dtype=np.int64).reshape(n, n).astype(bool),
        )
        h = doc["hazard"]
        hazard = HazardParams(
            rainfall_mm_per_tick=float(h["rainfall_mm_per_tick"]),
            blockage_depth_m=float(h["blockage_depth_m"]),
            source_cells=tuple((int(r), int(c)) for r, c in h["source_cells"]),
            ignition_cells=tuple((int(r), int(c)) for r, c in h["ignition_cells"]),
            wind_dir_rad=float(h["wind_dir_rad"]),
            wind_speed=float(h["wind_speed"]),
            base_spread_prob=float(h["base_spread_prob"]),
            burn_duration_ticks=int(h["burn_duration_ticks"]),
            transient_block_prob=float(h["transient_block_prob"]),
        )
        spec = ScenarioSpec(
            grid=grid,
            terrain=terrain,
            hazard_kind=h["kind"],
            hazard=hazard,
            survivors=[SurvivorGroup(cell=(int(r), int(c)), size=int(s)) for r, c, s in doc["survivors"]],
            depots=[Depot(cell=(int(r), int(c)), stock=int(s)) for r, c, s in doc["depots"]],
            vehicles=[
                VehicleSpec(
                    kind=v["kind"],
                    cell=(int(v["cell"][0]), int(v["cell"][1])),
                    capacity=int(v["capacity"]),
                    speed_kmh=float(v["speed_kmh"]),
                )
                for v in doc["vehicles"]
            ],
            supply_total=int(doc["supply_total"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, (ScenarioFormatError, ScenarioValidationError)):
            raise
        raise ScenarioFormatError(f"{path}: malformed scenario document: {e}")
    validate_scenario(spec)
    return spec


def roundtrip_scenario(spec: ScenarioSpec, path) -> ScenarioSpec:
    """Write then re-read a scenario; the result equals the input field-by-field."""
    save_scenario(spec, path)
    return load_scenario(path)
