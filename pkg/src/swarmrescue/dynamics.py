"""Hazard dynamics: one 45-second tick of flood rise or wind-driven fire.

Step functions take a world state and return a new one with the hazard
fields advanced; entity arrays (vehicle positions, stocks, survivor flags)
are carried through by reference and are owned by the engine loop.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .scenario import HAZARD_FLOOD, HAZARD_WILDFIRE, DRONE, GROUND, HazardParams, ScenarioSpec

TICK_SECONDS = 45.0

FIRE_UNBURNED = 0
FIRE_BURNING = 1
FIRE_BURNED = 2

_DIRS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
# fraction of a positive surface gap that may flow to one neighbor per pass
_RELAX = 0.125
_RELAX_PASSES = 2


@dataclass
class WorldState:
    tick: int
    hazard_kind: str
    water_depth: np.ndarray    # meters, (n, n)
    fire_state: np.ndarray     # int8, (n, n)
    burn_timer: np.ndarray     # int16, (n, n)
    extra_blocked: np.ndarray  # bool, transient per-tick blockages
    blocked: np.ndarray        # bool, ground blockage = hazard | extra
    # entities
    vehicle_cells: np.ndarray  # (V, 2) int
    vehicle_stock: np.ndarray  # (V,) int
    vehicle_bank: np.ndarray   # (V,) float, unspent travel seconds
    depot_stock: np.ndarray    # (D,) int
    reached: np.ndarray        # (G,) bool
    first_reach_s: np.ndarray  # (G,) float, nan until reached
    delivered_units: int

    @property
    def side(self) -> int:
        return self.water_depth.shape[0]


def init_world(spec: ScenarioSpec) -> WorldState:
    """Initial world: dry grid, ignitions burning, vehicles loaded at depots."""
    n = spec.grid.side_cells
    fire_state = np.zeros((n, n), dtype=np.int8)
    burn_timer = np.zeros((n, n), dtype=np.int16)
    if spec.hazard_kind == HAZARD_WILDFIRE:
        for r, c in spec.hazard.ignition_cells:
            fire_state[r, c] = FIRE_BURNING
            burn_timer[r, c] = spec.hazard.burn_duration_ticks

    depot_stock = np.array([d.stock for d in spec.depots], dtype=np.int64)
    depot_cells = np.array([d.cell for d in spec.depots], dtype=np.int64).reshape(-1, 2)
    vehicle_cells = np.array([v.cell for v in spec.vehicles], dtype=np.int64).reshape(-1, 2)
    vehicle_stock = np.zeros(len(spec.vehicles), dtype=np.int64)
    for i, v in enumerate(spec.vehicles):
        if len(depot_stock) == 0:
            break
        d = np.abs(depot_cells - vehicle_cells[i]).max(axis=1)
        order = np.lexsort((np.arange(len(depot_stock)), d))
        for j in order:
            if depot_stock[j] > 0:
                take = min(v.capacity, int(depot_stock[j]))
                vehicle_stock[i] = take
                depot_stock[j] -= take
                break

    n_groups = len(spec.survivors)
    world = WorldState(
        tick=0,
        hazard_kind=spec.hazard_kind,
        water_depth=np.zeros((n, n)),
        fire_state=fire_state,
        burn_timer=burn_timer,
        extra_blocked=np.zeros((n, n), dtype=bool),
        blocked=np.zeros((n, n), dtype=bool),
        vehicle_cells=vehicle_cells,
        vehicle_stock=vehicle_stock,
        vehicle_bank=np.zeros(len(spec.vehicles)),
        depot_stock=depot_stock,
        reached=np.zeros(n_groups, dtype=bool),
        first_reach_s=np.full(n_groups, np.nan),
        delivered_units=0,
    )
    world.blocked = _hazard_blocked(world, spec.hazard)
    return world


def _shift(a: np.ndarray, dr: int, dc: int, fill):
    """a shifted so out[r, c] = a[r - dr, c - dc], `fill` outside the grid."""
    out = np.full_like(a, fill)
    n, m = a.shape
    rs_d, re_d = max(0, dr), min(n, n + dr)
    cs_d, ce_d = max(0, dc), min(m, m + dc)
    rs_s, re_s = max(0, -dr), min(n, n - dr)
    cs_s, ce_s = max(0, -dc), min(m, m - dc)
    out[rs_d:re_d, cs_d:ce_d] = a[rs_s:re_s, cs_s:ce_s]
    return out


def _hazard_blocked(world: WorldState, params: HazardParams) -> np.ndarray:
    if world.hazard_kind == HAZARD_FLOOD:
        hz = world.water_depth > params.blockage_depth_m
    else:
        hz = world.fire_state != FIRE_UNBURNED
    return hz | world.extra_blocked


def step_flood(world: WorldState, terrain_elevation: np.ndarray, params: HazardParams,
               rng: np.random.Generator) -> WorldState:
    """Rain at source cells, then bounded downhill redistribution.

    Water conserves mass exactly up to float rounding: each pass moves at
    most the cell's own depth, split over lower-surface neighbors, and the
    boundary is closed (no outflow off-grid).
    """
    depth = world.water_depth.copy()
    rain_m = params.rainfall_mm_per_tick / 1000.0
    for r, c in params.source_cells:
        depth[r, c] += rain_m

    for _ in range(_RELAX_PASSES):
        surface = terrain_elevation + depth
        flows = []
        out_total = np.zeros_like(depth)
        for dr, dc in _DIRS:
            nb = _shift(surface, -dr, -dc, np.inf)  # nb[r,c] = surface at (r+dr, c+dc)
            gap = surface - nb
            f = np.where(gap > 0.0, gap * _RELAX * 0.5, 0.0)
            flows.append(f)
            out_total += f
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(out_total > depth, depth / np.where(out_total > 0, out_total, 1.0), 1.0)
        new_depth = depth - out_total * scale
        for (dr, dc), f in zip(_DIRS, flows):
            new_depth += _shift(f * scale, dr, dc, 0.0)
        depth = new_depth
    np.clip(depth, 0.0, None, out=depth)

    extra = rng.random(depth.shape) < params.transient_block_prob
    out = replace(world, tick=world.tick + 1, water_depth=depth, extra_blocked=extra)
    out.blocked = _hazard_blocked(out, params)
    return out


def _wind_alignment(params: HazardParams) -> np.ndarray:
    """Per-direction spread multiplier 1 + speed*cos(angle to wind), in [0, 2]."""
    wr = -math.sin(params.wind_dir_rad)  # rows grow southward
    wc = math.cos(params.wind_dir_rad)
    out = np.empty(len(_DIRS))
    for k, (dr, dc) in enumerate(_DIRS):
        norm = math.hypot(dr, dc)
        cos_a = (dr * wr + dc * wc) / norm
        out[k] = min(2.0, max(0.0, 1.0 + params.wind_speed * cos_a))
    return out


def step_fire(world: WorldState, terrain_fuel: np.ndarray, params: HazardParams,
              rng: np.random.Generator) -> WorldState:
    """Stochastic 8-neighborhood spread; burning cells burn out after a fixed time."""
    state = world.fire_state.copy()
    timer = world.burn_timer.copy()
    burning = state == FIRE_BURNING
    align = _wind_alignment(params)

    not_ignite = np.ones_like(terrain_fuel)
    for k, (dr, dc) in enumerate(_DIRS):
        src = _shift(burning.astype(np.float64), dr, dc, 0.0)  # burning neighbor at (r-dr, c-dc)
        p = np.clip(params.base_spread_prob * terrain_fuel * align[k], 0.0, 1.0)
        not_ignite *= 1.0 - p * src
    u = rng.random(state.shape)
    ignite = (state == FIRE_UNBURNED) & (u < 1.0 - not_ignite)

    # previously burning cells age; newly ignited start at full duration
    timer[burning] -= 1
    done = burning & (timer <= 0)
    state[done] = FIRE_BURNED
    state[ignite] = FIRE_BURNING
    timer[ignite] = params.burn_duration_ticks

    extra = rng.random(state.shape) < params.transient_block_prob
    out = replace(world, tick=world.tick + 1, fire_state=state, burn_timer=timer,
                  extra_blocked=extra)
    out.blocked = _hazard_blocked(out, params)
    return out


def step(world: WorldState, spec: ScenarioSpec, rng: np.random.Generator) -> WorldState:
    if world.hazard_kind == HAZARD_FLOOD:
        return step_flood(world, spec.terrain.elevation, spec.hazard, rng)
    return step_fire(world, spec.terrain.fuel, spec.hazard, rng)


def passable(world: WorldState, cell, vehicle_class: str) -> bool:
    """Drones always pass; ground vehicles are stopped by blocked cells."""
    r, c = cell
    n = world.side
    if not (0 <= r < n and 0 <= c < n):
        raise IndexError(f"cell {cell} out of bounds for {n}x{n} grid")
    if vehicle_class == DRONE:
        return True
    return not bool(world.blocked[r, c])
