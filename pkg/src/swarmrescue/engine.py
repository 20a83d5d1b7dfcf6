"""Closed-loop episode runner: observe, extract priorities, plan, execute
one tick of movement, advance the hazard, and record metrics.

Policies
--------
hybrid               priority zones + particle swarm optimization
perception_only      priority zones + greedy severity-first dispatch
pso_only             PSO over a degraded problem: no priority map, uniform
                     zone severity, survivor detections quantized to coarse
                     blocks (models an optimizer without a perception stage)
simulated_annealing  priority zones + simulated annealing at matched budget
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics, optimizer, perception, router
from .dynamics import TICK_SECONDS, WorldState
from .errors import ConfigError
from .optimizer import (DecisionProblem, ObjectiveWeights, SAConfig, SwarmConfig,
                        build_problem, greedy_plan, pso_optimize, sa_optimize)
from .perception import (Observation, PerceptionConfig, SensorParams,
                         attach_detections, extract_priority_map, pixel_to_world,
                         segment_zones)
from .scenario import DRONE, GROUND, ScenarioSpec

POLICIES = ("hybrid", "perception_only", "pso_only", "simulated_annealing")


@dataclass(frozen=True)
class EngineConfig:
    policy: str = "hybrid"
    horizon_ticks: int = 160          # 120 simulated minutes
    replan_interval_ticks: int = 1
    sensor: SensorParams = field(default_factory=SensorParams)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    sa: SAConfig = field(default_factory=SAConfig)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    reach_radius_cells: int = 2       # service distance for marking a group reached
    quantize_block_cells: int = 8     # pso_only position quantization
    seed: int = 0

    def validate(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.horizon_ticks < 1:
            raise ConfigError(f"horizon_ticks must be >= 1, got {self.horizon_ticks}")
        if self.replan_interval_ticks < 1:
            raise ConfigError(f"replan_interval_ticks must be >= 1, got {self.replan_interval_ticks}")
        if self.reach_radius_cells < 0:
            raise ConfigError(f"reach_radius_cells must be >= 0, got {self.reach_radius_cells}")
        if self.quantize_block_cells < 1:
            raise ConfigError(f"quantize_block_cells must be >= 1, got {self.quantize_block_cells}")
        self.sensor.validate()
        self.perception.validate()
        self.swarm.validate()
        self.sa.validate()
        self.weights.validate()


@dataclass
class MetricsRecord:
    response_time_min: float
    coverage_pct: float
    decision_latency_s: float
    reached_groups: int
    total_groups: int
    delivered_units: int
    ticks_run: int

    def as_dict(self):
        return {
            "response_time_min": self.response_time_min,
            "coverage_pct": self.coverage_pct,
            "decision_latency_s": self.decision_latency_s,
            "reached_groups": self.reached_groups,
            "total_groups": self.total_groups,
            "delivered_units": self.delivered_units,
            "ticks_run": self.ticks_run,
        }


@dataclass
class EpisodeLog:
    policy: str
    hazard_kind: str
    scenario_seed: int
    horizon_ticks: int
    supply_total: int
    group_cells: np.ndarray
    group_sizes: np.ndarray
    ticks_run: int = 0
    events: list = field(default_factory=list)   # (tick, type, vehicle, r, c, survivors, supplies)
    latencies_s: list = field(default_factory=list)
    reached: np.ndarray = None
    first_reach_s: np.ndarray = None
    vehicle_tracks: list = field(default_factory=list)      # per tick: (V, 2)
    blocked_per_tick: list = field(default_factory=list)    # ground blockage before movement
    conservation: list = field(default_factory=list)        # (delivered, on_vehicles, in_depots)
    reached_per_tick: list = field(default_factory=list)
    route_heads: list = field(default_factory=list)   # per tick: (V, 2) first route target, -1 when idle
    plan_scores: list = field(default_factory=list)   # objective of each plan at planning time
    water_volume: list = field(default_factory=list)
    fire_transitions_ok: list = field(default_factory=list)
    pmap_minmax: list = field(default_factory=list)          # (min, max) per computed map
    tick0: dict = field(default_factory=dict)


def _quantized_problem(obs: Observation, spec: ScenarioSpec, world: WorldState,
                       cfg: EngineConfig, ground_cost, drone_cell_s, horizon_s) -> DecisionProblem:
    """pso_only's degraded view: block-quantized targets, uniform severity."""
    n = spec.grid.side_cells
    block = cfg.quantize_block_cells
    merged = {}
    if len(obs.detections):
        cells = pixel_to_world(obs.detections[:, :2], n)
        for i in range(len(cells)):
            br = min(n - 1, (int(cells[i, 0]) // block) * block + block // 2)
            bc = min(n - 1, (int(cells[i, 1]) // block) * block + block // 2)
            merged[(br, bc)] = merged.get((br, bc), 0.0) + float(obs.detections[i, 2])
    keys = sorted(merged.keys())
    if len(keys) > cfg.perception.max_zones:
        keys = sorted(keys, key=lambda c: (-merged[c], c))[: cfg.perception.max_zones]
        keys = sorted(keys)
    target_cells = np.array(keys, dtype=np.int64).reshape(-1, 2)
    target_sizes = np.array([merged[k] for k in keys])
    n_z = len(keys)
    return build_problem(
        severity=np.ones(n_z),
        target_cells=target_cells,
        target_sizes=target_sizes,
        target_zone=np.arange(n_z, dtype=np.int64),
        vehicle_cells=world.vehicle_cells,
        vehicle_classes=[v.kind for v in spec.vehicles],
        vehicle_speeds=np.array([v.speed_kmh for v in spec.vehicles]),
        ground_cost=ground_cost,
        drone_cell_seconds=drone_cell_s,
        horizon_s=horizon_s,
        weights=cfg.weights,
    )


def _zone_problem(zones, spec: ScenarioSpec, world: WorldState, cfg: EngineConfig,
                  ground_cost, drone_cell_s, horizon_s) -> DecisionProblem:
    """Targets are service points: detections within one service footprint
    (a block of side 2*reach_radius+1) merge into a single stop per zone."""
    n = spec.grid.side_cells
    block = 2 * cfg.reach_radius_cells + 1
    target_cells, target_sizes, target_zone = [], [], []
    for z in zones:
        merged = {}
        for i in range(len(z.target_cells)):
            r, c = int(z.target_cells[i, 0]), int(z.target_cells[i, 1])
            key = (min(n - 1, (r // block) * block + block // 2),
                   min(n - 1, (c // block) * block + block // 2))
            merged[key] = merged.get(key, 0.0) + float(z.target_sizes[i])
        for key in sorted(merged):
            target_cells.append(key)
            target_sizes.append(merged[key])
            target_zone.append(z.id)
    return build_problem(
        severity=np.array([z.severity for z in zones]),
        target_cells=np.array(target_cells, dtype=np.int64).reshape(-1, 2),
        target_sizes=np.array(target_sizes),
        target_zone=np.array(target_zone, dtype=np.int64),
        vehicle_cells=world.vehicle_cells,
        vehicle_classes=[v.kind for v in spec.vehicles],
        vehicle_speeds=np.array([v.speed_kmh for v in spec.vehicles]),
        ground_cost=ground_cost,
        drone_cell_seconds=drone_cell_s,
        horizon_s=horizon_s,
        weights=cfg.weights,
        zones=zones,
    )


def _mark_reaches(world: WorldState, log: EpisodeLog, vehicle: int, cell, t_s: float,
                  radius: int, spec: ScenarioSpec, tick: int):
    if len(log.group_cells) == 0:
        return
    cheb = np.abs(log.group_cells - np.asarray(cell)).max(axis=1)
    hits = np.flatnonzero(~world.reached & (cheb <= radius))
    for g in hits:
        world.reached[g] = True
        world.first_reach_s[g] = t_s
        size = int(log.group_sizes[g])
        need = math.ceil(size / 5)  # one supply unit serves up to 5 survivors
        units = min(need, int(world.vehicle_stock[vehicle]))
        world.vehicle_stock[vehicle] -= units
        world.delivered_units += units
        log.events.append((tick, "reach", vehicle,
                           int(log.group_cells[g, 0]), int(log.group_cells[g, 1]),
                           size, units))


_ADJ = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _path_to_adjacent(cmap, cur, tcell):
    """Cheapest path to any in-bounds neighbor of an unenterable target."""
    n = cmap.seconds.shape[0]
    if max(abs(cur[0] - tcell[0]), abs(cur[1] - tcell[1])) <= 1:
        return router.PathResult(cells=[], cost_s=0.0)
    best = None
    for dr, dc in _ADJ:
        nr, nc = tcell[0] + dr, tcell[1] + dc
        if not (0 <= nr < n and 0 <= nc < n) or not np.isfinite(cmap.seconds[nr, nc]):
            continue
        p = router.shortest_path(cmap, cur, (nr, nc))
        if p is not None and (best is None or p.cost_s < best.cost_s):
            best = p
    return best


def _move_vehicle(v: int, world: WorldState, spec: ScenarioSpec, cfg: EngineConfig,
                  cost_maps, routes, problem: DecisionProblem, log: EpisodeLog, tick: int):
    vclass = spec.vehicles[v].kind
    cmap = cost_maps[vclass]
    scale = router.speed_scale(spec.vehicles[v].speed_kmh, vclass)
    if not routes[v]:
        world.vehicle_bank[v] = 0.0
        return
    world.vehicle_bank[v] += TICK_SECONDS
    spent = 0.0
    while routes[v]:
        tgt = routes[v][0]
        tcell = (int(problem.target_cells[tgt, 0]), int(problem.target_cells[tgt, 1]))
        cur = (int(world.vehicle_cells[v, 0]), int(world.vehicle_cells[v, 1]))
        if cur == tcell:
            routes[v].pop(0)
            continue
        path = router.shortest_path(cmap, cur, tcell)
        if path is None:
            # target cell itself blocked: service it from the cheapest
            # adjacent passable cell (reach radius still marks the group)
            path = _path_to_adjacent(cmap, cur, tcell)
        if path is None:
            routes[v].pop(0)
            log.events.append((tick, "skip", v, tcell[0], tcell[1], 0, 0))
            continue
        if not path.cells:  # already adjacent to a blocked target
            routes[v].pop(0)
            continue
        prev = cur
        ran_out = False
        for cell in path.cells[1:]:
            cost = router.step_seconds(cmap, prev, cell) * scale
            if world.vehicle_bank[v] < cost:
                ran_out = True
                break
            world.vehicle_bank[v] -= cost
            spent += cost
            prev = cell
            world.vehicle_cells[v] = cell
            _mark_reaches(world, log, v, cell, tick * TICK_SECONDS + min(spent, TICK_SECONDS),
                          cfg.reach_radius_cells, spec, tick)
        if ran_out:
            break


def run_episode(spec: ScenarioSpec, cfg: EngineConfig = EngineConfig()):
    """Run one closed-loop episode; returns (MetricsRecord, EpisodeLog).

    Deterministic given (scenario, config) except for the recorded
    wall-clock planner latencies.
    """
    cfg.validate()
    world = dynamics.init_world(spec)
    n = spec.grid.side_cells
    n_vehicles = len(spec.vehicles)
    group_cells = np.array([s.cell for s in spec.survivors], dtype=np.int64).reshape(-1, 2)
    group_sizes = np.array([s.size for s in spec.survivors], dtype=np.int64)

    log = EpisodeLog(
        policy=cfg.policy, hazard_kind=spec.hazard_kind, scenario_seed=spec.seed,
        horizon_ticks=cfg.horizon_ticks, supply_total=spec.supply_total,
        group_cells=group_cells, group_sizes=group_sizes,
    )

    ss = np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, cfg.seed & 0xFFFFFFFFFFFFFFFF])
    obs_ss, hazard_ss, planner_ss = ss.spawn(3)
    obs_rng = np.random.default_rng(obs_ss)
    hazard_rng = np.random.default_rng(hazard_ss)
    planner_rng = np.random.default_rng(planner_ss)

    drone_cell_s = spec.grid.cell_size_m / (router.REF_DRONE_KMH / 3.6)
    routes = [[] for _ in range(n_vehicles)]
    problem = None
    log.vehicle_tracks.append(world.vehicle_cells.copy())
    log.water_volume.append(float(world.water_depth.sum()))

    for tick in range(cfg.horizon_ticks):
        t_start = time.perf_counter()
        obs = perception.observe(world, spec, cfg.sensor, obs_rng)
        cost_maps = {
            GROUND: router.build_cost_map(world, spec.terrain.road, spec.grid.cell_size_m, GROUND),
            DRONE: router.build_cost_map(world, spec.terrain.road, spec.grid.cell_size_m, DRONE),
        }
        log.blocked_per_tick.append(world.blocked.copy())

        pmap = None
        zones = []
        if cfg.policy != "pso_only":
            pmap = extract_priority_map(obs, cfg.perception)
            log.pmap_minmax.append((float(pmap.values.min()), float(pmap.values.max())))
            zones = segment_zones(pmap, cfg.perception.threshold, cfg.perception.max_zones, n)
            zones = attach_detections(zones, obs.detections, n)

        if tick % cfg.replan_interval_ticks == 0:
            horizon_s = (cfg.horizon_ticks - tick) * TICK_SECONDS
            if cfg.policy == "pso_only":
                problem = _quantized_problem(obs, spec, world, cfg,
                                             cost_maps[GROUND], drone_cell_s, horizon_s)
            else:
                problem = _zone_problem(zones, spec, world, cfg,
                                        cost_maps[GROUND], drone_cell_s, horizon_s)
            trace = None
            if cfg.policy in ("hybrid", "pso_only"):
                plan, trace = pso_optimize(problem, cfg.swarm, planner_rng)
            elif cfg.policy == "perception_only":
                plan = greedy_plan(problem)
            else:
                budget = cfg.swarm.particle_count * cfg.swarm.iterations
                sa_cfg = replace(cfg.sa, budget=budget, trace_every=cfg.swarm.particle_count)
                plan, trace = sa_optimize(problem, sa_cfg, planner_rng)
            log.latencies_s.append(time.perf_counter() - t_start)
            log.plan_scores.append(optimizer.fitness(plan, problem))
            routes = [list(plan.route_targets[v]) for v in range(n_vehicles)]
            if tick == 0:
                log.tick0 = {
                    "priority": pmap.values.copy() if pmap is not None else None,
                    "zones": zones,
                    "detections": obs.detections.copy(),
                    "trace": trace,
                    "plan": plan,
                }
        heads = np.full((n_vehicles, 2), -1, dtype=np.int64)
        for v in range(n_vehicles):
            if routes[v]:
                heads[v] = problem.target_cells[routes[v][0]]
        log.route_heads.append(heads)

        # mark groups already within service range of parked vehicles
        for v in range(n_vehicles):
            _mark_reaches(world, log, v, world.vehicle_cells[v], tick * TICK_SECONDS,
                          cfg.reach_radius_cells, spec, tick)
        for v in range(n_vehicles):
            _move_vehicle(v, world, spec, cfg, cost_maps, routes, problem, log, tick)

        fire_before = world.fire_state
        world = dynamics.step(world, spec, hazard_rng)

        ok = not (
            np.any((fire_before == dynamics.FIRE_BURNING) & (world.fire_state == dynamics.FIRE_UNBURNED))
            or np.any((fire_before == dynamics.FIRE_BURNED) & (world.fire_state != dynamics.FIRE_BURNED))
        )
        log.fire_transitions_ok.append(ok)
        log.vehicle_tracks.append(world.vehicle_cells.copy())
        log.water_volume.append(float(world.water_depth.sum()))
        log.conservation.append((world.delivered_units,
                                 int(world.vehicle_stock.sum()),
                                 int(world.depot_stock.sum())))
        log.reached_per_tick.append(int(world.reached.sum()))
        log.ticks_run = tick + 1
        if world.reached.all():
            break

    log.reached = world.reached.copy()
    log.first_reach_s = world.first_reach_s.copy()
    return compute_metrics(log), log


def compute_metrics(log: EpisodeLog) -> MetricsRecord:
    """Aggregate an episode log into the three benchmark metrics."""
    if log.ticks_run == 0:
        raise ValueError("cannot compute metrics from an empty episode log")
    total = int(log.group_sizes.sum())
    reached_mask = log.reached if log.reached is not None else np.zeros(0, dtype=bool)
    reached_sizes = int(log.group_sizes[reached_mask].sum()) if len(reached_mask) else 0
    coverage = 100.0 * reached_sizes / total if total > 0 else 100.0
    if reached_mask.any():
        response_min = float(np.mean(log.first_reach_s[reached_mask])) / 60.0
    else:
        response_min = log.horizon_ticks * TICK_SECONDS / 60.0
    latency = float(np.mean(log.latencies_s)) if log.latencies_s else 0.0
    return MetricsRecord(
        response_time_min=response_min,
        coverage_pct=coverage,
        decision_latency_s=latency,
        reached_groups=int(reached_mask.sum()),
        total_groups=len(log.group_sizes),
        delivered_units=int(log.conservation[-1][0]) if log.conservation else 0,
        ticks_run=log.ticks_run,
    )
