"""Dispatch-plan search: canonical PSO over a random-key encoding, plus
simulated-annealing and greedy baselines, with the severity-weighted
time/coverage objective.

A candidate solution is a vector in [0,1]^D with D = V*K + K: for each of V
vehicles a block of K zone keys (argmax picks the zone, all keys below the
idle threshold means hold in reserve), then K supply keys normalized into
per-zone shares.  Decoded routes are nearest-neighbor tours over the
assigned zone's detected survivors, precomputed per (vehicle, zone) when the
problem is frozen.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, router
from .errors import ConfigError
from .scenario import DRONE

IDLE_THRESHOLD = 0.05


@dataclass(frozen=True)
class SwarmConfig:
    particle_count: int = 120
    iterations: int = 100
    inertia: float = 0.7
    cognitive: float = 2.0
    social: float = 2.0
    velocity_clamp: float = 0.25  # fraction of the [0,1] position range
    seed: int = 0

    def validate(self):
        if self.particle_count < 1:
            raise ConfigError(f"particle_count must be >= 1, got {self.particle_count}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("inertia", "cognitive", "social", "velocity_clamp"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class SAConfig:
    budget: int = 12000          # evaluations; match particle_count * iterations
    sigma: float = 0.1
    perturb_fraction: float = 0.1
    t_initial: float = 1.0
    t_final: float = 1e-3
    trace_every: int = 120       # record best-so-far once per this many steps
    seed: int = 0

    def validate(self):
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.sigma <= 0 or not 0 < self.perturb_fraction <= 1:
            raise ConfigError("sigma must be > 0 and perturb_fraction in (0, 1]")
        if self.t_initial <= 0 or self.t_final <= 0 or self.t_final > self.t_initial:
            raise ConfigError("need 0 < t_final <= t_initial")
        if self.trace_every < 1:
            raise ConfigError(f"trace_every must be >= 1, got {self.trace_every}")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_time: float = 0.5
    w_coverage: float = 0.5

    def validate(self):
        if self.w_time < 0 or self.w_coverage < 0:
            raise ConfigError("objective weights must be >= 0")
        if abs(self.w_time + self.w_coverage - 1.0) > 1e-9:
            raise ConfigError(
                f"objective weights must sum to 1, got {self.w_time} + {self.w_coverage}"
            )


@dataclass
class Particle:
    x: np.ndarray
    v: np.ndarray
    pbest: np.ndarray
    pbest_score: float


@dataclass
class Swarm:
    x: np.ndarray            # (P, D)
    v: np.ndarray            # (P, D)
    pbest: np.ndarray        # (P, D)
    pbest_score: np.ndarray  # (P,)

    def particle(self, i: int) -> Particle:
        return Particle(self.x[i].copy(), self.v[i].copy(),
                        self.pbest[i].copy(), float(self.pbest_score[i]))


def init_swarm(particle_count: int, dim: int, rng: np.random.Generator) -> Swarm:
    x = rng.random((particle_count, dim))
    return Swarm(x=x, v=np.zeros((particle_count, dim)), pbest=x.copy(),
                 pbest_score=np.full(particle_count, np.inf))


@dataclass
class Plan:
    assignment: np.ndarray    # (V,) zone index, -1 = idle
    supply_share: np.ndarray  # (K,) in [0,1], sums to <= 1
    route_targets: list       # per vehicle: np.ndarray of target indices in visit order
    skipped: list             # per vehicle: np.ndarray of unreachable targets of its zone


@dataclass
class DecisionProblem:
    """A dispatch problem frozen at one planning instant."""

    n_vehicles: int
    n_zones: int
    severity: np.ndarray      # (K,)
    target_cells: np.ndarray  # (T, 2) world cells
    target_sizes: np.ndarray  # (T,)
    target_zone: np.ndarray   # (T,) zone index per target
    vdist: np.ndarray         # (V, T) vehicle-to-target seconds (inf unreachable)
    tour_start: np.ndarray    # CSR offsets, length V*K + 1
    tour_tgt: np.ndarray      # flat target indices
    tour_t: np.ndarray        # flat cumulative arrival seconds
    horizon_s: float
    sev_denom: float
    vehicle_cells: np.ndarray
    vehicle_classes: list
    vehicle_speeds: np.ndarray
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    idle_threshold: float = IDLE_THRESHOLD
    zones: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.n_vehicles * self.n_zones + self.n_zones

    def kernel_args(self):
        return (
            self.n_vehicles, self.n_zones, self.idle_threshold,
            self.tour_start, self.tour_tgt, self.tour_t,
            self.target_zone, self.target_sizes, self.severity, self.sev_denom,
            self.horizon_s, self.weights.w_time, self.weights.w_coverage,
        )


def build_problem(severity, target_cells, target_sizes, target_zone,
                  vehicle_cells, vehicle_classes, vehicle_speeds,
                  ground_cost: router.CostMap, drone_cell_seconds: float,
                  horizon_s: float, weights: ObjectiveWeights = ObjectiveWeights(),
                  zones=()) -> DecisionProblem:
    """Freeze a decision problem: distance fields, pairwise times, and tours."""
    severity = np.asarray(severity, dtype=np.float64)
    target_cells = np.asarray(target_cells, dtype=np.int64).reshape(-1, 2)
    target_sizes = np.asarray(target_sizes, dtype=np.float64)
    target_zone = np.asarray(target_zone, dtype=np.int64)
    vehicle_cells = np.asarray(vehicle_cells, dtype=np.int64).reshape(-1, 2)
    vehicle_speeds = np.asarray(vehicle_speeds, dtype=np.float64)
    n_v = len(vehicle_cells)
    n_z = len(severity)
    n_t = len(target_cells)

    scales = np.array([
        router.speed_scale(vehicle_speeds[i], vehicle_classes[i]) for i in range(n_v)
    ])
    is_drone = np.array([c == DRONE for c in vehicle_classes])

    vdist = np.full((n_v, n_t), np.inf)
    if n_t:
        # One dijkstra field per target serves both the pairwise matrix and the
        # vehicle distances (the edge metric is symmetric).  For a target on a
        # blocked cell the field prices leaving it at the neighbor's cost, so
        # ground distances read as "reach an adjacent passable cell", matching
        # how the executor services blocked targets.
        tfields = kernels.source_fields(
            ground_cost.seconds,
            target_cells[:, 0].astype(np.int64),
            target_cells[:, 1].astype(np.int64),
        )
        ground_idx = np.flatnonzero(~is_drone)
        if len(ground_idx):
            d = tfields[:, vehicle_cells[ground_idx, 0], vehicle_cells[ground_idx, 1]]
            vdist[ground_idx] = d.T * scales[ground_idx][:, None]
        drone_idx = np.flatnonzero(is_drone)
        if len(drone_idx):
            d = router.octile_matrix(vehicle_cells[drone_idx], target_cells, drone_cell_seconds)
            vdist[drone_idx] = d * scales[drone_idx][:, None]

        dmat_ground = tfields[:, target_cells[:, 0], target_cells[:, 1]]
        dmat_drone = router.octile_matrix(target_cells, target_cells, drone_cell_seconds)
    else:
        dmat_ground = np.zeros((0, 0))
        dmat_drone = np.zeros((0, 0))

    if n_t and n_z:
        tour_start, tour_tgt, tour_t = kernels.build_tours(
            vdist, dmat_ground, dmat_drone, scales, is_drone, target_zone, n_z
        )
    else:
        tour_start = np.zeros(n_v * n_z + 1, dtype=np.int64)
        tour_tgt = np.zeros(0, dtype=np.int64)
        tour_t = np.zeros(0)

    sev_denom = float(np.sum(severity[target_zone] * target_sizes)) if n_t else 0.0
    return DecisionProblem(
        n_vehicles=n_v, n_zones=n_z, severity=severity,
        target_cells=target_cells, target_sizes=target_sizes, target_zone=target_zone,
        vdist=vdist, tour_start=tour_start, tour_tgt=tour_tgt, tour_t=tour_t,
        horizon_s=float(horizon_s), sev_denom=sev_denom,
        vehicle_cells=vehicle_cells, vehicle_classes=list(vehicle_classes),
        vehicle_speeds=vehicle_speeds, weights=weights, zones=list(zones),
    )


def pso_step(swarm: Swarm, gbest: np.ndarray, config: SwarmConfig,
             rng: np.random.Generator) -> Swarm:
    """One synchronous velocity/position update (does not re-evaluate).

    v <- w*v + c1*r1*(pbest - x) + c2*r2*(gbest - x), clamped; x clamped to
    [0,1].  r1, r2 are fresh per particle and dimension.
    """
    n_p, dim = swarm.x.shape
    gbest = np.asarray(gbest, dtype=np.float64)
    if gbest.shape != (dim,):
        raise ValueError(f"gbest dimension {gbest.shape} does not match swarm dim {dim}")
    r1 = rng.random((n_p, dim))
    r2 = rng.random((n_p, dim))
    v = (
        config.inertia * swarm.v
        + config.cognitive * r1 * (swarm.pbest - swarm.x)
        + config.social * r2 * (gbest - swarm.x)
    )
    np.clip(v, -config.velocity_clamp, config.velocity_clamp, out=v)
    x = np.clip(swarm.x + v, 0.0, 1.0)
    return Swarm(x=x, v=v, pbest=swarm.pbest, pbest_score=swarm.pbest_score)


def decode_particle(x: np.ndarray, problem: DecisionProblem) -> Plan:
    """Decode a position vector into an executable plan.

    Per vehicle: argmax over its K zone keys (idle when the best key is
    below the idle threshold); assignments to zones with no reachable
    targets are repaired to idle.  Supply shares are the normalized last-K
    block.  Routes are the precomputed nearest-neighbor tours.
    """
    n_v, n_z = problem.n_vehicles, problem.n_zones
    x = np.asarray(x, dtype=np.float64)
    if n_z == 0:
        return Plan(
            assignment=np.full(n_v, -1, dtype=np.int64),
            supply_share=np.zeros(0),
            route_targets=[np.zeros(0, dtype=np.int64) for _ in range(n_v)],
            skipped=[np.zeros(0, dtype=np.int64) for _ in range(n_v)],
        )
    if x.shape != (problem.dim,):
        raise ValueError(f"position dimension {x.shape} != {(problem.dim,)}")
    assignment = np.full(n_v, -1, dtype=np.int64)
    routes, skipped = [], []
    for v in range(n_v):
        keys = x[v * n_z:(v + 1) * n_z]
        z = int(np.argmax(keys))
        s, e = problem.tour_start[v * n_z + z], problem.tour_start[v * n_z + z + 1]
        if keys[z] < problem.idle_threshold or s == e:
            routes.append(np.zeros(0, dtype=np.int64))
            skipped.append(np.zeros(0, dtype=np.int64))
            continue
        assignment[v] = z
        tour = problem.tour_tgt[s:e]
        routes.append(tour.copy())
        zone_targets = np.flatnonzero(problem.target_zone == z)
        skipped.append(np.setdiff1d(zone_targets, tour))
    supply_keys = x[n_v * n_z:]
    total = supply_keys.sum()
    shares = supply_keys / total if total > 0 else np.zeros(n_z)
    return Plan(assignment=assignment, supply_share=shares,
                route_targets=routes, skipped=skipped)


def fitness(plan: Plan, problem: DecisionProblem,
            weights: ObjectiveWeights | None = None) -> float:
    """Objective of a decoded plan (same rollout the kernels evaluate).

    f = w_time * T_norm + w_coverage * (1 - C_sev); lower is better, in
    [0,1] when the weights sum to 1.
    """
    w = weights if weights is not None else problem.weights
    n_v, n_z = problem.n_vehicles, problem.n_zones
    n_t = len(problem.target_zone)
    best = np.full(n_t, np.inf)
    for v in range(n_v):
        z = int(plan.assignment[v])
        if z < 0:
            continue
        s, e = problem.tour_start[v * n_z + z], problem.tour_start[v * n_z + z + 1]
        if s == e:
            raise ValueError(f"infeasible plan: vehicle {v} assigned unreachable zone {z}")
        for i in range(s, e):
            t = problem.tour_t[i]
            if t > problem.horizon_s:
                break
            tg = problem.tour_tgt[i]
            if t < best[tg]:
                best[tg] = t
    covered = 0.0
    time_sum = 0.0
    n_reached = 0
    for t in range(n_t):
        if np.isfinite(best[t]):
            covered += problem.severity[problem.target_zone[t]] * problem.target_sizes[t]
            time_sum += best[t]
            n_reached += 1
    c_sev = covered / problem.sev_denom if problem.sev_denom > 0 else 0.0
    t_norm = 1.0 if n_reached == 0 else min(1.0, time_sum / n_reached / problem.horizon_s)
    return w.w_time * t_norm + w.w_coverage * (1.0 - c_sev)


def _resolve_seed(config_seed: int, rng) -> np.uint64:
    if rng is None:
        return np.uint64(config_seed & 0xFFFFFFFFFFFFFFFF)
    if isinstance(rng, (int, np.integer)):
        return np.uint64(int(rng) & 0xFFFFFFFFFFFFFFFF)
    return np.uint64(int(rng.integers(0, 2**63)))


def _degenerate_result(problem: DecisionProblem, n_trace: int):
    plan = decode_particle(np.zeros(problem.dim), problem)
    score = fitness(plan, problem)
    return plan, np.full(n_trace, score)


def pso_optimize(problem: DecisionProblem, config: SwarmConfig = SwarmConfig(),
                 rng=None):
    """Run PSO and return (best plan, gbest trace of length iterations+1)."""
    config.validate()
    problem.weights.validate()
    if problem.n_zones == 0 or len(problem.target_zone) == 0:
        return _degenerate_result(problem, config.iterations + 1)
    seed = _resolve_seed(config.seed, rng)
    gx, trace = kernels.pso_run(
        seed, config.particle_count, config.iterations,
        config.inertia, config.cognitive, config.social, config.velocity_clamp,
        *problem.kernel_args(),
    )
    return decode_particle(gx, problem), trace


def sa_optimize(problem: DecisionProblem, config: SAConfig = SAConfig(), rng=None):
    """Run simulated annealing and return (best plan, best-so-far trace)."""
    config.validate()
    problem.weights.validate()
    if problem.n_zones == 0 or len(problem.target_zone) == 0:
        return _degenerate_result(problem, config.budget // config.trace_every + 1)
    seed = _resolve_seed(config.seed, rng)
    perturb = max(1, math.ceil(config.perturb_fraction * problem.dim))
    bx, trace = kernels.sa_run(
        seed, config.budget, config.sigma, perturb,
        config.t_initial, config.t_final, config.trace_every,
        *problem.kernel_args(),
    )
    return decode_particle(bx, problem), trace


def greedy_plan(problem: DecisionProblem) -> Plan:
    """Severity-first dispatch: each zone takes the nearest free vehicle.

    Zones are visited in descending severity (ties: lower id); the chosen
    vehicle is the unassigned one with the earliest first-stop arrival
    (ties: lower index).  Supply shares are proportional to severity.
    """
    n_v, n_z = problem.n_vehicles, problem.n_zones
    assignment = np.full(n_v, -1, dtype=np.int64)
    if n_z > 0:
        free = np.ones(n_v, dtype=bool)
        for z in np.argsort(-problem.severity, kind="stable"):
            best_v, best_d = -1, np.inf
            for v in range(n_v):
                if not free[v]:
                    continue
                s, e = problem.tour_start[v * n_z + z], problem.tour_start[v * n_z + z + 1]
                if s == e:
                    continue
                d = problem.tour_t[s]
                if d < best_d:
                    best_d, best_v = d, v
            if best_v >= 0:
                assignment[best_v] = z
                free[best_v] = False

    routes, skipped = [], []
    for v in range(n_v):
        z = int(assignment[v])
        if z < 0:
            routes.append(np.zeros(0, dtype=np.int64))
            skipped.append(np.zeros(0, dtype=np.int64))
            continue
        s, e = problem.tour_start[v * n_z + z], problem.tour_start[v * n_z + z + 1]
        tour = problem.tour_tgt[s:e].copy()
        routes.append(tour)
        zone_targets = np.flatnonzero(problem.target_zone == z)
        skipped.append(np.setdiff1d(zone_targets, tour))
    total = problem.severity.sum()
    shares = problem.severity / total if total > 0 else np.zeros(n_z)
    return Plan(assignment=assignment, supply_share=shares,
                route_targets=routes, skipped=skipped)
