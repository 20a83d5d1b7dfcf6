"""Grid routing: cost maps, shortest paths, and nearest-neighbor tours.

Cost maps hold per-cell traversal seconds at a reference speed; an edge
a->b costs the mean of the two cell costs, times sqrt(2) for diagonals.
Per-vehicle times are the reference times scaled by (reference speed /
vehicle speed).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import WorldState
from .scenario import DRONE, GROUND

REF_GROUND_KMH = 40.0
REF_DRONE_KMH = 80.0
OFFROAD_FACTOR = 0.5  # ground speed off-road as a fraction of road speed

SQRT2 = math.sqrt(2.0)


@dataclass
class CostMap:
    seconds: np.ndarray  # (n, n) traversal seconds at reference speed; inf = blocked
    vehicle_class: str
    tick: int
    cell_size_m: float


@dataclass
class PathResult:
    cells: list       # [(r, c), ...] from src to dst inclusive; [] when src == dst
    cost_s: float


@dataclass
class TourResult:
    order: list        # indices into the requested target list, in visit order
    arrival_s: list    # cumulative arrival seconds (reference speed)
    skipped: list      # indices of unreachable targets


def build_cost_map(world: WorldState, road: np.ndarray, cell_size_m: float,
                   vehicle_class: str) -> CostMap:
    if vehicle_class == DRONE:
        sec = np.full(world.blocked.shape, cell_size_m / (REF_DRONE_KMH / 3.6))
    else:
        on_road = cell_size_m / (REF_GROUND_KMH / 3.6)
        off_road = cell_size_m / (REF_GROUND_KMH * OFFROAD_FACTOR / 3.6)
        sec = np.where(road, on_road, off_road)
        sec = np.where(world.blocked, np.inf, sec)
    return CostMap(seconds=sec, vehicle_class=vehicle_class, tick=world.tick,
                   cell_size_m=cell_size_m)


def speed_scale(vehicle_speed_kmh: float, vehicle_class: str) -> float:
    """Multiplier from reference-speed seconds to this vehicle's seconds."""
    ref = REF_DRONE_KMH if vehicle_class == DRONE else REF_GROUND_KMH
    return ref / vehicle_speed_kmh


def step_seconds(cmap: CostMap, a, b) -> float:
    """Cost of one move between 8-adjacent cells (reference speed)."""
    ca, cb = cmap.seconds[a[0], a[1]], cmap.seconds[b[0], b[1]]
    half = cb if not math.isfinite(ca) else 0.5 * (ca + cb)
    mult = SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0
    return half * mult


def shortest_path(cmap: CostMap, src, dst):
    """Minimal-cost 8-connected path, or None when dst is unreachable."""
    n = cmap.seconds.shape[0]
    for cell, what in ((src, "src"), (dst, "dst")):
        if not (0 <= cell[0] < n and 0 <= cell[1] < n):
            raise IndexError(f"{what} cell {tuple(cell)} out of bounds for {n}x{n} grid")
    if tuple(src) == tuple(dst):
        return PathResult(cells=[], cost_s=0.0)
    dist, pred = kernels.dijkstra_grid(cmap.seconds, src[0], src[1], dst[0], dst[1])
    if not np.isfinite(dist[dst[0], dst[1]]):
        return None
    cells = []
    cur = dst[0] * n + dst[1]
    while cur >= 0:
        cells.append((cur // n, cur % n))
        cur = pred[cur // n, cur % n]
    cells.reverse()
    return PathResult(cells=cells, cost_s=float(dist[dst[0], dst[1]]))


def route_tour(cmap: CostMap, start, targets) -> TourResult:
    """Nearest-neighbor visiting order over reachable targets.

    Arrival times are cumulative shortest-path costs at the map's reference
    speed; unreachable targets land in `skipped`.
    """
    n = cmap.seconds.shape[0]
    if not (0 <= start[0] < n and 0 <= start[1] < n):
        raise IndexError(f"start cell {tuple(start)} out of bounds for {n}x{n} grid")
    remaining = list(range(len(targets)))
    order, arrival, skipped = [], [], []
    cur = tuple(start)
    elapsed = 0.0
    while remaining:
        dist = kernels.dijkstra_field(cmap.seconds, cur[0], cur[1])
        best_i, best_d = -1, np.inf
        for i in remaining:
            d = dist[targets[i][0], targets[i][1]]
            if d < best_d:
                best_d, best_i = d, i
        if best_i < 0 or not np.isfinite(best_d):
            skipped.extend(remaining)
            break
        remaining.remove(best_i)
        elapsed += float(best_d)
        order.append(best_i)
        arrival.append(elapsed)
        cur = tuple(targets[best_i])
    return TourResult(order=order, arrival_s=arrival, skipped=skipped)


def octile_matrix(cells_a: np.ndarray, cells_b: np.ndarray, cell_seconds: float) -> np.ndarray:
    """Geodesic times on a uniform-cost grid (what a drone flies)."""
    a = np.asarray(cells_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(cells_b, dtype=np.float64).reshape(-1, 2)
    dr = np.abs(a[:, None, 0] - b[None, :, 0])
    dc = np.abs(a[:, None, 1] - b[None, :, 1])
    lo = np.minimum(dr, dc)
    hi = np.maximum(dr, dc)
    return cell_seconds * ((hi - lo) + SQRT2 * lo)
