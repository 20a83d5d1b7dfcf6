"""Hot numeric kernels shared by the router, optimizer, and engine.

All functions here are numba ``@njit`` targets with a pure-Python fallback
(see :mod:`swarmrescue.accel`).  They operate on flat NumPy arrays only; the
object-level APIs live in the owning modules.

Random numbers inside kernels come from a counter-based splitmix64 hash so
that results are reproducible, independent of thread count, and identical
between the compiled and fallback lanes.
"""

import math

import numpy as np

from .accel import maybe_njit, prange

# splitmix64 constants (Steele, Lea, Flood 2014)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S12 = np.uint64(12)
_S38 = np.uint64(38)
_M26 = np.uint64(0x3FFFFFF)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_INV26 = 1.0 / 67108864.0  # 2**-26

# 8-connected neighborhood; diagonal steps pay sqrt(2) x cell cost
_DR = np.array([-1, -1, -1, 0, 0, 1, 1, 1], dtype=np.int64)
_DC = np.array([-1, 0, 1, -1, 1, -1, 0, 1], dtype=np.int64)
_DMULT = np.array(
    [math.sqrt(2.0), 1.0, math.sqrt(2.0), 1.0, 1.0, math.sqrt(2.0), 1.0, math.sqrt(2.0)]
)


@maybe_njit(cache=False, inline="always")
def u01(seed, k):
    """Uniform in [0, 1) for counter ``k`` of stream ``seed`` (stateless)."""
    z = seed + np.uint64(k) * _GOLD
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return np.float64(z >> _S11) * _INV53


@maybe_njit(cache=False, inline="always")
def u01_pair(seed, k):
    """Two independent uniforms in [0, 1) from one hash (26 bits each)."""
    z = seed + np.uint64(k) * _GOLD
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    hi = np.float64(z >> _S38) * _INV26
    lo = np.float64((z >> _S12) & _M26) * _INV26
    return hi, lo


@maybe_njit()
def _heap_push(heap_d, heap_v, size, d, v):
    i = size
    heap_d[i] = d
    heap_v[i] = v
    while i > 0:
        parent = (i - 1) >> 1
        if heap_d[parent] <= heap_d[i]:
            break
        heap_d[parent], heap_d[i] = heap_d[i], heap_d[parent]
        heap_v[parent], heap_v[i] = heap_v[i], heap_v[parent]
        i = parent
    return size + 1


@maybe_njit()
def _heap_pop(heap_d, heap_v, size):
    top_d = heap_d[0]
    top_v = heap_v[0]
    size -= 1
    heap_d[0] = heap_d[size]
    heap_v[0] = heap_v[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and heap_d[right] < heap_d[left]:
            child = right
        if heap_d[i] <= heap_d[child]:
            break
        heap_d[i], heap_d[child] = heap_d[child], heap_d[i]
        heap_v[i], heap_v[child] = heap_v[child], heap_v[i]
        i = child
    return size, top_d, top_v


@maybe_njit()
def dijkstra_grid(cost, sr, sc, tr, tc):
    """Shortest arrival times from (sr, sc) over an 8-connected cost grid.

    ``cost`` holds per-cell traversal seconds (inf = impassable).  An edge
    a->b costs 0.5*(cost[a]+cost[b]) times sqrt(2) on diagonals; if the
    source cell itself is impassable (a stranded vehicle), leaving it pays
    the destination cell's full cost instead.  Pass ``tr = tc = -1`` for a
    full field, or a target cell to stop early.

    Returns (dist, pred) where pred holds flat predecessor indices (-1 at
    the source and at unreached cells).
    """
    n_rows, n_cols = cost.shape
    n_cells = n_rows * n_cols
    dist = np.full(n_cells, np.inf)
    pred = np.full(n_cells, -1, dtype=np.int64)
    heap_d = np.empty(8 * n_cells + 8, dtype=np.float64)
    heap_v = np.empty(8 * n_cells + 8, dtype=np.int64)

    src = sr * n_cols + sc
    target = tr * n_cols + tc if tr >= 0 else -1
    dist[src] = 0.0
    size = _heap_push(heap_d, heap_v, 0, 0.0, src)
    while size > 0:
        size, d, node = _heap_pop(heap_d, heap_v, size)
        if d > dist[node]:
            continue
        if node == target:
            break
        r = node // n_cols
        c = node % n_cols
        ca = cost[r, c]
        for k in range(8):
            nr = r + _DR[k]
            nc = c + _DC[k]
            if nr < 0 or nr >= n_rows or nc < 0 or nc >= n_cols:
                continue
            cb = cost[nr, nc]
            if not np.isfinite(cb):
                continue
            half = cb if not np.isfinite(ca) else 0.5 * (ca + cb)
            nd = d + half * _DMULT[k]
            nxt = nr * n_cols + nc
            if nd < dist[nxt]:
                dist[nxt] = nd
                pred[nxt] = node
                size = _heap_push(heap_d, heap_v, size, nd, nxt)
    return dist.reshape(n_rows, n_cols), pred.reshape(n_rows, n_cols)


@maybe_njit()
def dijkstra_field(cost, sr, sc):
    """Distance field only (no early exit)."""
    dist, _ = dijkstra_grid(cost, sr, sc, -1, -1)
    return dist


@maybe_njit(parallel=True)
def source_fields(cost, rows, cols):
    """Stack of dijkstra fields for many sources (parallel over sources)."""
    m = rows.shape[0]
    out = np.empty((m, cost.shape[0], cost.shape[1]))
    for i in prange(m):
        out[i] = dijkstra_field(cost, rows[i], cols[i])
    return out


@maybe_njit()
def build_tours(vdist, dmat_ground, dmat_drone, vscale, vdrone, target_zone, n_zones):
    """Nearest-neighbor visiting tours for every (vehicle, zone) pair.

    ``vdist[v, t]`` is vehicle v's travel seconds to target t (already inf
    for unreachable).  ``dmat_*[i, j]`` are target-to-target seconds at
    reference speed; each leg is scaled by ``vscale[v]``.  Unreachable
    targets are skipped.  Returns CSR-style arrays: ``tour_start`` of length
    V*K+1 and flat (target index, cumulative arrival seconds) entries.
    """
    n_vehicles = vdist.shape[0]
    n_targets = vdist.shape[1]
    tour_start = np.zeros(n_vehicles * n_zones + 1, dtype=np.int64)
    cap = n_vehicles * n_targets
    tour_tgt = np.empty(cap, dtype=np.int64)
    tour_t = np.empty(cap, dtype=np.float64)
    visited = np.empty(n_targets, dtype=np.bool_)
    pos = 0
    for v in range(n_vehicles):
        for z in range(n_zones):
            for t in range(n_targets):
                visited[t] = target_zone[t] != z
            elapsed = 0.0
            at_vehicle = True
            cur = -1
            while True:
                best_t = -1
                best_d = np.inf
                for t in range(n_targets):
                    if visited[t]:
                        continue
                    if at_vehicle:
                        d = vdist[v, t]
                    elif vdrone[v]:
                        d = dmat_drone[cur, t] * vscale[v]
                    else:
                        d = dmat_ground[cur, t] * vscale[v]
                    if d < best_d:
                        best_d = d
                        best_t = t
                if best_t < 0 or not np.isfinite(best_d):
                    break
                elapsed += best_d
                visited[best_t] = True
                tour_tgt[pos] = best_t
                tour_t[pos] = elapsed
                pos += 1
                cur = best_t
                at_vehicle = False
            tour_start[v * n_zones + z + 1] = pos
    return tour_start, tour_tgt[:pos].copy(), tour_t[:pos].copy()


@maybe_njit(inline="always", cache=False)
def _decode_assignment(x, v, n_zones, idle_threshold, tour_start):
    """Zone index for vehicle v under the random-key argmax rule, -1 = idle."""
    base = v * n_zones
    best_k = 0
    best_key = x[base]
    for k in range(1, n_zones):
        if x[base + k] > best_key:
            best_key = x[base + k]
            best_k = k
    if best_key < idle_threshold:
        return -1
    if tour_start[v * n_zones + best_k] == tour_start[v * n_zones + best_k + 1]:
        return -1  # zone unreachable for this vehicle: repaired to idle
    return best_k


@maybe_njit(cache=False)
def eval_keys(
    x,
    n_vehicles,
    n_zones,
    idle_threshold,
    tour_start,
    tour_tgt,
    tour_t,
    target_zone,
    target_w,
    severity,
    sev_denom,
    horizon_s,
    w_time,
    w_cov,
):
    """Objective of one random-key vector (lower is better, in [0, 1]).

    f = w_time * T_norm + w_cov * (1 - C_sev) with T_norm the mean predicted
    first-reach time over reached targets divided by the horizon (1 when
    nothing is reached) and C_sev the severity-weighted fraction of target
    mass reached within the horizon.
    """
    n_targets = target_zone.shape[0]
    best = np.full(n_targets, np.inf)
    for v in range(n_vehicles):
        z = _decode_assignment(x, v, n_zones, idle_threshold, tour_start)
        if z < 0:
            continue
        s = tour_start[v * n_zones + z]
        e = tour_start[v * n_zones + z + 1]
        for i in range(s, e):
            t = tour_t[i]
            if t > horizon_s:
                break  # arrivals are cumulative, later stops only get worse
            tg = tour_tgt[i]
            if t < best[tg]:
                best[tg] = t
    covered = 0.0
    time_sum = 0.0
    n_reached = 0
    for t in range(n_targets):
        if np.isfinite(best[t]):
            covered += severity[target_zone[t]] * target_w[t]
            time_sum += best[t]
            n_reached += 1
    c_sev = covered / sev_denom if sev_denom > 0.0 else 0.0
    if n_reached == 0:
        t_norm = 1.0
    else:
        t_norm = time_sum / n_reached / horizon_s
        if t_norm > 1.0:
            t_norm = 1.0
    return w_time * t_norm + w_cov * (1.0 - c_sev)


@maybe_njit(parallel=True)
def eval_keys_batch(
    xs,
    n_vehicles,
    n_zones,
    idle_threshold,
    tour_start,
    tour_tgt,
    tour_t,
    target_zone,
    target_w,
    severity,
    sev_denom,
    horizon_s,
    w_time,
    w_cov,
):
    n = xs.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = eval_keys(
            xs[i],
            n_vehicles,
            n_zones,
            idle_threshold,
            tour_start,
            tour_tgt,
            tour_t,
            target_zone,
            target_w,
            severity,
            sev_denom,
            horizon_s,
            w_time,
            w_cov,
        )
    return out


@maybe_njit(parallel=True)
def pso_run(
    seed,
    n_particles,
    iterations,
    omega,
    c1,
    c2,
    velocity_clamp,
    n_vehicles,
    n_zones,
    idle_threshold,
    tour_start,
    tour_tgt,
    tour_t,
    target_zone,
    target_w,
    severity,
    sev_denom,
    horizon_s,
    w_time,
    w_cov,
):
    """Full synchronous-gbest PSO run over the random-key encoding.

    Positions start uniform on [0,1]^D with zero velocities.  Every particle
    in an iteration sees the previous iteration's gbest; the gbest reduction
    is a sequential fold in particle-index order, so results do not depend
    on thread count.  Returns (gbest position, per-iteration gbest trace of
    length iterations+1).
    """
    dim = n_vehicles * n_zones + n_zones
    xs = np.empty((n_particles, dim))
    vs = np.zeros((n_particles, dim))
    pbest = np.empty((n_particles, dim))
    pbest_f = np.empty(n_particles)
    for p in prange(n_particles):
        for d in range(dim):
            xs[p, d] = u01(seed, p * dim + d)
            pbest[p, d] = xs[p, d]
        pbest_f[p] = eval_keys(
            xs[p], n_vehicles, n_zones, idle_threshold, tour_start, tour_tgt,
            tour_t, target_zone, target_w, severity, sev_denom, horizon_s,
            w_time, w_cov,
        )
    gbest_i = 0
    for p in range(1, n_particles):
        if pbest_f[p] < pbest_f[gbest_i]:
            gbest_i = p
    gbest = pbest[gbest_i].copy()
    gbest_f = pbest_f[gbest_i]
    trace = np.empty(iterations + 1)
    trace[0] = gbest_f

    ctr0 = n_particles * dim
    for it in range(iterations):
        for p in prange(n_particles):
            base = ctr0 + (it * n_particles + p) * dim
            for d in range(dim):
                r1, r2 = u01_pair(seed, base + d)
                vel = (
                    omega * vs[p, d]
                    + c1 * r1 * (pbest[p, d] - xs[p, d])
                    + c2 * r2 * (gbest[d] - xs[p, d])
                )
                if vel > velocity_clamp:
                    vel = velocity_clamp
                elif vel < -velocity_clamp:
                    vel = -velocity_clamp
                vs[p, d] = vel
                pos = xs[p, d] + vel
                if pos < 0.0:
                    pos = 0.0
                elif pos > 1.0:
                    pos = 1.0
                xs[p, d] = pos
            f = eval_keys(
                xs[p], n_vehicles, n_zones, idle_threshold, tour_start,
                tour_tgt, tour_t, target_zone, target_w, severity, sev_denom,
                horizon_s, w_time, w_cov,
            )
            if f < pbest_f[p]:
                pbest_f[p] = f
                for d in range(dim):
                    pbest[p, d] = xs[p, d]
        for p in range(n_particles):
            if pbest_f[p] < gbest_f:
                gbest_f = pbest_f[p]
                for d in range(dim):
                    gbest[d] = pbest[p, d]
        trace[it + 1] = gbest_f
    return gbest, trace


_warmed = False


def warmup():
    """Compile (or load from cache) every kernel on tiny inputs.

    Call once before timing anything; decision latencies would otherwise
    include one-off JIT costs on the first planning cycle.
    """
    global _warmed
    if _warmed:
        return
    cost = np.ones((4, 4))
    dijkstra_grid(cost, 0, 0, 3, 3)
    source_fields(cost, np.array([0, 1]), np.array([0, 1]))
    target_zone = np.zeros(2, dtype=np.int64)
    vdist = np.ones((2, 2))
    dmat = np.ones((2, 2))
    ts, tt, ta = build_tours(vdist, dmat, dmat, np.ones(2), np.zeros(2, np.bool_), target_zone, 1)
    args = (2, 1, 0.05, ts, tt, ta, target_zone, np.ones(2), np.ones(1), 2.0, 100.0, 0.5, 0.5)
    eval_keys(np.full(3, 0.5), *args)
    eval_keys_batch(np.full((2, 3), 0.5), *args)
    pso_run(np.uint64(1), 2, 2, 0.7, 2.0, 2.0, 0.25, *args)
    sa_run(np.uint64(1), 4, 0.1, 1, 1.0, 1e-3, 2, *args)
    _warmed = True


@maybe_njit()
def sa_run(
    seed,
    steps,
    sigma,
    perturb_count,
    t_initial,
    t_final,
    trace_every,
    n_vehicles,
    n_zones,
    idle_threshold,
    tour_start,
    tour_tgt,
    tour_t,
    target_zone,
    target_w,
    severity,
    sev_denom,
    horizon_s,
    w_time,
    w_cov,
):
    """Single-chain simulated annealing over the same random-key encoding.

    Neighbor: Gaussian(sigma) perturbation of ``perturb_count`` randomly
    chosen dimensions, clipped to [0,1].  Acceptance exp(-delta/T) with a
    geometric schedule from t_initial to t_final over ``steps`` evaluations.
    Inherently sequential.  Returns (best position, best-so-far trace
    sampled every ``trace_every`` steps, including the initial point).
    """
    dim = n_vehicles * n_zones + n_zones
    x = np.empty(dim)
    for d in range(dim):
        x[d] = u01(seed, d)
    f_cur = eval_keys(
        x, n_vehicles, n_zones, idle_threshold, tour_start, tour_tgt, tour_t,
        target_zone, target_w, severity, sev_denom, horizon_s, w_time, w_cov,
    )
    best = x.copy()
    best_f = f_cur
    trace = np.empty(steps // trace_every + 1)
    trace[0] = best_f

    alpha = (t_final / t_initial) ** (1.0 / steps) if steps > 0 else 1.0
    temp = t_initial
    dims = np.empty(perturb_count, dtype=np.int64)
    saved = np.empty(perturb_count)
    stride = 3 * perturb_count + 1
    for step in range(steps):
        base = dim + step * stride
        for j in range(perturb_count):
            d = int(u01(seed, base + j) * dim)
            if d >= dim:
                d = dim - 1
            dims[j] = d
            saved[j] = x[d]
            u1 = u01(seed, base + perturb_count + 2 * j)
            u2 = u01(seed, base + perturb_count + 2 * j + 1)
            if u1 < 1e-300:
                u1 = 1e-300
            gauss = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
            val = x[d] + sigma * gauss
            if val < 0.0:
                val = 0.0
            elif val > 1.0:
                val = 1.0
            x[d] = val
        f_new = eval_keys(
            x, n_vehicles, n_zones, idle_threshold, tour_start, tour_tgt,
            tour_t, target_zone, target_w, severity, sev_denom, horizon_s,
            w_time, w_cov,
        )
        delta = f_new - f_cur
        accept = delta < 0.0
        if not accept:
            accept = u01(seed, base + 3 * perturb_count) < math.exp(-delta / temp)
        if accept:
            f_cur = f_new
            if f_new < best_f:
                best_f = f_new
                for d in range(dim):
                    best[d] = x[d]
        else:
            for j in range(perturb_count - 1, -1, -1):
                x[dims[j]] = saved[j]
        temp *= alpha
        if (step + 1) % trace_every == 0:
            trace[(step + 1) // trace_every] = best_f
    return best, trace
