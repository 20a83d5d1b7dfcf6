"""Sensing and priority extraction: the deterministic stand-in for a learned
perception stage.

The world grid is resampled to a fixed 256x256 observation raster with three
channels (hazard intensity, survivor density, infrastructure), corrupted by
Gaussian noise, imperfect recall, and false positives.  A priority map is a
weighted channel mix smoothed by a normalized kernel and min-max scaled;
zones are its super-threshold connected components.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .dynamics import FIRE_BURNED, FIRE_BURNING, WorldState
from .errors import ConfigError
from .scenario import HAZARD_FLOOD, ScenarioSpec

OBS_RES = 256
CH_HAZARD, CH_SURVIVOR, CH_INFRA = 0, 1, 2
BURNED_INTENSITY = 0.4  # burned-out cells still read as hazardous, scaled down

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SensorParams:
    hazard_noise_sigma: float = 0.05
    survivor_recall: float = 0.9
    false_positive_rate: float = 2e-5  # per observation pixel

    def validate(self):
        if self.hazard_noise_sigma < 0:
            raise ConfigError(f"hazard_noise_sigma must be >= 0, got {self.hazard_noise_sigma}")
        if not 0.0 <= self.survivor_recall <= 1.0:
            raise ConfigError(f"survivor_recall must be in [0,1], got {self.survivor_recall}")
        if not 0.0 <= self.false_positive_rate <= 1.0:
            raise ConfigError(f"false_positive_rate must be in [0,1], got {self.false_positive_rate}")


@dataclass(frozen=True)
class PerceptionConfig:
    kernel_width: int = 5
    weight_hazard: float = 0.5
    weight_survivor: float = 0.4
    weight_infrastructure: float = 0.1
    threshold: float = 0.3
    max_zones: int = 32

    def validate(self):
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel_width must be odd and >= 1, got {self.kernel_width}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0,1), got {self.threshold}")
        if self.max_zones < 1:
            raise ConfigError(f"max_zones must be >= 1, got {self.max_zones}")
        for name in ("weight_hazard", "weight_survivor", "weight_infrastructure"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class Observation:
    raster: np.ndarray           # (256, 256, 3) float
    detections: np.ndarray       # (k, 3): pixel row, pixel col, group size
    sensor_readings: np.ndarray  # (16,) regional hazard means
    tick: int


@dataclass
class PriorityMap:
    values: np.ndarray  # (256, 256) in [0, 1]


@dataclass
class Zone:
    id: int
    member_pixels: np.ndarray     # (m, 2) int
    centroid_pixel: tuple         # float (row, col) in observation space
    centroid_cell: tuple          # world cell
    severity: float               # sum of member pixel priorities
    estimated_survivors: float = 0.0
    target_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    target_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))


def resample_bilinear(fieldv: np.ndarray, out_res: int = OBS_RES) -> np.ndarray:
    """Bilinear resample of a square field to out_res x out_res."""
    n = fieldv.shape[0]
    coords = (np.arange(out_res) + 0.5) * (n / out_res) - 0.5
    i0 = np.floor(coords).astype(int)
    frac = coords - i0
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    fr, fc = frac[:, None], frac[None, :]
    return (
        fieldv[np.ix_(lo, lo)] * (1 - fr) * (1 - fc)
        + fieldv[np.ix_(hi, lo)] * fr * (1 - fc)
        + fieldv[np.ix_(lo, hi)] * (1 - fr) * fc
        + fieldv[np.ix_(hi, hi)] * fr * fc
    )


def resample_nearest(mask: np.ndarray, out_res: int = OBS_RES) -> np.ndarray:
    """Nearest-cell resample (max-pool behaviour when downsampling booleans)."""
    n = mask.shape[0]
    if n > out_res:
        # true downsampling: any-set pooling over covered source cells
        edges = np.floor((np.arange(out_res + 1)) * (n / out_res)).astype(int)
        out = np.zeros((out_res, out_res), dtype=mask.dtype)
        for i in range(out_res):
            rows = mask[edges[i]:max(edges[i] + 1, edges[i + 1])]
            for j in range(out_res):
                blk = rows[:, edges[j]:max(edges[j] + 1, edges[j + 1])]
                out[i, j] = blk.max()
        return out
    coords = (np.arange(out_res) + 0.5) * (n / out_res) - 0.5
    idx = np.clip(np.round(coords).astype(int), 0, n - 1)
    return mask[np.ix_(idx, idx)]


def world_to_pixel(cells: np.ndarray, world_side: int, out_res: int = OBS_RES) -> np.ndarray:
    cells = np.asarray(cells, dtype=np.float64)
    p = np.round((cells + 0.5) * (out_res / world_side) - 0.5)
    return np.clip(p, 0, out_res - 1).astype(np.int64)


def pixel_to_world(pixels: np.ndarray, world_side: int, out_res: int = OBS_RES) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    c = np.round((pixels + 0.5) * (world_side / out_res) - 0.5)
    return np.clip(c, 0, world_side - 1).astype(np.int64)


def observe(world: WorldState, spec: ScenarioSpec, params: SensorParams,
            rng: np.random.Generator) -> Observation:
    """Noisy 256x256 snapshot of the current world.

    Only unreached survivor groups can be detected; recall draws are made
    for every group each call so the stream advances identically regardless
    of episode progress (keeps paired policy comparisons aligned).
    """
    n = spec.grid.side_cells
    if world.hazard_kind == HAZARD_FLOOD:
        hazard_field = world.water_depth
    else:
        hazard_field = np.where(
            world.fire_state == FIRE_BURNING, 1.0,
            np.where(world.fire_state == FIRE_BURNED, BURNED_INTENSITY, 0.0),
        )
    hz = resample_bilinear(hazard_field)
    hz = hz + params.hazard_noise_sigma * rng.standard_normal((OBS_RES, OBS_RES))

    surv = np.zeros((OBS_RES, OBS_RES))
    det_rows = []
    n_groups = len(spec.survivors)
    u = rng.random(n_groups)
    if n_groups:
        cells = np.array([s.cell for s in spec.survivors], dtype=np.int64)
        pix = world_to_pixel(cells, n)
        for g in range(n_groups):
            if world.reached[g] or u[g] >= params.survivor_recall:
                continue
            size = spec.survivors[g].size
            surv[pix[g, 0], pix[g, 1]] += size
            det_rows.append((pix[g, 0], pix[g, 1], float(size)))

    lam = params.false_positive_rate * OBS_RES * OBS_RES
    k_fp = int(rng.poisson(lam))
    if k_fp > 0:
        fp_pix = rng.integers(0, OBS_RES, (k_fp, 2))
        fp_sizes = rng.integers(1, 16, k_fp)
        for i in range(k_fp):
            surv[fp_pix[i, 0], fp_pix[i, 1]] += fp_sizes[i]
            det_rows.append((fp_pix[i, 0], fp_pix[i, 1], float(fp_sizes[i])))

    infra = resample_nearest(spec.terrain.road).astype(np.float64)
    for d in spec.depots:
        pr, pc = world_to_pixel(np.array([d.cell]), n)[0]
        infra[pr, pc] = 1.0

    readings = hz.reshape(4, 64, 4, 64).mean(axis=(1, 3)).ravel()
    raster = np.stack([hz, surv, infra], axis=-1)
    detections = np.array(det_rows, dtype=np.float64).reshape(-1, 3)
    return Observation(raster=raster, detections=detections,
                       sensor_readings=readings, tick=world.tick)


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi > lo:
        return (a - lo) / (hi - lo)
    return np.clip(a, 0.0, 1.0)


def extract_priority_map(obs: Observation, cfg: PerceptionConfig = PerceptionConfig()) -> PriorityMap:
    """Weighted channel mix, normalized peaked smoothing, then min-max scale."""
    combined = (
        cfg.weight_hazard * _minmax(obs.raster[:, :, CH_HAZARD])
        + cfg.weight_survivor * _minmax(obs.raster[:, :, CH_SURVIVOR])
        + cfg.weight_infrastructure * _minmax(obs.raster[:, :, CH_INFRA])
    )
    radius = (cfg.kernel_width - 1) // 2
    if radius > 0:
        sigma = cfg.kernel_width / 4.0
        combined = ndimage.gaussian_filter(combined, sigma=sigma,
                                           truncate=radius / sigma, mode="nearest")
    return PriorityMap(values=_minmax(combined))


def segment_zones(pmap: PriorityMap, threshold: float = 0.3, max_zones: int = 32,
                  world_side: int = 50) -> list:
    """Connected components (8-connectivity) above threshold, by falling severity.

    At most max_zones are kept (the highest-severity ones); ids are assigned
    in severity order.
    """
    mask = pmap.values > threshold
    labels, n_lab = ndimage.label(mask, structure=_EIGHT)
    if n_lab == 0:
        return []
    sev = np.bincount(labels[mask], weights=pmap.values[mask], minlength=n_lab + 1)[1:]
    keep = np.argsort(-sev, kind="stable")[:max_zones]

    flat_idx = np.flatnonzero(mask.ravel())
    lab_flat = labels.ravel()[flat_idx]
    order = np.argsort(lab_flat, kind="stable")
    sorted_idx, sorted_lab = flat_idx[order], lab_flat[order]
    starts = np.searchsorted(sorted_lab, np.arange(1, n_lab + 2))

    zones = []
    for new_id, li in enumerate(keep):
        lab = li + 1
        seg = sorted_idx[starts[lab - 1]:starts[lab]]
        pix = np.stack([seg // OBS_RES, seg % OBS_RES], axis=1)
        cp = pix.mean(axis=0)
        cc = pixel_to_world(cp[None, :], world_side)[0]
        zones.append(Zone(
            id=new_id,
            member_pixels=pix,
            centroid_pixel=(float(cp[0]), float(cp[1])),
            centroid_cell=(int(cc[0]), int(cc[1])),
            severity=float(sev[li]),
        ))
    return zones


def attach_detections(zones: list, detections: np.ndarray, world_side: int) -> list:
    """Associate every detection with a zone (its component, else the nearest).

    Zones keep their member pixels and severities; this only fills the
    per-zone target lists (world cells, merged by cell) and survivor counts.
    """
    if not zones:
        return zones
    owner = np.full((OBS_RES, OBS_RES), -1, dtype=np.int32)
    for z in zones:
        owner[z.member_pixels[:, 0], z.member_pixels[:, 1]] = z.id
    centroids = np.array([z.centroid_pixel for z in zones])

    per_zone = {z.id: {} for z in zones}
    for pr, pc, size in detections:
        pr_i, pc_i = int(pr), int(pc)
        zid = owner[pr_i, pc_i]
        if zid < 0:
            d = np.abs(centroids - np.array([pr, pc])).max(axis=1)
            zid = int(np.argmin(d))
        cell = tuple(pixel_to_world(np.array([[pr_i, pc_i]]), world_side)[0])
        per_zone[zid][cell] = per_zone[zid].get(cell, 0.0) + size

    out = []
    for z in zones:
        cells = sorted(per_zone[z.id].keys())
        sizes = np.array([per_zone[z.id][c] for c in cells])
        out.append(replace(
            z,
            target_cells=np.array(cells, dtype=np.int64).reshape(-1, 2),
            target_sizes=sizes,
            estimated_survivors=float(sizes.sum()),
        ))
    return out


def write_grid_text(path, values: np.ndarray):
    """Row-major numeric grid, one row per line (the heatmap export format)."""
    with open(path, "w") as f:
        for row in values:
            f.write(" ".join(format(v, ".8g") for v in row))
            f.write("\n")


def read_grid_text(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


def write_pgm(path, values: np.ndarray):
    """8-bit portable graymap of a [0,1] field."""
    scaled = np.clip(np.round(values * 255), 0, 255).astype(int)
    with open(path, "w") as f:
        f.write(f"P2\n{values.shape[1]} {values.shape[0]}\n255\n")
        for row in scaled:
            f.write(" ".join(str(v) for v in row))
            f.write("\n")
