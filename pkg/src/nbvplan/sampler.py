"""Filtered viewpoint sampling around the current camera position.

Each planning step draws N_loc candidate locations from Empty space inside
a radius-l_s ball, attaches N_yaw x N_pitch direction candidates to each,
prunes directions with a cheap TSDF view cost (fraction of visible
Unobserved frustum voxels), and evaluates the expensive ray-integrated
gain only for the three best directions per location. The best direction
survives, and the per-location gains are min-max normalized to [0, 1].

Cheap and expensive evaluation counts are recorded so the filter's
cost saving is auditable. Set NBV_THREADS > 1 to fan per-location
evaluation out over a thread pool (results are merged by location index,
so the output is identical to the serial path).
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gain_field import UncertaintyField, evaluate_viewpoint
from .scene_sim import SceneConfig, Viewpoint, camera_basis
from .voxel_map import OccupancyLabel, VoxelMap

FILTER_KEEP = 3  # directions surviving the cheap cost per location


class SamplingError(RuntimeError):
    """Free-space sampling failed (space too constrained)."""


@dataclass
class GainSampleSet:
    """Sampled viewpoint positions with raw and normalized gains."""

    positions: np.ndarray          # (n, 3)
    yaws: np.ndarray               # (n,)
    pitches: np.ndarray            # (n,)
    raw_gains: np.ndarray          # (n,)
    gains: np.ndarray              # (n,) normalized to [0, 1]
    center: np.ndarray             # sampling ball center p_s
    radius: float                  # sampling ball radius l_s
    cheap_evals: int = 0
    expensive_evals: int = 0

    def __len__(self) -> int:
        return self.positions.shape[0]

    def viewpoint(self, i: int) -> Viewpoint:
        return Viewpoint(self.positions[i], self.yaws[i], self.pitches[i])

    def to_json(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "yaws": self.yaws.tolist(),
            "pitches": self.pitches.tolist(),
            "raw_gains": self.raw_gains.tolist(),
            "gains": self.gains.tolist(),
            "center": self.center.tolist(),
            "radius": self.radius,
            "cheap_evals": self.cheap_evals,
            "expensive_evals": self.expensive_evals,
        }

    @classmethod
    def from_json(cls, data: dict) -> "GainSampleSet":
        return cls(
            positions=np.asarray(data["positions"], dtype=float),
            yaws=np.asarray(data["yaws"], dtype=float),
            pitches=np.asarray(data["pitches"], dtype=float),
            raw_gains=np.asarray(data["raw_gains"], dtype=float),
            gains=np.asarray(data["gains"], dtype=float),
            center=np.asarray(data["center"], dtype=float),
            radius=float(data["radius"]),
            cheap_evals=int(data["cheap_evals"]),
            expensive_evals=int(data["expensive_evals"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def sample_locations(voxmap: VoxelMap, p_s, l_s: float, n_loc: int,
                     rng_seed) -> np.ndarray:
    """Draw n_loc positions uniformly from the Empty ball around p_s.

    Rejection-samples until each candidate sits in an Empty voxel and the
    straight segment from p_s is collision free. Raises SamplingError
    after 100 * n_loc rejections.
    """
    p_s = np.asarray(p_s, dtype=float)
    if voxmap.occupancy(p_s) != OccupancyLabel.EMPTY:
        raise SamplingError("current position is not in Empty space")
    rng = np.random.default_rng(rng_seed)
    out = []
    rejections = 0
    budget = 100 * n_loc
    while len(out) < n_loc:
        d = rng.standard_normal(3)
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            continue
        r = l_s * rng.uniform() ** (1.0 / 3.0)   # uniform density in the ball
        p = p_s + d / norm * r
        if voxmap.occupancy(p) == OccupancyLabel.EMPTY and voxmap.is_path_free(p_s, p):
            out.append(p)
        else:
            rejections += 1
            if rejections > budget:
                raise SamplingError(
                    f"gave up after {rejections} rejections for {n_loc} locations")
    return np.array(out)


def direction_candidates(cfg: SceneConfig) -> np.ndarray:
    """(N_yaw * N_pitch, 2) array of (yaw, pitch) candidates.

    Yaw covers [0, 2pi) uniformly; pitch covers [-pi/4, +pi/4] uniformly
    (a single pitch collapses to 0).
    """
    yaws = np.arange(cfg.n_yaw) * (2.0 * np.pi / cfg.n_yaw)
    if cfg.n_pitch == 1:
        pitches = np.array([0.0])
    else:
        pitches = np.linspace(-np.pi / 4, np.pi / 4, cfg.n_pitch)
    pairs = [(y, p) for p in pitches for y in yaws]
    return np.array(pairs)


def _unobserved_visibility(voxmap: VoxelMap, position, cfg: SceneConfig):
    """Shared per-location geometry for the cheap view cost.

    Returns (delta, ray_range, in_range mask, visible-unobserved mask) over
    all voxel centers; direction-independent, so one computation serves
    every direction candidate at this location.
    """
    centers = voxmap.voxel_centers()
    delta = centers - np.asarray(position, dtype=float)[None, :]
    ray_range = np.linalg.norm(delta, axis=1)
    in_range = (ray_range >= cfg.d_n) & (ray_range <= cfg.d_f)
    unobserved = voxmap.labels.reshape(-1) == OccupancyLabel.UNOBSERVED
    candidates = np.flatnonzero(in_range & unobserved)
    visible = np.zeros(centers.shape[0], dtype=bool)
    if candidates.size:
        idx3 = np.stack(np.unravel_index(candidates, voxmap.dims), axis=1)
        visible[candidates] = voxmap.visible_mask(position, idx3)
    return delta, ray_range, in_range, visible


def _frustum_mask(delta, v: Viewpoint, cfg: SceneConfig):
    forward, right, up = camera_basis(v)
    z = delta @ forward
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (delta @ right) / (z * cfg.tan_half_h)
        w = -(delta @ up) / (z * cfg.tan_half_v)
    return (z > 0.0) & (np.abs(u) <= 1.0) & (np.abs(w) <= 1.0)


def tsdf_view_cost(voxmap: VoxelMap, v: Viewpoint, cfg: SceneConfig,
                   _shared=None) -> float:
    """Fraction of frustum voxels in [d_n, d_f] that are visibly Unobserved.

    Higher is better: the score rewards directions that would observe new
    space. Visibility walks the line of sight and requires no Occupied
    voxel before the candidate.
    """
    if _shared is None:
        _shared = _unobserved_visibility(voxmap, v.position, cfg)
    delta, ray_range, in_range, visible = _shared
    frustum = _frustum_mask(delta, v, cfg) & in_range
    total = int(np.count_nonzero(frustum))
    if total == 0:
        return 0.0
    return float(np.count_nonzero(frustum & visible)) / total


def _evaluate_location(voxmap, fld, cfg, dirs, position, use_filter):
    """Pick the best direction at one location; returns

    (yaw, pitch, gain, cheap_evals, expensive_evals)."""
    cheap = 0
    expensive = 0
    if use_filter:
        shared = _unobserved_visibility(voxmap, position, cfg)
        scores = np.empty(len(dirs))
        for k, (yaw, pitch) in enumerate(dirs):
            scores[k] = tsdf_view_cost(
                voxmap, Viewpoint(position, yaw, pitch), cfg, _shared=shared)
        cheap += len(dirs)
        keep = np.argsort(-scores, kind="stable")[:FILTER_KEEP]
    else:
        keep = np.arange(len(dirs))
    best_gain = -1.0
    best_dir = dirs[0]
    for k in keep:
        yaw, pitch = dirs[k]
        g = evaluate_viewpoint(fld, voxmap, Viewpoint(position, yaw, pitch), cfg)
        expensive += 1
        if g.gain > best_gain:
            best_gain = g.gain
            best_dir = (yaw, pitch)
    return best_dir[0], best_dir[1], best_gain, cheap, expensive


def normalize_gains(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a flat set maps to all zeros."""
    raw = np.asarray(raw, dtype=float)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0.0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def select_views(voxmap: VoxelMap, fld: UncertaintyField, p_s, cfg: SceneConfig,
                 rng_seed, use_filter: bool = True,
                 n_loc: int | None = None) -> GainSampleSet:
    """Three-step sampling and filtering producing the gain sample set.

    With the filter on, exactly FILTER_KEEP expensive gain evaluations run
    per location; with it off, every direction candidate is evaluated
    expensively.
    """
    n_loc = n_loc if n_loc is not None else cfg.n_loc
    p_s = np.asarray(p_s, dtype=float)
    positions = sample_locations(voxmap, p_s, cfg.l_s, n_loc, rng_seed)
    dirs = direction_candidates(cfg)

    threads = int(os.environ.get("NBV_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda p: _evaluate_location(voxmap, fld, cfg, dirs, p, use_filter),
                positions))
    else:
        results = [_evaluate_location(voxmap, fld, cfg, dirs, p, use_filter)
                   for p in positions]

    yaws = np.array([r[0] for r in results])
    pitches = np.array([r[1] for r in results])
    raw = np.array([r[2] for r in results])
    cheap = sum(r[3] for r in results)
    expensive = sum(r[4] for r in results)
    return GainSampleSet(
        positions=positions, yaws=yaws, pitches=pitches,
        raw_gains=raw, gains=normalize_gains(raw),
        center=p_s, radius=cfg.l_s,
        cheap_evals=cheap, expensive_evals=expensive)
