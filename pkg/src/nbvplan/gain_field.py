"""Surrogate uncertainty field and per-viewpoint information gain.

The per-point uncertainty stands in for a learned radiance-model variance:
each voxel carries sigma^2 = 1 / (1 + n_obs), so unseen space holds maximal
uncertainty and repeated observation decays it deterministically.

A viewpoint's uncertainty integrates the field over its frustum: R rays on
a uniform pixel sub-grid, N samples per ray spread over the sensor range
[d_n, d_f], each sample weighted by hit-and-stop transmittance derived
from the occupancy map (a sample in an Occupied or Unobserved voxel
absorbs the remaining weight; everything behind it contributes nothing).

    sigma_v^2 = (1/R) * sum_r sum_i W_ri * sigma_ri^2,   W_ri = T_i * alpha_i

The viewpoint gain then decays the integrated uncertainty when the mean
surface distance d_v leaves the preferred depth band [d_min, d_max]:

    I_v = sigma_v^2                                  if d_min < d_v < d_max
    I_v = exp(-|alpha| * |d_v - d_u|) * sigma_v^2     otherwise

with d_u = (d_min + d_max) / 2 and |alpha| = 2 / (d_max - d_min). The decay
factor is applied with positive magnitude so out-of-band viewpoints are
always penalized. Rays with no inferable surface depth are excluded from
d_v; if none remain, d_v falls back to the far field d_f.
"""

from dataclasses import dataclass

import json

import numpy as np

from .scene_sim import SceneConfig, Viewpoint, camera_basis
from .voxel_map import OccupancyLabel, VoxelMap


@dataclass
class ViewpointGain:
    """Gain evaluation summary for one viewpoint."""

    sigma_v2: float
    view_depth: float | None   # None means no ray produced a valid depth
    gain: float


class UncertaintyField:
    """Voxel-aligned sigma^2 grid in [0, 1], matching a VoxelMap geometry."""

    def __init__(self, voxmap: VoxelMap):
        self.origin = voxmap.origin.copy()
        self.dims = voxmap.dims
        self.resolution = voxmap.resolution
        self.values = np.ones(self.dims, dtype=np.float64)

    def check_geometry(self, voxmap: VoxelMap) -> None:
        if (self.dims != voxmap.dims or self.resolution != voxmap.resolution
                or not np.allclose(self.origin, voxmap.origin)):
            raise ValueError("field and map grids do not match")

    def value_at(self, x) -> float:
        idx = np.floor((np.asarray(x, dtype=float) - self.origin)
                       / self.resolution).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.array(self.dims)):
            return 0.0  # outside the bounded target scene: nothing to learn
        return float(self.values[tuple(idx)])

    def snapshot(self) -> "UncertaintyField":
        f = UncertaintyField.__new__(UncertaintyField)
        f.origin = self.origin.copy()
        f.dims = self.dims
        f.resolution = self.resolution
        f.values = self.values.copy()
        return f

    def dump_slices_json(self, path) -> None:
        """Write the grid as per-z JSON slices for plotting scripts."""
        payload = {
            "origin": self.origin.tolist(),
            "dims": list(self.dims),
            "resolution": self.resolution,
            "slices": [self.values[:, :, k].tolist() for k in range(self.dims[2])],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def decay_uncertainty(field: UncertaintyField, voxmap: VoxelMap) -> UncertaintyField:
    """Refresh sigma^2 = 1 / (1 + n_obs) from the map's observation counts."""
    field.check_geometry(voxmap)
    field.values = 1.0 / (1.0 + voxmap.counts.astype(np.float64))
    return field


def gain_ray_directions(v: Viewpoint, cfg: SceneConfig, rays: int) -> np.ndarray:
    """R unit directions on a uniform pixel sub-grid of the view frustum."""
    if rays < 1:
        raise ValueError("ray count must be >= 1")
    n_cols = int(np.ceil(np.sqrt(rays)))
    n_rows = int(np.ceil(rays / n_cols))
    forward, right, up = camera_basis(v)
    dirs = np.empty((rays, 3))
    k = 0
    for r in range(n_rows):
        for c in range(n_cols):
            if k >= rays:
                break
            u = (c + 0.5) / n_cols * 2.0 - 1.0
            w = (r + 0.5) / n_rows * 2.0 - 1.0
            d = forward + u * cfg.tan_half_h * right - w * cfg.tan_half_v * up
            dirs[k] = d / np.linalg.norm(d)
            k += 1
    return dirs


def ray_sample_depths(cfg: SceneConfig, samples: int) -> np.ndarray:
    """N midpoint sample distances uniformly covering [d_n, d_f]."""
    if samples < 1:
        raise ValueError("sample count must be >= 1")
    step = (cfg.d_f - cfg.d_n) / samples
    return cfg.d_n + (np.arange(samples) + 0.5) * step


def ray_sample_weights(field: UncertaintyField, voxmap: VoxelMap, v: Viewpoint,
                       rays: int, samples: int, cfg: SceneConfig):
    """Per-sample weights W_ri and uncertainties sigma_ri^2, each (R, N).

    W_ri = T_i * alpha_i with alpha_i = 1 when the sample's voxel is
    Occupied or Unobserved, 0 otherwise, and T_i the hit-and-stop
    transmittance prod_{j<i} (1 - alpha_j). Samples outside the mapped
    region contribute neither opacity nor uncertainty (the scene of
    interest is bounded by the grid).
    """
    field.check_geometry(voxmap)
    dirs = gain_ray_directions(v, cfg, rays)
    ts = ray_sample_depths(cfg, samples)
    pts = v.position[None, None, :] + ts[None, :, None] * dirs[:, None, :]  # (R,N,3)

    idx = np.floor((pts - voxmap.origin) / voxmap.resolution).astype(np.int64)
    dims = np.array(voxmap.dims)
    inside = np.all((idx >= 0) & (idx < dims), axis=-1)
    flat = np.ravel_multi_index(
        (np.clip(idx[..., 0], 0, dims[0] - 1),
         np.clip(idx[..., 1], 0, dims[1] - 1),
         np.clip(idx[..., 2], 0, dims[2] - 1)), voxmap.dims)
    labels = voxmap.labels.reshape(-1)[flat]
    sigma2 = np.where(inside, field.values.reshape(-1)[flat], 0.0)

    alpha = (inside & ((labels == OccupancyLabel.OCCUPIED)
                       | (labels == OccupancyLabel.UNOBSERVED))).astype(np.float64)
    # T_i = prod_{j<i} (1 - alpha_j): all weight goes to the first hit.
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((rays, 1)), trans[:, :-1]], axis=1)
    return trans * alpha, sigma2


def combine_ray_uncertainty(weights, sigma2) -> float:
    """sigma_v^2 = (1/R) sum_r sum_i W_ri * sigma_ri^2 for (R, N) inputs."""
    weights = np.asarray(weights, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    return float(np.sum(weights * sigma2) / weights.shape[0])


def viewpoint_uncertainty(field: UncertaintyField, voxmap: VoxelMap, v: Viewpoint,
                          rays: int, samples: int, cfg: SceneConfig) -> float:
    """Integrated frustum uncertainty sigma_v^2 for viewpoint v."""
    weights, sigma2 = ray_sample_weights(field, voxmap, v, rays, samples, cfg)
    return combine_ray_uncertainty(weights, sigma2)


def view_depth(voxmap: VoxelMap, v: Viewpoint, cfg: SceneConfig,
               rays: int | None = None) -> float | None:
    """Mean TSDF ray depth d_v over rays with a valid depth in [d_n, d_f].

    Returns None when no ray yields a usable depth (empty S_r).
    """
    rays = rays if rays is not None else cfg.gain_rays
    dirs = gain_ray_directions(v, cfg, rays)
    depths = voxmap.batch_ray_depth(v.position, dirs, max_depth=cfg.d_f)
    valid = np.isfinite(depths) & (depths >= cfg.d_n) & (depths <= cfg.d_f)
    if not valid.any():
        return None
    return float(depths[valid].mean())


def information_gain(sigma_v2: float, d_v: float | None, cfg: SceneConfig) -> float:
    """Depth-band decayed viewpoint gain I_v."""
    if sigma_v2 < 0:
        raise ValueError("sigma_v2 must be >= 0")
    if d_v is None:
        d_v = cfg.d_f  # no surface evidence: treat as deep in the far field
    if cfg.d_min < d_v < cfg.d_max:
        return float(sigma_v2)
    d_u = (cfg.d_min + cfg.d_max) / 2.0
    alpha_mag = 2.0 / (cfg.d_max - cfg.d_min)
    return float(np.exp(-alpha_mag * abs(d_v - d_u)) * sigma_v2)


def evaluate_viewpoint(field: UncertaintyField, voxmap: VoxelMap, v: Viewpoint,
                       cfg: SceneConfig, rays: int | None = None,
                       samples: int | None = None) -> ViewpointGain:
    """Full gain evaluation: Eq-style uncertainty integral plus depth decay."""
    rays = rays if rays is not None else cfg.gain_rays
    samples = samples if samples is not None else cfg.gain_samples
    s2 = viewpoint_uncertainty(field, voxmap, v, rays, samples, cfg)
    dv = view_depth(voxmap, v, cfg, rays)
    return ViewpointGain(sigma_v2=s2, view_depth=dv,
                         gain=information_gain(s2, dv, cfg))
