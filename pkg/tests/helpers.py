"""Shared independent oracles and scenario builders for the test suite."""

import heapq
import math

import numpy as np

from nbvplan.scene_sim import SceneConfig, ScenePrimitive
from nbvplan.voxel_map import OccupancyLabel, VoxelMap


def brute_force_sigma_v2(field, vmap, v, rays, samples, cfg):
    """Triple-loop reference for the ray-integrated viewpoint uncertainty.

    Re-derives the camera basis and the pixel sub-grid with scalar math
    and walks every (ray, sample) pair explicitly; shares nothing with the
    vectorized production path.
    """
    cp, sp = math.cos(v.pitch), math.sin(v.pitch)
    cy, sy = math.cos(v.yaw), math.sin(v.yaw)
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.cross(right, forward)

    n_cols = math.ceil(math.sqrt(rays))
    n_rows = math.ceil(rays / n_cols)
    dirs = []
    for r in range(n_rows):
        for c in range(n_cols):
            if len(dirs) >= rays:
                break
            u = (c + 0.5) / n_cols * 2.0 - 1.0
            w = (r + 0.5) / n_rows * 2.0 - 1.0
            d = forward + u * cfg.tan_half_h * right - w * cfg.tan_half_v * up
            dirs.append(d / np.linalg.norm(d))

    step = (cfg.d_f - cfg.d_n) / samples
    total = 0.0
    for d in dirs:
        transmittance = 1.0
        for i in range(samples):
            t = cfg.d_n + (i + 0.5) * step
            p = v.position + t * d
            idx = np.floor((p - vmap.origin) / vmap.resolution).astype(int)
            if np.any(idx < 0) or np.any(idx >= np.array(vmap.dims)):
                alpha, s2 = 0.0, 0.0
            else:
                lab = vmap.labels[tuple(idx)]
                alpha = 1.0 if lab in (OccupancyLabel.OCCUPIED,
                                       OccupancyLabel.UNOBSERVED) else 0.0
                s2 = field.values[tuple(idx)]
            total += transmittance * alpha * s2
            transmittance *= 1.0 - alpha
    return total / rays


def dijkstra_oracle(voxmap, p_s, p_g, cfg):
    """Shortest lattice path length with the planner's goal-snap semantics.

    Plain Dijkstra over the 26-connected l_step lattice; the result is the
    minimum over all goal-qualifying nodes of lattice distance plus the
    snap segment.
    """
    p_s = np.asarray(p_s, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
               for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
    dist = {(0, 0, 0): 0.0}
    heap = [(0.0, (0, 0, 0))]
    while heap:
        d, key = heapq.heappop(heap)
        if d > dist[key] + 1e-15:
            continue
        pos = p_s + np.array(key, dtype=float) * cfg.l_step
        for off in offsets:
            ckey = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            cpos = p_s + np.array(ckey, dtype=float) * cfg.l_step
            if not voxmap.in_grid(voxmap.voxel_index(cpos)):
                continue
            if not voxmap.is_path_free(pos, cpos):
                continue
            nd = d + np.linalg.norm(np.array(off)) * cfg.l_step
            if nd < dist.get(ckey, np.inf) - 1e-15:
                dist[ckey] = nd
                heapq.heappush(heap, (nd, ckey))
    best = None
    for key, d in dist.items():
        pos = p_s + np.array(key, dtype=float) * cfg.l_step
        gd = float(np.linalg.norm(p_g - pos))
        if gd <= cfg.tolerance and voxmap.is_path_free(pos, p_g):
            total = d + gd
            if best is None or total < best:
                best = total
    return best


def all_empty_map(dims=(20, 20, 5), res=0.5, origin=(0.0, 0.0, 0.0)):
    m = VoxelMap(origin, dims, res)
    m.values[:] = m.truncation
    m.weights[:] = 1.0
    m.counts[:] = 1
    m.refresh_labels()
    return m


def corridor_map():
    """Two equal-length corridors between left and right connectors."""
    m = VoxelMap([0.0, 0.0, 0.0], (24, 12, 3), 0.5)
    m.values[:] = -m.truncation
    m.weights[:] = 1.0
    m.counts[:] = 1
    empty = np.zeros(m.dims, dtype=bool)
    empty[1:23, 1:3, :] = True    # corridor A (low y)
    empty[1:23, 9:11, :] = True   # corridor B (high y)
    empty[1:3, 1:11, :] = True    # left connector
    empty[21:23, 1:11, :] = True  # right connector
    m.values[empty] = m.truncation
    m.refresh_labels()
    return m


def small_pipeline_scene(i: int):
    """Deterministic small random scene for paired full-pipeline runs."""
    rng = np.random.default_rng(1000 + i)
    c1 = rng.uniform([1.8, 1.8, 0.5], [2.8, 2.8, 0.7])
    c2 = rng.uniform([1.2, 1.2, 0.4], [3.0, 3.0, 0.8])
    prims = [
        ScenePrimitive.box(c1, rng.uniform(0.3, 0.5, size=3)),
        ScenePrimitive.sphere(c2, rng.uniform(0.3, 0.45)),
    ]
    cfg = SceneConfig(
        name=f"small{i}",
        bounds_min=[0, 0, 0], bounds_max=[4.0, 4.0, 2.0],
        l_s=2.0, l_res=0.2, l_step=0.25,
        d_n=0.3, d_f=4.0, d_min=0.8, d_max=2.5,
        n_pitch=2, n_yaw=4, view_budget=10,
        width=40, height=30, k_noise=0.001,
        start=[0.8, 0.8, 1.2], start_yaw=0.7, start_pitch=-0.2,
        n_loc=8, gain_rays=36, gain_samples=24, metric_samples=2000,
    )
    return prims, cfg
