"""Coarse TSDF voxel map with occupancy labels and ray/collision queries.

Depth images are fused into a dense truncated-signed-distance grid by a
projective update: each voxel center in the camera frustum within the
sensor working range contributes sdf = pixel_depth - voxel_ray_depth,
clamped to +-tau, folded into a running average with unit observation
weight. Truncation is tau = 3 * l_res.

From the fused grid an occupancy map is derived per voxel:

* Unobserved: fusion weight 0
* Occupied:   weight > 0 and value < -l_res / 2
* Empty:      everything else observed

The occupancy margin keeps the zero-crossing band adjacent to Empty so
planned paths can approach surfaces. Unobserved voxels block collision
checks (conservative), but surface-depth rays tolerate short Unobserved
runs (up to UNOBSERVED_RAY_TOLERANCE consecutive voxels) before giving up.

Dump format (little endian): magic 'NBVMAP01', origin 3xf64, dims 3xu32,
l_res f64, then per voxel (value f32, weight f32, count u32) in C order.
"""

import json
import struct
from enum import IntEnum

import numpy as np

from .scene_sim import NO_HIT, SceneConfig, Viewpoint, camera_basis

TRUNCATION_FACTOR = 3.0          # tau = TRUNCATION_FACTOR * l_res
UNOBSERVED_RAY_TOLERANCE = 2     # fusion holes a depth ray may cross
_MAGIC = b"NBVMAP01"


class OccupancyLabel(IntEnum):
    UNOBSERVED = 0
    EMPTY = 1
    OCCUPIED = 2


class VoxelMap:
    """Dense TSDF grid over an axis-aligned region."""

    def __init__(self, origin, dims, resolution: float):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("voxel grid dims must be >= 1")
        self.resolution = float(resolution)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.truncation = TRUNCATION_FACTOR * self.resolution
        self.values = np.zeros(self.dims, dtype=np.float64)
        self.weights = np.zeros(self.dims, dtype=np.float64)
        self.counts = np.zeros(self.dims, dtype=np.int64)
        self.labels = np.full(self.dims, OccupancyLabel.UNOBSERVED, dtype=np.uint8)
        self._centers = None

    @classmethod
    def for_scene(cls, cfg: SceneConfig) -> "VoxelMap":
        dims = np.maximum(1, np.ceil(
            (cfg.bounds_max - cfg.bounds_min) / cfg.l_res - 1e-9)).astype(int)
        return cls(cfg.bounds_min, dims, cfg.l_res)

    # -- geometry ------------------------------------------------------------

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def world_max(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.resolution

    def voxel_index(self, x) -> np.ndarray:
        """Integer voxel coordinates containing points x (may be off-grid)."""
        x = np.asarray(x, dtype=float)
        return np.floor((x - self.origin) / self.resolution).astype(np.int64)

    def in_grid(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def voxel_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def voxel_centers(self) -> np.ndarray:
        """All voxel centers, shape (nx*ny*nz, 3), C order; cached."""
        if self._centers is None:
            nx, ny, nz = self.dims
            ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                     indexing="ij")
            idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
            self._centers = self.origin + (idx + 0.5) * self.resolution
        return self._centers

    def snapshot(self) -> "VoxelMap":
        m = VoxelMap(self.origin, self.dims, self.resolution)
        m.values = self.values.copy()
        m.weights = self.weights.copy()
        m.counts = self.counts.copy()
        m.labels = self.labels.copy()
        return m

    # -- fusion ----------------------------------------------------------------

    def integrate_depth(self, v: Viewpoint, img, cfg: SceneConfig) -> "VoxelMap":
        """Fuse one depth image taken from viewpoint v. Returns self.

        Sentinel pixels carve free space as if a surface sat at d_f; voxels
        more than tau behind the observed surface are left untouched
        (occluded). Occupancy labels are refreshed before returning.
        """
        forward, right, up = camera_basis(v)
        delta = self.voxel_centers() - v.position[None, :]
        ray_range = np.linalg.norm(delta, axis=1)
        z = delta @ forward
        in_front = z > 0.0
        zsafe = np.where(in_front, z, 1.0)
        # clamp off-frustum ratios so the pixel cast stays finite
        u = np.clip((delta @ right) / (zsafe * cfg.tan_half_h), -2.0, 2.0)
        w = np.clip(-(delta @ up) / (zsafe * cfg.tan_half_v), -2.0, 2.0)
        col = np.floor((u + 1.0) / 2.0 * cfg.width).astype(np.int64)
        row = np.floor((w + 1.0) / 2.0 * cfg.height).astype(np.int64)
        valid = (
            in_front
            & (ray_range >= cfg.d_n) & (ray_range <= cfg.d_f)
            & (col >= 0) & (col < cfg.width)
            & (row >= 0) & (row < cfg.height)
        )
        vi = np.flatnonzero(valid)
        pixel_depth = img.data[row[vi], col[vi]]
        effective = np.where(np.isfinite(pixel_depth), pixel_depth, cfg.d_f)
        sdf = effective - ray_range[vi]
        keep = sdf >= -self.truncation
        vi = vi[keep]
        sdf = np.minimum(sdf[keep], self.truncation)

        flat_values = self.values.reshape(-1)
        flat_weights = self.weights.reshape(-1)
        flat_counts = self.counts.reshape(-1)
        w0 = flat_weights[vi]
        flat_values[vi] = (flat_values[vi] * w0 + sdf) / (w0 + 1.0)
        flat_weights[vi] = w0 + 1.0
        flat_counts[vi] += 1
        self.refresh_labels()
        return self

    def observe_free_ball(self, center, radius: float) -> None:
        """Mark Unobserved voxels within radius of center as observed free.

        Models the robot-presence assumption: the sensor cannot see inside
        its own near-field blind zone, but the robot occupying that space
        proves it free. Only fills unknown cells; never contradicts fused
        sensor evidence.
        """
        center = np.asarray(center, dtype=float)
        dist = np.linalg.norm(self.voxel_centers() - center[None, :], axis=1)
        unknown = (self.weights.reshape(-1) == 0.0) & (dist <= radius)
        vi = np.flatnonzero(unknown)
        self.values.reshape(-1)[vi] = self.truncation
        self.weights.reshape(-1)[vi] = 1.0
        self.counts.reshape(-1)[vi] = 1
        self.refresh_labels()

    def refresh_labels(self) -> None:
        occupied = (self.weights > 0) & (self.values < -self.resolution / 2.0)
        self.labels = np.where(
            self.weights == 0, np.uint8(OccupancyLabel.UNOBSERVED),
            np.where(occupied, np.uint8(OccupancyLabel.OCCUPIED),
                     np.uint8(OccupancyLabel.EMPTY)))

    # -- queries ---------------------------------------------------------------

    def occupancy(self, x) -> OccupancyLabel:
        """Label of the voxel containing point x; off-grid is Unobserved."""
        idx = self.voxel_index(x)
        if not self.in_grid(idx):
            return OccupancyLabel.UNOBSERVED
        return OccupancyLabel(self.labels[tuple(idx)])

    def label_counts(self) -> dict:
        flat = self.labels.reshape(-1)
        return {
            "occupied": int(np.sum(flat == OccupancyLabel.OCCUPIED)),
            "empty": int(np.sum(flat == OccupancyLabel.EMPTY)),
            "unobserved": int(np.sum(flat == OccupancyLabel.UNOBSERVED)),
            "total": self.n_voxels,
        }

    def _dda_setup(self, origin, direction):
        """Initial voxel, step, tmax and tdelta for a ray walk."""
        idx = self.voxel_index(origin)
        step = np.sign(direction).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            tdelta = np.where(direction != 0.0,
                              self.resolution / np.abs(direction), np.inf)
            next_boundary = self.origin + (idx + (step > 0)) * self.resolution
            tmax = np.where(direction != 0.0,
                            (next_boundary - origin) / direction, np.inf)
        return idx, step, tmax, tdelta

    def ray_depth(self, origin, direction, max_depth: float | None = None):
        """Distance to the first positive-to-negative TSDF crossing, or None.

        Walks voxels by DDA, interpolating the crossing between voxel-center
        projections onto the ray. Gives up (None) when the ray exits the
        grid, exceeds max_depth, or crosses more than
        UNOBSERVED_RAY_TOLERANCE consecutive Unobserved voxels.
        """
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        idx = self.voxel_index(origin)
        if not self.in_grid(idx):
            return None
        if self.labels[tuple(idx)] == OccupancyLabel.OCCUPIED:
            return 0.0

        idx, step, tmax, tdelta = self._dda_setup(origin, direction)
        t_entered = 0.0
        prev_t = None
        prev_v = None
        unobs_run = 0
        dims = np.array(self.dims)
        while True:
            if max_depth is not None and t_entered > max_depth:
                return None
            key = tuple(idx)
            if self.labels[key] == OccupancyLabel.UNOBSERVED:
                unobs_run += 1
                if unobs_run > UNOBSERVED_RAY_TOLERANCE:
                    return None
            else:
                unobs_run = 0
                val = self.values[key]
                t_c = (self.voxel_center(idx) - origin) @ direction
                if prev_v is None:
                    if val <= 0.0:
                        return max(t_entered, 0.0)
                elif prev_v >= 0.0 >= val and (prev_v > 0.0 or val < 0.0):
                    frac = prev_v / (prev_v - val)
                    return max(prev_t + frac * (t_c - prev_t), 0.0)
                prev_t, prev_v = t_c, val
            axis = int(np.argmin(tmax))
            t_entered = tmax[axis]
            idx[axis] += step[axis]
            tmax[axis] += tdelta[axis]
            if not (0 <= idx[axis] < dims[axis]):
                return None

    def batch_ray_depth(self, origin, directions, max_depth: float | None = None):
        """Vectorized ray_depth for many rays from one origin.

        Returns an array with np.nan where ray_depth would return None.
        Semantics match the scalar walk exactly (shared-origin case).
        """
        origin = np.asarray(origin, dtype=float)
        dirs = np.asarray(directions, dtype=float)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        n = dirs.shape[0]
        out = np.full(n, np.nan)

        start_idx = self.voxel_index(origin)
        if not self.in_grid(start_idx):
            return out
        if self.labels[tuple(start_idx)] == OccupancyLabel.OCCUPIED:
            out[:] = 0.0
            return out

        dims = np.array(self.dims)
        idx = np.broadcast_to(start_idx, (n, 3)).copy()
        step = np.sign(dirs).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            tdelta = np.where(dirs != 0.0, self.resolution / np.abs(dirs), np.inf)
            next_boundary = self.origin + (start_idx + (step > 0)) * self.resolution
            tmax = np.where(dirs != 0.0, (next_boundary - origin) / dirs, np.inf)

        t_entered = np.zeros(n)
        prev_t = np.zeros(n)
        prev_v = np.zeros(n)
        has_prev = np.zeros(n, dtype=bool)
        unobs_run = np.zeros(n, dtype=np.int64)
        active = np.ones(n, dtype=bool)

        max_iters = int(np.sum(dims)) + 4
        for _ in range(max_iters):
            ai = np.flatnonzero(active)
            if ai.size == 0:
                break
            if max_depth is not None:
                timed_out = ai[t_entered[ai] > max_depth]
                active[timed_out] = False
                ai = np.flatnonzero(active)
                if ai.size == 0:
                    break
            cur = idx[ai]
            flat = np.ravel_multi_index((cur[:, 0], cur[:, 1], cur[:, 2]), self.dims)
            lab = self.labels.reshape(-1)[flat]
            val = self.values.reshape(-1)[flat]
            centers = self.origin + (cur + 0.5) * self.resolution
            t_c = np.einsum("ij,ij->i", centers - origin, dirs[ai])

            unobserved = lab == OccupancyLabel.UNOBSERVED
            unobs_run[ai] = np.where(unobserved, unobs_run[ai] + 1, 0)
            dead = ai[unobserved & (unobs_run[ai] > UNOBSERVED_RAY_TOLERANCE)]
            active[dead] = False

            observed = ~unobserved
            first_hit = observed & ~has_prev[ai] & (val <= 0.0)
            out[ai[first_hit]] = np.maximum(t_entered[ai[first_hit]], 0.0)
            active[ai[first_hit]] = False

            pv = prev_v[ai]
            crossing = (observed & has_prev[ai] & (pv >= 0.0) & (val <= 0.0)
                        & ((pv > 0.0) | (val < 0.0)))
            ci = ai[crossing]
            if ci.size:
                frac = pv[crossing] / (pv[crossing] - val[crossing])
                out[ci] = np.maximum(
                    prev_t[ci] + frac * (t_c[crossing] - prev_t[ci]), 0.0)
                active[ci] = False

            record = observed & active[ai]
            ri = ai[record]
            prev_t[ri] = t_c[record]
            prev_v[ri] = val[record]
            has_prev[ri] = True

            ai = np.flatnonzero(active)
            if ai.size == 0:
                break
            axis = np.argmin(tmax[ai], axis=1)
            t_entered[ai] = tmax[ai, axis]
            idx[ai, axis] += step[ai, axis]
            tmax[ai, axis] += tdelta[ai, axis]
            exited = ~np.all((idx[ai] >= 0) & (idx[ai] < dims), axis=1)
            active[ai[exited]] = False
        return out

    def segment_voxels(self, a, b):
        """Yield integer voxel coords intersected by segment [a, b] in order."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        length = np.linalg.norm(d)
        idx = self.voxel_index(a)
        yield idx.copy()
        if length < 1e-12:
            return
        u = d / length
        end_idx = self.voxel_index(b)
        idx, step, tmax, tdelta = self._dda_setup(a, u)
        guard = int(np.sum(np.abs(end_idx - idx))) + 3
        for _ in range(guard):
            if np.array_equal(idx, end_idx):
                return
            axis = int(np.argmin(tmax))
            if tmax[axis] > length + self.resolution:
                return
            idx[axis] += step[axis]
            tmax[axis] += tdelta[axis]
            yield idx.copy()

    def is_path_free(self, a, b) -> bool:
        """True iff every voxel crossed by segment [a, b] is Empty."""
        for idx in self.segment_voxels(a, b):
            if not self.in_grid(idx):
                return False
            if self.labels[tuple(idx)] != OccupancyLabel.EMPTY:
                return False
        return True

    def visible_mask(self, origin, target_idx) -> np.ndarray:
        """Line-of-sight test from origin to each target voxel center.

        A target is visible when the DDA walk from origin reaches its voxel
        without first entering an Occupied voxel (the target voxel itself
        never blocks). Exact lockstep version of the scalar walk.
        """
        origin = np.asarray(origin, dtype=float)
        targets = np.asarray(target_idx, dtype=np.int64).reshape(-1, 3)
        n = targets.shape[0]
        visible = np.zeros(n, dtype=bool)
        if n == 0:
            return visible
        if not np.any(self.labels == OccupancyLabel.OCCUPIED):
            return np.ones(n, dtype=bool)  # nothing can block

        start_idx = self.voxel_index(origin)
        dims = np.array(self.dims)
        centers = self.origin + (targets + 0.5) * self.resolution
        dirs = centers - origin
        dist = np.linalg.norm(dirs, axis=1)
        degenerate = dist < 1e-12
        visible[degenerate] = True
        with np.errstate(invalid="ignore"):
            dirs = np.where(degenerate[:, None], 0.0, dirs / np.maximum(dist, 1e-12)[:, None])

        idx = np.broadcast_to(start_idx, (n, 3)).copy()
        step = np.sign(dirs).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            tdelta = np.where(dirs != 0.0, self.resolution / np.abs(dirs), np.inf)
            next_boundary = self.origin + (start_idx + (step > 0)) * self.resolution
            tmax = np.where(dirs != 0.0, (next_boundary - origin) / dirs, np.inf)

        active = ~degenerate
        occupied_flat = (self.labels == OccupancyLabel.OCCUPIED).reshape(-1)
        max_iters = int(np.sum(dims)) + 4
        for _ in range(max_iters):
            ai = np.flatnonzero(active)
            if ai.size == 0:
                break
            cur = idx[ai]
            arrived = np.all(cur == targets[ai], axis=1)
            visible[ai[arrived]] = True
            active[ai[arrived]] = False

            still = ai[~arrived]
            if still.size:
                cur = idx[still]
                inside = np.all((cur >= 0) & (cur < dims), axis=1)
                flat = np.ravel_multi_index(
                    (np.clip(cur[:, 0], 0, dims[0] - 1),
                     np.clip(cur[:, 1], 0, dims[1] - 1),
                     np.clip(cur[:, 2], 0, dims[2] - 1)), self.dims)
                blocked = inside & occupied_flat[flat]
                active[still[blocked]] = False  # stays invisible

            ai = np.flatnonzero(active)
            if ai.size == 0:
                break
            axis = np.argmin(tmax[ai], axis=1)
            idx[ai, axis] += step[ai, axis]
            tmax[ai, axis] += tdelta[ai, axis]
        return visible

    # -- serialization ---------------------------------------------------------

    def dump(self, path) -> None:
        header = _MAGIC + struct.pack(
            "<3d3Id", *self.origin, *self.dims, self.resolution)
        record = np.dtype([("value", "<f4"), ("weight", "<f4"), ("count", "<u4")])
        payload = np.empty(self.n_voxels, dtype=record)
        payload["value"] = self.values.reshape(-1).astype(np.float32)
        payload["weight"] = self.weights.reshape(-1).astype(np.float32)
        payload["count"] = self.counts.reshape(-1).astype(np.uint32)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())

    @classmethod
    def restore(cls, path) -> "VoxelMap":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"not a voxel map dump: bad magic {magic!r}")
            origin = struct.unpack("<3d", fh.read(24))
            dims = struct.unpack("<3I", fh.read(12))
            (res,) = struct.unpack("<d", fh.read(8))
            m = cls(origin, dims, res)
            record = np.dtype([("value", "<f4"), ("weight", "<f4"), ("count", "<u4")])
            payload = np.frombuffer(fh.read(), dtype=record, count=m.n_voxels)
        m.values = payload["value"].astype(np.float64).reshape(m.dims)
        m.weights = payload["weight"].astype(np.float64).reshape(m.dims)
        m.counts = payload["count"].astype(np.int64).reshape(m.dims)
        m.refresh_labels()
        return m

    def occupancy_summary_json(self) -> str:
        summary = dict(self.label_counts())
        summary.update({
            "dims": list(self.dims),
            "resolution": self.resolution,
            "origin": self.origin.tolist(),
        })
        return json.dumps(summary, indent=2)
