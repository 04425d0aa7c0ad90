"""Synthetic ground-truth scenes and noisy depth rendering.

A scene is a union of signed-distance primitives (spheres, axis-aligned
boxes, planes). Depth images are rendered with a pinhole camera by sphere
tracing the scene SDF and adding depth-dependent Gaussian noise
(sigma = k_noise * depth^2). Depths outside the sensor working range
[d_n, d_f] are mapped to the NO_HIT sentinel.

Conventions
-----------
* World frame: z up, distances in meters.
* A viewpoint is a position plus yaw (about z, from +x) and pitch
  (positive looks up). The derived forward vector has unit norm.
* Depth is measured along the pixel ray, not as z-depth.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Sentinel for "no surface within [d_n, d_f]" in depth images.
NO_HIT = float("inf")

# Sphere tracing termination: hit when the SDF drops below this (m).
HIT_EPS = 1e-4
# Rays that neither hit nor leave the far field within this many steps are
# treated as misses (grazing-incidence guard).
MAX_TRACE_STEPS = 512


class SceneError(ValueError):
    """Invalid scene or viewpoint for rendering."""


@dataclass(frozen=True)
class ScenePrimitive:
    """One signed-distance primitive; scenes are unions of these.

    kind is one of "sphere", "box", "plane". Only the fields relevant to
    the kind are used:

    * sphere: center, radius
    * box:    center, half_extents (axis-aligned)
    * plane:  normal (unit), offset — surface is dot(normal, x) = offset,
              inside (negative SDF) on the anti-normal side

    Each primitive SDF is 1-Lipschitz, so the union SDF is too.
    """

    kind: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    half_extents: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0
    op: str = "union"

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "plane"):
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        if self.op != "union":
            raise SceneError("only union composition is supported")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        n = np.asarray(self.normal, dtype=float)
        nn = np.linalg.norm(n)
        if self.kind == "plane":
            if nn == 0:
                raise SceneError("plane normal must be nonzero")
            n = n / nn
        object.__setattr__(self, "normal", n)
        if self.kind == "sphere" and self.radius <= 0:
            raise SceneError("sphere radius must be positive")
        if self.kind == "box" and np.any(self.half_extents <= 0):
            raise SceneError("box half extents must be positive")

    @staticmethod
    def sphere(center, radius) -> "ScenePrimitive":
        return ScenePrimitive(kind="sphere", center=center, radius=float(radius))

    @staticmethod
    def box(center, half_extents) -> "ScenePrimitive":
        return ScenePrimitive(kind="box", center=center,
                              half_extents=np.asarray(half_extents, dtype=float))

    @staticmethod
    def plane(normal, offset) -> "ScenePrimitive":
        return ScenePrimitive(kind="plane", normal=normal, offset=float(offset))

    def sdf(self, x: np.ndarray) -> np.ndarray:
        """Signed distance of points x (..., 3) to this primitive."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(x - self.center, axis=-1) - self.radius
        if self.kind == "box":
            q = np.abs(x - self.center) - self.half_extents
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(np.max(q, axis=-1), 0.0)
            return outside + inside
        # plane
        return x @ self.normal - self.offset


@dataclass
class Viewpoint:
    """Camera pose: position (m) plus yaw/pitch direction angles (rad)."""

    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.yaw = float(self.yaw) % (2.0 * np.pi)
        if not -np.pi / 2 <= self.pitch <= np.pi / 2:
            raise SceneError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        self.pitch = float(self.pitch)

    @property
    def direction(self) -> np.ndarray:
        return view_direction(self.yaw, self.pitch)


def view_direction(yaw: float, pitch: float) -> np.ndarray:
    """Unit forward vector for (yaw, pitch)."""
    cp = np.cos(pitch)
    return np.array([cp * np.cos(yaw), cp * np.sin(yaw), np.sin(pitch)])


def camera_basis(v: Viewpoint):
    """Orthonormal (forward, right, up) triad of a viewpoint.

    right stays horizontal for any pitch, so the basis is well defined at
    pitch = +-pi/2 where forward x world-up degenerates.
    """
    forward = view_direction(v.yaw, v.pitch)
    right = np.array([np.sin(v.yaw), -np.cos(v.yaw), 0.0])
    up = np.cross(right, forward)
    return forward, right, up


@dataclass
class SceneConfig:
    """Scene-dependent parameters for mapping, sampling, gain and planning.

    Units are meters/radians. The sensor working range is [d_n, d_f]; the
    gain depth band is [d_min, d_max]; l_s is the view sampling radius,
    l_res the voxel resolution and l_step the planner step size.
    """

    name: str
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    l_s: float
    l_res: float
    l_step: float
    d_n: float
    d_f: float
    d_min: float
    d_max: float
    n_pitch: int
    n_yaw: int
    view_budget: int
    width: int = 80
    height: int = 60
    vfov: float = np.deg2rad(45.0)
    k_noise: float = 0.0               # depth noise sigma = k_noise * d^2 (1/m)
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start_yaw: float = 0.0
    start_pitch: float = 0.0
    n_loc: int = 10                    # sampled candidate locations per step
    gain_rays: int = 100               # R rays per viewpoint-gain evaluation
    gain_samples: int = 64             # N samples per ray
    metric_samples: int = 20000        # surface samples for geometry metrics

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float).reshape(3)
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        if np.any(self.bounds_max <= self.bounds_min):
            raise SceneError("bounds_max must exceed bounds_min on every axis")
        if not (0.0 < self.d_n < self.d_min < self.d_max <= self.d_f):
            raise SceneError("need 0 < d_n < d_min < d_max <= d_f")
        if self.l_res <= 0:
            raise SceneError("l_res must be positive")
        if self.l_step > self.l_s:
            raise SceneError("l_step must not exceed l_s")
        if self.n_pitch < 1 or self.n_yaw < 1:
            raise SceneError("N_pitch and N_yaw must be >= 1")
        if self.width < 1 or self.height < 1 or not 0 < self.vfov < np.pi:
            raise SceneError("invalid camera intrinsics")

    @property
    def tan_half_v(self) -> float:
        return np.tan(self.vfov / 2.0)

    @property
    def tan_half_h(self) -> float:
        # Square pixels: horizontal half-extent scales with aspect ratio.
        return self.tan_half_v * self.width / self.height

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.bounds_min) & (x <= self.bounds_max), axis=-1)


@dataclass
class DepthImage:
    """Per-pixel first-hit depth (m) along the ray; NO_HIT where none."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise SceneError("depth image must be 2-D")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.data)


def scene_sdf(scene: Sequence[ScenePrimitive], x) -> np.ndarray:
    """Signed distance of points x (..., 3) to the union scene surface."""
    if len(scene) == 0:
        raise SceneError("scene must contain at least one primitive")
    x = np.asarray(x, dtype=float)
    return np.minimum.reduce([p.sdf(x) for p in scene])


def scene_sdf_gradient(scene: Sequence[ScenePrimitive], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scene SDF, shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.shape, dtype=float)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[..., k] = (scene_sdf(scene, x + e) - scene_sdf(scene, x - e)) / (2 * h)
    return g


def pixel_ray_directions(v: Viewpoint, width: int, height: int,
                         tan_half_h: float, tan_half_v: float) -> np.ndarray:
    """Unit ray directions through every pixel center, shape (H, W, 3)."""
    forward, right, up = camera_basis(v)
    cols = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    rows = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    u, w = np.meshgrid(cols, rows)            # (H, W)
    dirs = (forward[None, None, :]
            + u[..., None] * tan_half_h * right[None, None, :]
            - w[..., None] * tan_half_v * up[None, None, :])
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs


def noise_sigma(k_noise: float, depth) -> np.ndarray:
    """Depth noise standard deviation sigma = k_noise * depth^2."""
    return k_noise * np.square(depth)


def render_depth(scene: Sequence[ScenePrimitive], v: Viewpoint, cfg: SceneConfig,
                 rng_seed=None) -> DepthImage:
    """Render a noisy depth image from viewpoint v by sphere tracing.

    The viewpoint must lie in free space (positive SDF). Rays march by the
    SDF value until it falls below HIT_EPS or the accumulated distance
    exceeds d_f. With k_noise > 0, additive Gaussian noise with
    sigma = k_noise * depth^2 is applied per pixel. Finite output depths
    always lie in [d_n, d_f]; everything else is NO_HIT.
    """
    if scene_sdf(scene, v.position) <= 0.0:
        raise SceneError("viewpoint is inside scene geometry")

    dirs = pixel_ray_directions(v, cfg.width, cfg.height,
                                cfg.tan_half_h, cfg.tan_half_v).reshape(-1, 3)
    n = dirs.shape[0]
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    for _ in range(MAX_TRACE_STEPS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        p = v.position[None, :] + t[idx, None] * dirs[idx]
        d = scene_sdf(scene, p)
        now_hit = d < HIT_EPS
        hit[idx[now_hit]] = True
        active[idx[now_hit]] = False
        adv = idx[~now_hit]
        t[adv] += d[~now_hit]
        left = adv[t[adv] > cfg.d_f]
        active[left] = False

    depth = np.where(hit, t, NO_HIT)
    if cfg.k_noise > 0.0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal(n) * noise_sigma(cfg.k_noise, np.where(hit, t, 0.0))
        depth = np.where(hit, depth + noise, depth)
    out_of_range = ~((depth >= cfg.d_n) & (depth <= cfg.d_f))
    depth = np.where(out_of_range, NO_HIT, depth)
    return DepthImage(depth.reshape(cfg.height, cfg.width))


def write_pgm(img: DepthImage, path, max_depth: float) -> None:
    """Export a depth image as ASCII PGM (P2), NO_HIT pixels as 0."""
    scaled = np.where(np.isfinite(img.data),
                      np.clip(img.data / max_depth, 0.0, 1.0) * 65535.0, 0.0)
    scaled = scaled.astype(np.uint32)
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.width} {img.height}\n65535\n")
        for row in scaled:
            fh.write(" ".join(str(x) for x in row) + "\n")


# ---------------------------------------------------------------------------
# Built-in scenes. Geometry is synthetic; the scale parameters (l_s, l_res,
# l_step, d_f, N_pitch, N_yaw, d_min, d_max, view budget) follow the three
# reference scene classes: a 5x5x3 cabin-like scene, a 6x6x3 room with
# interior walls, and a 50x40x30 landmark-scale test.
# ---------------------------------------------------------------------------

def cabin_scene():
    """5x5x3 m cabin-like structure scanned from the free space around it."""
    prims = [
        ScenePrimitive.box([2.5, 2.5, 0.7], [0.7, 0.55, 0.7]),
        ScenePrimitive.sphere([2.5, 2.5, 1.75], 0.45),
        ScenePrimitive.box([1.5, 2.1, 0.4], [0.3, 0.25, 0.4]),
    ]
    cfg = SceneConfig(
        name="cabin",
        bounds_min=[0.0, 0.0, 0.0], bounds_max=[5.0, 5.0, 3.0],
        l_s=3.0, l_res=0.1, l_step=0.2,
        d_n=0.5, d_f=6.0, d_min=2.5, d_max=4.5,
        n_pitch=3, n_yaw=5, view_budget=28,
        k_noise=0.001,
        start=[0.8, 0.8, 1.4], start_yaw=0.8, start_pitch=-0.1,
        n_loc=12,
    )
    return prims, cfg


def room_scene():
    """6x6x3 m room contents: partition walls and box/sphere furniture."""
    prims = [
        ScenePrimitive.box([3.0, 2.0, 0.9], [0.1, 1.6, 0.9]),
        ScenePrimitive.box([4.4, 4.0, 0.9], [1.2, 0.1, 0.9]),
        ScenePrimitive.box([1.5, 4.3, 0.45], [0.45, 0.35, 0.45]),
        ScenePrimitive.sphere([4.6, 1.5, 0.5], 0.5),
    ]
    cfg = SceneConfig(
        name="room",
        bounds_min=[0.0, 0.0, 0.0], bounds_max=[6.0, 6.0, 3.0],
        l_s=1.0, l_res=0.1, l_step=0.2,
        d_n=0.5, d_f=6.0, d_min=1.5, d_max=3.5,
        n_pitch=5, n_yaw=12, view_budget=40,
        k_noise=0.001,
        start=[1.2, 1.2, 1.4], start_yaw=0.6, start_pitch=-0.1,
    )
    return prims, cfg


def landmark_scene():
    """50x40x30 m landmark-scale scene: ground plane, monument box, dome."""
    prims = [
        ScenePrimitive.plane([0.0, 0.0, 1.0], 0.0),
        ScenePrimitive.box([30.0, 20.0, 6.0], [6.0, 6.0, 6.0]),
        ScenePrimitive.sphere([30.0, 20.0, 14.0], 5.0),
    ]
    cfg = SceneConfig(
        name="landmark",
        bounds_min=[0.0, 0.0, 0.0], bounds_max=[50.0, 40.0, 30.0],
        l_s=30.0, l_res=1.0, l_step=2.0,
        d_n=0.5, d_f=80.0, d_min=30.0, d_max=50.0,
        n_pitch=3, n_yaw=5, view_budget=28,
        k_noise=3e-5,
        start=[6.0, 6.0, 8.0], start_yaw=0.5, start_pitch=0.0,
    )
    return prims, cfg


BUILTIN_SCENES = {
    "cabin": cabin_scene,
    "room": room_scene,
    "landmark": landmark_scene,
}
