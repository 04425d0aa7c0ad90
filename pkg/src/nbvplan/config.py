"""Declarative config files: scene descriptions and run manifests.

Both formats are INI-style key-value sections. A scene file holds a
[scene] section with the scale parameters (keys l_s, l_res, l_step, d_f,
N_pitch, N_yaw, d_min, d_max are used verbatim), a [camera] section, and
one [primitive <name>] section per geometry primitive. A run manifest
holds a [run] section (scene reference, planner, variant flags, seeds,
output and dump options) and an optional [overrides] section applied to
scene parameters.

Parse errors surface as ConfigError with the file and, for syntax
problems, the line number reported by the INI parser.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene_sim import BUILTIN_SCENES, SceneConfig, SceneError, ScenePrimitive


class ConfigError(ValueError):
    """Malformed scene or manifest file."""


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split()]
    except ValueError as e:
        raise ConfigError(f"expected numbers, got {text!r}") from e


_SCENE_KEYS = {
    "l_s": ("l_s", float),
    "l_res": ("l_res", float),
    "l_step": ("l_step", float),
    "d_n": ("d_n", float),
    "d_f": ("d_f", float),
    "d_min": ("d_min", float),
    "d_max": ("d_max", float),
    "N_pitch": ("n_pitch", int),
    "N_yaw": ("n_yaw", int),
    "view_budget": ("view_budget", int),
    "k_noise": ("k_noise", float),
    "start_yaw": ("start_yaw", float),
    "start_pitch": ("start_pitch", float),
    "n_loc": ("n_loc", int),
    "gain_rays": ("gain_rays", int),
    "gain_samples": ("gain_samples", int),
    "metric_samples": ("metric_samples", int),
}


def _parser(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (N_pitch vs n_pitch)
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file")
    except configparser.Error as e:
        raise ConfigError(str(e))  # carries file and line number
    return parser


def _parse_primitive(name: str, section) -> ScenePrimitive:
    kind = section.get("kind")
    try:
        if kind == "sphere":
            return ScenePrimitive.sphere(_floats(section["center"]),
                                         float(section["radius"]))
        if kind == "box":
            return ScenePrimitive.box(_floats(section["center"]),
                                      _floats(section["half_extents"]))
        if kind == "plane":
            return ScenePrimitive.plane(_floats(section["normal"]),
                                        float(section["offset"]))
    except (KeyError, ValueError, SceneError) as e:
        raise ConfigError(f"[primitive {name}]: {e}") from e
    raise ConfigError(f"[primitive {name}]: unknown kind {kind!r}")


def load_scene_file(path):
    """Parse a scene file into (primitives, SceneConfig)."""
    parser = _parser(path)
    if "scene" not in parser:
        raise ConfigError(f"{path}: missing [scene] section")
    scene = parser["scene"]
    kwargs = {"name": scene.get("name", Path(path).stem)}
    try:
        kwargs["bounds_min"] = _floats(scene["bounds_min"])
        kwargs["bounds_max"] = _floats(scene["bounds_max"])
        kwargs["start"] = _floats(scene.get("start", "0 0 0"))
    except KeyError as e:
        raise ConfigError(f"{path}: [scene] missing key {e}") from e
    for key, (attr, cast) in _SCENE_KEYS.items():
        if key in scene:
            try:
                kwargs[attr] = cast(scene[key])
            except ValueError as e:
                raise ConfigError(f"{path}: [scene] {key}: {e}") from e
    if "camera" in parser:
        cam = parser["camera"]
        if "width" in cam:
            kwargs["width"] = int(cam["width"])
        if "height" in cam:
            kwargs["height"] = int(cam["height"])
        if "vfov_deg" in cam:
            kwargs["vfov"] = np.deg2rad(float(cam["vfov_deg"]))

    prims = []
    for name in parser.sections():
        if name.startswith("primitive"):
            label = name.split(None, 1)[1] if " " in name else name
            prims.append(_parse_primitive(label, parser[name]))
    if not prims:
        raise ConfigError(f"{path}: scene needs at least one [primitive ...]")
    try:
        cfg = SceneConfig(**kwargs)
    except (SceneError, TypeError) as e:
        raise ConfigError(f"{path}: [scene]: {e}") from e
    return prims, cfg


def save_scene_file(path, prims, cfg: SceneConfig) -> None:
    """Write a scene file that load_scene_file parses back."""
    lines = ["[scene]", f"name = {cfg.name}"]
    lines.append("bounds_min = " + " ".join(str(x) for x in cfg.bounds_min))
    lines.append("bounds_max = " + " ".join(str(x) for x in cfg.bounds_max))
    lines.append("start = " + " ".join(str(x) for x in cfg.start))
    for key, (attr, _) in _SCENE_KEYS.items():
        lines.append(f"{key} = {getattr(cfg, attr)}")
    lines += ["", "[camera]", f"width = {cfg.width}", f"height = {cfg.height}",
              f"vfov_deg = {np.rad2deg(cfg.vfov)}"]
    for i, p in enumerate(prims):
        lines += ["", f"[primitive p{i}]", f"kind = {p.kind}"]
        if p.kind == "sphere":
            lines.append("center = " + " ".join(str(x) for x in p.center))
            lines.append(f"radius = {p.radius}")
        elif p.kind == "box":
            lines.append("center = " + " ".join(str(x) for x in p.center))
            lines.append("half_extents = " + " ".join(str(x) for x in p.half_extents))
        else:
            lines.append("normal = " + " ".join(str(x) for x in p.normal))
            lines.append(f"offset = {p.offset}")
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_scene(ref: str):
    """Scene reference: 'builtin:<name>' or a scene file path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_SCENES:
            raise ConfigError(
                f"unknown builtin scene {name!r}; have {sorted(BUILTIN_SCENES)}")
        return BUILTIN_SCENES[name]()
    return load_scene_file(ref)


@dataclass
class RunManifest:
    scene_ref: str
    planner: str = "astar"
    use_approximator: bool = True
    use_filter: bool = True
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    dump_gain_field: bool = False
    dump_map: bool = False
    dump_paths: bool = False
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.planner not in ("astar", "rrt"):
            raise ConfigError(f"planner must be astar or rrt, not {self.planner!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")

    def load_scene(self):
        prims, cfg = resolve_scene(self.scene_ref)
        for key, value in self.overrides.items():
            if key in _SCENE_KEYS:
                attr, cast = _SCENE_KEYS[key]
                setattr(cfg, attr, cast(value))
            else:
                raise ConfigError(f"unknown override key {key!r}")
        cfg.__post_init__()  # re-validate after overrides
        return prims, cfg


def load_manifest(path) -> RunManifest:
    parser = _parser(path)
    if "run" not in parser:
        raise ConfigError(f"{path}: missing [run] section")
    run = parser["run"]
    if "scene" not in run:
        raise ConfigError(f"{path}: [run] missing key 'scene'")
    try:
        seeds = [int(x) for x in run.get("seeds", "0").split()]
    except ValueError as e:
        raise ConfigError(f"{path}: [run] seeds: {e}") from e
    overrides = dict(parser["overrides"]) if "overrides" in parser else {}
    return RunManifest(
        scene_ref=run["scene"],
        planner=run.get("planner", "astar"),
        use_approximator=run.getboolean("use_approximator", fallback=True),
        use_filter=run.getboolean("use_filter", fallback=True),
        seeds=seeds,
        output_dir=run.get("output_dir", "runs"),
        dump_gain_field=run.getboolean("dump_gain_field", fallback=False),
        dump_map=run.getboolean("dump_map", fallback=False),
        dump_paths=run.getboolean("dump_paths", fallback=False),
        overrides=overrides,
    )
