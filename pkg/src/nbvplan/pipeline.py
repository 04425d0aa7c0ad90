"""Per-step reconstruction loop and full experiment runs.

One step: fuse pending captures into the TSDF and refresh the uncertainty
field, sample and filter candidate viewpoints around the current position,
fit (or bypass) the gain approximator, pick the highest-gain candidate as
the goal, plan an informative path to it, and execute the path capturing
depth images on the way. Runs repeat steps until the view budget is spent,
then score the final map against the ground-truth surface.

Variant flags reproduce the ablation grid: use_approximator switches the
planner's gain oracle between the fitted network and exact ray-integrated
evaluation; use_filter toggles the cheap TSDF direction filter. Combined
with the planner kind this spans the RRT/A* x exact/approximated x
filtered/unfiltered comparison matrix.

Timing accounting per step: t_s (sampling), t_train (fitting), t_query
(gain oracle time inside planning), t_planner (planning minus queries),
t_sp = t_train + t_query + t_planner. Wall-clock fields are the only
non-deterministic part of a run record.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .approximator import NetworkConfig, fit
from .gain_field import UncertaintyField, decay_uncertainty, evaluate_viewpoint
from .metrics import geometry_metrics, sample_gt_surface, sample_reconstructed_surface
from .planner import NoPathError, PlannerConfig, plan_astar, plan_rrt
from .sampler import GainSampleSet, select_views
from .scene_sim import DepthImage, SceneConfig, SceneError, Viewpoint, render_depth, scene_sdf
from .voxel_map import VoxelMap

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GOAL_RETRIES = 3      # next-best goals tried after a NoPath failure
INITIAL_PANORAMA_VIEWS = 3


class RunAbortedError(RuntimeError):
    """A step could not complete (no reachable goal among the candidates)."""


class SchemaError(ValueError):
    """Run record schema version mismatch."""


@dataclass
class VariantFlags:
    use_approximator: bool = True
    use_filter: bool = True

    def label(self, planner: str) -> str:
        parts = [planner]
        parts.append("gphi" if self.use_approximator else "exact")
        parts.append("filter" if self.use_filter else "nofilter")
        return "+".join(parts)


@dataclass
class StepReport:
    step: int
    t_s: float
    t_train: float
    t_query: float
    t_planner: float
    t_sp: float
    n_query: int
    oracle_queries: int     # the oracle's own invocation count (cross-check)
    cheap_evals: int
    expensive_evals: int
    expansions: int
    goal_gain: float
    path_length: float
    n_captures: int
    unobserved_voxels: int

    def deterministic_tuple(self) -> tuple:
        """Everything except wall-clock timings."""
        return (self.step, self.n_query, self.oracle_queries, self.cheap_evals,
                self.expensive_evals, self.goal_gain, self.path_length,
                self.n_captures, self.unobserved_voxels)


@dataclass
class ReconstructionState:
    voxmap: VoxelMap
    field: UncertaintyField
    p_s: np.ndarray
    current_yaw: float
    current_pitch: float
    history: list = field(default_factory=list)    # executed (Viewpoint, DepthImage)
    pending: list = field(default_factory=list)    # captured, not yet fused
    step_index: int = 0
    total_path_length: float = 0.0
    total_queries: int = 0

    @property
    def total_views(self) -> int:
        return len(self.history) + len(self.pending)


class ExactGainOracle:
    """Planner oracle computing the full ray-integrated gain per query.

    A query position gets the viewing direction of the nearest sampled
    location (the same direction the pipeline would capture with there).
    """

    def __init__(self, fld: UncertaintyField, voxmap: VoxelMap,
                 cfg: SceneConfig, samples: GainSampleSet):
        self.field = fld
        self.voxmap = voxmap
        self.cfg = cfg
        self.samples = samples
        self.query_count = 0
        self.query_time = 0.0

    def _direction_for(self, p):
        d = np.linalg.norm(self.samples.positions - p[None, :], axis=1)
        i = int(np.argmin(d))
        return self.samples.yaws[i], self.samples.pitches[i]

    def reset_query_counters(self) -> None:
        self.query_count = 0
        self.query_time = 0.0

    def query(self, p) -> float:
        t0 = time.perf_counter()
        p = np.asarray(p, dtype=float)
        yaw, pitch = self._direction_for(p)
        g = evaluate_viewpoint(self.field, self.voxmap, Viewpoint(p, yaw, pitch),
                               self.cfg)
        self.query_time += time.perf_counter() - t0
        self.query_count += 1
        return g.gain


def derive_rng_seed(seed: int, step: int, channel: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(step, channel))


def capture_interval(cfg: SceneConfig) -> float:
    """Distance between intermediate captures while executing a path."""
    return max(2.0 * cfg.l_step, cfg.l_s / 3.0)


def _nearest_sample_direction(samples: GainSampleSet, p):
    d = np.linalg.norm(samples.positions - np.asarray(p, dtype=float)[None, :], axis=1)
    i = int(np.argmin(d))
    return samples.yaws[i], samples.pitches[i]


def _plan_capture_viewpoints(path, samples: GainSampleSet, goal_index: int,
                             cfg: SceneConfig, remaining_budget: int):
    """Viewpoints to capture along an executed path.

    Intermediate captures fire whenever the walked distance since the last
    capture reaches the capture interval; the terminal node always
    captures with the goal's chosen direction. When the view budget cannot
    take them all, the terminal capture wins and the earliest
    intermediates fill the rest.
    """
    interval = capture_interval(cfg)
    nodes = path.nodes
    intermediates = []
    walked = 0.0
    for a, b in zip(nodes[:-2], nodes[1:-1]):
        walked += float(np.linalg.norm(b - a))
        if walked >= interval:
            yaw, pitch = _nearest_sample_direction(samples, b)
            intermediates.append(Viewpoint(b.copy(), yaw, pitch))
            walked = 0.0
    terminal = Viewpoint(nodes[-1].copy(), samples.yaws[goal_index],
                         samples.pitches[goal_index])
    planned = intermediates + [terminal]
    if len(planned) > remaining_budget:
        planned = intermediates[:remaining_budget - 1] + [terminal]
    return planned


def run_step(state: ReconstructionState, scene, cfg: SceneConfig,
             planner_cfg: PlannerConfig, net_cfg: NetworkConfig,
             flags: VariantFlags, planner_kind: str, seed: int):
    """Advance the reconstruction by one plan-and-execute step."""
    step = state.step_index

    # 1-2: fuse pending captures, refresh occupancy and uncertainty
    for v, img in state.pending:
        state.voxmap.integrate_depth(v, img, cfg)
        state.voxmap.observe_free_ball(v.position, cfg.d_n)
        state.history.append((v, img))
    state.pending.clear()
    decay_uncertainty(state.field, state.voxmap)

    # 3: sample and filter candidate viewpoints
    t0 = time.perf_counter()
    samples = select_views(state.voxmap, state.field, state.p_s, cfg,
                           rng_seed=derive_rng_seed(seed, step, 0),
                           use_filter=flags.use_filter)
    t_s = time.perf_counter() - t0

    # 4: gain oracle for the planner
    if flags.use_approximator:
        model = fit(samples, net_cfg)
        t_train = model.train_time
    else:
        model = ExactGainOracle(state.field, state.voxmap, cfg, samples)
        t_train = 0.0

    # 5-6: plan to the best-gain goal, falling back to the next candidates
    plan = plan_astar if planner_kind == "astar" else plan_rrt
    order = np.argsort(-samples.gains, kind="stable")
    path = None
    goal_index = None
    for candidate in order[:GOAL_RETRIES]:
        model.reset_query_counters()
        try:
            path = plan(state.voxmap, model, state.p_s,
                        samples.positions[candidate], planner_cfg)
            goal_index = int(candidate)
            break
        except NoPathError:
            logger.info("step %d: goal %d unreachable, trying next", step, candidate)
    if path is None:
        raise RunAbortedError(
            f"step {step}: no path to any of the top {GOAL_RETRIES} goals")

    t_query = model.query_time
    t_planner = max(path.t_planner - t_query, 0.0)

    # 7: execute the path, capturing along the way
    remaining = cfg.view_budget - state.total_views
    captures = _plan_capture_viewpoints(path, samples, goal_index, cfg, remaining)
    captured = 0
    for k, vp in enumerate(captures):
        try:
            img = render_depth(scene, vp, cfg,
                               rng_seed=derive_rng_seed(seed, step, 100 + k))
        except SceneError:
            logger.warning("step %d: capture at %s rejected (inside geometry)",
                           step, vp.position)
            continue
        state.pending.append((vp, img))
        captured += 1

    # 8: advance the current node
    state.p_s = path.nodes[-1].copy()
    state.current_yaw = samples.yaws[goal_index]
    state.current_pitch = samples.pitches[goal_index]
    state.total_path_length += path.length
    state.total_queries += path.n_query
    state.step_index += 1

    report = StepReport(
        step=step, t_s=t_s, t_train=t_train, t_query=t_query,
        t_planner=t_planner, t_sp=t_train + t_query + t_planner,
        n_query=path.n_query, oracle_queries=model.query_count,
        cheap_evals=samples.cheap_evals,
        expensive_evals=samples.expensive_evals, expansions=path.expansions,
        goal_gain=float(samples.gains[goal_index]), path_length=path.length,
        n_captures=captured,
        unobserved_voxels=state.voxmap.label_counts()["unobserved"])
    return state, report, path, samples, model


@dataclass
class RunRecord:
    schema_version: int
    scene: str
    planner: str
    use_approximator: bool
    use_filter: bool
    seed: int
    variant_label: str
    steps: list
    trajectory: list     # per step: {step, nodes, node_gains}
    totals: dict
    metrics: dict
    occupancy: dict

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def from_json(cls, data: dict, source: str = "<memory>") -> "RunRecord":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(
                f"{source}: schema version {version!r}, expected {SCHEMA_VERSION}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls.from_json(json.load(fh), source=str(path))

    def write_step_csv(self, path) -> None:
        """Per-step timing table with the reported column names."""
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "T_s", "T_train", "T_query", "T_planner",
                             "T_SP", "N_query", "P.L."])
            for s in self.steps:
                writer.writerow([s["step"], s["t_s"], s["t_train"], s["t_query"],
                                 s["t_planner"], s["t_sp"], s["n_query"],
                                 s["path_length"]])


def _dump_approximator_slices(model, voxmap: VoxelMap, path) -> None:
    """Approximator predictions over the map grid, as per-z JSON slices.

    Exported so plotting scripts can show the fitted field next to the
    dumped uncertainty field without recomputing anything themselves.
    """
    preds = np.empty(voxmap.n_voxels)
    centers = voxmap.voxel_centers()
    chunk = 16384
    for lo in range(0, voxmap.n_voxels, chunk):
        preds[lo:lo + chunk] = model.predict(centers[lo:lo + chunk])
    grid = preds.reshape(voxmap.dims)
    payload = {
        "origin": voxmap.origin.tolist(),
        "dims": list(voxmap.dims),
        "resolution": voxmap.resolution,
        "slices": [grid[:, :, k].tolist() for k in range(voxmap.dims[2])],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def run_experiment(scene, cfg: SceneConfig, planner_kind: str = "astar",
                   flags: VariantFlags | None = None, seed: int = 0,
                   net_cfg: NetworkConfig | None = None,
                   planner_cfg: PlannerConfig | None = None,
                   dump_dir=None, dump_gain_field: bool = False,
                   dump_map: bool = False, dump_paths: bool = False) -> RunRecord:
    """Run a full reconstruction to the view budget and score the result."""
    if planner_kind not in ("astar", "rrt"):
        raise ValueError(f"unknown planner kind {planner_kind!r}")
    flags = flags or VariantFlags()
    net_cfg = net_cfg or NetworkConfig(seed=seed)
    if planner_cfg is None:
        # the anytime RRT spends its whole budget, so it gets a tighter one
        budget = 20000 if planner_kind == "astar" else 1500
        planner_cfg = PlannerConfig(l_step=cfg.l_step, seed=seed,
                                    max_expansions=budget)

    start = Viewpoint(cfg.start, cfg.start_yaw, cfg.start_pitch)
    if scene_sdf(scene, start.position) <= 0 or not cfg.contains(start.position):
        raise ValueError("scene start viewpoint must be in free space in bounds")

    voxmap = VoxelMap.for_scene(cfg)
    fld = UncertaintyField(voxmap)
    state = ReconstructionState(voxmap=voxmap, field=fld,
                                p_s=start.position.copy(),
                                current_yaw=start.yaw, current_pitch=start.pitch)
    # Initial in-place panorama: spin through a few yaws so the first step
    # has navigable carved space in most directions. Counts against the
    # view budget like any other capture.
    n_init = min(INITIAL_PANORAMA_VIEWS, cfg.view_budget)
    for k in range(n_init):
        v = Viewpoint(start.position, start.yaw + k * 2.0 * np.pi / n_init,
                      start.pitch)
        img = render_depth(scene, v, cfg, rng_seed=derive_rng_seed(seed, 0, 90 + k))
        state.pending.append((v, img))
    # Placement clearance: the operator set the robot down with verified
    # free space around it, which the sensor's polar blind cones cannot
    # observe. Fill only unknown cells, never beyond the true clearance.
    bootstrap = max(cfg.d_n, np.sqrt(3.0) * cfg.l_step) + cfg.l_res
    clearance = float(scene_sdf(scene, start.position))
    voxmap.observe_free_ball(start.position, min(bootstrap, clearance))

    if dump_dir is not None:
        import os
        os.makedirs(dump_dir, exist_ok=True)

    reports = []
    trajectory = []
    max_steps = 10 * cfg.view_budget  # stall guard for degenerate captures
    while state.total_views < cfg.view_budget:
        if state.step_index >= max_steps:
            raise RunAbortedError("step limit exceeded without filling the budget")
        state, report, path, samples, model = run_step(
            state, scene, cfg, planner_cfg, net_cfg, flags, planner_kind, seed)
        reports.append(report)
        trajectory.append({
            "step": report.step,
            "nodes": path.nodes.tolist(),
            "node_gains": path.node_gains.tolist(),
        })
        if dump_dir is not None:
            tag = f"step_{report.step:03d}"
            if dump_gain_field:
                state.field.dump_slices_json(f"{dump_dir}/{tag}_field.json")
                if flags.use_approximator:
                    _dump_approximator_slices(model, state.voxmap,
                                              f"{dump_dir}/{tag}_gphi.json")
            if dump_map:
                state.voxmap.dump(f"{dump_dir}/{tag}_map.bin")
            if dump_paths:
                path.save(f"{dump_dir}/{tag}_path.json")
                samples.save(f"{dump_dir}/{tag}_samples.json")

    # final fusion so the scored map includes every budgeted capture
    for v, img in state.pending:
        state.voxmap.integrate_depth(v, img, cfg)
        state.voxmap.observe_free_ball(v.position, cfg.d_n)
        state.history.append((v, img))
    state.pending.clear()
    decay_uncertainty(state.field, state.voxmap)

    threshold = 2.0 * cfg.l_res
    gt = sample_gt_surface(scene, cfg.metric_samples, seed,
                           cfg.bounds_min, cfg.bounds_max)
    rec = sample_reconstructed_surface(state.voxmap, cfg.metric_samples, seed)
    quality = geometry_metrics(rec, gt, threshold)

    step_dicts = [asdict(r) for r in reports]
    totals = {
        "views": len(state.history),
        "steps": len(reports),
        "path_length": state.total_path_length,
        "n_query": state.total_queries,
        "t_gp": float(sum(r.t_s + r.t_sp for r in reports)),
        "t_sp_median": float(np.median([r.t_sp for r in reports])) if reports else 0.0,
        "expensive_evals": int(sum(r.expensive_evals for r in reports)),
        "cheap_evals": int(sum(r.cheap_evals for r in reports)),
        "completion_threshold": threshold,
    }
    return RunRecord(
        schema_version=SCHEMA_VERSION, scene=cfg.name, planner=planner_kind,
        use_approximator=flags.use_approximator, use_filter=flags.use_filter,
        seed=seed, variant_label=flags.label(planner_kind),
        steps=step_dicts, trajectory=trajectory, totals=totals,
        metrics=quality.to_json(), occupancy=state.voxmap.label_counts())
