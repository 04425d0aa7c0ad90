"""Informative view path planning over the occupancy map.

Both planners trade path length against the mean gain collected along the
path through the informative path cost

    IP(p)   = f_d(p_s, p) - lambda_gain * f_d(p_s, p) * G(p)
    G(p)    = mean gain over the path nodes after p_s
    Rank(p) = IP(p) + lambda_rank * h_d(p, p_g)

plan_astar runs best-first search on Rank over the 26-connected lattice of
spacing l_step anchored at p_s; diagonal moves cost their Euclidean
length. Because G makes IP non-additive, optimality is only guaranteed in
the degenerate lambda_gain = 0 configuration (plain shortest path with an
admissible heuristic); with gain enabled the search is a deliberate
best-first heuristic. plan_rrt grows a uniform-sampling tree with goal
bias and keeps the lowest-IP goal-reaching branch found within the
expansion budget, so the same cost shapes the returned route.

Gain oracles are duck-typed: anything with a .query(p) method (a fitted
approximator) or a bare callable p -> gain.
"""

import heapq
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .voxel_map import OccupancyLabel, VoxelMap

# 26-connected neighborhood offsets.
_NEIGHBOR_OFFSETS = np.array([(dx, dy, dz)
                              for dx in (-1, 0, 1)
                              for dy in (-1, 0, 1)
                              for dz in (-1, 0, 1)
                              if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)


class NoPathError(RuntimeError):
    """No collision-free path found within the expansion budget."""


@dataclass
class PlannerConfig:
    lambda_gain: float = 0.5
    lambda_rank: float = 1.5
    l_step: float = 0.2
    max_expansions: int = 20000
    seed: int = 0
    goal_bias: float = 0.1       # RRT only
    goal_tolerance: float | None = None   # defaults to l_step

    def __post_init__(self):
        if not 0.0 <= self.lambda_gain <= 1.0:
            raise ValueError("lambda_gain must lie in [0, 1] for gains in [0, 1]")
        if self.lambda_rank < 0.0:
            raise ValueError("lambda_rank must be >= 0")
        if self.l_step <= 0.0:
            raise ValueError("l_step must be positive")

    @property
    def tolerance(self) -> float:
        return self.goal_tolerance if self.goal_tolerance is not None else self.l_step


@dataclass
class ViewPath:
    """Collision-free node sequence from p_s to p_g with its IP accounting."""

    nodes: np.ndarray            # (n, 3)
    node_gains: np.ndarray       # (n,); entry 0 (p_s) is 0 by convention
    length: float
    mean_gain: float
    ip: float
    expansions: int = 0
    n_query: int = 0
    t_planner: float = 0.0
    planner: str = "astar"

    def to_json(self) -> dict:
        return {
            "planner": self.planner,
            "nodes": self.nodes.tolist(),
            "node_gains": self.node_gains.tolist(),
            "length": self.length,
            "mean_gain": self.mean_gain,
            "ip": self.ip,
            "expansions": self.expansions,
            "n_query": self.n_query,
            "t_planner": self.t_planner,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def ip_cost(f_d: float, mean_gain: float, lambda_gain: float) -> float:
    """Informative path cost: length discounted by collected gain."""
    if f_d < 0:
        raise ValueError("path length must be >= 0")
    return f_d - lambda_gain * f_d * mean_gain


def path_gain(points, model) -> float:
    """Mean oracle gain over path points (start node excluded by caller)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return 0.0
    oracle = _as_oracle(model)
    return float(np.mean([oracle(p) for p in pts]))


def rank_priority(ip: float, h_d: float, lambda_rank: float) -> float:
    """Expansion priority: IP plus weighted Euclidean distance to goal."""
    if h_d < 0:
        raise ValueError("heuristic distance must be >= 0")
    return ip + lambda_rank * h_d


def _as_oracle(model):
    if callable(model) and not hasattr(model, "query"):
        return model
    return model.query


class _CountingOracle:
    def __init__(self, model):
        self._fn = _as_oracle(model)
        self.calls = 0

    def __call__(self, p) -> float:
        self.calls += 1
        return float(self._fn(np.asarray(p, dtype=float)))


def _validate_endpoints(voxmap: VoxelMap, p_s, p_g):
    p_s = np.asarray(p_s, dtype=float).reshape(3)
    p_g = np.asarray(p_g, dtype=float).reshape(3)
    if voxmap.occupancy(p_s) != OccupancyLabel.EMPTY:
        raise ValueError("start position must lie in Empty space")
    if not voxmap.in_grid(voxmap.voxel_index(p_g)):
        raise ValueError("goal position must lie within map bounds")
    if voxmap.occupancy(p_g) != OccupancyLabel.EMPTY:
        raise ValueError("goal position must lie in Empty space")
    return p_s, p_g


def _single_node_path(p_s, planner: str) -> ViewPath:
    node = np.asarray(p_s, dtype=float).reshape(1, 3)
    return ViewPath(nodes=node, node_gains=np.zeros(1), length=0.0,
                    mean_gain=0.0, ip=0.0, planner=planner)


def _finish(nodes, gains, oracle, cfg, planner, expansions, t0) -> ViewPath:
    nodes = np.asarray(nodes, dtype=float)
    seg = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    length = float(seg.sum())
    gains = np.asarray(gains, dtype=float)
    mean_gain = float(gains[1:].mean()) if len(gains) > 1 else 0.0
    return ViewPath(
        nodes=nodes, node_gains=gains, length=length, mean_gain=mean_gain,
        ip=ip_cost(length, mean_gain, cfg.lambda_gain),
        expansions=expansions, n_query=oracle.calls,
        t_planner=time.perf_counter() - t0, planner=planner)


def plan_astar(voxmap: VoxelMap, model, p_s, p_g,
               cfg: PlannerConfig) -> ViewPath:
    """Best-first informative path search on the l_step lattice.

    The goal test accepts any node within the goal tolerance of p_g whose
    snap segment is collision free; the terminal node is snapped to p_g.
    Ties break toward lower accumulated length, then lexicographic lattice
    position. Raises NoPathError when the frontier empties or the
    expansion budget runs out.
    """
    t0 = time.perf_counter()
    p_s, p_g = _validate_endpoints(voxmap, p_s, p_g)
    oracle = _CountingOracle(model)

    if np.allclose(p_s, p_g):
        path = _single_node_path(p_s, "astar")
        path.t_planner = time.perf_counter() - t0
        return path

    # node record: key -> (f_d, gain_sum, gain_count, parent_key, position)
    nodes = {}
    start_key = (0, 0, 0)
    nodes[start_key] = (0.0, 0.0, 0, None, p_s)
    best_rank = {start_key: rank_priority(0.0, float(np.linalg.norm(p_g - p_s)),
                                          cfg.lambda_rank)}
    heap = [(best_rank[start_key], 0.0, start_key)]
    closed = set()
    gain_cache = {}
    expansions = 0

    def node_gain(key, pos):
        if key not in gain_cache:
            gain_cache[key] = oracle(pos)
        return gain_cache[key]

    while heap:
        rank, f_d, key = heapq.heappop(heap)
        if key in closed or rank > best_rank.get(key, np.inf):
            continue
        closed.add(key)
        expansions += 1
        if expansions > cfg.max_expansions:
            raise NoPathError(f"expansion budget {cfg.max_expansions} exhausted")
        f_d, gain_sum, gain_count, _, pos = nodes[key]

        # goal test with snap
        goal_dist = float(np.linalg.norm(p_g - pos))
        if goal_dist <= cfg.tolerance and voxmap.is_path_free(pos, p_g):
            chain = []
            k = key
            while k is not None:
                chain.append(k)
                k = nodes[k][3]
            chain.reverse()
            path_nodes = [nodes[k][4] for k in chain]
            gains = [0.0] + [node_gain(k, nodes[k][4]) for k in chain[1:]]
            if goal_dist > 1e-12:
                path_nodes.append(p_g)
                gains.append(oracle(p_g))
            return _finish(path_nodes, gains, oracle, cfg, "astar", expansions, t0)

        for off in _NEIGHBOR_OFFSETS:
            ckey = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            if ckey in closed:
                continue
            cpos = p_s + np.array(ckey, dtype=float) * cfg.l_step
            cidx = voxmap.voxel_index(cpos)
            if not voxmap.in_grid(cidx):
                continue
            if not voxmap.is_path_free(pos, cpos):
                continue
            step_len = float(np.linalg.norm(off * cfg.l_step))
            c_fd = f_d + step_len
            c_gain = node_gain(ckey, cpos)
            c_sum = gain_sum + c_gain
            c_count = gain_count + 1
            c_ip = ip_cost(c_fd, c_sum / c_count, cfg.lambda_gain)
            c_rank = rank_priority(c_ip, float(np.linalg.norm(p_g - cpos)),
                                   cfg.lambda_rank)
            if c_rank < best_rank.get(ckey, np.inf) - 1e-15:
                best_rank[ckey] = c_rank
                nodes[ckey] = (c_fd, c_sum, c_count, key, cpos)
                heapq.heappush(heap, (c_rank, c_fd, ckey))
    raise NoPathError("frontier exhausted without reaching the goal")


def plan_rrt(voxmap: VoxelMap, model, p_s, p_g, cfg: PlannerConfig) -> ViewPath:
    """Informative RRT baseline: uniform tree growth, best-IP goal branch.

    Samples uniformly over the map bounds with goal bias and steers by
    l_step. The view path cost drives the tree in two places: a new node
    attaches to the near node (within sqrt(3) * l_step) that minimizes its
    resulting IP, and all goal-region arrivals found within the expansion
    budget compete on terminal IP, so the returned route reflects the cost
    rather than arrival order.
    """
    t0 = time.perf_counter()
    p_s, p_g = _validate_endpoints(voxmap, p_s, p_g)
    oracle = _CountingOracle(model)
    rng = np.random.default_rng(cfg.seed)

    if np.allclose(p_s, p_g):
        path = _single_node_path(p_s, "rrt")
        path.t_planner = time.perf_counter() - t0
        return path

    positions = [p_s]
    parents = [-1]
    f_ds = [0.0]
    gain_sums = [0.0]
    gain_counts = [0]
    node_gains = [0.0]
    pos_arr = np.zeros((cfg.max_expansions + 1, 3))
    pos_arr[0] = p_s
    n = 1

    lo = voxmap.origin
    hi = voxmap.world_max
    best_goal = None   # (ip, node_index)

    def try_connect_goal(i):
        nonlocal best_goal
        d = float(np.linalg.norm(p_g - positions[i]))
        if d <= cfg.tolerance and voxmap.is_path_free(positions[i], p_g):
            g_goal = oracle(p_g)
            fd = f_ds[i] + d
            mean = (gain_sums[i] + g_goal) / (gain_counts[i] + 1)
            ip = ip_cost(fd, mean, cfg.lambda_gain)
            if best_goal is None or ip < best_goal[0]:
                best_goal = (ip, i, g_goal)

    try_connect_goal(0)
    parent_radius = np.sqrt(3.0) * cfg.l_step  # keeps node spacing within bound
    expansions = 0
    for _ in range(cfg.max_expansions):
        expansions += 1
        if rng.uniform() < cfg.goal_bias:
            target = p_g
        else:
            target = rng.uniform(lo, hi)
        dists = np.linalg.norm(pos_arr[:n] - target, axis=1)
        nearest = int(np.argmin(dists))
        d = dists[nearest]
        if d < 1e-12:
            continue
        new = pos_arr[nearest] + (target - pos_arr[nearest]) / d * min(cfg.l_step, d)
        if voxmap.occupancy(new) != OccupancyLabel.EMPTY:
            continue
        g_new = oracle(new)

        # choose-parent by resulting IP among near nodes (view path cost
        # drives tree expansion, not just proximity)
        near_d = np.linalg.norm(pos_arr[:n] - new, axis=1)
        near = np.flatnonzero(near_d <= parent_radius + 1e-12)
        if near.size == 0:
            near = np.array([nearest])
        cand_fd = np.array([f_ds[i] for i in near]) + near_d[near]
        cand_mean = (np.array([gain_sums[i] for i in near]) + g_new) \
            / (np.array([gain_counts[i] for i in near]) + 1)
        cand_ip = cand_fd - cfg.lambda_gain * cand_fd * cand_mean
        parent = -1
        for j in np.argsort(cand_ip, kind="stable"):
            i = int(near[j])
            if near_d[i] > 1e-12 and voxmap.is_path_free(pos_arr[i], new):
                parent = i
                break
        if parent < 0:
            continue

        positions.append(new)
        parents.append(parent)
        step_len = float(np.linalg.norm(new - pos_arr[parent]))
        f_ds.append(f_ds[parent] + step_len)
        gain_sums.append(gain_sums[parent] + g_new)
        gain_counts.append(gain_counts[parent] + 1)
        node_gains.append(g_new)
        pos_arr[n] = new
        try_connect_goal(n)
        n += 1

    if best_goal is None:
        raise NoPathError(f"no goal connection within {cfg.max_expansions} samples")

    _, leaf, g_goal = best_goal
    chain = []
    i = leaf
    while i >= 0:
        chain.append(i)
        i = parents[i]
    chain.reverse()
    path_nodes = [positions[i] for i in chain]
    gains = [node_gains[i] for i in chain]
    if float(np.linalg.norm(p_g - positions[leaf])) > 1e-12:
        path_nodes.append(p_g)
        gains.append(g_goal)
    return _finish(path_nodes, gains, oracle, cfg, "rrt", expansions, t0)
