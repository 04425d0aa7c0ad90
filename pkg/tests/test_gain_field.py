import numpy as np
import pytest

from helpers import brute_force_sigma_v2
from nbvplan.gain_field import (
    UncertaintyField,
    combine_ray_uncertainty,
    decay_uncertainty,
    evaluate_viewpoint,
    gain_ray_directions,
    information_gain,
    ray_sample_depths,
    ray_sample_weights,
    view_depth,
    viewpoint_uncertainty,
)
from nbvplan.scene_sim import SceneConfig, Viewpoint, cabin_scene, render_depth
from nbvplan.voxel_map import OccupancyLabel, VoxelMap


def make_cfg(**kw):
    defaults = dict(
        name="gain-test",
        bounds_min=[0.0, 0.0, 0.0], bounds_max=[4.0, 4.0, 4.0],
        l_s=2.0, l_res=0.5, l_step=0.2,
        d_n=0.2, d_f=3.0, d_min=0.5, d_max=2.0,
        n_pitch=1, n_yaw=1, view_budget=5,
        width=8, height=8,
    )
    defaults.update(kw)
    return SceneConfig(**defaults)


def cabin_params_cfg(sigma=None):
    """Config carrying the cabin depth band d_min 2.5, d_max 4.5."""
    return make_cfg(bounds_min=[0, 0, 0], bounds_max=[5.0, 5.0, 3.0],
                    d_n=0.5, d_f=6.0, d_min=2.5, d_max=4.5, l_res=0.1)


def random_map_and_field(rng, cfg):
    m = VoxelMap.for_scene(cfg)
    m.labels = rng.integers(0, 3, size=m.dims).astype(np.uint8)
    # keep weights consistent enough for the field (not used by Eq-1 path)
    f = UncertaintyField(m)
    f.values = rng.uniform(0.0, 1.0, size=m.dims)
    return m, f


# decay law --------------------------------------------------------------------

def test_decay_unobserved_cell_keeps_max():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    f = decay_uncertainty(UncertaintyField(m), m)
    assert np.all(f.values == 1.0)


def test_decay_three_observations():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    m.counts[2, 2, 2] = 3
    f = decay_uncertainty(UncertaintyField(m), m)
    assert f.values[2, 2, 2] == pytest.approx(0.25)


def test_decay_monotone_to_zero():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    prev = 1.0
    f = UncertaintyField(m)
    for n in (1, 5, 50, 500, 50000):
        m.counts[0, 0, 0] = n
        decay_uncertainty(f, m)
        cur = f.values[0, 0, 0]
        assert cur < prev
        prev = cur
    assert prev < 1e-4


def test_geometry_mismatch_rejected():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    other = VoxelMap([0, 0, 0], (2, 2, 2), 1.0)
    with pytest.raises(ValueError):
        decay_uncertainty(UncertaintyField(m), other)


# viewpoint uncertainty ----------------------------------------------------------

def test_zero_field_zero_uncertainty():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    f = UncertaintyField(m)
    f.values[:] = 0.0
    v = Viewpoint([2.0, 2.0, 2.0], yaw=0.3, pitch=0.1)
    assert viewpoint_uncertainty(f, m, v, 4, 8, cfg) == 0.0


def test_single_term_sum():
    # R = 1, N = 1, first sample absorbs all weight, sigma^2 = 0.7.
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)  # fully Unobserved: alpha = 1 at first sample
    f = UncertaintyField(m)
    f.values[:] = 0.7
    v = Viewpoint([2.0, 2.0, 2.0], yaw=0.0, pitch=0.0)
    assert viewpoint_uncertainty(f, m, v, 1, 1, cfg) == pytest.approx(0.7)


def test_hand_evaluated_two_ray_combination():
    # Hand evaluation of the weighted double sum: ray 1 weights (0.5, 0.5)
    # over sigma^2 (0.2, 0.4); ray 2 weight 1.0 over 0.5 -> 0.4.
    weights = np.array([[0.5, 0.5], [1.0, 0.0]])
    sigma2 = np.array([[0.2, 0.4], [0.5, 0.0]])
    assert combine_ray_uncertainty(weights, sigma2) == pytest.approx(0.4)


def test_rejects_zero_rays_or_samples():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    f = UncertaintyField(m)
    v = Viewpoint([2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        viewpoint_uncertainty(f, m, v, 0, 4, cfg)
    with pytest.raises(ValueError):
        viewpoint_uncertainty(f, m, v, 4, 0, cfg)


def test_matches_brute_force_oracle_on_random_configs():
    rng = np.random.default_rng(42)
    for trial in range(50):
        cfg = make_cfg()
        m, f = random_map_and_field(rng, cfg)
        v = Viewpoint(rng.uniform(0.5, 3.5, size=3),
                      yaw=rng.uniform(0, 2 * np.pi),
                      pitch=rng.uniform(-1.0, 1.0))
        rays = int(rng.integers(1, 5))
        samples = int(rng.integers(1, 9))
        fast = viewpoint_uncertainty(f, m, v, rays, samples, cfg)
        slow = brute_force_sigma_v2(f, m, v, rays, samples, cfg)
        assert fast == pytest.approx(slow, abs=1e-12), f"trial {trial}"


def test_transmittance_budget_and_stop():
    rng = np.random.default_rng(9)
    cfg = make_cfg()
    for _ in range(20):
        m, f = random_map_and_field(rng, cfg)
        v = Viewpoint(rng.uniform(0.5, 3.5, size=3), rng.uniform(0, 2 * np.pi),
                      rng.uniform(-1.0, 1.0))
        weights, _ = ray_sample_weights(f, m, v, 6, 12, cfg)
        assert np.all(weights.sum(axis=1) <= 1.0 + 1e-12)
        for row in weights:
            hits = np.flatnonzero(row > 0)
            if hits.size:
                assert np.all(row[hits[0] + 1:] == 0.0)


# view depth ---------------------------------------------------------------------

def fused_step_map(cfg, z_left, z_right):
    """Analytic fused TSDF of a step floor: z_left for x < 2, z_right after."""
    m = VoxelMap.for_scene(cfg)
    centers = m.voxel_centers()
    plane_z = np.where(centers[:, 0] < 2.0, z_left, z_right)
    m.values = np.clip(centers[:, 2] - plane_z, -m.truncation,
                       m.truncation).reshape(m.dims)
    m.weights[:] = 1.0
    m.counts[:] = 1
    m.refresh_labels()
    return m


def analytic_step_depth(origin, direction, z_left, z_right):
    if direction[2] >= 0:
        return None
    for side_left, z_plane in ((True, z_left), (False, z_right)):
        t = (z_plane - origin[2]) / direction[2]
        x = origin[0] + t * direction[0]
        if (x < 2.0) == side_left:
            return t
    return None


def test_view_depth_flat_floor():
    cfg = make_cfg(bounds_min=[0, 0, -1.0], bounds_max=[4, 4, 3.0],
                   l_res=0.1, d_f=5.0, d_max=4.0)
    m = fused_step_map(cfg, 0.0, 0.0)
    v = Viewpoint([2.0, 2.0, 2.5], yaw=0.0, pitch=-np.pi / 2)
    d = view_depth(m, v, cfg, rays=9)
    dirs = gain_ray_directions(v, cfg, 9)
    expected = np.mean([analytic_step_depth(v.position, d_, 0.0, 0.0) for d_ in dirs])
    assert d == pytest.approx(expected, abs=cfg.l_res)


def test_view_depth_mean_over_step():
    # Rays split across a two-level floor; oracle is the analytic mean.
    cfg = make_cfg(bounds_min=[0, 0, -2.0], bounds_max=[4, 4, 3.0],
                   l_res=0.1, d_f=6.0, d_max=4.0)
    m = fused_step_map(cfg, 0.5, -1.0)
    v = Viewpoint([2.0, 2.0, 2.5], yaw=0.0, pitch=-np.pi / 2)
    rays = 16
    d = view_depth(m, v, cfg, rays=rays)
    dirs = gain_ray_directions(v, cfg, rays)
    per_ray = [analytic_step_depth(v.position, d_, 0.5, -1.0) for d_ in dirs]
    per_ray = [t for t in per_ray if t is not None and cfg.d_n <= t <= cfg.d_f]
    assert d == pytest.approx(np.mean(per_ray), abs=cfg.l_res)


def test_view_depth_no_valid_rays():
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)  # fully unobserved: every ray gives up
    v = Viewpoint([2.0, 2.0, 2.0], yaw=0.0, pitch=0.0)
    assert view_depth(m, v, cfg, rays=4) is None


# information gain ------------------------------------------------------------------

def test_gain_identity_inside_band():
    cfg = cabin_params_cfg()
    assert information_gain(0.6, 3.0, cfg) == pytest.approx(0.6)


def test_gain_decay_outside_band():
    # |alpha| = 1, |d_v - d_u| = 2 -> factor e^-2.
    cfg = cabin_params_cfg()
    assert information_gain(0.6, 5.5, cfg) == pytest.approx(0.6 * np.exp(-2.0))
    assert information_gain(0.6, 5.5, cfg) == pytest.approx(0.0812, abs=2e-4)


def test_gain_zero_uncertainty_is_zero():
    cfg = cabin_params_cfg()
    for dv in (0.6, 3.0, 5.9, None):
        assert information_gain(0.0, dv, cfg) == 0.0


def test_gain_no_valid_rays_uses_far_field():
    cfg = cabin_params_cfg()
    assert information_gain(0.5, None, cfg) == pytest.approx(
        information_gain(0.5, cfg.d_f, cfg))


def test_gain_monotone_decay_and_edge_continuity():
    cfg = cabin_params_cfg()
    s2 = 0.8
    d_u = (cfg.d_min + cfg.d_max) / 2
    # non-increasing in |d_v - d_u| outside the band
    upper = [information_gain(s2, d, cfg) for d in np.linspace(cfg.d_max, cfg.d_f, 50)]
    assert all(a >= b - 1e-15 for a, b in zip(upper, upper[1:]))
    lower = [information_gain(s2, d, cfg) for d in np.linspace(cfg.d_min, cfg.d_n, 50)]
    assert all(a >= b - 1e-15 for a, b in zip(lower, lower[1:]))
    # approaching each band edge from outside matches the boundary value
    for edge, eps_dir in ((cfg.d_min, -1.0), (cfg.d_max, +1.0)):
        at_edge = information_gain(s2, edge, cfg)
        near = information_gain(s2, edge + eps_dir * 1e-13, cfg)
        assert abs(at_edge - near) < 1e-12


def test_gain_never_exceeds_sigma_v2():
    cfg = cabin_params_cfg()
    rng = np.random.default_rng(2)
    for _ in range(200):
        s2 = rng.uniform(0, 1)
        dv = rng.uniform(0.5, 6.0)
        assert information_gain(s2, dv, cfg) <= s2 + 1e-15


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        information_gain(-0.1, 3.0, cabin_params_cfg())


# re-observation monotonicity ---------------------------------------------------

def test_reobservation_strictly_decreases_uncertainty():
    scene, cfg = cabin_scene()
    cfg.k_noise = 0.0
    m = VoxelMap.for_scene(cfg)
    f = decay_uncertainty(UncertaintyField(m), m)
    v = Viewpoint(cfg.start, cfg.start_yaw, cfg.start_pitch)
    before = viewpoint_uncertainty(f, m, v, 25, 32, cfg)
    assert before > 0.0
    img = render_depth(scene, v, cfg)
    m.integrate_depth(v, img, cfg)
    decay_uncertainty(f, m)
    after = viewpoint_uncertainty(f, m, v, 25, 32, cfg)
    assert after < before


def test_evaluate_viewpoint_consistent():
    scene, cfg = cabin_scene()
    cfg.k_noise = 0.0
    m = VoxelMap.for_scene(cfg)
    f = decay_uncertainty(UncertaintyField(m), m)
    v = Viewpoint(cfg.start, cfg.start_yaw, cfg.start_pitch)
    img = render_depth(scene, v, cfg)
    m.integrate_depth(v, img, cfg)
    decay_uncertainty(f, m)
    g = evaluate_viewpoint(f, m, v, cfg, rays=25, samples=32)
    assert g.sigma_v2 == pytest.approx(viewpoint_uncertainty(f, m, v, 25, 32, cfg))
    assert g.gain == pytest.approx(information_gain(g.sigma_v2, g.view_depth, cfg))
    assert g.gain <= g.sigma_v2 + 1e-15


def test_field_slices_dump(tmp_path):
    import json
    cfg = make_cfg()
    m = VoxelMap.for_scene(cfg)
    f = UncertaintyField(m)
    out = tmp_path / "field.json"
    f.dump_slices_json(out)
    data = json.loads(out.read_text())
    assert data["dims"] == list(m.dims)
    assert len(data["slices"]) == m.dims[2]
