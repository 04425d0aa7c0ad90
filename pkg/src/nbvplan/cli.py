"""Command-line entry point.

Subcommands:

* run --manifest M         execute the manifest's experiments, one run
                           record (JSON) plus step CSV per seed
* table GLOB --out CSV     per-variant medians across matching records
* bench --scene S ...      paired timing of exact gain evaluation vs a
                           fitted approximator query

Exit codes: 0 success, 1 aborted run, 2 configuration error.
"""

import argparse
import csv
import glob as globmod
import json
import sys
import time
from pathlib import Path

import numpy as np

from .approximator import NetworkConfig, fit
from .config import ConfigError, load_manifest, resolve_scene
from .gain_field import UncertaintyField, decay_uncertainty, evaluate_viewpoint
from .pipeline import (
    INITIAL_PANORAMA_VIEWS,
    RunAbortedError,
    RunRecord,
    SchemaError,
    VariantFlags,
    derive_rng_seed,
    run_experiment,
)
from .sampler import select_views
from .scene_sim import Viewpoint, render_depth, scene_sdf
from .voxel_map import VoxelMap

EXIT_OK = 0
EXIT_ABORT = 1
EXIT_CONFIG = 2


def cmd_run(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        prims, cfg = manifest.load_scene()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    flags = VariantFlags(manifest.use_approximator, manifest.use_filter)
    outdir = Path(manifest.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for seed in manifest.seeds:
        tag = f"{cfg.name}_{flags.label(manifest.planner)}_seed{seed}"
        dump_dir = None
        if manifest.dump_gain_field or manifest.dump_map or manifest.dump_paths:
            dump_dir = outdir / f"{tag}_dumps"
        try:
            record = run_experiment(
                prims, cfg, manifest.planner, flags, seed=seed,
                dump_dir=dump_dir,
                dump_gain_field=manifest.dump_gain_field,
                dump_map=manifest.dump_map,
                dump_paths=manifest.dump_paths)
        except RunAbortedError as e:
            print(f"run seed={seed} aborted: {e}", file=sys.stderr)
            status = EXIT_ABORT
            continue
        record_path = outdir / f"{tag}.json"
        record.save(record_path)
        record.write_step_csv(outdir / f"{tag}_steps.csv")
        print(f"wrote {record_path}")
    return status


TABLE_COLUMNS = ["variant", "runs", "Acc", "Comp", "C.R.", "N_query",
                 "T_SP", "T_GP", "P.L."]


def summarize_records(records) -> list:
    """Per-variant medians across runs; per-step quantities are first
    reduced to a per-run median."""
    by_variant = {}
    for rec in records:
        by_variant.setdefault(rec.variant_label, []).append(rec)
    rows = []
    for label in sorted(by_variant):
        recs = by_variant[label]
        med = lambda vals: float(np.median(vals))
        rows.append({
            "variant": label,
            "runs": len(recs),
            "Acc": med([r.metrics["accuracy"] for r in recs]),
            "Comp": med([r.metrics["completion"] for r in recs]),
            "C.R.": med([r.metrics["completion_ratio"] for r in recs]),
            "N_query": med([med([s["n_query"] for s in r.steps]) for r in recs]),
            "T_SP": med([med([s["t_sp"] for s in r.steps]) for r in recs]),
            "T_GP": med([r.totals["t_gp"] for r in recs]),
            "P.L.": med([r.totals["path_length"] for r in recs]),
        })
    return rows


def cmd_table(args) -> int:
    paths = sorted(globmod.glob(args.records))
    if not paths:
        print(f"no records match {args.records!r}", file=sys.stderr)
        return EXIT_CONFIG
    records = []
    for p in paths:
        try:
            records.append(RunRecord.load(p))
        except (SchemaError, json.JSONDecodeError, KeyError, TypeError) as e:
            print(f"bad record {p}: {e}", file=sys.stderr)
            return EXIT_CONFIG
    rows = summarize_records(records)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} variants, {len(records)} records)")
    return EXIT_OK


def bench_speedup(prims, cfg, rays: int, samples: int, reps: int, seed: int = 0):
    """Paired exact-vs-approximator timing on identical viewpoint sets.

    Builds a partially reconstructed map (initial panorama), fits the
    approximator to one sampling round, then times both gain routes on the
    same rep viewpoints. Returns the report dict.
    """
    if reps < 10:
        raise ValueError("reps must be >= 10")
    start = Viewpoint(cfg.start, cfg.start_yaw, cfg.start_pitch)
    voxmap = VoxelMap.for_scene(cfg)
    n_init = max(INITIAL_PANORAMA_VIEWS, 4)
    for k in range(n_init):
        v = Viewpoint(start.position, start.yaw + 2 * np.pi * k / n_init,
                      start.pitch)
        img = render_depth(prims, v, cfg, rng_seed=derive_rng_seed(seed, 0, k))
        voxmap.integrate_depth(v, img, cfg)
    bootstrap = max(cfg.d_n, np.sqrt(3.0) * cfg.l_step) + cfg.l_res
    voxmap.observe_free_ball(start.position,
                             min(bootstrap, float(scene_sdf(prims, start.position))))
    fld = decay_uncertainty(UncertaintyField(voxmap), voxmap)
    sample_set = select_views(voxmap, fld, start.position, cfg,
                              rng_seed=derive_rng_seed(seed, 1, 0))
    model = fit(sample_set, NetworkConfig(seed=seed))

    rng = np.random.default_rng(derive_rng_seed(seed, 2, 0))
    exact_times = []
    query_times = []
    for _ in range(reps):
        pos = start.position + rng.uniform(-0.5, 0.5, size=3) * cfg.l_s
        vp = Viewpoint(np.clip(pos, cfg.bounds_min + 1e-3, cfg.bounds_max - 1e-3),
                       rng.uniform(0, 2 * np.pi),
                       rng.uniform(-np.pi / 4, np.pi / 4))
        t0 = time.perf_counter()
        evaluate_viewpoint(fld, voxmap, vp, cfg, rays=rays, samples=samples)
        exact_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        model.query(vp.position)
        query_times.append(time.perf_counter() - t0)
    med_exact = float(np.median(exact_times))
    med_query = float(np.median(query_times))
    return {
        "scene": cfg.name,
        "rays": rays,
        "samples": samples,
        "reps": reps,
        "median_exact_s": med_exact,
        "median_query_s": med_query,
        "speedup": med_exact / med_query if med_query > 0 else float("inf"),
    }


def cmd_bench(args) -> int:
    try:
        prims, cfg = resolve_scene(args.scene)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = bench_speedup(prims, cfg, args.rays, args.samples, args.reps,
                               seed=args.seed)
    except ValueError as e:
        print(f"bench error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbvplan",
        description="View path planning experiments on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run manifest")
    p_run.add_argument("--manifest", required=True)
    p_run.set_defaults(func=cmd_run)

    p_table = sub.add_parser("table", help="summarize run records to CSV")
    p_table.add_argument("records", help="glob of run record JSON files")
    p_table.add_argument("--out", required=True)
    p_table.set_defaults(func=cmd_table)

    p_bench = sub.add_parser("bench", help="exact vs approximated gain timing")
    p_bench.add_argument("--scene", required=True,
                         help="scene file path or builtin:<name>")
    p_bench.add_argument("--rays", type=int, default=100)
    p_bench.add_argument("--samples", type=int, default=64)
    p_bench.add_argument("--reps", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
