"""Render plots from exported run data. Strictly read-only consumers.

Every plot kind draws values that already exist in the input files; no
planner, gain, or network math is recomputed here. Inputs are validated
against the published schemas and mismatches name the offending field.

Kinds:

* ``trajectory``  — one run record JSON; top-down executed path polyline
  colored by the exported per-node gains
* ``gain-slice``  — field-slices JSON (plus an optional second slices
  file, e.g. the fitted-approximator dump) at a given height; one panel
  per input
* ``table-bars``  — summary CSV from the table command; grouped bars for
  per-step planning time and total path length per variant
* ``loss-curve``  — training-loss CSV (epoch,loss)

Usage: ``nbvplan-plot <kind> <inputs...> -o out.png [--slice-height Z]``
Exit codes: 0 success, 2 schema mismatch or unreadable input.
"""

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection

EXPECTED_SCHEMA_VERSION = 1
PLOT_KINDS = ("trajectory", "gain-slice", "table-bars", "loss-curve")


class SchemaMismatchError(ValueError):
    """Input file does not match the published export schema."""


@dataclass
class PlotSpec:
    kind: str
    inputs: list
    output: str
    slice_height: float | None = None

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise SchemaMismatchError(
                f"unknown plot kind {self.kind!r}; expected one of {PLOT_KINDS}")
        if not self.inputs:
            raise SchemaMismatchError("at least one input file is required")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaMismatchError(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f"{path}: not valid JSON ({e})")


def _require(mapping, key, source):
    if key not in mapping:
        raise SchemaMismatchError(f"{source}: missing field '{key}'")
    return mapping[key]


def _load_record(path):
    data = _load_json(path)
    version = _require(data, "schema_version", path)
    if version != EXPECTED_SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"{path}: schema_version {version!r}, expected {EXPECTED_SCHEMA_VERSION}")
    for key in ("scene", "variant_label", "trajectory", "totals"):
        _require(data, key, path)
    return data


# ---------------------------------------------------------------------------
# plot kinds
# ---------------------------------------------------------------------------

def _plot_trajectory(spec: PlotSpec):
    record = _load_record(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(7, 6))
    all_gains = []
    for entry in record["trajectory"]:
        all_gains.extend(_require(entry, "node_gains", spec.inputs[0]))
    vmax = max(all_gains) if all_gains else 1.0
    vmax = vmax if vmax > 0 else 1.0

    last = None
    for entry in record["trajectory"]:
        nodes = np.asarray(_require(entry, "nodes", spec.inputs[0]), dtype=float)
        gains = np.asarray(entry["node_gains"], dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise SchemaMismatchError(
                f"{spec.inputs[0]}: field 'nodes' must be an (n, 3) list")
        pts = nodes[:, :2]
        segments = np.stack([pts[:-1], pts[1:]], axis=1)
        seg_gain = gains[1:]
        lc = LineCollection(segments, cmap="viridis", linewidths=2.5)
        lc.set_array(seg_gain)
        lc.set_clim(0.0, vmax)
        ax.add_collection(lc)
        last = nodes
    start = np.asarray(record["trajectory"][0]["nodes"][0], dtype=float)
    ax.plot(start[0], start[1], "k^", markersize=9, label="start")
    if last is not None:
        ax.plot(last[-1, 0], last[-1, 1], "r*", markersize=12, label="final view")
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{record['scene']} / {record['variant_label']} — "
                 f"top-down trajectory, P.L. "
                 f"{record['totals'].get('path_length', float('nan')):.2f} m")
    fig.colorbar(lc, ax=ax, label="node gain")
    ax.legend(loc="best")
    return fig


def _slice_index(data, height, source):
    origin = _require(data, "origin", source)
    dims = _require(data, "dims", source)
    res = _require(data, "resolution", source)
    k = int(np.floor((height - origin[2]) / res))
    if not 0 <= k < dims[2]:
        raise SchemaMismatchError(
            f"{source}: slice height {height} outside the grid "
            f"[{origin[2]}, {origin[2] + dims[2] * res})")
    return k


def _plot_gain_slice(spec: PlotSpec):
    if spec.slice_height is None:
        raise SchemaMismatchError("gain-slice requires --slice-height")
    panels = []
    for path in spec.inputs:
        data = _load_json(path)
        slices = _require(data, "slices", path)
        k = _slice_index(data, spec.slice_height, path)
        panels.append((Path(path).stem, np.asarray(slices[k], dtype=float), data))

    fig, axes = plt.subplots(1, len(panels), figsize=(6 * len(panels), 5),
                             squeeze=False)
    for ax, (name, grid, data) in zip(axes[0], panels):
        origin = data["origin"]
        res = data["resolution"]
        extent = [origin[0], origin[0] + grid.shape[0] * res,
                  origin[1], origin[1] + grid.shape[1] * res]
        im = ax.imshow(grid.T, origin="lower", extent=extent, cmap="magma",
                       vmin=0.0, vmax=1.0)
        ax.set_title(f"{name} @ z={spec.slice_height} m")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        fig.colorbar(im, ax=ax)
    return fig


def _plot_table_bars(spec: PlotSpec):
    path = spec.inputs[0]
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise SchemaMismatchError(f"{path}: no such file")
    if not rows:
        raise SchemaMismatchError(f"{path}: empty table")
    for col in ("variant", "T_SP", "P.L."):
        if col not in rows[0]:
            raise SchemaMismatchError(f"{path}: missing field '{col}'")
    variants = [r["variant"] for r in rows]
    t_sp = [float(r["T_SP"]) for r in rows]
    pl = [float(r["P.L."]) for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    x = np.arange(len(variants))
    ax1.bar(x, t_sp, color="tab:blue")
    ax1.set_xticks(x, variants, rotation=20, ha="right")
    ax1.set_ylabel("median per-step planning time T_SP (s)")
    ax2.bar(x, pl, color="tab:orange")
    ax2.set_xticks(x, variants, rotation=20, ha="right")
    ax2.set_ylabel("median total path length P.L. (m)")
    fig.suptitle("variant comparison")
    fig.tight_layout()
    return fig


def _plot_loss_curve(spec: PlotSpec):
    path = spec.inputs[0]
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise SchemaMismatchError(f"{path}: no such file")
    if not rows:
        raise SchemaMismatchError(f"{path}: empty table")
    for col in ("epoch", "loss"):
        if col not in rows[0]:
            raise SchemaMismatchError(f"{path}: missing field '{col}'")
    epochs = [int(r["epoch"]) for r in rows]
    losses = [float(r["loss"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title("approximator fitting")
    return fig


_RENDERERS = {
    "trajectory": _plot_trajectory,
    "gain-slice": _plot_gain_slice,
    "table-bars": _plot_table_bars,
    "loss-curve": _plot_loss_curve,
}


def plot(spec: PlotSpec) -> Path:
    """Render the spec to its output image; returns the written path."""
    fig = _RENDERERS[spec.kind](spec)
    out = Path(spec.output)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nbvplan-plot",
        description="Plot exported run records, field dumps and summaries")
    parser.add_argument("kind", choices=PLOT_KINDS)
    parser.add_argument("inputs", nargs="+", help="exported JSON/CSV file(s)")
    parser.add_argument("-o", "--output", required=True, help="output PNG path")
    parser.add_argument("--slice-height", type=float, default=None,
                        help="slice z height in meters (gain-slice only)")
    args = parser.parse_args(argv)
    try:
        spec = PlotSpec(kind=args.kind, inputs=args.inputs, output=args.output,
                        slice_height=args.slice_height)
        out = plot(spec)
    except SchemaMismatchError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
