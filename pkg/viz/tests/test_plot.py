import json
import shutil
from pathlib import Path

import pytest

from viz.plot import PlotSpec, SchemaMismatchError, main, plot

GOLDEN = Path(__file__).parent / "golden"
PNG_MAGIC = b"\x89PNG"


def is_png(path):
    return path.read_bytes()[:4] == PNG_MAGIC


# rendering -----------------------------------------------------------------

def test_trajectory_from_golden_record(tmp_path):
    out = tmp_path / "traj.png"
    plot(PlotSpec("trajectory", [str(GOLDEN / "record.json")], str(out)))
    assert out.exists() and is_png(out)


def test_gain_slice_single_panel(tmp_path):
    out = tmp_path / "slice.png"
    plot(PlotSpec("gain-slice", [str(GOLDEN / "field.json")], str(out),
                  slice_height=1.0))
    assert is_png(out)


def test_gain_slice_two_panels(tmp_path):
    out = tmp_path / "slice2.png"
    plot(PlotSpec("gain-slice",
                  [str(GOLDEN / "field.json"), str(GOLDEN / "gphi.json")],
                  str(out), slice_height=1.0))
    assert is_png(out)


def test_table_bars_from_summary(tmp_path):
    out = tmp_path / "bars.png"
    plot(PlotSpec("table-bars", [str(GOLDEN / "summary.csv")], str(out)))
    assert is_png(out)


def test_loss_curve(tmp_path):
    out = tmp_path / "loss.png"
    plot(PlotSpec("loss-curve", [str(GOLDEN / "loss.csv")], str(out)))
    assert is_png(out)


def test_criterion_12_all_kinds_render_from_golden(tmp_path):
    # Release criterion for the plotting layer: every kind renders from the
    # golden exports, and schema mismatches fail naming the bad field.
    outputs = [
        PlotSpec("trajectory", [str(GOLDEN / "record.json")],
                 str(tmp_path / "a.png")),
        PlotSpec("gain-slice",
                 [str(GOLDEN / "field.json"), str(GOLDEN / "gphi.json")],
                 str(tmp_path / "b.png"), slice_height=0.9),
        PlotSpec("table-bars", [str(GOLDEN / "summary.csv")],
                 str(tmp_path / "c.png")),
    ]
    for spec in outputs:
        assert is_png(plot(spec))
    broken = json.loads((GOLDEN / "record.json").read_text())
    del broken["trajectory"]
    bad = tmp_path / "broken.json"
    bad.write_text(json.dumps(broken))
    with pytest.raises(SchemaMismatchError, match="trajectory"):
        plot(PlotSpec("trajectory", [str(bad)], str(tmp_path / "nope.png")))
    print("\n[criterion 12] PASS - trajectory/gain-slice/table-bars render; "
          "schema mismatch names the missing field")


# schema validation ------------------------------------------------------------

def test_wrong_schema_version_rejected(tmp_path):
    data = json.loads((GOLDEN / "record.json").read_text())
    data["schema_version"] = 99
    bad = tmp_path / "v99.json"
    bad.write_text(json.dumps(data))
    with pytest.raises(SchemaMismatchError, match="schema_version"):
        plot(PlotSpec("trajectory", [str(bad)], str(tmp_path / "x.png")))


def test_missing_slices_field_named(tmp_path):
    data = json.loads((GOLDEN / "field.json").read_text())
    del data["slices"]
    bad = tmp_path / "noslices.json"
    bad.write_text(json.dumps(data))
    with pytest.raises(SchemaMismatchError, match="'slices'"):
        plot(PlotSpec("gain-slice", [str(bad)], str(tmp_path / "x.png"),
                      slice_height=1.0))


def test_slice_height_out_of_grid(tmp_path):
    with pytest.raises(SchemaMismatchError, match="slice height"):
        plot(PlotSpec("gain-slice", [str(GOLDEN / "field.json")],
                      str(tmp_path / "x.png"), slice_height=50.0))


def test_gain_slice_requires_height(tmp_path):
    with pytest.raises(SchemaMismatchError, match="slice-height"):
        plot(PlotSpec("gain-slice", [str(GOLDEN / "field.json")],
                      str(tmp_path / "x.png")))


def test_missing_csv_column_named(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("variant,Acc\nfoo,0.1\n")
    with pytest.raises(SchemaMismatchError, match="'T_SP'"):
        plot(PlotSpec("table-bars", [str(bad)], str(tmp_path / "x.png")))


def test_missing_input_file(tmp_path):
    with pytest.raises(SchemaMismatchError, match="no such file"):
        plot(PlotSpec("trajectory", [str(tmp_path / "ghost.json")],
                      str(tmp_path / "x.png")))


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(SchemaMismatchError, match="unknown plot kind"):
        PlotSpec("pie", [str(GOLDEN / "record.json")], str(tmp_path / "x.png"))


# CLI -----------------------------------------------------------------------------

def test_cli_renders_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "cli.png"
    assert main(["trajectory", str(GOLDEN / "record.json"),
                 "-o", str(out)]) == 0
    assert is_png(out)
    broken = json.loads((GOLDEN / "record.json").read_text())
    del broken["totals"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(broken))
    assert main(["trajectory", str(bad), "-o", str(tmp_path / "y.png")]) == 2
    assert "'totals'" in capsys.readouterr().err


def test_cli_gain_slice_with_height(tmp_path):
    out = tmp_path / "s.png"
    code = main(["gain-slice", str(GOLDEN / "field.json"),
                 str(GOLDEN / "gphi.json"), "-o", str(out),
                 "--slice-height", "0.7"])
    assert code == 0 and is_png(out)
