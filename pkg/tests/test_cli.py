import hashlib
import json

import pytest

from mmcloop.cli import EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE, dispatch


def run(tmp_path, *argv, out="out"):
    return dispatch([*argv, "--out", str(tmp_path / out)])


def test_steady_outputs_and_manifest(tmp_path):
    assert run(tmp_path, "steady") == EXIT_OK
    out = tmp_path / "out"
    rows = (out / "steady.csv").read_text().splitlines()
    assert rows[0] == "end,quantity,re,im,mag,angle_deg"
    assert len(rows) == 1 + 2 * 9
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "steady"
    (entry,) = man["files"]
    assert entry["sha256"] == hashlib.sha256((out / "steady.csv").read_bytes()).hexdigest()


def test_outputs_are_deterministic(tmp_path):
    run(tmp_path, "steady", "--mode", "fccc", out="a")
    run(tmp_path, "steady", "--mode", "fccc", out="b")
    assert (tmp_path / "a/steady.csv").read_bytes() == (tmp_path / "b/steady.csv").read_bytes()


def test_overrides_apply_left_to_right(tmp_path):
    run(tmp_path, "steady", "--set", "references.Q_re=0", "--set", "references.Q_re=2e8", out="a")
    run(tmp_path, "steady", out="b")
    assert (tmp_path / "a/steady.csv").read_bytes() == (tmp_path / "b/steady.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["steady", "--set", "no.such.path=1"],
    ["steady", "--set", "missing-equals"],
    ["steady", "--mode", "xyz"],
    ["plot"],
])
def test_usage_errors(tmp_path, argv):
    assert run(tmp_path, *argv) == EXIT_USAGE


def test_analysis_error(tmp_path):
    assert run(tmp_path, "scan", "--f", "75") == EXIT_ANALYSIS


def test_criterion_identify_and_plot(tmp_path):
    args = ["--f-start", "60.03", "--f-stop", "90", "--set", "controllers.h_i2.Kp=0.1"]
    assert run(tmp_path, "criterion", *args, "--svg") == EXIT_OK
    assert (tmp_path / "out/trace.svg").exists()
    assert "single_zero" in (tmp_path / "out/windows.csv").read_text()
    assert run(tmp_path, "identify", *args, out="id") == EXIT_OK
    kinds = [line.split(",")[2] for line in (tmp_path / "id/modes.csv").read_text().splitlines()[1:]]
    assert "unstable" in kinds
    svg = tmp_path / "t.svg"
    assert dispatch(["plot", "--trace", str(tmp_path / "out/trace.csv"), "--svg-out", str(svg),
                     "--out", str(tmp_path / "p")]) == EXIT_OK
    assert svg.read_text().startswith("<?xml")


def test_config_file_and_events(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"events": [{"t": 0.01, "path": "controllers.h_i2.Kp", "value": 0.5}]}))
    assert run(tmp_path, "simulate", "--config", str(cfg), "--duration", "0.02", "--probe", "v_dc") == EXIT_OK
    lines = (tmp_path / "out/ts_v_dc.csv").read_text().splitlines()
    assert lines[0] == "t_s,value" and len(lines) == 201
