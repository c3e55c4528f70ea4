import csv
import io
import json

import numpy as np
import pytest
import yaml

from bohmlab.cli import emit_histogram_data, format_number, load_config, main, run_scenario, validate_config
from bohmlab.errors import ConfigError
from bohmlab.scenarios import DEFAULTS, SCENARIOS


def write_config(tmp_path, name="c.yaml", **kw):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(kw))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---- validation --------------------------------------------------------------


def test_defaults_are_filled_in():
    p = validate_config({"scenario": "multitime-check"})
    assert p == {**DEFAULTS["multitime-check"], "scenario": "multitime-check"}


@pytest.mark.parametrize(
    "raw",
    [
        {"scenario": "nope"},
        {"scenario": "bell-process", "colour": 1},
        {"scenario": "bell-process", "ensemble_size": 0},
        {"scenario": "bell-process", "ensemble_size": 2.5},
        {"scenario": "bell-process", "cutoff_shape": "box"},
        {"scenario": "bell-process", "mass": 0.0},
        {"scenario": "bell-process", "dt": 0.07},
        {"scenario": "dirac-worldlines", "dt": 0.5},
        {"scenario": "double-slit", "horizon": float("nan")},
        ["scenario", "bell-process"],
    ],
)
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        validate_config(raw)


def test_validate_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path, "good.yaml", scenario="bell-process", seed=3)
    assert main(["validate", good]) == 0
    bad = write_config(tmp_path, "bad.yaml", scenario="bell-process", ensemble_size=0)
    assert main(["validate", bad]) == 2
    unknown = write_config(tmp_path, "unk.yaml", scenario="bell-process", speed=1)
    assert main(["run", unknown]) == 2
    malformed = tmp_path / "m.yaml"
    malformed.write_text("scenario: [unclosed\n")
    assert main(["validate", str(malformed)]) == 2
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in SCENARIOS:
        assert name in out
    assert "ensemble_size=10000" in out


def test_format_number():
    assert format_number(3) == "3"
    assert format_number(0.1) == "1.0000000000000001e-01"
    assert format_number(None) == ""
    assert format_number(float("nan")) == ""


# ---- runs ----------------------------------------------------------------------


def test_bell_without_coupling_never_jumps(tmp_path):
    cfg = write_config(tmp_path, scenario="bell-process", coupling_g=0.0, ensemble_size=300, output_dir=str(tmp_path / "o"))
    assert run_scenario(cfg, stream=io.StringIO()) == 0
    doc = json.load(open(tmp_path / "o" / "report.json"))
    assert doc["metadata"]["total_jumps"] == 0
    assert doc["passed"] is True
    rows = read_csv(tmp_path / "o" / "trajectories.csv")
    assert rows[0][:3] == ["trajectory_id", "time", "sector"]
    assert rows[0][-1] == "event"
    assert all(len(r) == len(rows[0]) and r[2] == "0" and r[-1] == "none" for r in rows[1:])


def test_runtime_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, scenario="bell-process", coupling_g=5.0, truncation=1, ensemble_size=50,
                       output_dir=str(tmp_path / "o"))
    assert main(["run", cfg]) == 3
    assert "TruncationError" in capsys.readouterr().err


def test_failed_check_exit_code(tmp_path):
    cfg = write_config(tmp_path, scenario="multitime-check", potential_threshold=100.0, output_dir=str(tmp_path / "o"))
    assert run_scenario(cfg, stream=io.StringIO()) == 1


def _nr_config(tmp_path, out):
    return write_config(tmp_path, f"{out}.yaml", scenario="equivariance-nr", ensemble_size=400, grid_points=128,
                        seed=9, output_dir=str(tmp_path / out))


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_outputs_are_byte_identical_across_runs_and_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("BOHMLAB_WORKERS", "1")
    assert run_scenario(_nr_config(tmp_path, "a"), stream=io.StringIO()) == 0
    assert run_scenario(_nr_config(tmp_path, "b"), stream=io.StringIO()) == 0
    monkeypatch.setenv("BOHMLAB_WORKERS", "3")
    assert run_scenario(_nr_config(tmp_path, "c"), stream=io.StringIO()) == 0
    a, b, c = (_files(tmp_path / n) for n in "abc")
    assert set(a) == {"report.json", "trajectories.csv", "histogram.csv"}
    # output_dir is excluded from the report, so all three agree byte for byte
    assert a == b == c


def test_histogram_file_contents(tmp_path):
    cfg = write_config(tmp_path, scenario="dirac-worldlines", ensemble_size=500, horizon=0.5, output_dir=str(tmp_path / "o"))
    assert run_scenario(cfg, stream=io.StringIO()) in (0, 1)
    rows = read_csv(tmp_path / "o" / "histogram.csv")
    assert rows[0] == ["bin_center", "empirical", "theoretical"]
    assert len(rows) == 1 + 32
    emp = np.array([float(r[1]) for r in rows[1:]])
    theo = np.array([float(r[2]) for r in rows[1:]])
    assert emp.sum() == pytest.approx(1.0, abs=1e-12)
    assert theo.sum() == pytest.approx(1.0, abs=1e-9)
    centers = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(centers) > 0)


def test_histogram_regenerates_from_report(tmp_path):
    cfg = write_config(tmp_path, scenario="bmf-equivariance", ensemble_size=300, horizon=0.5, output_dir=str(tmp_path / "o"))
    run_scenario(cfg, stream=io.StringIO())
    doc = json.load(open(tmp_path / "o" / "report.json"))
    emit_histogram_data(doc["report"], tmp_path / "again.csv")
    original = (tmp_path / "o" / "histogram.csv").read_bytes()
    assert (tmp_path / "again.csv").read_bytes() == original
    rows = read_csv(tmp_path / "again.csv")
    assert rows[0] == ["bin_center_0", "bin_center_1", "empirical", "theoretical"]
    assert len(rows) == 1 + 16 * 16
    assert (tmp_path / "o" / "worldlines.csv").exists()


def test_empty_ensemble_histogram_is_header_only(tmp_path):
    d = {"bin_edges": [[0.0, 1.0, 2.0]], "sample_count": 0, "histogram_empirical": [0.0, 0.0],
         "histogram_theoretical": [0.5, 0.5]}
    emit_histogram_data(d, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "bin_center,empirical,theoretical\n"


def test_output_dir_override(tmp_path):
    cfg = write_config(tmp_path, scenario="multitime-check", output_dir=str(tmp_path / "ignored"))
    assert main(["run", cfg, "--output-dir", str(tmp_path / "used")]) == 0
    assert (tmp_path / "used" / "report.json").exists()
    assert not (tmp_path / "ignored").exists()
