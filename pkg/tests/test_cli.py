import json
from pathlib import Path
from types import SimpleNamespace

import pandas as pd
import pytest

import traffic_twin.cli as cli
from traffic_twin.cli import main
from traffic_twin.simulation import CountSeries, ObservationMask

from .conftest import tntp_text

# node 2 joins three dead-end nodes
STAR = [(1, 2, 0.1), (2, 1, 0.1), (2, 3, 0.1), (2, 4, 0.1), (3, 2, 0.1), (4, 2, 0.1)]

CONFIG = """
[network]
file = "star.tntp"
virtual_length = 200

[scenario]
vehicles = 20
horizon_minutes = 10
seed = 3

[observation]
interval_seconds = 60
window_minutes = 5

[optimizer]
max_iterations = 2

[nowcast]
horizons_minutes = [1, 2]
"""


def write_config(root: Path, extra: str = "") -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "star.tntp").write_text(tntp_text(STAR, 4))
    path = root / "run.toml"
    path.write_text(CONFIG + extra)
    return path


def read_json(path: Path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("pipeline")
    config = write_config(root)
    out = root / "run"

    for command in ("synthesize", "calibrate", "nowcast", "control"):
        assert main([command, "-c", str(config), "-o", str(out), "--no-color"]) == 0

    return out


def test_synthesize_outputs(pipeline):
    truth = CountSeries.read_csv(pipeline / "truth_counts.csv")
    obs = CountSeries.read_csv(pipeline / "observations.csv")
    mask = ObservationMask.load(pipeline / "mask.json")

    assert truth.points == 10
    assert obs.points == 5
    assert obs.link_ids == mask.observed
    # 80% of the six physical links
    assert len(mask) == 4
    assert (pipeline / "config.toml").read_text() == CONFIG


def test_calibration_report(pipeline):
    report = read_json(pipeline / "calibration_report.json")

    assert report["iterations"] <= 2
    assert report["stop_reason"] in ("converged", "patience", "max_iterations")
    assert not report["resumed"]
    assert set(report["baseline"]) == {"mae", "pearson_r", "pairs"}
    assert "beta_normalized" in report["parameter_errors"]["calibrated"]

    curve = pd.read_csv(pipeline / "loss_curve.csv")
    assert curve.columns.tolist() == ["iteration", "loss", "best_loss"]
    assert len(curve) == report["iterations"]


def test_nowcast_outputs(pipeline):
    forecast = pd.read_csv(pipeline / "forecast.csv")
    report = read_json(pipeline / "nowcast_report.json")

    assert forecast.columns.tolist() == ["horizon_minutes", "link_id", "t_seconds", "cumulative_count"]
    assert sorted(forecast["horizon_minutes"].unique().tolist()) == [1.0, 2.0]
    assert [entry["steps"] for entry in report["horizons"]] == [360, 420]
    assert all(entry["metrics"] is not None for entry in report["horizons"])


def test_control_outputs(pipeline):
    report = read_json(pipeline / "control_report.json")
    params = read_json(pipeline / "control_params.json")

    assert report["target_link"] in ObservationMask.load(pipeline / "mask.json")
    assert report["desired"] == pytest.approx(report["uncontrolled"] * 0.5)
    assert min(params["cost"]) >= 0.05
    assert len(params["cost"]) == len(params["u"])


def test_timings_and_manifests(pipeline):
    timings = read_json(pipeline / "timings.json")
    manifest = read_json(pipeline / "manifest.calibrate.json")

    assert set(timings) == {"synthesize", "calibrate", "nowcast", "control"}
    assert len(timings["nowcast"]["horizons"]) == 2
    assert manifest["seed"] == 3
    assert len(manifest["config_sha256"]) == 64
    assert manifest["outputs"] == sorted(["calibrated_params.json", "calibration_report.json", "loss_curve.csv"])
    assert manifest["timings"] == "timings.json"
    assert "networkx" in manifest["versions"]


def test_synthesis_is_reproducible(pipeline, tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "again"
    assert main(["synthesize", "-c", str(config), "-o", str(out), "--no-color"]) == 0

    for name in ("network.json", "truth_params.json", "truth_counts.csv", "observations.csv", "mask.json"):
        assert (out / name).read_bytes() == (pipeline / name).read_bytes()


def test_seed_override_changes_truth(pipeline, tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "seeded"
    assert main(["synthesize", "-c", str(config), "-o", str(out), "-s", "4", "--no-color"]) == 0

    assert read_json(out / "manifest.synthesize.json")["seed"] == 4
    assert (out / "truth_params.json").read_bytes() != (pipeline / "truth_params.json").read_bytes()


def test_calibration_resumes_from_params(pipeline, tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "resumed"
    out.mkdir()
    for name in ("network.json", "observations.csv", "mask.json"):
        (out / name).write_bytes((pipeline / name).read_bytes())

    params = pipeline / "calibrated_params.json"
    assert main(["calibrate", "-c", str(config), "-o", str(out), "-p", str(params), "--no-color"]) == 0

    report = read_json(out / "calibration_report.json")
    assert report["resumed"]
    # no ground truth was copied over
    assert "baseline" not in report


def test_command_needs_config(tmp_path):
    assert main(["calibrate", "-o", str(tmp_path / "run"), "--no-color"]) == 2


def test_missing_inputs(tmp_path):
    config = write_config(tmp_path)
    assert main(["nowcast", "-c", str(config), "-o", str(tmp_path / "empty"), "--no-color"]) == 2


def test_missing_params_file(pipeline, tmp_path):
    config = write_config(tmp_path)
    code = main(["nowcast", "-c", str(config), "-o", str(pipeline), "-p", str(tmp_path / "absent.json"), "--no-color"])
    assert code == 2


def test_control_target_outside_network(pipeline, tmp_path):
    config = write_config(tmp_path, "\n[control]\ntarget_link = 500\n")
    assert main(["control", "-c", str(config), "-o", str(pipeline), "--no-color"]) == 2


def test_invalid_config(tmp_path):
    config = write_config(tmp_path, "\n[control]\nreduction = 3\n")
    assert main(["synthesize", "-c", str(config), "-o", str(tmp_path / "run"), "--no-color"]) == 2


def test_tg_demo(tmp_path):
    out = tmp_path / "tg"
    assert main(["tg-demo", "-o", str(out), "--no-color"]) == 0

    report = read_json(out / "tg_demo_report.json")
    assert 1.4 <= report["with_grafting"]["u1"] <= 1.6
    assert abs(report["without_grafting"]["u1"] - 2.0) < 0.05

    frame = pd.read_csv(out / "tg_demo.csv")
    assert len(frame) == 200
    assert read_json(out / "manifest.tg-demo.json")["config_sha256"] is None


def test_gradcheck(tmp_path):
    out = tmp_path / "gc"
    assert main(["gradcheck", "--draws", "1", "-o", str(out), "--no-color"]) == 0

    report = read_json(out / "gradcheck_report.json")
    assert report["passed"]
    assert report["tolerance"] == 1e-4
    assert [entry["scenario"] for entry in report["draws"]] == ["chain", "diverge", "merge"]
    assert {"beta", "cost"} <= set(report["draws"][1]["responsive"])
    assert "alpha" in report["draws"][2]["responsive"]


def test_colors_follow_terminal_and_no_color(monkeypatch):
    monkeypatch.delenv("NO_COLOR", raising=False)
    monkeypatch.setattr(cli, "sys", SimpleNamespace(stdout=SimpleNamespace(isatty=lambda: True)))
    assert cli.colors_enabled()
    assert not cli.colors_enabled(no_color=True)

    monkeypatch.setenv("NO_COLOR", "1")
    assert not cli.colors_enabled()

    monkeypatch.delenv("NO_COLOR")
    monkeypatch.setattr(cli, "sys", SimpleNamespace(stdout=SimpleNamespace(isatty=lambda: False)))
    assert not cli.colors_enabled()


def test_nested_colors(monkeypatch):
    monkeypatch.setattr(cli, "USE_COLORS", True)

    assert cli.red("x") == "\033[31mx\033[0m"
    assert cli.green(f"a {cli.cyan('b')} c") == "\033[32ma \033[36mb\033[0m\033[32m c\033[0m"

    monkeypatch.setattr(cli, "USE_COLORS", False)
    assert cli.yellow(3) == "3"
