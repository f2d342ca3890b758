import json

import pandas as pd
import pytest

from app.core.config import configure
from main import main


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("MTE_LOG_FILE", str(tmp_path / "run.log"))
    yield
    monkeypatch.delenv("MTE_LOG_FILE")
    configure()


def _manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def test_oracle_command_writes_the_curve_and_manifest(tmp_path):
    out = tmp_path / "oracle"
    assert main(["bounds-oracle", "--panel", "A", "--p-grid", "0.01:0.99:99", "-o", str(out)]) == 0
    frame = pd.read_csv(out / "oracle.csv")
    assert len(frame) == 99
    assert frame.loc[frame["p"].round(2) == 0.5, "alpha"].iloc[0] == pytest.approx(0.8562, abs=1e-3)
    landmarks = json.loads((out / "landmarks.json").read_text(encoding="utf-8"))
    assert "frechet_zero_crossing" in landmarks

    manifest = _manifest(out)
    assert manifest["command"] == "bounds-oracle"
    assert manifest["exit_code"] == 0
    assert manifest["artifacts"] == ["oracle.csv", "landmarks.json"]
    assert manifest["config"]["panel"] == "A"


def test_simulate_with_latent_truth(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--panel", "B", "--n", "500", "--seed", "3", "--with-latent", "-o", str(out)]) == 0
    frame = pd.read_csv(out / "sample.csv")
    assert len(frame) == 500
    assert {"y", "s", "d", "z", "s0", "s1", "y0", "y1"} <= set(frame.columns)
    assert _manifest(out)["seed"] == 3


def test_settings_file_supplies_defaults(tmp_path):
    config_file = tmp_path / "run.env"
    config_file.write_text("MTE_SEED=77\nMTE_LOG_LEVEL=WARNING\n", encoding="utf-8")
    out = tmp_path / "sim"
    assert main(["simulate", "--panel", "A", "--n", "100", "--config", str(config_file), "-o", str(out)]) == 0
    manifest = _manifest(out)
    assert manifest["seed"] == 77
    assert manifest["settings"]["LOG_LEVEL"] == "WARNING"


def test_explicit_parameters_override_a_panel(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--panel", "A", "--noise-sd", "0.5", "--n", "50", "-o", str(out)]) == 0
    assert _manifest(out)["config"]["dgp"]["outcome_noise_sd"] == 0.5


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--panel", "A", "--bogus"])
    assert info.value.code == 2


@pytest.mark.parametrize("argv", [
    ["simulate"],
    ["simulate", "--delta0", "0.5"],
    ["bounds-oracle", "--panel", "A", "--p-grid", "0.5,0.3"],
    ["dmte", "--panel", "A"],
    ["aggregate", "--panel", "A", "--weight", "PRTE", "--oracle"],
    ["simulate", "--panel", "A", "--config", "/nonexistent/settings.env"],
])
def test_invalid_configurations_exit_with_code_2(tmp_path, argv):
    assert main([*argv, "-o", str(tmp_path / "out")]) == 2


def test_bad_outcome_set_is_a_config_error(tmp_path):
    out = tmp_path / "dmte"
    assert main(["dmte", "--panel", "A", "--n", "2000", "--set", "3-1", "-o", str(out)]) == 2
    assert _manifest(out)["exit_code"] == 2


def test_oracle_aggregates_contain_the_weighted_effect(tmp_path):
    out = tmp_path / "agg"
    argv = ["aggregate", "--panel", "A", "--oracle", "--p-grid", "0.01:0.99:99",
            "--weight", "ATE", "--weight", "LATE:0.2:0.6", "-o", str(out)]
    assert main(argv) == 0
    frame = pd.read_csv(out / "aggregate.csv")
    assert frame["kind"].tolist() == ["ATE", "LATE[0.2,0.6]"]
    assert (frame["lower"] <= frame["mte_integral"] + 1e-9).all()
    assert (frame["mte_integral"] <= frame["upper"] + 1e-9).all()


@pytest.mark.slow
def test_nonparametric_estimation_end_to_end(tmp_path):
    out = tmp_path / "np"
    argv = ["estimate-np", "--panel", "A", "--n", "6000", "--p", "0.3,0.5,0.7",
            "--tier", "monotone", "--tier", "no-restriction", "-o", str(out)]
    assert main(argv) == 0
    bounds = pd.read_csv(out / "bounds.csv")
    assert len(bounds) == 6
    assert set(bounds["tier"]) == {"monotone", "no-restriction"}
    assert set(_manifest(out)["artifacts"]) == {"bounds.csv", "tables.csv", "margins.csv", "propensity.csv"}


@pytest.mark.slow
def test_discrete_instrument_end_to_end(tmp_path):
    out = tmp_path / "late"
    assert main(["discrete", "--panel", "A", "--n", "8000", "--fractional-trim", "-o", str(out)]) == 0
    assert len(pd.read_csv(out / "ladder.csv")) == 5
    late = pd.read_csv(out / "late.csv")
    assert late["ell"].tolist() == [2, 3, 4, 5]


@pytest.mark.slow
def test_diagnose_writes_a_summary(tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", "--panel", "A", "--n", "4000", "--permutations", "19", "-o", str(out)]) == 0
    summary = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
    assert {row["check"] for row in summary} >= {"treated_density", "index_sufficiency"}
