import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtr

from app.core.errors import ConfigError
from app.schemas.dgp import DgpConfig, Sample
from app.services.dgp import PANEL_A, generate, panel
from app.services.ingestion import IngestionService


def test_same_seed_gives_identical_samples():
    a = generate(PANEL_A, 500, seed=3)
    b = generate(PANEL_A, 500, seed=3)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    assert not a.frame.equals(generate(PANEL_A, 500, seed=4).frame)


def test_observed_outcome_is_zero_when_not_selected():
    sample = generate(PANEL_A, 2_000, seed=1)
    assert (sample.y[sample.s == 0] == 0).all()
    assert set(np.unique(sample.d)) <= {0.0, 1.0}


def test_monotone_selection_in_latent_truth():
    sample = generate(PANEL_A, 2_000, seed=2)
    latent = sample.latent
    # S0 = 1 влечёт S1 = 1 при delta1 >= 0
    assert (latent["s1"] >= latent["s0"]).all()


def test_treatment_follows_index_rule():
    sample = generate(PANEL_A, 2_000, seed=5)
    v = sample.latent["v"].to_numpy()
    assert np.array_equal(sample.d, (v <= ndtr(sample.frame["z"].to_numpy())).astype(float))


def test_multiple_instruments_and_covariates_are_named():
    config = PANEL_A.model_copy(update={"instrument_dims": 3})
    sample = generate(config, 100, seed=0, n_covariates=2)
    assert sample.z_columns == ["z1", "z2", "z3"]
    assert sample.x_columns == ["x1", "x2"]


def test_discrete_support_is_respected():
    config = PANEL_A.model_copy(update={"instrument_support": (-1.0, 0.0, 1.0)})
    sample = generate(config, 300, seed=0)
    assert set(np.unique(sample.frame["z"])) <= {-1.0, 0.0, 1.0}


def test_direct_effect_requires_second_instrument():
    with pytest.raises(ValueError):
        DgpConfig(delta0=0.5, delta1=1.0, beta00=0.1, beta01=0.1, beta10=0.1, beta11=0.2, direct_effect=1.0)


def test_unknown_panel():
    with pytest.raises(ConfigError):
        panel("Z")


def test_sample_schema_rejects_outcome_without_selection():
    frame = pd.DataFrame({"y": [1.0, 0.5], "s": [0, 1], "d": [1, 0], "z": [0.1, 0.2]})
    with pytest.raises(ValueError):
        Sample(frame=frame)


def test_csv_round_trip_keeps_latent_columns(tmp_path):
    sample = generate(PANEL_A, 200, seed=9)
    path = tmp_path / "sample.csv"
    service = IngestionService()
    service.save(sample, path, with_latent=True)
    loaded = service.load(path)
    assert loaded.latent is not None
    np.testing.assert_allclose(loaded.y, sample.y)


def test_loading_a_non_csv_file_is_a_config_error(tmp_path):
    path = tmp_path / "sample.xlsx"
    path.write_text("nope")
    with pytest.raises(ConfigError):
        IngestionService().load(path)
