"""Tests for the frequency study, the risotto curves, the oracle and sweeps"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from choice_model import Exact, GaussianNoise, exact_choice
from experiments import (ABORTED, ACTION_ROWS, RISOTTO_PREFERENCES, FrequencyTable, GridSpec,
                         RunRecord, StudyConfig, mc_payoff_oracle, risotto_dataset, risotto_utility,
                         run_frequency_study, run_risotto_demo, sweep)
from posterior_inference import EP, MAP, BivariatePosterior, Laplace, Sampling

SMALL_GRID = GridSpec(lower=1.0, upper=9.0, n_points=21)


def _study(**overrides) -> StudyConfig:
    fields = dict(n_runs=6, n_prefs=8, methods=(MAP(), Laplace()), grid=SMALL_GRID, seed=1)
    fields.update(overrides)
    return StudyConfig(**fields)


def test_grid_spec():
    acts = GridSpec(lower=0.0, upper=1.0, n_points=3).acts()
    assert acts == ((0.0,), (0.5,), (1.0,))
    with pytest.raises(ValidationError):
        GridSpec(lower=2.0, upper=1.0)


def test_study_config_validation():
    with pytest.raises(ValidationError):
        _study(methods=(MAP(), MAP()))
    with pytest.raises(ValidationError):
        _study(lengthscale_range=(2.0, 1.0))
    assert isinstance(_study(sigma=0.0).model, Exact)
    assert isinstance(_study().model, GaussianNoise)
    assert _study().method_names == ("map", "laplace")


def test_frequency_table_fractions_sum_to_one():
    records = [RunRecord(run=0, method="map", action="IMM"),
               RunRecord(run=1, method="map", action="DoN"),
               RunRecord(run=2, method="map", action=ABORTED)]
    table = FrequencyTable.from_records(["map"], records, 3)
    assert table.count("map", "IMM") == 1
    assert table.fraction("map", "DEF") == 0.0
    assert table.aborted == 1
    assert sum(r.fraction for r in table.rows) == pytest.approx(1.0)
    frame = table.to_frame()
    assert list(frame.columns) == ["method", "action", "count", "fraction"]
    assert len(frame) == 4


def test_study_map_never_defers_and_is_reproducible():
    cfg = _study()
    table = run_frequency_study(cfg)
    assert table.count("map", "DEF") == 0
    for method in cfg.method_names:
        assert sum(table.count(method, a) for a in ("IMM", "DEF", "DoN", ABORTED)) == cfg.n_runs
    assert run_frequency_study(cfg).to_frame().equals(table.to_frame())


def test_study_rational_sender_defers():
    table = run_frequency_study(_study(sigma=0.0, methods=(Laplace(),)))
    assert table.count("laplace", ABORTED) == 0
    assert table.fraction("laplace", "DEF") == 1.0


def test_study_with_sampling_arm():
    sampling = Sampling(n_samples=300, burn_in=100)
    table = run_frequency_study(_study(n_runs=3, sigma=1.0, methods=(Laplace(), sampling)))
    assert table.methods == ("laplace", "sampling")
    assert sum(table.count("sampling", a) for a in ACTION_ROWS) == 3


def test_study_runs_in_parallel_identically():
    cfg = _study(n_runs=4)
    serial = run_frequency_study(cfg, jobs=1)
    parallel = run_frequency_study(cfg, jobs=2)
    assert serial.rows == parallel.rows


@pytest.mark.slow
def test_full_frequency_study():
    sampling = Sampling(n_samples=2000, burn_in=500)
    cfg = StudyConfig(n_runs=200, n_prefs=30, sigma=1.0,
                      methods=(MAP(), Laplace(), EP(), sampling), seed=0)
    table = run_frequency_study(cfg)
    assert table.count("map", "DEF") == 0
    for method in ("laplace", "ep", "sampling"):
        assert table.fraction(method, "DEF") > 0.0
    for action in ("IMM", "DEF", "DoN"):
        assert abs(table.fraction("laplace", action) - table.fraction("ep", action)) <= 0.15


def test_risotto_utility_agrees_with_preferences():
    for preferred, other in RISOTTO_PREFERENCES:
        assert risotto_utility(preferred) > risotto_utility(other)


def test_risotto_dataset():
    golden = risotto_dataset(8)
    assert len(golden) == 8
    assert [obs.chosen[0][0] for obs in golden] == [w for w, _ in RISOTTO_PREFERENCES]
    extended = risotto_dataset(30, seed=0)
    assert len(extended) == 30
    assert extended.observations[:8] == golden.observations
    for obs in extended.observations[8:]:
        assert obs.chosen == exact_choice(risotto_utility, obs.choice_set)
    assert len(risotto_dataset(0)) == 0


def test_risotto_demo_curves():
    frame = run_risotto_demo(n_prefs=8)
    assert list(frame.columns) == ["x", "mean", "half_width"] + [f"sample_{k}" for k in range(1, 11)]
    assert len(frame) == 81
    assert (frame["half_width"] >= 0.0).all()
    at = dict(zip(frame["x"].round(6), frame["mean"]))
    for preferred, other in RISOTTO_PREFERENCES:
        assert at[round(preferred, 6)] > at[round(other, 6)]


def test_risotto_demo_prior():
    frame = run_risotto_demo(n_prefs=0)
    assert np.allclose(frame["mean"], 0.0)
    assert np.allclose(frame["half_width"], 1.96)


def test_oracle_estimates():
    bp = BivariatePosterior(mu_x=0.0, mu_o=0.0, k_xx=1.0, k_oo=1.0)
    oracle = mc_payoff_oracle(bp, 0.0, "noise", 100_000, np.random.default_rng(0))
    assert oracle.within("def", 1.0 / math.sqrt(math.pi), n_se=4.0)
    assert set(oracle.estimates) == {"imm", "don", "building_block", "def"}
    with pytest.raises(ValueError):
        mc_payoff_oracle(bp, 0.5, "threshold", 100_000, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mc_payoff_oracle(bp, 0.5, "noise", 10, np.random.default_rng(0))


def test_sweep_schema():
    frame = sweep("gamma", [0.0, 0.5, 2.0], _study(n_runs=3))
    assert list(frame.columns) == ["param_value", "method", "def_fraction", "aborted"]
    assert len(frame) == 3 * 2
    assert (frame[frame["method"] == "map"]["def_fraction"] == 0.0).all()
    with pytest.raises(ValueError):
        sweep("epsilon", [0.1], _study())
    with pytest.raises(ValueError):
        sweep("sigma", [], _study())
