"""Unit tests for evaluation.py"""

import logging

import numpy as np
import pandas as pd
import pytest

from config import ExperimentConfig
from errors import DomainError, SchemaError
from evaluation import (
    DATASET_COLUMNS,
    RESULT_COLUMNS,
    LabeledDataset,
    _lstm_outcome,
    _split_sequences,
    ba_error,
    build_circular_dataset,
    build_dataset,
    build_one_shot_dataset,
    build_sequential_dataset,
    combinations_for,
    rate_loss,
    run_one_shot,
    run_parallel,
    run_pool,
    run_sequential,
    select_one_shot_rules,
    sequential_outputs,
    split_indices,
    sweep,
    train_sequential_rules,
)


def small_config(**extra) -> ExperimentConfig:
    values = {
        "ONESHOT_REALIZATIONS": "2",
        "ONESHOT_POINTS": "80",
        "ONESHOT_COMBINATIONS": "c-5,c-6",
        "ONESHOT_RULES": "LR,GR,TBBA,CM_ONLY",
        "CV_REPEATS": "2",
        "CV_ALPHAS": "0.1,0.3",
        "TRAIN_GR_MAX_EPOCHS": "100",
        "SEQ_SEQUENCES": "6",
        "SMS_DURATION_S": "160",
        "SEQ_HORIZONS": "2",
        "SEQ_WINDOW": "2",
        "SEQ_COMBINATIONS": "c-2",
        "SEQ_RULES": "LSTM_std,NN_H,GR_H,GP,GP_App",
        "SEQ_LSTM_STD": "NW12",
        "SEQ_NN_HIDDEN": "5",
        "ONESHOT_NN_EPOCHS": "5",
        "TRAIN_SHUFFLED_EPOCHS": "3",
        "CIRCLE_COUNT": "6",
        "CIRCLE_N_FRAMES": "15",
        "SWEEP_U_FIXED": "2",
        "SWEEP_COMBINATIONS": "c-2",
        "SWEEP_RULES": "GP,NN_H",
    }
    values.update(extra)
    return ExperimentConfig().with_overrides(values)


@pytest.fixture(scope="module")
def cfg():
    return small_config()


@pytest.fixture(scope="module")
def oneshot(cfg):
    return build_one_shot_dataset(cfg, seed=3)


@pytest.fixture(scope="module")
def sequential(cfg):
    return build_sequential_dataset(cfg, seed=5)


# ----------------- Metrics -----------------

def test_ba_error():
    assert ba_error([1, 0, 1], [1, 0, 1]) == 0.0
    assert ba_error([0, 1, 0], [1, 0, 1]) == 1.0
    assert ba_error([1, 0, 1], [1, 1, 1]) == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        ba_error([], [])
    with pytest.raises(DomainError):
        ba_error([1], [1, 0])


def test_rate_loss():
    rates = np.array([[10.0, 5.0], [2.0, 8.0]])
    assert rate_loss([0, 1], rates) == 0.0
    assert rate_loss([1, 0], rates) == pytest.approx((0.5 + 0.75) / 2)
    assert rate_loss([1], np.array([[100e6, 80e6]])) == pytest.approx(0.2)
    with pytest.raises(DomainError):
        rate_loss([0], np.array([[0.0, 0.0]]))


def test_split_indices_partition():
    train, test = split_indices(20, 0.65, seed=1)
    assert len(train) == 13 and len(test) == 7
    assert set(train) | set(test) == set(range(20))
    assert not set(train) & set(test)
    with pytest.raises(DomainError):
        split_indices(1, 0.5, seed=0)


# ----------------- Worker pool -----------------

@pytest.mark.asyncio
async def test_run_pool_keeps_input_order():
    out = await run_pool(lambda x: x * x, list(range(10)), jobs=3)
    assert out == [x * x for x in range(10)]


def test_run_parallel_matches_serial():
    items = list(range(7))
    assert run_parallel(lambda x: x + 1, items, jobs=4) == run_parallel(lambda x: x + 1, items, jobs=1)


# ----------------- Datasets -----------------

def test_one_shot_dataset_layout(cfg, oneshot):
    frame = oneshot.frame
    assert list(frame.columns) == DATASET_COLUMNS
    assert len(oneshot) == 2 * 80
    assert np.all(frame["d_m"] >= 1.0)
    np.testing.assert_array_equal(frame["label"], (frame["rate_m_bps"] > frame["rate_c_bps"]).astype(int))
    assert frame["delay_s"].isna().all()
    assert [len(g) for g in oneshot.groups()] == [80, 80]
    assert oneshot.config_hash == cfg.config_hash()
    assert 0.0 < oneshot.label_balance < 1.0


def test_one_shot_dataset_deterministic_and_jobs_independent(cfg, oneshot):
    pd.testing.assert_frame_equal(oneshot.frame, build_one_shot_dataset(cfg, seed=3).frame)
    pd.testing.assert_frame_equal(oneshot.frame, build_one_shot_dataset(cfg, seed=3, jobs=2).frame)
    assert not build_one_shot_dataset(cfg, seed=4).frame.equals(oneshot.frame)


def test_sequential_dataset_groups(cfg, sequential):
    groups = sequential.groups()
    assert len(groups) == 6
    for seq in groups:
        assert np.all(np.diff(seq["frame"]) == 1)
        assert np.all(np.diff(seq["t_s"]) > 0)
        assert seq["seq_id"].nunique() == 1
    pd.testing.assert_frame_equal(sequential.frame, build_sequential_dataset(cfg, seed=5, jobs=3).frame)


def test_circular_dataset_radius(cfg):
    dataset = build_dataset(cfg.with_overrides({"DATASET_KIND": "circular"}), seed=1)
    assert dataset.kind == "circular"
    assert len(dataset.groups()) == 6
    np.testing.assert_allclose(dataset.frame["d_m"], 100.0)
    pd.testing.assert_frame_equal(build_circular_dataset(cfg, seed=1).frame, dataset.frame)


def test_combinations_for(oneshot, caplog):
    assert combinations_for(["c-5"], oneshot, sequential=False) == {"c-5": ("d",)}
    with pytest.raises(SchemaError):
        combinations_for(["c-99"], oneshot, sequential=False)
    ingested = LabeledDataset(oneshot.frame, provenance="ingested", realization_size=80)
    with caplog.at_level(logging.WARNING):
        combos = combinations_for(["c-3", "c-4"], ingested, sequential=False)
    assert list(combos) == ["c-3"]
    assert "c-4" in caplog.text


# ----------------- One-shot protocol -----------------

def test_run_one_shot_small(cfg, oneshot):
    report = run_one_shot(cfg, oneshot, seed=3)
    frame = report.to_frame()
    assert list(frame.columns) == RESULT_COLUMNS
    assert len(frame) == 2 * 4
    assert set(frame["rule"]) == {"LR", "GR", "TBBA", "CM_ONLY"}
    assert frame["ba_error"].between(0.0, 1.0).all()
    assert frame["rate_loss"].between(0.0, 1.0).all()
    assert (frame["n_test"] == 2 * 28).all()
    assert report.label_balance == pytest.approx(oneshot.label_balance)

    tbba = frame[frame["rule"] == "TBBA"]
    assert tbba["ba_error"].nunique() == 1
    assert (tbba["gamma_t"] == 0.5).all()

    # cmWave-only is wrong exactly on the mmWave-labelled test points
    cm_only = frame[frame["rule"] == "CM_ONLY"]["ba_error"].iloc[0]
    assert 0.0 < cm_only < 1.0
    assert frame[frame["rule"] == "TBBA"]["ba_error"].iloc[0] <= cm_only + 0.1


def test_run_one_shot_deterministic_across_jobs(cfg, oneshot):
    linear = cfg.with_overrides({"ONESHOT_RULES": "LR,TBBA,CM_ONLY"})
    serial = run_one_shot(linear, oneshot, seed=3).to_frame()
    threaded = run_one_shot(linear, oneshot, seed=3, jobs=3).to_frame()
    pd.testing.assert_frame_equal(serial, threaded)


def test_one_shot_selects_inside_every_realization(cfg, oneshot):
    linear = cfg.with_overrides({"ONESHOT_RULES": "LR,TBBA"})
    assert not linear.oneshot.select_once
    first = select_one_shot_rules(oneshot, linear, seed=3)
    second = select_one_shot_rules(oneshot, linear, seed=3, realization=1)
    per_split = run_one_shot(linear, oneshot, seed=3).to_frame().set_index(["rule", "combination"])
    for combo in ("c-5", "c-6"):
        mean_gamma = (first[("LR", combo)].gamma_t + second[("LR", combo)].gamma_t) / 2
        assert per_split.loc[("LR", combo), "gamma_t"] == pytest.approx(mean_gamma)


def test_one_shot_select_once_freezes_first_realization(cfg, oneshot):
    frozen_cfg = cfg.with_overrides({"ONESHOT_RULES": "LR,TBBA", "ONESHOT_SELECT_ONCE": "true"})
    assert frozen_cfg.oneshot.select_once
    first = select_one_shot_rules(oneshot, frozen_cfg, seed=3)
    frozen = run_one_shot(frozen_cfg, oneshot, seed=3).to_frame()
    by_key = frozen.set_index(["rule", "combination"])
    for combo in ("c-5", "c-6"):
        assert by_key.loc[("LR", combo), "gamma_t"] == pytest.approx(first[("LR", combo)].gamma_t)
    # same result as handing the first realization's models over explicitly
    explicit = run_one_shot(frozen_cfg.with_overrides({"ONESHOT_SELECT_ONCE": "false"}), oneshot, seed=3,
                            selected=first).to_frame()
    pd.testing.assert_frame_equal(frozen, explicit)


# ----------------- Sequential protocol -----------------

def test_run_sequential_small(cfg, sequential):
    report = run_sequential(cfg, sequential, seed=5)
    frame = report.to_frame()
    assert set(frame["rule"]) == {"LSTM_std", "NN_H", "GR_H", "GP", "GP_App"}
    assert (frame["U"] == 2).all() and (frame["Q"] == 2).all()
    assert (frame["gamma_t"] == 0.5).all()
    assert frame["ba_error"].between(0.0, 1.0).all()

    # every rule is scored on the same frames t in [Q, T-U-1] of the test sequences
    _, test_seqs = _split_sequences(sequential, cfg, 5)
    expected = sum(max(len(s) - 2 - 2, 0) for s in test_seqs)
    assert (frame["n_test"] == expected).all()


def test_lstm_opd_selects_from_menu(cfg, sequential):
    opd_cfg = cfg.with_overrides({
        "SEQ_LSTM_MENU": "NW12,NW0",
        "SEQ_LSTM_SCHEDULES": "shuffled",
        "SEQ_CV_SEQUENCES": "1",
        "CV_SEQ_REPEATS": "1",
    })
    models = train_sequential_rules(sequential, opd_cfg, seed=5, rules=["LSTM_opd"])
    model = models[("LSTM_opd", "c-2", 2)]
    assert model.kind == "LSTM"
    assert model.network.name in ("NW12", "NW0")
    assert model.schedule == "shuffled"
    assert model.gamma_t == 0.5


def test_lstm_validation_skips_short_sequences(cfg, sequential, caplog):
    models = train_sequential_rules(sequential, cfg, seed=5, rules=["LSTM_std"])
    model = models[("LSTM_std", "c-2", 2)]
    _, test_seqs = _split_sequences(sequential, cfg, 5)

    outcome = _lstm_outcome(model, test_seqs, 2)
    assert outcome is not None
    assert outcome.labels.size == sum(max(len(s) - 2, 0) for s in test_seqs)

    short = [s.iloc[:2] for s in test_seqs]
    with caplog.at_level(logging.WARNING):
        assert _lstm_outcome(model, short, 2) is None
    assert "Skipped validation split" in caplog.text


def test_gp_outputs_are_probabilities(cfg, sequential):
    outputs = sequential_outputs(sequential, cfg, {}, seed=5, rules=["GP", "GP_App"])
    gp, approx = outputs[("GP", "c-2", 2)], outputs[("GP_App", "c-2", 2)]
    assert gp.inclusive and approx.inclusive
    assert np.all((gp.soft >= 0.0) & (gp.soft <= 1.0))
    assert gp.soft.shape == approx.soft.shape == gp.labels.shape
    assert gp.rates.shape == (gp.labels.size, 2)


# ----------------- Sweeps -----------------

def test_gamma_t_sweep_reuses_outputs(cfg, sequential):
    report = sweep("gamma_t", cfg, sequential, seed=5, values=[0.0, 0.5])
    frame = report.to_frame()
    assert sorted(frame["gamma_t"].unique()) == [0.0, 0.5]
    assert set(frame["rule"]) == {"GP", "NN_H"}
    # gamma_t = 0 sends everything to mmWave under the inclusive GP rule
    labels = sequential_outputs(sequential, cfg, {}, seed=5, horizons=[2], rules=["GP"])[("GP", "c-2", 2)].labels
    at_zero = frame[(frame["rule"] == "GP") & (frame["gamma_t"] == 0.0)]["ba_error"].iloc[0]
    assert at_zero == pytest.approx(1.0 - labels.mean())


def test_u_sweep(cfg, sequential):
    frame = sweep("U", cfg.with_overrides({"SWEEP_RULES": "GP,GR_H"}), sequential, seed=5, values=[1, 2]).to_frame()
    assert sorted(frame["U"].unique()) == [1, 2]
    assert set(frame["rule"]) == {"GP", "GR_H"}


def test_q_sweep_on_circles(cfg):
    circles = build_circular_dataset(cfg, seed=2)
    frame = sweep("Q", cfg.with_overrides({"SWEEP_RULES": "GP,GP_App,NN_H"}), circles, seed=2,
                  values=[0, 2]).to_frame()
    assert sorted(frame["Q"].unique()) == [0, 2]
    assert set(frame["rule"]) == {"GP", "GP_App", "NN_H"}
    n_q0 = frame[frame["Q"] == 0]["n_test"].iloc[0]
    n_q2 = frame[frame["Q"] == 2]["n_test"].iloc[0]
    assert n_q0 > n_q2


def test_sweep_rejects_bad_axis(cfg, sequential):
    with pytest.raises(DomainError):
        sweep("speed", cfg, sequential)
    with pytest.raises(DomainError):
        sweep("U", cfg, sequential, values=[])


# ----------------- Reproduction runs -----------------

@pytest.mark.slow
def test_one_shot_reproduction():
    cfg = ExperimentConfig().with_overrides({
        "ONESHOT_RULES": "TBBA,CM_ONLY",
        "ONESHOT_COMBINATIONS": "c-5",
        "SHADOW_NU": "1.9",
    })
    dataset = build_one_shot_dataset(cfg, seed=0, jobs=4)
    assert dataset.label_balance == pytest.approx(0.493, abs=0.02)
    assert dataset.frame["s_c_db"].std() == pytest.approx(5.0, rel=0.05)
    assert dataset.frame["s_m_db"].std() == pytest.approx(7.0, rel=0.05)
    frame = run_one_shot(cfg, dataset, seed=0, jobs=4).to_frame().set_index("rule")
    assert frame.loc["TBBA", "ba_error"] == pytest.approx(0.193, abs=0.02)
    assert frame.loc["CM_ONLY", "ba_error"] == pytest.approx(0.493, abs=0.02)


@pytest.mark.slow
def test_one_shot_learned_rules_reproduction():
    cfg = ExperimentConfig().with_overrides({
        "ONESHOT_REALIZATIONS": "40",
        "ONESHOT_RULES": "GR,NN",
        "ONESHOT_COMBINATIONS": "c-2",
        "ONESHOT_SELECT_ONCE": "true",
        "CV_REPEATS": "3",
        "SHADOW_NU": "1.9",
    })
    frame = run_one_shot(cfg, seed=0, jobs=4).to_frame().set_index("rule")
    nn, gr = frame.loc["NN", "ba_error"], frame.loc["GR", "ba_error"]
    assert nn <= 0.22
    assert nn == pytest.approx(0.186, abs=0.03)
    assert gr == pytest.approx(0.191, abs=0.03)
    assert nn <= gr + 0.01


def gp_config(nu: str, rules: str = "GP,GP_App") -> ExperimentConfig:
    return ExperimentConfig().with_overrides({"SHADOW_NU": nu, "SEQ_RULES": rules, "SEQ_COMBINATIONS": "c-5"})


@pytest.fixture(scope="module")
def sequential_nu19():
    return build_sequential_dataset(gp_config("1.9"), seed=0, jobs=4)


@pytest.mark.slow
def test_sequential_gp_reproduction():
    cfg = gp_config("1")
    dataset = build_sequential_dataset(cfg, seed=0, jobs=4)
    assert dataset.label_balance == pytest.approx(0.479, abs=0.02)
    frame = run_sequential(cfg, dataset, seed=0, jobs=4).to_frame().set_index(["rule", "U"])
    assert frame.loc[("GP", 4), "ba_error"] == pytest.approx(0.201, abs=0.02)
    assert frame.loc[("GP", 8), "ba_error"] == pytest.approx(0.226, abs=0.02)
    assert frame.loc[("GP_App", 4), "ba_error"] == pytest.approx(0.221, abs=0.02)
    assert frame.loc[("GP_App", 8), "ba_error"] == pytest.approx(0.242, abs=0.02)
    for horizon in (4, 8):
        assert frame.loc[("GP", horizon), "ba_error"] <= frame.loc[("GP_App", horizon), "ba_error"]


@pytest.mark.slow
def test_sequential_gp_reproduction_nu19(sequential_nu19):
    assert sequential_nu19.label_balance == pytest.approx(0.484, abs=0.02)
    frame = run_sequential(gp_config("1.9"), sequential_nu19, seed=0, jobs=4).to_frame().set_index(["rule", "U"])
    assert frame.loc[("GP", 4), "ba_error"] == pytest.approx(0.126, abs=0.02)
    assert frame.loc[("GP", 8), "ba_error"] == pytest.approx(0.204, abs=0.02)


@pytest.mark.slow
def test_sequential_lstm_reproduction(sequential_nu19):
    cfg = gp_config("1.9", rules="LSTM_std,GP").with_overrides({"SEQ_LSTM_STD": "NW4"})
    frame = run_sequential(cfg, sequential_nu19, seed=0, jobs=4).to_frame().set_index(["rule", "U"])
    assert frame.loc[("LSTM_std", 4), "ba_error"] <= 0.14
    assert frame.loc[("LSTM_std", 8), "ba_error"] <= 0.21
    assert frame.loc[("LSTM_std", 4), "ba_error"] < frame.loc[("GP", 4), "ba_error"]


@pytest.mark.slow
def test_gamma_t_sweep_minimum_near_half(sequential_nu19):
    cfg = gp_config("1.9").with_overrides({"SWEEP_RULES": "GP", "SWEEP_COMBINATIONS": "c-5"})
    frame = sweep("gamma_t", cfg, sequential_nu19, seed=0, jobs=4).to_frame()
    curve = frame.set_index("gamma_t")["ba_error"].sort_index()
    assert len(curve) == 21
    assert 0.45 - 1e-9 <= curve.idxmin() <= 0.55 + 1e-9


@pytest.mark.slow
def test_q_sweep_curve_shapes():
    cfg = gp_config("1.9").with_overrides({"SWEEP_RULES": "GP,GP_App", "SWEEP_COMBINATIONS": "c-5"})
    frame = sweep("Q", cfg, seed=0, jobs=4).to_frame()
    gp = frame[frame["rule"] == "GP"].set_index("Q")["ba_error"].sort_index()
    approx = frame[frame["rule"] == "GP_App"].set_index("Q")["ba_error"].sort_index()
    # the exact predictor only gains from a longer history
    assert np.all(np.diff(gp.to_numpy()) <= 0.005)
    # the approximation stops improving after a few frames
    best_q = approx.idxmin()
    assert best_q <= 5
    assert np.all(np.diff(approx.loc[best_q:].to_numpy()) >= -0.005)


if __name__ == '__main__':
    pytest.main([__file__])
