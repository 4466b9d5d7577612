import math
from dataclasses import replace

import numpy as np
import pytest

from marginlab.core import Dataset, DomainError, LossKind, WeightVector, weighted_risk
from marginlab.geometry import max_margin_linear
from marginlab.harness.generators import mixed_sep_nonsep, planted_margin, two_cluster
from marginlab.predictors import HomogeneousMLP, LinearPredictor
from marginlab.trainer import (TRAJECTORY_HEADER, DivergenceError, Schedule, Snapshot, Termination, TrainConfig,
                               Trajectory, boosting_envelope_check, capped_learning_rate, train, weak_reg_path)

PAIR = Dataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, -1.0]))


def one_point():
    return Dataset(np.array([[1.0]]), np.array([1.0]))


def test_single_step():
    tr = train(LinearPredictor(1), one_point(), WeightVector.uniform(1), TrainConfig(eta0=1.0, max_steps=1))
    np.testing.assert_allclose(tr.final_theta, [1.0])
    assert [s.t for s in tr.snapshots] == [0, 1]
    assert tr.termination is Termination.MAX_STEPS


def test_determinism(tmp_path):
    mlp = HomogeneousMLP([2, 8, 1])
    data = two_cluster(3).data
    cfg = TrainConfig(eta0=0.5, max_steps=300, seed=11, snapshot_every=7)
    a = train(mlp, data, WeightVector.uniform(16), cfg)
    b = train(mlp, data, WeightVector.uniform(16), cfg)
    np.testing.assert_array_equal(a.final_theta, b.final_theta)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_norm_increases_after_separation():
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), TrainConfig(eta0=0.1, max_steps=10_000))
    first = next(k for k, s in enumerate(tr.snapshots) if s.separated)
    norms = [s.norm_theta for s in tr.snapshots[first:]]
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_snapshot_cadence():
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), TrainConfig(max_steps=100))
    assert [s.t for s in tr.snapshots] == [0, 1, 2, 4, 8, 16, 32, 64, 100]
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), TrainConfig(max_steps=25, snapshot_every=10))
    assert [s.t for s in tr.snapshots] == [0, 10, 20, 25]


def test_trajectory_csv(tmp_path):
    cert = max_margin_linear(PAIR)
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), TrainConfig(max_steps=50), certificate=cert)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_HEADER)
    assert lines[1].endswith(",")  # nonsep_gap empty
    back = Trajectory.read_snapshots(tmp_path / "t.csv")
    assert [s.csv_row() for s in tr.snapshots] == [s.csv_row() for s in back]


def test_capped_learning_rate():
    assert capped_learning_rate(0.1, 0.0, 1.0) == 0.1
    assert capped_learning_rate(10.0, 0.0, 1.0) == pytest.approx(1.0)
    L = 1e-3
    expected = 1 / (L * math.log(1 / L) ** (3 - 2 / 2.0))
    assert capped_learning_rate(1e9, math.log(L), 2.0) == pytest.approx(expected)


def test_capped_schedule_monotone_risk():
    for seed in range(100):
        kind = seed % 3
        if kind == 0:
            data, pred = planted_margin(seed, n=10).data, LinearPredictor(2)
        elif kind == 1:
            data, pred = two_cluster(seed, n=8).data, HomogeneousMLP([2, 4, 1])
        else:
            data, pred = mixed_sep_nonsep().data, LinearPredictor(2)
        w = WeightVector(np.random.default_rng(seed).uniform(0.5, 2, data.n), 2.0)
        # the cap's constant is 1, which presumes ||x|| <= 1; eta0 absorbs the data scale
        eta0 = 1.0 / float(np.max(np.sum(data.features ** 2, axis=1)))
        cfg = TrainConfig(eta0=eta0, schedule=Schedule.CAPPED_BY_RISK, max_steps=1000, seed=seed, snapshot_every=1)
        logs = [s.log_risk for s in train(pred, data, w, cfg).snapshots]
        assert all(b <= a + 1e-12 for a, b in zip(logs, logs[1:])), seed


def test_stationarity_stop():
    data = mixed_sep_nonsep().data
    cfg = TrainConfig(eta0=0.5, max_steps=100_000, lam=1e-2, stop_grad_norm=1e-8)
    tr = train(LinearPredictor(2), data, WeightVector.uniform(4), cfg)
    assert tr.termination is Termination.STATIONARITY
    assert tr.final.grad_norm <= 1e-8


def test_risk_target_stop():
    cfg = TrainConfig(eta0=0.5, max_steps=100_000, stop_log_risk=-5.0)
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), cfg)
    assert tr.termination is Termination.RISK_TARGET
    assert tr.final.log_risk <= -5.0


def test_logged_risk_matches_core():
    mlp = HomogeneousMLP([2, 5, 1])
    data = two_cluster(1, n=6).data
    w = WeightVector(np.linspace(0.5, 2, 6), 2.0)
    for loss in LossKind:
        cfg = TrainConfig(eta0=0.2, max_steps=40, lam=0.01, loss=loss, seed=2)
        tr = train(mlp, data, w, cfg)
        ref = weighted_risk(mlp, tr.final_theta, data, w, loss, 0.01, 2.0).log_risk
        assert tr.final.log_risk == pytest.approx(ref, rel=1e-12)


def test_divergence_error():
    data = Dataset(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]))
    with pytest.raises(DivergenceError) as info:
        train(LinearPredictor(1), data, WeightVector(np.array([4.0, 1.0]), 4.0),
              TrainConfig(eta0=50.0, max_steps=1000), theta0=np.array([5.0]))
    assert info.value.last_snapshot is not None


def test_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(eta0=0.0)
    with pytest.raises(DomainError):
        TrainConfig(max_steps=0)
    with pytest.raises(ValueError):
        Schedule.parse("sometimes")
    assert Schedule.parse("CappedByRisk") is Schedule.CAPPED_BY_RISK


def test_weak_reg_path_symmetric_pair():
    cert = max_margin_linear(PAIR)
    cfg = TrainConfig(eta0=0.5, max_steps=200_000)
    path = weak_reg_path(LinearPredictor(2), PAIR, WeightVector.uniform(2), [1e-1, 1e-2, 1e-3], cfg, certificate=cert)
    for p in path:
        assert p.theta[1] == 0.0 and p.theta[0] > 0
        assert p.trajectory.termination is Termination.STATIONARITY
    assert path[-1].gamma_tilde == pytest.approx(1.0)


def test_single_stage_path_equals_train():
    data = planted_margin(2, n=8, radius=1.0).data
    w = WeightVector.uniform(8)
    cfg = TrainConfig(eta0=0.5, max_steps=5000)
    path = weak_reg_path(LinearPredictor(2), data, w, [1e-3], cfg)
    tr = train(LinearPredictor(2), data, w, replace(cfg, lam=1e-3, stop_grad_norm=1e-8))
    np.testing.assert_array_equal(path[0].theta, tr.final_theta)


def test_weak_reg_path_validation():
    with pytest.raises(DomainError):
        weak_reg_path(LinearPredictor(2), PAIR, WeightVector.uniform(2), [1e-3, 1e-2], TrainConfig())
    with pytest.raises(DomainError):
        weak_reg_path(LinearPredictor(2), PAIR, WeightVector.uniform(2), [], TrainConfig())


def test_weak_reg_margin_invariance_small_example():
    g = planted_margin(4, n=10, radius=1.0)
    cfg = TrainConfig(eta0=1.0, schedule=Schedule.CAPPED_BY_RISK, max_steps=100_000)
    rng = np.random.default_rng(0)
    finals = []
    for _ in range(2):
        w = WeightVector(rng.uniform(0.5, 2, 10), 2.0)
        finals.append(weak_reg_path(LinearPredictor(2), g.data, w, [1e-2, 1e-4, 1e-6], cfg)[-1].gamma_tilde)
    assert abs(finals[0] - finals[1]) <= 0.05 * g.oracle.gamma_star


def test_envelope_single_sample():
    cfg = TrainConfig(eta0=1.0, max_steps=1, snapshot_every=1)
    tr = train(LinearPredictor(1), one_point(), WeightVector.uniform(1), cfg)
    s0, s1 = tr.snapshots
    assert s0.a_t == 1.0 and s0.b_t == 1.0
    assert math.exp(s1.log_risk) == pytest.approx(math.exp(-1))
    assert math.exp(s1.log_risk) <= 1.0 * (1 - 1.0 * (1 - 0.5) * 1.0)
    rep = boosting_envelope_check(tr)
    assert rep.applicable and rep.passed


def test_envelope_guards():
    cfg = TrainConfig(eta0=0.5, max_steps=20, snapshot_every=1)
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), cfg)
    bad = Trajectory([replace(tr.snapshots[0], a_t=1.5)] + tr.snapshots[1:], tr.final_theta, tr.termination,
                     tr.config, True)
    assert not boosting_envelope_check(bad).applicable
    sparse = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), TrainConfig(max_steps=20))
    assert not boosting_envelope_check(sparse).applicable
    reg = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), replace(cfg, lam=0.1))
    assert not boosting_envelope_check(reg).applicable
    mlp = train(HomogeneousMLP([2, 3, 1]), PAIR, WeightVector.uniform(2), cfg)
    assert not boosting_envelope_check(mlp).applicable


def test_envelope_detects_injected_violation():
    cfg = TrainConfig(eta0=0.5, max_steps=20, snapshot_every=1)
    tr = train(LinearPredictor(2), PAIR, WeightVector.uniform(2), cfg)
    snaps = list(tr.snapshots)
    snaps[5] = replace(snaps[5], log_risk=snaps[4].log_risk + 0.1)
    rep = boosting_envelope_check(Trajectory(snaps, tr.final_theta, tr.termination, tr.config, True))
    assert 4 in rep.violations
