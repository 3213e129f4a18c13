import numpy as np
import pytest

from modelbridge.bnn import BnnPosterior
from modelbridge.herding import herd
from modelbridge.kernels import SingularSystemError
from modelbridge.pipeline import (
    LAMBDA_GRID,
    BnnSettings,
    ExperimentConfig,
    bridge_predict,
    convergence_table,
    generate_datasets,
    loo_folds,
    pre_learn,
    select_lambda,
    train_bridge,
)
from modelbridge.simulators import RegimeShiftConfig, make_simulator

SMALL = ExperimentConfig(L=6, n=12, m=40, herd_samples=20)


@pytest.fixture(scope="module")
def small_pool():
    sim = make_simulator("toy")
    ds = generate_datasets(SMALL, sim)
    return ds, sim, pre_learn(ds, sim, SMALL)


def test_ledger_counts():
    cfg = ExperimentConfig(L=2, n=7, m=15)
    sim = make_simulator("toy")
    ds = generate_datasets(cfg, sim)
    before = sim.calls
    pool = pre_learn(ds, sim, cfg)
    assert len(pool) == 2
    assert pool.simulator_calls == sim.calls - before == 2 * 15 * 7


def test_identical_datasets_give_identical_pairs():
    sim = make_simulator("toy")
    d = generate_datasets(SMALL, sim, count=1)[0]
    pool = pre_learn([d, d], sim, SMALL)
    np.testing.assert_array_equal(pool.sim_means[0].weights, pool.sim_means[1].weights)
    np.testing.assert_array_equal(pool.ml_means[0].weights, pool.ml_means[1].weights)


def test_toy_calibration_matches_least_squares_theta():
    # constant theta with well-spread inputs, so least squares recovers the generating theta
    reg = RegimeShiftConfig((1.5, 2.5), (1.5, 2.5), 100.0, chi_low=0.0, chi_high=200.0, input_std=60.0)
    cfg = ExperimentConfig(L=10, regime=reg)
    sim = make_simulator("toy")
    ds = generate_datasets(cfg, sim)
    pool = pre_learn(ds, sim, cfg)
    for d, mu in zip(ds, pool.sim_means):
        x = d.X[:, 0]
        ls = np.linalg.lstsq(np.c_[x, x**2 / 100], d.Y[:, 0], rcond=None)[0]
        np.testing.assert_allclose(ls, [1.5, 2.5], rtol=1e-8)
        assert np.all(np.abs(mu.weighted_mean() - ls) <= 0.2 * np.abs(ls))


def test_train_bridge_single_and_singular(small_pool):
    ds, sim, pool = small_pool
    m1 = train_bridge(pool.subset([0]), 1e-6)
    assert m1.size == 1
    dup = pool.subset([0, 0])
    with pytest.raises(SingularSystemError, match="bridging function on 2 datasets"):
        train_bridge(dup, 0.0, 1.0)
    with pytest.raises(ValueError, match="coincide"):
        train_bridge(dup, 0.0)


def test_interpolation_at_every_training_dataset(small_pool):
    ds, sim, pool = small_pool
    sub = pool.subset(range(5))
    model = train_bridge(sub, 1e-12)
    for l in range(5):
        v = model.coefficients(sub.ml_means[l])
        np.testing.assert_allclose(v, np.eye(5)[l], atol=1e-6)


def test_bridge_predict_interpolation_equals_direct_herding(small_pool):
    ds, sim, pool = small_pool
    model = train_bridge(pool, 1e-12)
    herding = SMALL.herding_config()
    for l in (0, 4):
        before = sim.calls
        pred = bridge_predict(model, pool.embedder, ds[l], ds[l].X[:1], herding, sim)
        assert sim.calls == before
        assert pred.diagnostics["simulator_calls"] == 0
        np.testing.assert_array_equal(pred.theta_samples, herd(pool.sim_means[l], herding))
        np.testing.assert_allclose(pred.y_hat, pool.ml_models[l].predict_mean(ds[l].X[:1]))


def test_bridge_predict_new_dataset_makes_no_simulator_calls(small_pool):
    ds, sim, pool = small_pool
    model = train_bridge(pool, SMALL.lam)
    new = generate_datasets(SMALL, make_simulator("toy"), count=1, start=50)[0]
    before = sim.calls
    pred = bridge_predict(model, pool.embedder, new, [[100.0]], SMALL.herding_config(), sim)
    assert sim.calls - before == 0
    assert pred.theta_samples.shape == (20, 2)
    with pytest.raises(ValueError):
        bridge_predict(model, pool.embedder, new.__class__(np.zeros((0, 1)), np.zeros((0, 1))), [[1.0]],
                       SMALL.herding_config())


def test_end_to_end_determinism():
    def run():
        sim = make_simulator("toy")
        ds = generate_datasets(SMALL, sim)
        pool = pre_learn(ds, sim, SMALL)
        model = train_bridge(pool, SMALL.lam)
        new = generate_datasets(SMALL, sim, count=1, start=SMALL.L)[0]
        return bridge_predict(model, pool.embedder, new, [[90.0]], SMALL.herding_config())

    a, b = run(), run()
    np.testing.assert_array_equal(a.theta_samples, b.theta_samples)
    np.testing.assert_array_equal(a.mu_mb.weights, b.mu_mb.weights)
    np.testing.assert_array_equal(a.y_hat, b.y_hat)


def test_loo_folds_permute_with_dataset_order(small_pool):
    ds, sim, pool = small_pool
    base = {f.held_out: f.gap for f in loo_folds(pool, 1e-3, 1.0)}
    perm = [3, 0, 5, 1, 4, 2]
    moved = loo_folds(pool.subset(perm), 1e-3, 1.0)
    for new_pos, f in enumerate(moved):
        assert f.gap == pytest.approx(base[perm[new_pos]], rel=1e-9, abs=1e-14)


def test_convergence_single_fold_and_table(small_pool):
    ds, sim, pool = small_pool
    rows = convergence_table(pool, SMALL, [1, 3, 5])
    assert [r.L for r in rows] == [1, 3, 5]
    assert all(np.isfinite([r.mean_gap, r.std_gap, r.baseline]).all() for r in rows)
    with pytest.raises(ValueError):
        convergence_table(pool, SMALL, [6])


def test_select_lambda(small_pool):
    ds, sim, pool = small_pool
    best, scores = select_lambda(pool)
    assert best in LAMBDA_GRID
    assert scores[best] == min(scores.values())


def test_config_roundtrip_and_validation():
    cfg = ExperimentConfig.assembly(L=3, n=5)
    assert cfg.regime.n == 5 and cfg.prior.dim == 4
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(ml_path="svm")
    with pytest.raises(ValueError):
        ExperimentConfig(m=0)


def test_bnn_path_runs_without_simulator_calls():
    cfg = ExperimentConfig(L=3, n=10, m=20, herd_samples=10, ml_path="bnn",
                           bnn=BnnSettings(steps=1500, burn_in=500, thin=50))
    sim = make_simulator("toy")
    ds = generate_datasets(cfg, sim)
    pool = pre_learn(ds, sim, cfg)
    assert isinstance(pool.ml_models[0], BnnPosterior)
    assert pool.ml_means[0].dim == 22
    model = train_bridge(pool, 1e-3)
    before = sim.calls
    pred = bridge_predict(model, pool.embedder, ds[0], [[100.0]], cfg.herding_config(), sim)
    assert sim.calls == before
    assert np.all(np.isfinite(pred.y_hat))
