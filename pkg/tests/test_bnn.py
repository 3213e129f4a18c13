import json

import numpy as np
import pytest

from modelbridge.bnn import (
    BnnArchitecture,
    BnnPosterior,
    bnn_embedding,
    bnn_forward,
    gaussian_log_posterior,
    random_walk_mh,
    sample_posterior_mh,
)
from modelbridge.dist2dist import kappa
from modelbridge.kernels import EmpiricalKernelMean, KernelSpec, inner_product
from modelbridge.simulators import Dataset

ARCH = BnnArchitecture()
EMPTY = Dataset(np.zeros((0, 1)), np.zeros((0, 1)))


def forward_oracle(widths, xi, x):
    """Layer-by-layer loops over neurons; biases follow each weight block."""
    pos = 0
    h = list(x)
    for layer, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        W = [[xi[pos + o * n_in + i] for i in range(n_in)] for o in range(n_out)]
        pos += n_in * n_out
        b = xi[pos:pos + n_out]
        pos += n_out
        out = [sum(W[o][i] * h[i] for i in range(n_in)) + b[o] for o in range(n_out)]
        if layer < len(widths) - 2:
            out = [max(v, 0.0) for v in out]
        h = out
    return h


def toy_data(seed=0, n=30):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, n)
    return Dataset(X, 0.8 * X + 0.3 + 0.1 * rng.normal(size=n))


def test_param_count_and_validation():
    assert ARCH.n_params == 2 * 3 + 4 * 3 + 4 * 1 == 22
    assert BnnArchitecture((1, 1, 1), (False, False)).n_params == 2
    with pytest.raises(ValueError):
        BnnArchitecture((1, 2))
    with pytest.raises(ValueError):
        bnn_forward(ARCH, np.zeros(5), [0.0])


def test_zero_weights_give_zero():
    np.testing.assert_array_equal(bnn_forward(ARCH, np.zeros(22), np.linspace(-3, 3, 5)), np.zeros((5, 1)))


def test_identity_path():
    arch = BnnArchitecture((1, 1, 1), (False, False))
    np.testing.assert_allclose(bnn_forward(arch, [1.0, 1.0], [0.5, 2.0, 7.0])[:, 0], [0.5, 2.0, 7.0])


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(0)
    arch = BnnArchitecture((2, 3, 4, 2))
    for _ in range(5):
        xi = rng.normal(size=arch.n_params)
        x = rng.normal(size=2)
        np.testing.assert_allclose(bnn_forward(arch, xi, x[None, :])[0], forward_oracle(arch.widths, xi, x),
                                   rtol=1e-12, atol=1e-14)


def test_prior_recovery_without_data():
    post = sample_posterior_mh(EMPTY, ARCH, prior_std=1.0, steps=25000, burn_in=5000, thin=10, seed=0,
                               proposal_std=0.5)
    assert post.samples.shape == (2000, 22)
    np.testing.assert_allclose(post.samples.std(axis=0), 1.0, rtol=0.15)


def test_conjugate_linear_case():
    # y = xi * x + N(0, s^2), xi ~ N(0, p^2): posterior mean is closed form
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 25)
    y = 1.7 * x + 0.5 * rng.normal(size=25)
    p, s = 1.0, 0.5
    exact = (x @ y / s**2) / (x @ x / s**2 + 1 / p**2)
    logp = gaussian_log_posterior(lambda xi, X: xi[0] * X, x, y, p, s)
    chain = random_walk_mh(logp, [0.0], 60000, 5000, 5, 0.3, np.random.default_rng(2))
    assert abs(chain.samples.mean() - exact) < 0.1
    assert np.all(np.isfinite(chain.log_density))
    # predictive mean over samples matches the conjugate predictive at a probe input
    assert abs(np.mean(chain.samples[:, 0] * 0.8) - exact * 0.8) < 0.1


def test_deterministic_chain():
    d = toy_data()
    a = sample_posterior_mh(d, ARCH, steps=3000, burn_in=1000, thin=10, seed=4)
    b = sample_posterior_mh(d, ARCH, steps=3000, burn_in=1000, thin=10, seed=4)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.acceptance_rate == b.acceptance_rate


def test_default_proposal_acceptance_guard():
    for seed in range(3):
        post = sample_posterior_mh(toy_data(seed), ARCH, seed=seed)
        assert 0.1 < post.acceptance_rate < 0.9
        assert post.samples.shape == (100, 22)


def test_posterior_fits_data():
    d = toy_data()
    post = sample_posterior_mh(d, ARCH, seed=0)
    resid = post.predict_mean(d.X)[:, 0] - d.Y[:, 0]
    assert np.sqrt(np.mean(resid**2)) < 0.3


def test_chain_argument_checks():
    logp = gaussian_log_posterior(lambda xi, X: xi[0] * X, [1.0], [1.0], 1.0, 1.0)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        random_walk_mh(logp, [0.0], 10, 10, 1, 0.1, rng)
    with pytest.raises(ValueError):
        random_walk_mh(logp, [0.0], 10, 5, 0, 0.1, rng)
    with pytest.raises(ValueError):
        random_walk_mh(lambda x: -np.inf, [0.0], 10, 5, 1, 0.1, rng)


def test_embedding_single_and_duplicates():
    one = BnnPosterior(ARCH, np.ones((1, 22)), 0.5, 0)
    e = bnn_embedding(one)
    np.testing.assert_array_equal(e.weights, [1.0])
    rng = np.random.default_rng(3)
    s = rng.normal(size=(5, 22))
    spec = KernelSpec(3.0)
    single = bnn_embedding(BnnPosterior(ARCH, s, 0.5, 0), spec)
    double = bnn_embedding(BnnPosterior(ARCH, np.vstack([s, s]), 0.5, 0), spec)
    probe = EmpiricalKernelMean(rng.normal(size=(4, 22)), rng.normal(size=4), spec)
    assert inner_product(single, probe) == pytest.approx(inner_product(double, probe), abs=1e-12)
    assert inner_product(single, single) == pytest.approx(inner_product(double, double), abs=1e-12)


def test_embedding_order_invariance_and_kappa_peak():
    a = sample_posterior_mh(toy_data(0), ARCH, steps=6000, burn_in=2000, thin=20, seed=0)
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, 30)
    b = sample_posterior_mh(Dataset(X, -1.5 * X + 1.0), ARCH, steps=6000, burn_in=2000, thin=20, seed=1)
    spec = KernelSpec(2.0)
    ea, eb = bnn_embedding(a, spec), bnn_embedding(b, spec)
    shuffled = bnn_embedding(BnnPosterior(ARCH, a.samples[::-1], a.acceptance_rate, 0), spec)
    assert inner_product(shuffled, eb) == pytest.approx(inner_product(ea, eb), rel=1e-12)
    assert kappa(ea, eb, 1.0) < kappa(ea, ea, 1.0) == 1.0


def test_posterior_json_roundtrip():
    post = sample_posterior_mh(toy_data(), ARCH, steps=1200, burn_in=200, thin=100, seed=2)
    doc = json.loads(json.dumps(post.to_dict()))
    assert set(doc) == {"arch", "samples", "acceptance_rate", "seed"}
    back = BnnPosterior.from_dict(doc)
    np.testing.assert_array_equal(back.samples, post.samples)
    assert back.arch == post.arch
