import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from wordkrill.estimation import constraint_residuals, fit, max_residual
from wordkrill.model import log_likelihood, rates
from wordkrill.synth import SyntheticSpec, SyntheticSpecError, generate


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR, logger="wordkrill")


def test_defaults_have_plausible_counts():
    matrix, truth = generate(SyntheticSpec())
    assert matrix.dense().shape == (50, 500) and truth.k_dims == 2
    assert 0 < matrix.dense().mean() < 10


def test_fixed_seed_is_bit_identical():
    a, ta = generate(SyntheticSpec(seed=9))
    b, tb = generate(SyntheticSpec(seed=9))
    np.testing.assert_array_equal(a.dense(), b.dense())
    np.testing.assert_array_equal(ta.theta, tb.theta)
    c, _ = generate(SyntheticSpec(seed=10))
    assert not np.array_equal(a.dense(), c.dense())


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 30), st.integers(5, 40), st.integers(1, 2), st.integers(0, 2**32 - 1), st.booleans())
def test_truth_satisfies_constraints(n, m, k, seed, canonical):
    try:
        matrix, truth = generate(SyntheticSpec(n_docs=n, n_features=m, k_dims=k, seed=seed, canonical=canonical))
    except SyntheticSpecError:
        assume(False)  # a rare feature stayed empty through every redraw
    assert max_residual(constraint_residuals(truth.theta)) < 1e-12
    assert np.all(matrix.dense().sum(axis=0) > 0) and np.all(matrix.dense().sum(axis=1) > 0)
    assert truth.doc_ids == matrix.doc_ids and truth.feature_ids == matrix.feature_ids


def test_canonical_frame_keeps_rates():
    raw = generate(SyntheticSpec(n_docs=10, n_features=30, seed=4, canonical=False))[1]
    canon = generate(SyntheticSpec(n_docs=10, n_features=30, seed=4))[1]
    np.testing.assert_allclose(rates(canon), rates(raw), rtol=1e-10)
    assert canon.alpha[0] == raw.alpha[0] == 0.0


def test_cell_means_match_rates():
    spec = dict(n_docs=4, n_features=5, k_dims=1, psi_mean=2.0)
    diff = np.zeros((4, 5))
    total = np.zeros((4, 5))
    for seed in range(2000):
        matrix, truth = generate(SyntheticSpec(seed=seed, **spec))
        lam = rates(truth)
        diff += matrix.dense() - lam
        total += lam
    z = diff / np.sqrt(total)
    assert np.max(np.abs(z)) < 4.5


def test_zero_beta_carries_no_signal():
    rs = []
    for seed in range(5):
        matrix, truth = generate(SyntheticSpec(n_docs=20, n_features=200, k_dims=1, beta_sd=0.0, seed=seed))
        assert np.all(truth.beta == 0)
        res = fit(matrix, method="conditional")
        rs.append(abs(np.corrcoef(res.theta[:, 0], truth.theta[:, 0])[0, 1]))
    assert np.mean(rs) < 0.4


def test_overflow_rejected():
    with pytest.raises(SyntheticSpecError, match="smaller"):
        generate(SyntheticSpec(psi_mean=40.0))


def test_persistently_empty_column_rejected():
    with pytest.raises(SyntheticSpecError, match="attempts"):
        generate(SyntheticSpec(n_docs=3, n_features=5, k_dims=1, psi_mean=-25.0, psi_sd=0.0))


@pytest.mark.parametrize(
    "bad",
    [{"n_docs": 1}, {"n_features": 1}, {"k_dims": 0}, {"n_docs": 3, "k_dims": 3}, {"alpha_sd": -1.0}],
)
def test_invalid_spec(bad):
    with pytest.raises(SyntheticSpecError):
        SyntheticSpec(**bad)


def test_truth_loglik_is_finite():
    matrix, truth = generate(SyntheticSpec(seed=3))
    assert np.isfinite(log_likelihood(matrix, truth))
