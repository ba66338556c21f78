import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from fedcl import _backend, gmm
from fedcl.gmm import VARIANCE_FLOOR, GmmParams, fit_em


def naive_em(x, w, mu, var, iters):
    """Textbook EM written with scipy densities, one loop per iteration."""
    for _ in range(iters):
        dens = np.stack([wl * norm.pdf(x, m, np.sqrt(v)) for wl, m, v in zip(w, mu, var)], axis=1)
        resp = dens / dens.sum(axis=1, keepdims=True)
        nk = resp.sum(axis=0)
        w = nk / len(x)
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk, VARIANCE_FLOOR)
    return w, mu, var


def random_scores(rng):
    parts = [rng.normal(rng.uniform(-30, 5), rng.uniform(0.1, 3), rng.integers(5, 150))
             for _ in range(rng.integers(1, 5))]
    return np.concatenate(parts)


def test_kernel_matches_textbook_em(backend, rng):
    kern = gmm.kernels
    for _ in range(10):
        x = random_scores(rng)
        init = (np.full(3, 1 / 3), np.quantile(x, [0.2, 0.5, 0.8]), np.full(3, x.var()))
        w, mu, var, hist = kern.em_fit(x, *(a.copy() for a in init), 8, -np.inf, VARIANCE_FLOOR)
        assert len(hist) == 9
        rw, rmu, rvar = naive_em(x, *init, 8)
        assert np.allclose(w, rw, rtol=1e-9, atol=1e-12)
        assert np.allclose(mu, rmu, rtol=1e-9, atol=1e-9)
        assert np.allclose(var, rvar, rtol=1e-9, atol=1e-12)


def test_log_likelihood_never_decreases(backend, rng):
    for _ in range(30):
        fit = fit_em(random_scores(rng), 3, rng)
        assert np.all(np.diff(fit.history) >= -1e-9)
        assert fit.log_likelihood == fit.history[-1]


def test_reported_likelihood_matches_density(rng):
    x = random_scores(rng)
    fit = fit_em(x, 3, 0)
    assert fit.log_likelihood == pytest.approx(gmm.log_likelihood(fit.params, x), rel=1e-10)


def test_two_component_recovery(backend):
    errs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        x = np.concatenate([r.normal(0, 1, 400), r.normal(10, 1, 400)])
        means = np.sort(fit_em(x, 2, seed).params.means)
        errs.append(np.max(np.abs(means - [0, 10])))
    assert np.median(errs) < 0.3


def test_backends_agree(rng):
    if _backend.compiled_kernels is None:
        pytest.skip("compiled kernels not built")
    for _ in range(10):
        x = random_scores(rng)
        init = (np.full(3, 1 / 3), np.quantile(x, [0.1, 0.5, 0.9]), np.full(3, x.var()))
        a = _backend.python_kernels.em_fit(x, *(v.copy() for v in init), 200, 1e-7, VARIANCE_FLOOR)
        b = _backend.compiled_kernels.em_fit(x, *(v.copy() for v in init), 200, 1e-7, VARIANCE_FLOOR)
        assert len(a[3]) == len(b[3])
        for u, v in zip(a, b):
            assert np.allclose(u, v, rtol=1e-10, atol=1e-12)


def test_constant_data_gives_one_floored_component():
    fit = fit_em(np.full(20, -3.5), 3, 0)
    assert fit.params.n_components == 1
    assert fit.params.means[0] == -3.5 and fit.params.variances[0] == VARIANCE_FLOOR


def test_fewer_points_than_components_warns():
    with pytest.warns(UserWarning, match="reducing"):
        fit = fit_em(np.array([0.0, 1.0]), 3, 0)
    assert fit.params.n_components == 2


def test_bad_inputs():
    with pytest.raises(ValueError):
        fit_em(np.array([]), 2)
    with pytest.raises(ValueError):
        fit_em(np.array([0.0, np.nan]), 1)
    with pytest.raises(ValueError):
        GmmParams([0.5, 0.6], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        GmmParams([1.0], [0.0], [0.0])


def test_pdf_integrates_to_one():
    g = GmmParams([0.2, 0.5, 0.3], [-4.0, 0.0, 3.0], [0.5, 1.0, 2.0])
    grid = np.linspace(-20, 20, 200001)
    assert np.trapezoid(gmm.pdf(g, grid), grid) == pytest.approx(1.0, abs=1e-8)


def test_sampling_moments():
    g = GmmParams([0.2, 0.5, 0.3], [-4.0, 0.0, 3.0], [0.5, 1.0, 2.0])
    n = 200_000
    s = gmm.sample(g, n, 7)
    mean = float(g.weights @ g.means)
    var = float(g.weights @ (g.variances + g.means ** 2)) - mean ** 2
    assert abs(s.mean() - mean) < 4 * np.sqrt(var / n)
    assert gmm.sample(g, 0).shape == (0,)
    assert np.array_equal(gmm.sample(g, 10, 3), gmm.sample(g, 10, 3))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=80), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_fitted_mixture_is_valid(values, components, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_em(np.array(values), components, seed)
    p = fit.params
    assert abs(p.weights.sum() - 1.0) < 1e-9
    assert np.all(p.variances >= VARIANCE_FLOOR * (1 - 1e-12))
    assert np.all(np.diff(fit.history) >= -1e-9)
