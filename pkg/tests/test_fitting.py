import numpy as np
import pytest

from superbunch.fitting import FitError, FitResult, fit_two_timescale, two_timescale_model
from superbunch.statistics import CorrelationFunction

TRUE = dict(a=0.27, b=0.89, tau_m=1.28e-6, tau_g=4.63e-6)
LAGS = np.linspace(-20e-6, 20e-6, 401)


def _cf(values, stderr):
    return CorrelationFunction(LAGS[1] - LAGS[0], LAGS, values, stderr)


def test_noiseless_recovery():
    y = two_timescale_model(LAGS, **TRUE)
    fit = fit_two_timescale(_cf(y, np.full(LAGS.size, 1e-3)))
    for k, v in TRUE.items():
        assert getattr(fit, k) == pytest.approx(v, rel=1e-6)
    assert fit.g2_zero == (1 + fit.a) * (1 + fit.b)


def test_label_swap_orders_timescales():
    y = two_timescale_model(LAGS, **TRUE)
    init = FitResult(a=0.9, b=0.3, tau_m=5e-6, tau_g=1e-6)
    fit = fit_two_timescale(_cf(y, np.full(LAGS.size, 1e-3)), init)
    assert fit.tau_m < fit.tau_g
    assert fit.a == pytest.approx(0.27, rel=1e-6)


def test_single_timescale_flags_unidentifiable():
    y = two_timescale_model(LAGS, 0.0, 0.89, 1.28e-6, 4.63e-6)
    rng = np.random.default_rng(0)
    err = np.full(LAGS.size, 5e-3)
    fit = fit_two_timescale(_cf(y + rng.normal(0, err), err), FitResult(0.05, 0.8, 1e-6, 5e-6))
    assert fit.b == pytest.approx(0.89, abs=0.02)
    assert fit.tau_g == pytest.approx(4.63e-6, rel=0.02)
    # either a is pinned at zero with an unbounded timescale, or tau_m carries a huge error
    assert fit.a < 0.02
    assert not np.isfinite(fit.stderr["tau_m"]) or fit.stderr["tau_m"] > fit.tau_m


def test_flat_input_rejected():
    with pytest.raises(FitError):
        fit_two_timescale(_cf(np.ones(LAGS.size), np.full(LAGS.size, 0.01)))
    rng = np.random.default_rng(1)
    with pytest.raises(FitError):
        fit_two_timescale(_cf(1 + rng.normal(0, 0.01, LAGS.size), np.full(LAGS.size, 0.01)))


def test_too_few_bins():
    lags = np.linspace(-1, 1, 11)
    with pytest.raises(FitError):
        fit_two_timescale(CorrelationFunction(0.2, lags, np.ones(11), np.ones(11)))


def test_non_convergence_raises():
    y = two_timescale_model(LAGS, **TRUE)
    with pytest.raises(FitError):
        fit_two_timescale(_cf(y, np.full(LAGS.size, 1e-3)), max_iter=1)


def test_fit_consistency_over_seeds():
    y = two_timescale_model(LAGS, **TRUE)
    err = np.full(LAGS.size, 0.01)
    hits = {k: 0 for k in TRUE}
    n_seeds = 60
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        fit = fit_two_timescale(_cf(y + rng.normal(0, err), err), FitResult(**TRUE))
        for k, v in TRUE.items():
            hits[k] += abs(getattr(fit, k) - v) <= 3 * fit.stderr[k]
    for k in TRUE:
        assert hits[k] / n_seeds >= 0.95


def test_stderr_and_dict():
    rng = np.random.default_rng(3)
    y = two_timescale_model(LAGS, **TRUE)
    err = np.full(LAGS.size, 0.01)
    fit = fit_two_timescale(_cf(y + rng.normal(0, err), err))
    d = fit.to_dict()
    assert set(d["stderr"]) == set(TRUE)
    assert np.all(np.isfinite(list(d["stderr"].values())))
    assert np.isfinite(fit.g2_zero_stderr) and fit.g2_zero_stderr > 0
    assert len(d["covariance"]) == 4
    assert fit.chi2 / fit.dof == pytest.approx(1.0, abs=0.25)


def test_exponential_envelope():
    true = dict(a=0.3, b=0.8, tau_m=1e-6, tau_g=5e-6)
    y = two_timescale_model(LAGS, shape="exponential", **true)
    fit = fit_two_timescale(_cf(y, np.full(LAGS.size, 1e-3)), FitResult(**true, shape="exponential"),
                            shape="exponential")
    for k, v in true.items():
        assert getattr(fit, k) == pytest.approx(v, rel=1e-6)
