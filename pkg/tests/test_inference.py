import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hobzbart.errors import ValidationError
from hobzbart.forest import Hyperparams
from hobzbart.inference import (
    FULL,
    PARTIAL,
    compute_metrics,
    compute_pite,
    expected_outcome,
    expected_partial_outcome,
    fit_linear_hobz,
    permutation_test,
    predict_draws,
)
from hobzbart.sampler import INTERIOR, ONE, ZERO, Dataset, PosteriorDraws, Schedule, run_chain
from hobzbart.simgen import SimConfig, generate_dataset


def fixed_draws(f1, f0, fb, kappa, reps=1):
    f1, f0, fb = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (f1, f0, fb))
    f1, f0, fb = (np.repeat(a, reps, axis=0) for a in (f1, f0, fb))
    return PosteriorDraws(np.full(f1.shape[0], float(kappa)), f1, f0, fb)


def random_draws(rng, L=40, n=15):
    return PosteriorDraws(rng.gamma(2, 1, L), rng.normal(size=(L, n)), rng.normal(size=(L, n)),
                          np.exp(rng.normal(size=(L, n))))


# ------------------------------------------------------------ expectations


def test_expected_outcome_reference_values():
    assert expected_outcome(0.0, 0.0, 1.0) == pytest.approx(0.625, abs=1e-15)
    assert expected_outcome(math.inf, 0.3, 2.0) == 1.0
    assert expected_outcome(-math.inf, math.inf, 2.0) == 0.0
    assert expected_outcome(40.0, -3.0, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_expected_partial_outcome_reference_values():
    assert expected_partial_outcome(0.0, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert expected_partial_outcome(math.inf, 3.0) == 0.0
    assert expected_partial_outcome(-math.inf, math.inf) == 1.0


@given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6), st.floats(0.01, 1.0))
def test_expectations_are_monotone(f1, f0, logfb, step):
    fb = math.exp(logfb)
    e = expected_outcome(f1, f0, fb)
    assert 0.0 <= e <= 1.0
    assert expected_outcome(f1 + step, f0, fb) >= e - 1e-15
    assert expected_outcome(f1, f0, fb * math.exp(step)) >= e - 1e-15
    assert expected_outcome(f1, f0 + step, fb) <= e + 1e-15
    p = expected_partial_outcome(f0, fb)
    assert expected_partial_outcome(f0, fb * math.exp(step)) >= p - 1e-15
    assert expected_partial_outcome(f0 + step, fb) <= p + 1e-15


# -------------------------------------------------------------- prediction


def test_certain_one_predicts_only_ones(rng):
    pd = predict_draws(fixed_draws([20.0] * 3, [0.0] * 3, [1.0] * 3, 2.0, reps=50), rng)
    assert (pd.category == ONE).all() and (pd.value == 1.0).all()


def test_category_frequencies_at_zero_fits(rng):
    n = 100_000
    pd = predict_draws(fixed_draws(np.zeros(n), np.zeros(n), np.ones(n), 2.0), rng)
    for code, p in ((ONE, 0.5), (ZERO, 0.25), (INTERIOR, 0.25)):
        k = np.count_nonzero(pd.category == code)
        assert abs(k - n * p) <= 3 * math.sqrt(n * p * (1 - p))
    inner = pd.value[pd.category == INTERIOR]
    assert ((inner > 0) & (inner < 1)).all()


def test_predictive_mean_matches_closed_form(rng):
    n = 100_000
    for _ in range(20):
        f1, f0, lfb, kappa = rng.normal(0, 1.2), rng.normal(0, 1.2), rng.normal(0, 1.0), rng.gamma(2, 2) + 0.2
        pd = predict_draws(fixed_draws(np.full(n, f1), np.full(n, f0), np.full(n, math.exp(lfb)), kappa), rng)
        se = pd.value.std() / math.sqrt(n)
        assert abs(pd.value.mean() - expected_outcome(f1, f0, math.exp(lfb))) < 3 * se


def test_prediction_needs_draws(rng):
    with pytest.raises(ValidationError):
        predict_draws(PosteriorDraws(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2))), rng)


# ------------------------------------------------------------------- PITE


def test_identical_arms_give_zero_effects(rng):
    d = random_draws(rng)
    res = compute_pite(d, d, FULL, split="train")
    assert (res.point == 0).all() and res.ate == 0.0
    assert (res.lower == 0).all() and (res.upper == 0).all()


def test_certain_treated_success_limit(rng):
    c = random_draws(rng)
    t = PosteriorDraws(c.kappa, np.full_like(c.f1, np.inf), c.f0, c.fb)
    res = compute_pite(t, c, FULL, split="train")
    np.testing.assert_allclose(res.point, 1.0 - expected_outcome(c.f1, c.f0, c.fb).mean(axis=0), rtol=1e-12)


@pytest.mark.parametrize("metric", [FULL, PARTIAL])
def test_pite_is_antisymmetric(metric, rng):
    a, b = random_draws(rng), random_draws(rng)
    ab = compute_pite(a, b, metric, 0.6, split="train")
    ba = compute_pite(b, a, metric, 0.6, split="train")
    np.testing.assert_allclose(ab.point, -ba.point, atol=1e-15)
    np.testing.assert_allclose(ab.lower, -ba.upper, atol=1e-12)
    np.testing.assert_allclose(ab.upper, -ba.lower, atol=1e-12)
    assert (ab.lower <= ab.point).all() and (ab.point <= ab.upper).all()


def test_pite_interval_is_posterior_quantiles(rng):
    a, b = random_draws(rng, L=400, n=3), random_draws(rng, L=400, n=3)
    res = compute_pite(a, b, FULL, 0.8, split="train")
    diff = expected_outcome(a.f1, a.f0, a.fb) - expected_outcome(b.f1, b.f0, b.fb)
    np.testing.assert_allclose(res.lower, np.quantile(diff, 0.1, axis=0))
    np.testing.assert_allclose(res.upper, np.quantile(diff, 0.9, axis=0))
    assert res.ate == pytest.approx(diff.mean())


def test_pite_rejects_mismatched_draws(rng):
    with pytest.raises(ValidationError):
        compute_pite(random_draws(rng, L=10), random_draws(rng, L=11), split="train")
    with pytest.raises(ValidationError):
        compute_pite(random_draws(rng, n=4), random_draws(rng, n=5), split="train")
    with pytest.raises(ValidationError):
        compute_pite(random_draws(rng), random_draws(rng), "median", split="train")


def test_average_effect_recovers_generator_contrast():
    cfg = SimConfig(n=1000, p_base=3, beta_alpha=(-0.5, 0.3, 0, 0), beta_gamma=(-0.5, 0, 0.3, 0),
                    beta_mu=(0.5, 0.3, 0, 0.2), kappa_true=5.0, seed=2, two_arm=True, arm_shift=(0, 0, 0.8))
    data, truth = generate_dataset(cfg)
    h = Hyperparams(num_trees=50)
    dt = run_chain(data.subset(data.arm == 1), data.X, h, Schedule(1500, 500, 1, 0))
    dc = run_chain(data.subset(data.arm == 0), data.X, h, Schedule(1500, 500, 1, 1))
    res = compute_pite(dt, dc, FULL)
    assert abs(res.ate - np.mean(truth.expected_treated - truth.expected_control)) <= 0.03


# ---------------------------------------------------------------- metrics


def test_perfect_prediction_metrics(rng):
    y = rng.random(50)
    m = compute_metrics(y, y)
    assert m.mae == 0 and m.mse == 0 and m.adj_r2 == pytest.approx(1.0)


def test_shifted_prediction_metrics(rng):
    y = rng.random(50)
    m = compute_metrics(y + 0.1, y)
    assert m.mae == pytest.approx(0.1) and m.mse == pytest.approx(0.01) and m.rmse == pytest.approx(0.1)
    assert m.adj_r2 == pytest.approx(1.0)


def test_adjusted_r2_matches_regression(rng):
    x = rng.random(40)
    y = 0.5 * x + rng.normal(0, 0.2, 40)
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    r2 = 1 - resid @ resid / np.sum((y - y.mean()) ** 2)
    assert compute_metrics(x, y).adj_r2 == pytest.approx(1 - (1 - r2) * 39 / 38, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_adjusted_r2_is_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    pred, obs = rng.random(30), rng.random(30)
    assert compute_metrics(a * pred + b, obs).adj_r2 == pytest.approx(compute_metrics(pred, obs).adj_r2, rel=1e-9)


def test_constant_prediction_is_flagged():
    m = compute_metrics(np.full(5, 0.3), [0.1, 0.2, 0.5, 0.9, 0.0])
    assert m.degenerate and m.adj_r2 == 0.0


def test_metrics_input_checks():
    with pytest.raises(ValidationError):
        compute_metrics([0.1, 0.2], [0.1, 0.2])
    with pytest.raises(ValidationError):
        compute_metrics([0.1, 0.2, 0.3], [0.1, 0.2])


# ------------------------------------------------------------ permutation


def two_arm_null(n=40, seed=0):
    cfg = SimConfig(n=n, p_base=2, beta_alpha=(0, 0.5, 0), beta_gamma=(0, 0, 0.5), beta_mu=(0, 0.3, 0),
                    seed=seed, two_arm=True)
    return generate_dataset(cfg)[0]


TINY = dict(h=Hyperparams(num_trees=5), schedule=Schedule(30, 10, 1, 3))


def test_permutation_output_shape():
    res = permutation_test(two_arm_null(), n_perm=6, **TINY)
    assert res.permuted_pite_sds.shape == (6,)
    assert 0 < res.p_value <= 1 and 0 <= res.raw_fraction <= 1
    assert res.p_value == pytest.approx((1 + res.raw_fraction * 6) / 7)


def test_permutation_is_invariant_to_arm_names():
    data = two_arm_null()
    renamed = Dataset(data.X, data.y, np.where(data.arm == 1, "control", "treated"))
    a = permutation_test(data, n_perm=4, **TINY)
    b = permutation_test(renamed, n_perm=4, **TINY)
    assert a.observed_pite_sd == b.observed_pite_sd
    np.testing.assert_array_equal(a.permuted_pite_sds, b.permuted_pite_sds)
    assert a.p_value == b.p_value


def test_permutation_configuration_errors():
    data = two_arm_null()
    with pytest.raises(ValidationError):
        permutation_test(data, n_perm=0, **TINY)
    with pytest.raises(ValidationError):
        permutation_test(Dataset(data.X, data.y, np.zeros(data.n)), n_perm=3, **TINY)
    with pytest.raises(ValidationError):
        permutation_test(Dataset(data.X, data.y), n_perm=3, **TINY)


# ----------------------------------------------------------- linear model


def test_linear_model_recovers_coefficients():
    truth = {"beta_one": (-0.8, 0.5, -0.3), "beta_zero": (-0.5, -0.4, 0.6), "beta_mean": (1.5, 0.4, -0.3)}
    cfg = SimConfig(n=1000, p_base=2, beta_alpha=truth["beta_one"], beta_gamma=truth["beta_zero"],
                    beta_mu=truth["beta_mean"], kappa_true=2.0, seed=1)
    data, _ = generate_dataset(cfg)
    out = fit_linear_hobz(data, Schedule(3000, 1000, 1, 0))
    for key, want in truth.items():
        np.testing.assert_allclose(out.extras[key].mean(axis=0), want, atol=0.15)


def test_linear_model_null_signal():
    zeros = (0.0, 0.0, 0.0, 0.0)
    data, _ = generate_dataset(SimConfig(n=400, p_base=3, beta_alpha=zeros, beta_gamma=zeros, beta_mu=zeros, seed=4))
    out = fit_linear_hobz(data, Schedule(2000, 500, 1, 0))
    for key in ("beta_one", "beta_zero"):
        m, s = out.extras[key].mean(axis=0), out.extras[key].std(axis=0)
        assert (np.abs(m[1:]) < 2 * s[1:]).all()


def test_linear_model_output_is_interchangeable(rng):
    data, _ = generate_dataset(SimConfig(n=100, p_base=2, beta_alpha=(0, 0, 0), beta_gamma=(0, 0, 0),
                                         beta_mu=(0, 0, 0), seed=5))
    X_test = rng.normal(size=(9, 2))
    out = fit_linear_hobz(data, Schedule(50, 10, 2, 1), X_test)
    assert out.f1.shape == (20, 100) and out.test_fb.shape == (20, 9)
    assert (out.fb > 0).all()
    again = fit_linear_hobz(data, Schedule(50, 10, 2, 1), X_test)
    assert out.test_f1.tobytes() == again.test_f1.tobytes()
    compute_pite(out, again, FULL)


def test_linear_model_rejects_rank_deficiency(rng):
    X = rng.normal(size=(30, 2))
    X = np.column_stack([X, X[:, 0] * 2.0])
    with pytest.raises(ValidationError, match="rank"):
        fit_linear_hobz(Dataset(X, rng.random(30)), Schedule(5, 1))
