import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hobzbart.errors import ValidationError
from hobzbart.forest import Hyperparams, Tree, leaf_sufficient_stats, tree_log_prior
from hobzbart.likelihood import (
    beta_inv_fn,
    beta_leaf_log_marginal,
    probit_leaf_log_marginal,
    tree_log_posterior,
)
from hobzbart.sampler import INTERIOR, ONE, _leaves_loglik

from oracles import beta_marginal_quad, probit_marginal_quad


def probit_from_resid(resid, sigma):
    r = np.asarray(resid, dtype=float)
    if r.size == 0:
        return probit_leaf_log_marginal(0, 0.0, 0.0, sigma)
    return probit_leaf_log_marginal(r.size, r.mean(), float(((r - r.mean()) ** 2).sum()), sigma)


# ------------------------------------------------------------------ probit


def test_probit_empty_leaf_is_zero():
    assert probit_leaf_log_marginal(0, 0.0, 0.0, 0.3) == 0.0


def test_probit_single_zero_residual():
    assert probit_from_resid([0.0], 1.0) == pytest.approx(math.log(1 / math.sqrt(4 * math.pi)), abs=1e-14)
    assert probit_from_resid([0.0], 1.0) == pytest.approx(-1.2655, abs=1e-4)
    assert probit_marginal_quad([0.0], 1.0) == pytest.approx(-1.2655121234846454, rel=1e-10)


def test_probit_two_residuals_match_quadrature():
    assert probit_from_resid([0.5, -0.5], 1.0) == pytest.approx(probit_marginal_quad([0.5, -0.5], 1.0), rel=1e-10)


def test_probit_random_leaves_match_quadrature(rng):
    for _ in range(40):
        n = int(rng.integers(1, 21))
        resid = rng.normal(rng.normal(0, 2), rng.uniform(0.3, 2.0), n)
        sigma = float(rng.uniform(0.05, 3.0))
        assert probit_from_resid(resid, sigma) == pytest.approx(probit_marginal_quad(resid, sigma), rel=1e-8)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=15), st.randoms(use_true_random=False))
def test_probit_marginal_ignores_row_order(resid, shuffler):
    perm = list(resid)
    shuffler.shuffle(perm)
    assert probit_from_resid(perm, 0.4) == pytest.approx(probit_from_resid(resid, 0.4), rel=1e-12, abs=1e-12)


# ------------------------------------------------------------ Beta function


def test_inverse_beta_is_exact_at_unit_precision():
    for lam in (0.1, 1.0, 3.7, 250.0):
        rep = beta_inv_fn(1.0, lam)
        assert rep.exact_inv_B == pytest.approx(lam, rel=1e-12)
        assert rep.approx_inv_B == pytest.approx(lam, rel=1e-12)
        assert rep.rel_error < 1e-12


def test_inverse_beta_known_values():
    rep = beta_inv_fn(2.0, 10.0)
    assert rep.exact_inv_B == pytest.approx(420.0, rel=1e-12)
    assert rep.approx_inv_B == pytest.approx(400.0, rel=1e-12)
    assert rep.rel_error == pytest.approx(20 / 420, rel=1e-10)
    assert rep.rel_error == pytest.approx(0.0476, abs=1e-4)
    assert rep.value == rep.exact_inv_B
    assert beta_inv_fn(2.0, 10.0, "approx").value == rep.approx_inv_B


def test_inverse_beta_error_closed_form_at_kappa_two():
    # exact 1/B = 2lam(2lam+1), approximation 4lam^2, so the relative error is 1/(2lam+1)
    for lam in (2, 4, 8, 16, 32):
        assert beta_inv_fn(2.0, lam).rel_error == pytest.approx(1 / (2 * lam + 1), rel=1e-9)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0, 5.0])
def test_inverse_beta_error_is_order_one_over_lambda(kappa):
    # exact/approx = 1 + (kappa - 1)/(2 lam) + O(lam^-2), so lam * rel_error tends to |kappa - 1| / 2
    lams = np.geomspace(1.8, 100, 200)
    rel = np.array([beta_inv_fn(kappa, lam).rel_error for lam in lams])
    assert np.all(np.diff(rel) <= 0)
    assert np.all(rel * lams <= 1.05 * abs(kappa - 1) / 2 + 1e-15)
    assert rel[-1] * lams[-1] == pytest.approx(abs(kappa - 1) / 2, rel=0.05, abs=1e-15)


def test_inverse_beta_rejects_non_positive_inputs():
    with pytest.raises(ValidationError):
        beta_inv_fn(0.0, 1.0)
    with pytest.raises(ValidationError):
        beta_inv_fn(1.0, -2.0)
    with pytest.raises(ValidationError):
        beta_inv_fn(1.0, 2.0, mode="nearly")


def test_inverse_beta_is_overflow_safe():
    rep = beta_inv_fn(300.5, 1e5)
    assert math.isfinite(rep.log_exact_inv_B) and math.isfinite(rep.log_approx_inv_B)
    assert rep.rel_error == pytest.approx(299.5 / 2e5, rel=0.02)


# --------------------------------------------------------- Beta leaf marginal


def test_beta_marginal_empty_leaf_is_zero():
    assert beta_leaf_log_marginal([], [], 2.0) == 0.0


def test_beta_marginal_single_row():
    want = (math.log(4) + math.log(0.15 ** 0.5 / math.gamma(0.5)) + math.lgamma(2.5)
            - 2.5 * math.log(0.15 + 2 * math.log(2)))
    got = beta_leaf_log_marginal([0.5], [1.0], 2.0, 0.5, 0.15)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(-0.924, abs=1e-3)
    assert got == pytest.approx(beta_marginal_quad([0.5], [1.0], 2.0, 0.5, 0.15), rel=1e-8)


def test_beta_marginal_two_rows_match_quadrature():
    got = beta_leaf_log_marginal([0.5, 0.25], [1.0, 1.0], 2.0)
    assert got == pytest.approx(beta_marginal_quad([0.5, 0.25], [1.0, 1.0], 2.0, 0.5, 0.15), rel=1e-8)


def test_beta_marginal_random_leaves_match_quadrature(rng):
    for _ in range(25):
        n = int(rng.integers(1, 11))
        y = rng.uniform(0.02, 0.98, n)
        eta = np.exp(rng.normal(0, 0.7, n))
        kappa = float(rng.uniform(0.5, 8.0))
        ag, bg = float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.1, 2.0))
        got = beta_leaf_log_marginal(y, eta, kappa, ag, bg)
        assert got == pytest.approx(beta_marginal_quad(y, eta, kappa, ag, bg), rel=1e-6)


def test_beta_marginal_rejects_boundary_responses():
    with pytest.raises(ValidationError):
        beta_leaf_log_marginal([0.3, 1.0], [1.0, 1.0], 2.0)
    with pytest.raises(ValidationError):
        beta_leaf_log_marginal([0.3], [0.0], 2.0)


@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.1, 5.0)), min_size=1, max_size=10),
       st.randoms(use_true_random=False))
def test_beta_marginal_ignores_row_order(rows, shuffler):
    perm = list(rows)
    shuffler.shuffle(perm)
    a = beta_leaf_log_marginal([r[0] for r in rows], [r[1] for r in rows], 3.0)
    b = beta_leaf_log_marginal([r[0] for r in perm], [r[1] for r in perm], 3.0)
    assert a == pytest.approx(b, rel=1e-12)


def test_large_shape_stays_finite():
    y = np.full(400, 0.6)
    val = beta_leaf_log_marginal(y, np.ones(400), 5.0)
    assert math.isfinite(val)


# ---------------------------------------------------------- tree posterior


def test_stump_on_empty_data_scores_prior_only():
    h = Hyperparams()
    tree = Tree.stump()
    stats = leaf_sufficient_stats(tree, np.zeros((0, 2)), np.zeros(0), [], [], [], 2.0)
    assert tree_log_posterior(tree, stats, h, 2.0) == tree_log_prior(tree, h)


@pytest.mark.parametrize("n", [10, 20, 50])
def test_separating_split_beats_stump(n, rng):
    h = Hyperparams(sigma_theta1=1.0, sigma_theta0=1.0)
    x = np.linspace(-1, 1, n)
    X = x[:, None]
    y = np.where(x > 0, 1.0, 0.0)
    # latent draws consistent with the categories, fits of the other trees at zero
    r1 = np.where(y == 1, 1.0, -1.0) + rng.normal(0, 0.1, n)
    r0 = np.where(y == 0, 1.0, -1.0)
    eta = np.ones(n)
    stump, split = Tree.stump(), Tree.from_splits({1: (0, 0.0)})
    lp_stump = tree_log_posterior(stump, leaf_sufficient_stats(stump, X, y, r1, r0, eta, 2.0), h, 2.0)
    lp_split = tree_log_posterior(split, leaf_sufficient_stats(split, X, y, r1, r0, eta, 2.0), h, 2.0)
    assert lp_split > lp_stump


def _kernel_score(tree, X, y, r1, r0, eta, kappa, h):
    cat = np.where(y == 1, ONE, np.where(y == 0, 0, INTERIOR)).astype(np.int64)
    inner = cat == INTERIOR
    logy = np.where(inner, np.log(np.where(inner, y, 0.5)), 0.0)
    log1my = np.where(inner, np.log1p(-np.where(inner, y, 0.5)), 0.0)
    lo = tree.assign(X)
    return tree_log_prior(tree, h) + _leaves_loglik(
        tree.var, tree.n_nodes, lo, cat, r1, r0, np.log(eta), eta, logy, log1my,
        kappa, h.sd_theta1 ** -2, h.sd_theta0 ** -2, h.alpha_g, h.beta_g)


def test_sampler_kernel_agrees_with_reference_scoring(rng):
    h = Hyperparams(num_trees=20)
    for _ in range(20):
        n = 80
        X = rng.normal(size=(n, 3))
        y = rng.choice([0.0, 1.0, 0.5], size=n)
        inner = y == 0.5
        y[inner] = rng.uniform(0.01, 0.99, inner.sum())
        r1, r0 = rng.normal(size=n), rng.normal(size=n)
        eta = np.exp(rng.normal(0, 0.5, n))
        kappa = float(rng.uniform(0.5, 6))
        a = Tree.from_splits({1: (0, 0.0)})
        b = Tree.from_splits({1: (0, 0.0), 2: (1, float(rng.normal())), 3: (2, float(rng.normal()))})
        ref = [tree_log_posterior(t, leaf_sufficient_stats(t, X, y, r1, r0, eta, kappa), h, kappa) for t in (a, b)]
        ker = [_kernel_score(t, X, y, r1, r0, eta, kappa, h) for t in (a, b)]
        scale = abs(ref[0]) + abs(ref[1])
        assert abs((ref[1] - ref[0]) - (ker[1] - ker[0])) <= 1e-12 * scale
