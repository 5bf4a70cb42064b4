"""Prediction, treatment-effect contrasts, fit metrics and the linear baseline."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import NumericError, ValidationError
from .forest import Hyperparams
from .sampler import (
    INTERIOR,
    ONE,
    ZERO,
    Dataset,
    PosteriorDraws,
    Schedule,
    _sample_phi0,
    _sample_phi1,
    _update_kappa,
    draw_interior,
    run_chain,
)

FULL = "full_expectation"
PARTIAL = "partial_expectation"
METRIC_KINDS = (FULL, PARTIAL)

CATEGORY_NAMES = {ONE: "one", ZERO: "zero", INTERIOR: "interior"}


def _interior_mean(fb):
    # f_b / (1 + f_b), written so that f_b = inf gives 1
    return 1.0 / (1.0 + 1.0 / np.asarray(fb, dtype=np.float64))


def expected_outcome(f1, f0, fb):
    """Posterior-predictive mean of Y given one draw of the three latent fits."""
    p1 = ndtr(f1)
    out = p1 + _interior_mean(fb) * ndtr(-np.asarray(f0, dtype=np.float64)) * ndtr(-np.asarray(f1, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def expected_partial_outcome(f0, fb):
    """Mean of Y given that Y < 1."""
    out = _interior_mean(fb) * ndtr(-np.asarray(f0, dtype=np.float64))
    return out if np.ndim(out) else float(out)


@dataclass
class PredictionDraws:
    """Simulated outcomes, one per (kept draw, row).

    ``category`` uses the sampler's codes (0 zero, 1 one, 2 interior).
    """

    category: np.ndarray
    value: np.ndarray

    def proportions(self) -> dict[str, float]:
        total = self.category.size
        return {name: float(np.count_nonzero(self.category == c)) / total for c, name in CATEGORY_NAMES.items()}


def predict_draws(draws: PosteriorDraws, rng: np.random.Generator, split: str = "train") -> PredictionDraws:
    f1, f0, fb = draws.block(split)
    if draws.n_draws == 0:
        raise ValidationError("no posterior draws to predict from")
    shape = f1.shape
    one = rng.random(shape) < ndtr(f1)
    zero = ~one & (rng.random(shape) < ndtr(f0))
    inner = ~one & ~zero
    category = np.full(shape, INTERIOR, dtype=np.int8)
    category[one] = ONE
    category[zero] = ZERO
    value = np.zeros(shape)
    value[one] = 1.0
    kappa = np.broadcast_to(draws.kappa[:, None], shape)
    if inner.any():
        value[inner] = draw_interior(rng, kappa[inner] * fb[inner], kappa[inner])
    return PredictionDraws(category, value)


def posterior_expectations(draws: PosteriorDraws, metric: str = FULL, split: str = "train") -> np.ndarray:
    """Per-draw expectation of the chosen kind, shape ``(L, n)``."""
    f1, f0, fb = draws.block(split)
    if metric == FULL:
        return expected_outcome(f1, f0, fb)
    if metric == PARTIAL:
        return expected_partial_outcome(f0, fb)
    raise ValidationError(f"metric must be one of {METRIC_KINDS}, got {metric!r}")


@dataclass
class PiteResult:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    metric: str
    level: float
    ate: float

    @property
    def sd(self) -> float:
        """Spread of the per-individual point estimates."""
        return float(np.std(self.point, ddof=1)) if self.point.size > 1 else 0.0


def compute_pite(draws_t: PosteriorDraws, draws_c: PosteriorDraws, metric: str = FULL,
                 level: float = 0.6, split: str = "test") -> PiteResult:
    """Per-individual contrast of treated minus control predictions.

    Both draw sets must predict the same individuals (normally the test rows
    of two per-arm fits sharing one covariate matrix) with the same number
    of kept draws.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"credible level must lie in (0, 1), got {level}")
    et = posterior_expectations(draws_t, metric, split)
    ec = posterior_expectations(draws_c, metric, split)
    if et.shape != ec.shape:
        raise ValidationError(f"draw sets disagree in shape: {et.shape} vs {ec.shape}")
    if et.shape[0] == 0:
        raise ValidationError("no posterior draws")
    diff = et - ec
    point = diff.mean(axis=0)
    lower, upper = np.quantile(diff, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    # quantiles of a sample can sit a rounding error away from its mean
    lower = np.minimum(lower, point)
    upper = np.maximum(upper, point)
    return PiteResult(point, lower, upper, metric, level, float(point.mean()))


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mse: float
    adj_r2: float
    degenerate: bool = False

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mse)


def compute_metrics(predicted, observed) -> MetricsReport:
    """MAE, MSE and adjusted R^2 of regressing ``observed`` on ``predicted``."""
    pred = np.asarray(predicted, dtype=np.float64).reshape(-1)
    obs = np.asarray(observed, dtype=np.float64).reshape(-1)
    if pred.shape != obs.shape:
        raise ValidationError(f"length mismatch: {pred.size} predictions vs {obs.size} observations")
    n = pred.size
    if n < 3:
        raise ValidationError("need at least 3 observations for adjusted R^2")
    err = pred - obs
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    sp = np.std(pred)
    so = np.std(obs)
    if sp == 0.0 or so == 0.0:
        return MetricsReport(mae, mse, 0.0, True)
    r = float(np.corrcoef(pred, obs)[0, 1])
    r2 = min(r * r, 1.0)
    return MetricsReport(mae, mse, 1.0 - (1.0 - r2) * (n - 1) / (n - 2))


# --------------------------------------------------------------------------
# permutation test
# --------------------------------------------------------------------------


@dataclass
class PermTestResult:
    observed_pite_sd: float
    permuted_pite_sds: np.ndarray
    p_value: float
    raw_fraction: float
    metric: str
    treatment: object = None
    control: object = None

    @property
    def n_perm(self) -> int:
        return self.permuted_pite_sds.size


def _fit_seed(seed: int, perm_index: int, group: int) -> int:
    return int(np.random.SeedSequence([seed, perm_index, group]).generate_state(1)[0])


def _pite_sd(job):
    data, groups, h, schedule, metric, level, perm_index = job
    draws = []
    for g in (0, 1):
        sub = data.subset(groups == g)
        sched = Schedule(schedule.iterations, schedule.burn_in, schedule.thin,
                         _fit_seed(schedule.seed, perm_index, g))
        draws.append(run_chain(sub, data.X, h, sched))
    # sd is unchanged by the sign of the contrast, so the arm order is immaterial
    return compute_pite(draws[0], draws[1], metric, level).sd


def permutation_test(data: Dataset, h: Hyperparams | None = None, schedule: Schedule | None = None,
                     metric: str = FULL, n_perm: int = 99, level: float = 0.6,
                     workers: int = 1) -> PermTestResult:
    """One-sided test of whether PITE spread exceeds what random arm labels give.

    Each arm gets its own fit; both predict every individual.  Fit seeds are
    derived from ``(schedule.seed, permutation index, group)`` where group 0
    is whichever arm holds row 0, so renaming the arms changes nothing.
    """
    if metric not in METRIC_KINDS:
        raise ValidationError(f"metric must be one of {METRIC_KINDS}, got {metric!r}")
    if n_perm < 1:
        raise ValidationError(f"n_perm must be at least 1, got {n_perm}")
    if data.arm is None:
        raise ValidationError("permutation test needs an arm column")
    labels = np.unique(data.arm)
    if labels.size != 2:
        raise ValidationError(f"permutation test needs exactly two arms, found {labels.size}")
    h = h or Hyperparams()
    schedule = schedule or Schedule()
    groups = (data.arm != data.arm[0]).astype(np.int64)
    if min(np.count_nonzero(groups == 0), np.count_nonzero(groups == 1)) == 0:
        raise ValidationError("both arms need at least one row")

    perm_rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 2**31 - 1]))
    jobs = [(data, groups, h, schedule, metric, level, 0)]
    for k in range(1, n_perm + 1):
        shuffled = perm_rng.permutation(groups)
        # keep the labelling convention: group 0 holds row 0
        if shuffled[0] == 1:
            shuffled = 1 - shuffled
        jobs.append((data, shuffled, h, schedule, metric, level, k))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sds = list(pool.map(_pite_sd, jobs))
    else:
        sds = [_pite_sd(job) for job in jobs]
    observed = sds[0]
    permuted = np.asarray(sds[1:])
    exceed = int(np.count_nonzero(permuted >= observed))
    treatment = data.arm[groups == 1][0]
    control = data.arm[0]
    return PermTestResult(observed, permuted, (1 + exceed) / (1 + n_perm), exceed / n_perm,
                          metric, treatment, control)


# --------------------------------------------------------------------------
# linear baseline
# --------------------------------------------------------------------------


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.column_stack([np.ones(X.shape[0]), X])


def _gaussian_coef_draw(Z, target, prior_prec, rng):
    prec = Z.T @ Z + prior_prec * np.eye(Z.shape[1])
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, Z.T @ target)
    return mean + np.linalg.solve(chol.T, rng.standard_normal(Z.shape[1]))


def _mean_loglik(b, Z, logy, kappa, prior_prec):
    """Approximate interior log-likelihood in the log-linear coefficients, up to constants."""
    eta = Z @ b
    return kappa * np.sum(np.exp(eta) * logy + eta) - 0.5 * prior_prec * b @ b


def _mean_newton(b, Z, logy, kappa, prior_prec, steps=50):
    """Mode and negative Hessian of the (concave) approximate log-likelihood."""
    d = b.size
    for _ in range(steps):
        lam = np.exp(Z @ b)
        grad = kappa * Z.T @ (lam * logy + 1.0) - prior_prec * b
        neg_h = kappa * (Z.T * (-lam * logy)) @ Z + prior_prec * np.eye(d)
        step = np.linalg.solve(neg_h, grad)
        # damp large steps; exp() in the likelihood punishes overshoot
        scale = min(1.0, 2.0 / max(np.max(np.abs(step)), 1e-12))
        b = b + scale * step
        if np.max(np.abs(step)) < 1e-10:
            break
    lam = np.exp(Z @ b)
    neg_h = kappa * (Z.T * (-lam * logy)) @ Z + prior_prec * np.eye(d)
    return b, neg_h


def fit_linear_hobz(data: Dataset, schedule: Schedule | None = None, test_X=None,
                    h: Hyperparams | None = None, coef_prior_sd: float = 10.0,
                    mh_steps: int = 5) -> PosteriorDraws:
    """Sequential-hurdle model with linear predictors in place of the forest.

    Probit parts use truncated-normal augmentation with conjugate normal
    coefficient draws.  The log-linear interior mean is updated by
    random-walk Metropolis against the approximate Beta likelihood, with a
    proposal shaped by the curvature at the mode (re-estimated during
    burn-in only).  ``kappa`` uses the tree sampler's slice update.
    """
    schedule = schedule or Schedule()
    h = h or Hyperparams()
    Z = _design(data.X)
    d = Z.shape[1]
    if data.n < d or np.linalg.matrix_rank(Z) < d:
        raise ValidationError("design matrix (with intercept) is rank deficient")
    Zt = None
    if test_X is not None:
        test_X = np.asarray(test_X, dtype=np.float64)
        if test_X.ndim != 2 or test_X.shape[1] != data.p:
            raise ValidationError(f"test covariates need {data.p} columns, got shape {test_X.shape}")
        Zt = _design(test_X)

    rng = np.random.default_rng(schedule.seed)
    prior_prec = coef_prior_sd ** -2
    cat = data.category
    logy, log1my = data._log_terms
    below = cat != ONE
    inner = cat == INTERIOR
    Z0, Zi, logy_i = Z[below], Z[inner], logy[inner]

    b1 = np.zeros(d)
    b0 = np.zeros(d)
    bm = np.zeros(d)
    kappa = float(rng.gamma(h.alpha_kappa, 1.0 / h.beta_kappa))
    phi1 = np.zeros(data.n)
    phi0 = np.zeros(data.n)

    def refresh_proposal(b, k):
        if not inner.any():
            return np.linalg.cholesky(np.eye(d) / prior_prec)
        _, neg_h = _mean_newton(b.copy(), Zi, logy_i, k, prior_prec)
        return np.linalg.cholesky(np.linalg.inv(neg_h) * (2.38 ** 2 / d))

    if inner.any():
        bm, _ = _mean_newton(bm, Zi, logy_i, 1.0, prior_prec)
    chol = refresh_proposal(bm, kappa)

    L = schedule.n_kept
    out = {key: np.empty((L, data.n)) for key in ("f1", "f0", "fb")}
    tout = {key: np.empty((L, Zt.shape[0])) for key in ("f1", "f0", "fb")} if Zt is not None else None
    coef = {key: np.empty((L, d)) for key in ("beta_one", "beta_zero", "beta_mean")}
    kept_kappa = np.empty(L)
    accepted = 0
    proposed = 0
    l = 0
    for it in range(schedule.iterations):
        f1 = Z @ b1
        _sample_phi1(f1, cat, phi1, rng)
        b1 = _gaussian_coef_draw(Z, phi1, prior_prec, rng)
        f0 = Z @ b0
        _sample_phi0(f0, cat, phi0, rng)
        if below.any():
            b0 = _gaussian_coef_draw(Z0, phi0[below], prior_prec, rng)
        else:
            b0 = rng.normal(0.0, coef_prior_sd, d)

        if inner.any():
            cur = _mean_loglik(bm, Zi, logy_i, kappa, prior_prec)
            for _ in range(mh_steps):
                prop = bm + chol @ rng.standard_normal(d)
                new = _mean_loglik(prop, Zi, logy_i, kappa, prior_prec)
                proposed += 1
                if math.log(rng.random() + 1e-300) < new - cur:
                    bm, cur = prop, new
                    accepted += 1
        else:
            bm = rng.normal(0.0, coef_prior_sd, d)
        logfb = Z @ bm
        if not np.all(np.isfinite(logfb)):
            raise NumericError("interior-mean predictor overflowed")
        kappa = float(_update_kappa(kappa, logfb, cat, logy, log1my, h.alpha_kappa, h.beta_kappa,
                                    h.kappa_slice_width, rng))
        if it < schedule.burn_in and (it + 1) % 100 == 0:
            chol = refresh_proposal(bm, kappa)

        if schedule.keeps(it):
            kept_kappa[l] = kappa
            out["f1"][l], out["f0"][l], out["fb"][l] = Z @ b1, Z @ b0, np.exp(logfb)
            if Zt is not None:
                tout["f1"][l], tout["f0"][l], tout["fb"][l] = Zt @ b1, Zt @ b0, np.exp(Zt @ bm)
            coef["beta_one"][l], coef["beta_zero"][l], coef["beta_mean"][l] = b1, b0, bm
            l += 1

    meta = {
        "model": "linear",
        "seed": schedule.seed,
        "iterations": schedule.iterations,
        "burn_in": schedule.burn_in,
        "thin": schedule.thin,
        "n_train": data.n,
        "mean_coef_acceptance": accepted / proposed if proposed else 0.0,
    }
    draws = PosteriorDraws(kept_kappa, out["f1"], out["f0"], out["fb"], meta=meta, extras=coef)
    if tout is not None:
        draws.test_f1, draws.test_f0, draws.test_fb = tout["f1"], tout["f0"], tout["fb"]
    return draws
