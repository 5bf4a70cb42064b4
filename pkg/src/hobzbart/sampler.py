"""MCMC engine for the sequential-hurdle shared forest.

One iteration visits every tree in turn.  For tree ``t``:

1. Metropolis-Hastings on the topology, scoring each candidate by the tree
   prior times the product over leaves of the two probit marginals and the
   integrated (approximate) Beta marginal.  All three are computed against
   the partial fits of the other trees.
2. For each probit component, resample the latent variables and redraw the
   tree's leaf values from their Gaussian full conditional.
3. Redraw the tree's Beta-mean multipliers from their Gamma conditional.

After the tree sweep the Beta precision ``kappa`` is slice sampled on the
log scale against the exact Beta likelihood.

Latent sign convention: ``phi1 > 0`` exactly when ``y == 1``; on rows with
``y < 1``, ``phi0 > 0`` exactly when ``y == 0``.  ``phi0`` is never touched on
rows with ``y == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .errors import ValidationError
from .forest import (
    FREE,
    LEAF,
    Forest,
    Hyperparams,
    SplitGrid,
    _assign_rows,
    _leaf_counts_ok,
    _propose,
    _tree_log_prior,
    sample_prior_tree,
)
from .likelihood import _beta_lml, _log_beta_pdf, _probit_lml

ZERO, ONE, INTERIOR = 0, 1, 2

# slots of the packed hyperparameter vector handed to the kernels
_HP_ALPHA, _HP_BETA, _HP_PREC1, _HP_PREC0, _HP_AG, _HP_BG = range(6)
_HP_PGROW, _HP_PPRUNE, _HP_AK, _HP_BK, _HP_MINLEAF, _HP_WIDTH = range(6, 12)

_SLICE_MAX_STEPS = 50


@dataclass(frozen=True)
class Dataset:
    """Covariates and a response on ``[0, 1]``.

    Boundary detection is exact equality with 0.0 and 1.0.
    """

    X: np.ndarray
    y: np.ndarray
    arm: np.ndarray | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2:
            raise ValidationError(f"X must be a 2-d matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all(np.isfinite(X)):
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise ValidationError(f"non-finite covariate at row {i}, column {j}")
        bad = ~np.isfinite(y) | (y < 0.0) | (y > 1.0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"response at row {i} is {y[i]!r}; must be finite and in [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.arm is not None:
            arm = np.asarray(self.arm)
            if arm.shape != y.shape:
                raise ValidationError("arm labels must have one entry per row")
            object.__setattr__(self, "arm", arm)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def delta1(self) -> np.ndarray:
        return self.y == 1.0

    @cached_property
    def delta0(self) -> np.ndarray:
        return self.y == 0.0

    @cached_property
    def interior(self) -> np.ndarray:
        return (self.y > 0.0) & (self.y < 1.0)

    @cached_property
    def category(self) -> np.ndarray:
        cat = np.full(self.n, INTERIOR, dtype=np.int64)
        cat[self.delta0] = ZERO
        cat[self.delta1] = ONE
        return cat

    @cached_property
    def _log_terms(self):
        logy = np.zeros(self.n)
        log1my = np.zeros(self.n)
        m = self.interior
        logy[m] = np.log(self.y[m])
        log1my[m] = np.log1p(-self.y[m])
        return logy, log1my

    def subset(self, rows) -> Dataset:
        arm = None if self.arm is None else self.arm[rows]
        return Dataset(self.X[rows], self.y[rows], arm)


@dataclass(frozen=True)
class Schedule:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValidationError("iterations, burn_in must be >= 0 and thin >= 1")
        if self.burn_in > self.iterations:
            raise ValidationError(f"burn_in ({self.burn_in}) exceeds iterations ({self.iterations})")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def keeps(self, it: int) -> bool:
        """Whether 0-based iteration ``it`` is stored."""
        k = it - self.burn_in + 1
        return k > 0 and k % self.thin == 0


@dataclass
class SamplerState:
    forest: Forest
    leaf_of: np.ndarray
    phi1: np.ndarray
    phi0: np.ndarray
    f1: np.ndarray
    f0: np.ndarray
    logfb: np.ndarray
    kappa: float
    h: Hyperparams
    grid: SplitGrid
    iteration: int = 0
    move_counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))

    @property
    def fb(self) -> np.ndarray:
        return np.exp(self.logfb)

    def copy(self) -> SamplerState:
        return SamplerState(
            self.forest.copy(), self.leaf_of.copy(), self.phi1.copy(), self.phi0.copy(),
            self.f1.copy(), self.f0.copy(), self.logfb.copy(), self.kappa, self.h, self.grid,
            self.iteration, self.move_counts.copy(),
        )

    def refresh_fits(self, X) -> None:
        """Recompute cached fits and leaf assignments from the forest."""
        self.f1, self.f0, self.logfb = self.forest.evaluate(X)
        X = np.ascontiguousarray(X, dtype=np.float64)
        F = self.forest
        for t in range(len(F)):
            _assign_rows(F.var[t], F.cut[t], F.left[t], F.right[t], X, self.leaf_of[t])


@dataclass
class PosteriorDraws:
    """Kept draws of ``(f1, f0, f_b)`` per row plus ``kappa``.

    Arrays are ``(L, n)`` for training rows and ``(L, m)`` for test rows.
    """

    kappa: np.ndarray
    f1: np.ndarray
    f0: np.ndarray
    fb: np.ndarray
    test_f1: np.ndarray | None = None
    test_f0: np.ndarray | None = None
    test_fb: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.kappa.shape[0]

    def block(self, split: str = "train"):
        if split == "train":
            return self.f1, self.f0, self.fb
        if split == "test":
            if self.test_f1 is None:
                raise ValidationError("these draws carry no test rows")
            return self.test_f1, self.test_f0, self.test_fb
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _tn_positive(m, rng):
    """One draw of N(m, 1) truncated to (0, inf)."""
    a = -m
    if a <= 0.0:
        while True:
            z = rng.standard_normal()
            if z > a:
                x = m + z
                if x > 0.0:
                    return x
    # exponential proposal with the optimal rate for a right tail
    rate = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential() / rate
        if rng.random() <= math.exp(-0.5 * (z - rate) ** 2):
            x = m + z
            if x > 0.0:
                return x


@njit(cache=True)
def _sample_phi1(f1, cat, phi1, rng):
    for i in range(f1.shape[0]):
        if cat[i] == ONE:
            phi1[i] = _tn_positive(f1[i], rng)
        else:
            phi1[i] = -_tn_positive(-f1[i], rng)


@njit(cache=True)
def _sample_phi0(f0, cat, phi0, rng):
    for i in range(f0.shape[0]):
        c = cat[i]
        if c == ONE:
            continue
        if c == ZERO:
            phi0[i] = _tn_positive(f0[i], rng)
        else:
            phi0[i] = -_tn_positive(-f0[i], rng)


@njit(cache=True)
def _draw_theta(var, n_nodes, leaf_idx, resid, cat, skip_one, prec, theta, rng):
    cnt = np.zeros(n_nodes)
    tot = np.zeros(n_nodes)
    for i in range(leaf_idx.shape[0]):
        if skip_one and cat[i] == ONE:
            continue
        k = leaf_idx[i]
        cnt[k] += 1.0
        tot[k] += resid[i]
    for k in range(n_nodes):
        if var[k] == LEAF:
            post_prec = cnt[k] + prec
            theta[k] = tot[k] / post_prec + rng.standard_normal() / math.sqrt(post_prec)


@njit(cache=True)
def _draw_lambda(var, n_nodes, leaf_idx, cat, logy, eta, kappa, alpha_g, beta_g, mu, rng):
    cnt = np.zeros(n_nodes)
    s = np.zeros(n_nodes)
    for i in range(leaf_idx.shape[0]):
        if cat[i] == INTERIOR:
            k = leaf_idx[i]
            cnt[k] += 1.0
            s[k] += eta[i] * logy[i]
    for k in range(n_nodes):
        if var[k] == LEAF:
            shape = kappa * cnt[k] + alpha_g
            rate = beta_g - kappa * s[k]
            if not rate > 0.0:
                raise ValueError("non-positive Gamma rate in leaf multiplier update")
            lam = rng.gamma(shape, 1.0 / rate)
            mu[k] = math.log(max(lam, 1e-300))


@njit(cache=True)
def _leaves_loglik(var, n_nodes, leaf_idx, cat, r1, r0, glog, eta, logy, log1my,
                   kappa, prec1, prec0, alpha_g, beta_g):
    n1 = np.zeros(n_nodes)
    s1 = np.zeros(n_nodes)
    q1 = np.zeros(n_nodes)
    n0 = np.zeros(n_nodes)
    s0 = np.zeros(n_nodes)
    q0 = np.zeros(n_nodes)
    nb = np.zeros(n_nodes)
    sb = np.zeros(n_nodes)
    rb = np.zeros(n_nodes)
    lgk = math.lgamma(kappa)
    logk = math.log(kappa)
    for i in range(leaf_idx.shape[0]):
        k = leaf_idx[i]
        n1[k] += 1.0
        s1[k] += r1[i]
        q1[k] += r1[i] * r1[i]
        c = cat[i]
        if c != ONE:
            n0[k] += 1.0
            s0[k] += r0[i]
            q0[k] += r0[i] * r0[i]
        if c == INTERIOR:
            nb[k] += 1.0
            sb[k] += eta[i] * logy[i]
            rb[k] += kappa * (logk + glog[i]) + (kappa - 1.0) * log1my[i] - lgk - logy[i]
    total = 0.0
    for k in range(n_nodes):
        if var[k] == LEAF:
            total += _probit_lml(n1[k], s1[k], q1[k], prec1)
            total += _probit_lml(n0[k], s0[k], q0[k], prec0)
            total += _beta_lml(nb[k], sb[k], rb[k], kappa, alpha_g, beta_g)
    return total


@njit(cache=True)
def _kappa_logpost(logk, logfb, cat, logy, log1my, alpha_k, beta_k):
    """Log full conditional of log(kappa), Jacobian included, exact Beta density."""
    k = math.exp(logk)
    lp = alpha_k * logk - beta_k * k
    for i in range(logfb.shape[0]):
        if cat[i] == INTERIOR:
            a = k * math.exp(logfb[i])
            lp += (a - 1.0) * logy[i] + (k - 1.0) * log1my[i] + math.lgamma(a + k) - math.lgamma(a) - math.lgamma(k)
    return lp


@njit(cache=True)
def _update_kappa(kappa, logfb, cat, logy, log1my, alpha_k, beta_k, width, rng):
    has_interior = False
    for i in range(cat.shape[0]):
        if cat[i] == INTERIOR:
            has_interior = True
            break
    if not has_interior:
        return rng.gamma(alpha_k, 1.0 / beta_k)
    x0 = math.log(kappa)
    level = _kappa_logpost(x0, logfb, cat, logy, log1my, alpha_k, beta_k) - rng.exponential()
    lo = x0 - width * rng.random()
    hi = lo + width
    j = int(math.floor(_SLICE_MAX_STEPS * rng.random()))
    m = _SLICE_MAX_STEPS - 1 - j
    while j > 0 and _kappa_logpost(lo, logfb, cat, logy, log1my, alpha_k, beta_k) > level:
        lo -= width
        j -= 1
    while m > 0 and _kappa_logpost(hi, logfb, cat, logy, log1my, alpha_k, beta_k) > level:
        hi += width
        m -= 1
    while True:
        x1 = lo + rng.random() * (hi - lo)
        if _kappa_logpost(x1, logfb, cat, logy, log1my, alpha_k, beta_k) > level:
            return math.exp(x1)
        if x1 < x0:
            lo = x1
        else:
            hi = x1


@njit(cache=True)
def _tree_step(t, var, cut, left, right, depth, theta1, theta0, mu, n_nodes, leaf_of,
               X, cat, logy, log1my, phi1, phi0, f1, f0, logfb, kappa, gvals, gcounts, hp, rng):
    n = X.shape[0]
    tv, tc, tl, tr, td = var[t], cut[t], left[t], right[t], depth[t]
    th1, th0, tmu = theta1[t], theta0[t], mu[t]
    lo = leaf_of[t]
    prec1, prec0 = hp[_HP_PREC1], hp[_HP_PREC0]
    ag, bg = hp[_HP_AG], hp[_HP_BG]

    # partial fits of every other tree
    g1 = np.empty(n)
    g0 = np.empty(n)
    glog = np.empty(n)
    eta = np.empty(n)
    r1 = np.empty(n)
    r0 = np.empty(n)
    for i in range(n):
        k = lo[i]
        g1[i] = f1[i] - th1[k]
        g0[i] = f0[i] - th0[k]
        glog[i] = logfb[i] - tmu[k]
        eta[i] = math.exp(glog[i])
        r1[i] = phi1[i] - g1[i]
        r0[i] = phi0[i] - g0[i]

    nn = n_nodes[t]
    lp_cur = _tree_log_prior(tv, td, nn, hp[_HP_ALPHA], hp[_HP_BETA]) + _leaves_loglik(
        tv, nn, lo, cat, r1, r0, glog, eta, logy, log1my, kappa, prec1, prec0, ag, bg)

    pv, pc, pl, pr, pd = tv.copy(), tc.copy(), tl.copy(), tr.copy(), td.copy()
    move, logq, ok, nn_new, node = _propose(pv, pc, pl, pr, pd, nn, gvals, gcounts,
                                            hp[_HP_PGROW], hp[_HP_PPRUNE], rng)
    accepted = False
    if ok:
        plo = np.empty(n, dtype=np.int64)
        _assign_rows(pv, pc, pl, pr, X, plo)
        if _leaf_counts_ok(pv, nn_new, plo, int(hp[_HP_MINLEAF])):
            lp_new = _tree_log_prior(pv, pd, nn_new, hp[_HP_ALPHA], hp[_HP_BETA]) + _leaves_loglik(
                pv, nn_new, plo, cat, r1, r0, glog, eta, logy, log1my, kappa, prec1, prec0, ag, bg)
            if -rng.exponential() < lp_new - lp_cur + logq:
                accepted = True
                tv[:] = pv
                tc[:] = pc
                tl[:] = pl
                tr[:] = pr
                td[:] = pd
                lo[:] = plo
                n_nodes[t] = nn_new
                nn = nn_new
                # leaf values of the accepted topology come from their conditional
                _draw_theta(tv, nn, lo, r1, cat, False, prec1, th1, rng)
                _draw_theta(tv, nn, lo, r0, cat, True, prec0, th0, rng)

    # probit component for y == 1
    for i in range(n):
        f1[i] = g1[i] + th1[lo[i]]
    _sample_phi1(f1, cat, phi1, rng)
    for i in range(n):
        r1[i] = phi1[i] - g1[i]
    _draw_theta(tv, nn, lo, r1, cat, False, prec1, th1, rng)
    for i in range(n):
        f1[i] = g1[i] + th1[lo[i]]

    # probit component for y == 0 given y < 1
    for i in range(n):
        f0[i] = g0[i] + th0[lo[i]]
    _sample_phi0(f0, cat, phi0, rng)
    for i in range(n):
        r0[i] = phi0[i] - g0[i]
    _draw_theta(tv, nn, lo, r0, cat, True, prec0, th0, rng)
    for i in range(n):
        f0[i] = g0[i] + th0[lo[i]]

    # Beta-mean multipliers
    _draw_lambda(tv, nn, lo, cat, logy, eta, kappa, ag, bg, tmu, rng)
    for i in range(n):
        logfb[i] = glog[i] + tmu[lo[i]]
    return move, accepted


@njit(cache=True)
def _iteration(var, cut, left, right, depth, theta1, theta0, mu, n_nodes, leaf_of,
               X, cat, logy, log1my, phi1, phi0, f1, f0, logfb, kappa, gvals, gcounts, hp,
               move_counts, rng):
    for t in range(var.shape[0]):
        move, accepted = _tree_step(t, var, cut, left, right, depth, theta1, theta0, mu, n_nodes,
                                    leaf_of, X, cat, logy, log1my, phi1, phi0, f1, f0, logfb,
                                    kappa, gvals, gcounts, hp, rng)
        move_counts[move, 0] += 1
        if accepted:
            move_counts[move, 1] += 1
    return _update_kappa(kappa, logfb, cat, logy, log1my, hp[_HP_AK], hp[_HP_BK], hp[_HP_WIDTH], rng)


# --------------------------------------------------------------------------
# state construction
# --------------------------------------------------------------------------


def pack_hyperparams(h: Hyperparams) -> np.ndarray:
    return np.array([
        h.tree_alpha, h.tree_beta, h.sd_theta1 ** -2, h.sd_theta0 ** -2, h.alpha_g, h.beta_g,
        h.p_grow, h.p_prune, h.alpha_kappa, h.beta_kappa, float(h.min_leaf_size), h.kappa_slice_width,
    ])


def init_state(data: Dataset, h: Hyperparams, rng: np.random.Generator) -> SamplerState:
    """All-stump forest with zero probit leaves, unit multipliers and kappa from its prior."""
    forest = Forest.stumps(h.num_trees, h.capacity)
    n = data.n
    state = SamplerState(
        forest=forest,
        leaf_of=np.zeros((h.num_trees, n), dtype=np.int64),
        phi1=np.zeros(n),
        phi0=np.zeros(n),
        f1=np.zeros(n),
        f0=np.zeros(n),
        logfb=np.zeros(n),
        kappa=float(rng.gamma(h.alpha_kappa, 1.0 / h.beta_kappa)),
        h=h,
        grid=SplitGrid.from_data(data.X),
    )
    sample_latent_phi(state, data, rng)
    return state


def sample_prior_state(data: Dataset, h: Hyperparams, rng: np.random.Generator) -> SamplerState:
    """Forest, leaf values and kappa drawn from the prior; latent variables left at zero.

    Used by joint-distribution checks together with :func:`simulate_outcomes`.
    """
    grid = SplitGrid.from_data(data.X)
    trees = []
    for _ in range(h.num_trees):
        tree = sample_prior_tree(grid, rng, h)
        leaves = tree.leaves
        tree.theta1[leaves] = rng.normal(0.0, h.sd_theta1, leaves.size)
        tree.theta0[leaves] = rng.normal(0.0, h.sd_theta0, leaves.size)
        tree.mu[leaves] = np.log(np.maximum(rng.gamma(h.alpha_g, 1.0 / h.beta_g, leaves.size), 1e-300))
        trees.append(tree)
    n = data.n
    state = SamplerState(
        forest=Forest.from_trees(trees),
        leaf_of=np.zeros((h.num_trees, n), dtype=np.int64),
        phi1=np.zeros(n), phi0=np.zeros(n), f1=np.zeros(n), f0=np.zeros(n), logfb=np.zeros(n),
        kappa=float(rng.gamma(h.alpha_kappa, 1.0 / h.beta_kappa)),
        h=h, grid=grid,
    )
    state.refresh_fits(data.X)
    return state


def draw_interior(rng: np.random.Generator, a, b) -> np.ndarray:
    """Beta(a, b) draws, redrawing any value that rounds onto 0 or 1."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    out = rng.beta(a, b)
    bad = (out <= 0.0) | (out >= 1.0)
    for _ in range(1000):
        if not bad.any():
            return out
        out[bad] = rng.beta(a[bad], b[bad])
        bad = (out <= 0.0) | (out >= 1.0)
    out[out <= 0.0] = np.nextafter(0.0, 1.0)
    out[out >= 1.0] = np.nextafter(1.0, 0.0)
    return out


def simulate_outcomes(state: SamplerState, rng: np.random.Generator) -> np.ndarray:
    """Draw a response vector from the hurdle model at the state's fits.

    The latent variables are drawn jointly with the response, so afterwards
    ``state.phi1`` / ``state.phi0`` are an exact draw given the new response.
    """
    n = state.f1.shape[0]
    phi1 = state.f1 + rng.standard_normal(n)
    phi0 = state.f0 + rng.standard_normal(n)
    y = np.empty(n)
    one = phi1 > 0.0
    zero = ~one & (phi0 > 0.0)
    inner = ~one & ~zero
    y[one] = 1.0
    y[zero] = 0.0
    y[inner] = draw_interior(rng, state.kappa * np.exp(state.logfb[inner]), state.kappa)
    phi0[one] = 0.0
    state.phi1 = phi1
    state.phi0 = phi0
    return y


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def _data_arrays(data: Dataset):
    logy, log1my = data._log_terms
    return data.X, data.category, logy, log1my


def sample_latent_phi(state: SamplerState, data: Dataset, rng: np.random.Generator):
    """Resample both sets of latent probit variables at the current fits."""
    cat = data.category
    _sample_phi1(state.f1, cat, state.phi1, rng)
    _sample_phi0(state.f0, cat, state.phi0, rng)
    return state.phi1, state.phi0


def update_theta_leaves(t: int, r: int, state: SamplerState, data: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Gibbs draw of tree ``t``'s probit leaf values for component ``r`` (1 or 0)."""
    if r not in (0, 1):
        raise ValueError("component must be 1 or 0")
    F = state.forest
    lo = state.leaf_of[t]
    theta = F.theta1[t] if r == 1 else F.theta0[t]
    f = state.f1 if r == 1 else state.f0
    phi = state.phi1 if r == 1 else state.phi0
    h = state.h
    prec = h.sd_theta1 ** -2 if r == 1 else h.sd_theta0 ** -2
    partial = f - theta[lo]
    _draw_theta(F.var[t], F.n_nodes[t], lo, phi - partial, data.category, r == 0, prec, theta, rng)
    f[:] = partial + theta[lo]
    return theta


def update_lambda_leaves(t: int, state: SamplerState, data: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Conjugate Gamma draw of tree ``t``'s Beta-mean multipliers; returns ``mu = log(lambda)``."""
    F = state.forest
    lo = state.leaf_of[t]
    glog = state.logfb - F.mu[t][lo]
    _, cat, logy, _ = _data_arrays(data)
    _draw_lambda(F.var[t], F.n_nodes[t], lo, cat, logy, np.exp(glog), state.kappa,
                 state.h.alpha_g, state.h.beta_g, F.mu[t], rng)
    state.logfb[:] = glog + F.mu[t][lo]
    return F.mu[t]


def update_kappa(state: SamplerState, data: Dataset, rng: np.random.Generator) -> float:
    """Slice-sample the Beta precision on the log scale (exact Beta likelihood)."""
    _, cat, logy, log1my = _data_arrays(data)
    h = state.h
    state.kappa = float(_update_kappa(state.kappa, state.logfb, cat, logy, log1my,
                                      h.alpha_kappa, h.beta_kappa, h.kappa_slice_width, rng))
    return state.kappa


def kappa_log_conditional(kappa: float, state: SamplerState, data: Dataset) -> float:
    """Log full conditional density of ``kappa`` up to a constant (no Jacobian)."""
    _, cat, logy, log1my = _data_arrays(data)
    h = state.h
    logk = math.log(kappa)
    return float(_kappa_logpost(logk, state.logfb, cat, logy, log1my, h.alpha_kappa, h.beta_kappa)) - logk


def mcmc_iteration(state: SamplerState, data: Dataset, rng: np.random.Generator) -> SamplerState:
    """One full sweep: every tree in order, then ``kappa``."""
    X, cat, logy, log1my = _data_arrays(data)
    F = state.forest
    state.kappa = float(_iteration(
        F.var, F.cut, F.left, F.right, F.depth, F.theta1, F.theta0, F.mu, F.n_nodes, state.leaf_of,
        X, cat, logy, log1my, state.phi1, state.phi0, state.f1, state.f0, state.logfb, state.kappa,
        state.grid.values, state.grid.counts, pack_hyperparams(state.h), state.move_counts, rng,
    ))
    state.iteration += 1
    return state


def run_chain(data: Dataset, test_X=None, h: Hyperparams | None = None,
              schedule: Schedule | None = None) -> PosteriorDraws:
    """Run one chain from all-stump initialisation and keep post-burn-in draws."""
    h = h or Hyperparams()
    schedule = schedule or Schedule()
    if test_X is not None:
        test_X = np.ascontiguousarray(test_X, dtype=np.float64)
        if test_X.ndim != 2 or test_X.shape[1] != data.p:
            raise ValidationError(f"test covariates need {data.p} columns, got shape {test_X.shape}")
        if not np.all(np.isfinite(test_X)):
            raise ValidationError("test covariates contain non-finite values")
    rng = np.random.default_rng(schedule.seed)
    state = init_state(data, h, rng)
    L, n = schedule.n_kept, data.n
    kappa = np.empty(L)
    f1, f0, fb = np.empty((L, n)), np.empty((L, n)), np.empty((L, n))
    if test_X is not None:
        m = test_X.shape[0]
        t1, t0, tb = np.empty((L, m)), np.empty((L, m)), np.empty((L, m))
    l = 0
    for it in range(schedule.iterations):
        mcmc_iteration(state, data, rng)
        if schedule.keeps(it):
            kappa[l] = state.kappa
            f1[l], f0[l], fb[l] = state.f1, state.f0, state.fb
            if test_X is not None:
                a, b, c = state.forest.evaluate(test_X)
                t1[l], t0[l], tb[l] = a, b, np.exp(c)
            l += 1
    counts = state.move_counts
    meta = {
        "seed": schedule.seed,
        "iterations": schedule.iterations,
        "burn_in": schedule.burn_in,
        "thin": schedule.thin,
        "num_trees": h.num_trees,
        "n_train": n,
        "acceptance": {
            name: (float(counts[i, 1] / counts[i, 0]) if counts[i, 0] else 0.0)
            for i, name in enumerate(("grow", "prune", "change"))
        },
    }
    draws = PosteriorDraws(kappa, f1, f0, fb, meta=meta)
    if test_X is not None:
        draws.test_f1, draws.test_f0, draws.test_fb = t1, t0, tb
    return draws
