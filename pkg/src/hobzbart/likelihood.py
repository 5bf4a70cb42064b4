"""Closed-form leaf marginals and the composite tree posterior.

Everything is evaluated on the log scale with ``lgamma``; shapes such as
``kappa * N + alpha_g`` routinely exceed the range of a raw Gamma function.

The Beta component uses the large-``lambda`` approximation

    1 / B(kappa*lambda, kappa)  ~=  (kappa*lambda)**kappa / Gamma(kappa)

which turns the product-of-trees mean into a Gamma-conjugate update for each
leaf multiplier.  The leaf prior is Gamma(shape=alpha_g, rate=beta_g) on
``lambda``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ValidationError
from .forest import Hyperparams, LeafSuffStats, Tree, tree_log_prior

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BetaApproxReport:
    lam: float
    kappa: float
    log_exact_inv_B: float
    log_approx_inv_B: float
    mode: str = "exact"

    @property
    def exact_inv_B(self) -> float:
        return math.exp(self.log_exact_inv_B)

    @property
    def approx_inv_B(self) -> float:
        return math.exp(self.log_approx_inv_B)

    @property
    def value(self) -> float:
        return self.exact_inv_B if self.mode == "exact" else self.approx_inv_B

    @property
    def rel_error(self) -> float:
        return abs(math.expm1(self.log_approx_inv_B - self.log_exact_inv_B))


def beta_inv_fn(kappa: float, lam: float, mode: str = "exact") -> BetaApproxReport:
    """Exact and approximate ``1 / B(kappa*lam, kappa)`` side by side."""
    if not (kappa > 0 and lam > 0):
        raise ValidationError(f"kappa and lambda must be positive, got kappa={kappa}, lambda={lam}")
    if mode not in ("exact", "approx"):
        raise ValidationError(f"mode must be 'exact' or 'approx', got {mode!r}")
    a = kappa * lam
    if kappa == int(kappa) and kappa <= 64:
        # Gamma(a + k) / Gamma(a) is a finite product for integer k
        log_exact = math.fsum(math.log(a + j) for j in range(int(kappa))) - math.lgamma(kappa)
    else:
        log_exact = math.lgamma(a + kappa) - math.lgamma(a) - math.lgamma(kappa)
    log_approx = kappa * math.log(a) - math.lgamma(kappa)
    return BetaApproxReport(lam, kappa, log_exact, log_approx, mode)


def probit_leaf_log_marginal(n: int, rbar: float, sse: float, sigma_theta: float) -> float:
    """Log marginal of ``n`` unit-variance latent residuals with a N(0, sigma^2) leaf mean.

    Parameters
    ----------
    n, rbar, sse :
        Count, mean and centred sum of squares of the partial residuals
        falling in the leaf for one probit component.
    sigma_theta :
        Prior standard deviation of the leaf value.
    """
    if n == 0:
        return 0.0
    prec = sigma_theta ** -2
    return (
        -0.5 * n * LOG_2PI
        + 0.5 * math.log(prec / (prec + n))
        - 0.5 * sse
        - n * prec * rbar * rbar / (2.0 * (n + prec))
    )


def beta_leaf_log_marginal(y, eta, kappa: float, alpha_g: float = 0.5, beta_g: float = 0.15) -> float:
    """Integrated approximate Beta likelihood of one leaf's interior rows.

    ``eta`` holds the product of the leaf multipliers of every other tree at
    each row.  The leaf multiplier is integrated against its Gamma prior.
    """
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if y.size == 0:
        return 0.0
    if np.any((y <= 0.0) | (y >= 1.0)):
        raise ValidationError("beta leaf marginal needs responses strictly inside (0, 1)")
    if np.any(eta <= 0.0):
        raise ValidationError("eta must be positive")
    row_term = float(np.sum(kappa * np.log(kappa * eta) + (kappa - 1.0) * np.log1p(-y)
                            - math.lgamma(kappa) - np.log(y)))
    s = float(np.sum(eta * np.log(y)))
    return float(_beta_lml(y.size, s, row_term, kappa, alpha_g, beta_g))


def leaf_log_marginal(st: LeafSuffStats, h: Hyperparams, kappa: float) -> float:
    """Sum of the three component marginals of one leaf."""
    return (
        probit_leaf_log_marginal(st.n1, st.rbar1, st.sse1, h.sd_theta1)
        + probit_leaf_log_marginal(st.n0, st.rbar0, st.sse0, h.sd_theta0)
        + float(_beta_lml(st.n_beta, st.s_beta, st.beta_row_term, kappa, h.alpha_g, h.beta_g))
    )


def tree_log_posterior(tree: Tree, stats: dict[int, LeafSuffStats], h: Hyperparams, kappa: float) -> float:
    """Unnormalised log posterior of one tree's topology given the other trees."""
    lp = tree_log_prior(tree, h)
    for st in stats.values():
        lp += leaf_log_marginal(st, h, kappa)
    return lp


# --------------------------------------------------------------------------
# compiled forms used by the sampler
# --------------------------------------------------------------------------


@njit(cache=True)
def _probit_lml(n, s, ss, prec):
    """Same quantity as :func:`probit_leaf_log_marginal` from raw sums."""
    if n == 0:
        return 0.0
    return (-0.5 * n * LOG_2PI + 0.5 * math.log(prec / (prec + n))
            - 0.5 * ss + s * s / (2.0 * (n + prec)))


@njit(cache=True)
def _beta_lml(n, s, row_term, kappa, alpha_g, beta_g):
    if n == 0:
        return 0.0
    shape = kappa * n + alpha_g
    rate = beta_g - kappa * s
    return (row_term + alpha_g * math.log(beta_g) - math.lgamma(alpha_g)
            + math.lgamma(shape) - shape * math.log(rate))


@njit(cache=True)
def _log_beta_pdf(y, a, b):
    return ((a - 1.0) * math.log(y) + (b - 1.0) * math.log1p(-y)
            + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b))
