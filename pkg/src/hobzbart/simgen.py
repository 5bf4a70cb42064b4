"""Synthetic data from the sequential-hurdle mechanism.

Per row: ``theta1 = Phi(z'b_one)``, ``theta0 = Phi(z'b_zero)``,
``lam = exp(z'b_mean)``.  Then ``y = 1`` with probability ``theta1``;
otherwise ``y = 0`` with probability ``theta0``; otherwise
``y ~ Beta(kappa*lam, kappa)``.  ``z`` is the design row with a leading 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .errors import ValidationError
from .sampler import Dataset, draw_interior

DESIGNS = ("linear", "nonlinear", "interaction")


@dataclass(frozen=True)
class Expansion:
    """Random subset of the all-products interaction basis of the base covariates."""

    select_k: int
    base_dim: int = 6
    selection_seed: int = 0


@dataclass(frozen=True)
class SimConfig:
    n: int
    p_base: int
    beta_alpha: tuple
    beta_gamma: tuple
    beta_mu: tuple
    kappa_true: float = 5.0
    sigma: tuple | None = None
    expansion: Expansion | None = None
    nonlinear: bool = False
    seed: int = 0
    n_test: int = 0
    two_arm: bool = False
    arm_shift: tuple = (0.0, 0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        for key in ("beta_alpha", "beta_gamma", "beta_mu", "arm_shift"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        if self.sigma is not None:
            object.__setattr__(self, "sigma", tuple(tuple(float(v) for v in row) for row in self.sigma))
        if self.n < 0 or self.n_test < 0:
            raise ValidationError("row counts must be non-negative")
        if not self.kappa_true > 0:
            raise ValidationError(f"kappa_true must be positive, got {self.kappa_true}")
        if self.expansion is not None:
            if self.expansion.base_dim != self.p_base:
                raise ValidationError("expansion base_dim must equal p_base")
            if self.nonlinear:
                raise ValidationError("nonlinear transforms and interaction expansion are exclusive")
        need = self.design_dim + 1
        for key in ("beta_alpha", "beta_gamma", "beta_mu"):
            if len(getattr(self, key)) != need:
                raise ValidationError(f"{key} needs {need} entries (intercept + {self.design_dim}), "
                                      f"got {len(getattr(self, key))}")
        if len(self.arm_shift) != 3:
            raise ValidationError("arm_shift holds one intercept shift per component")
        if self.sigma is not None:
            s = np.asarray(self.sigma)
            if s.shape != (self.p_base, self.p_base):
                raise ValidationError(f"sigma must be {self.p_base}x{self.p_base}")

    @property
    def design_dim(self) -> int:
        return self.expansion.select_k if self.expansion is not None else self.p_base


@dataclass
class SimTruth:
    theta1: np.ndarray
    theta0: np.ndarray
    lam: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    y: np.ndarray
    arm: np.ndarray | None = None
    expected_treated: np.ndarray | None = None
    expected_control: np.ndarray | None = None
    kappa: float = field(default=float("nan"))

    @property
    def interior_mean(self) -> np.ndarray:
        return self.lam / (1.0 + self.lam)

    @property
    def expected_y(self) -> np.ndarray:
        return self.theta1 + (1.0 - self.theta1) * (1.0 - self.theta0) * self.interior_mean

    def rows(self, idx) -> SimTruth:
        pick = lambda a: None if a is None else a[idx]
        return SimTruth(self.theta1[idx], self.theta0[idx], self.lam[idx], self.d1[idx], self.d2[idx],
                        self.y[idx], pick(self.arm), pick(self.expected_treated),
                        pick(self.expected_control), self.kappa)


def interaction_subsets(base_dim: int) -> list[tuple[int, ...]]:
    """All nonempty column subsets, ordered by size then lexicographically."""
    return [c for r in range(1, base_dim + 1) for c in itertools.combinations(range(base_dim), r)]


def select_interactions(base_dim: int, select_k: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    subsets = interaction_subsets(base_dim)
    if not 1 <= select_k <= len(subsets):
        raise ValidationError(f"select_k must be in [1, {len(subsets)}], got {select_k}")
    picked = np.sort(rng.choice(len(subsets), size=select_k, replace=False))
    return [subsets[i] for i in picked]


def _products(X_base, subsets) -> np.ndarray:
    cols = [np.prod(X_base[:, list(s)], axis=1) for s in subsets]
    return np.column_stack([np.ones(X_base.shape[0])] + cols)


def build_interaction_expansion(X_base, select_k: int, rng: np.random.Generator) -> np.ndarray:
    """Intercept plus ``select_k`` randomly chosen interaction products."""
    X_base = np.asarray(X_base, dtype=np.float64)
    return _products(X_base, select_interactions(X_base.shape[1], select_k, rng))


def _nonlinear_columns(X) -> np.ndarray:
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        x = X[:, j]
        kind = j % 3
        if kind == 0:
            out[:, j] = np.sin(2.0 * x)
        elif kind == 1:
            out[:, j] = x * x - 1.0
        else:
            out[:, j] = np.where(x > 0.0, 1.0, -1.0)
    return out


def design_matrix(cfg: SimConfig, X_base) -> np.ndarray:
    """Generator design (intercept first) for the given base covariates."""
    X_base = np.asarray(X_base, dtype=np.float64)
    if cfg.expansion is not None:
        rng = np.random.default_rng(cfg.expansion.selection_seed)
        return build_interaction_expansion(X_base, cfg.expansion.select_k, rng)
    cols = _nonlinear_columns(X_base) if cfg.nonlinear else X_base
    return np.column_stack([np.ones(X_base.shape[0]), cols])


def _expected(theta1, theta0, lam):
    return theta1 + (1.0 - theta1) * (1.0 - theta0) * lam / (1.0 + lam)


def generate_dataset(cfg: SimConfig) -> tuple[Dataset, SimTruth]:
    """Draw ``cfg.n`` rows.  Models only see the base covariates."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    X = rng.standard_normal((n, cfg.p_base))
    if cfg.sigma is not None:
        X = X @ np.linalg.cholesky(np.asarray(cfg.sigma)).T
    Z = design_matrix(cfg, X)
    eta_a = Z @ np.asarray(cfg.beta_alpha)
    eta_g = Z @ np.asarray(cfg.beta_gamma)
    eta_m = Z @ np.asarray(cfg.beta_mu)

    arm = None
    exp_t = exp_c = None
    if cfg.two_arm:
        arm = rng.permutation(np.arange(n) % 2)
        sa, sg, sm = cfg.arm_shift
        exp_c = _expected(ndtr(eta_a), ndtr(eta_g), np.exp(eta_m))
        exp_t = _expected(ndtr(eta_a + sa), ndtr(eta_g + sg), np.exp(eta_m + sm))
        eta_a = eta_a + sa * arm
        eta_g = eta_g + sg * arm
        eta_m = eta_m + sm * arm

    theta1 = ndtr(eta_a)
    theta0 = ndtr(eta_g)
    lam = np.exp(eta_m)
    d1 = (rng.random(n) < theta1).astype(np.int8)
    d2 = ((rng.random(n) < theta0) & (d1 == 0)).astype(np.int8)
    y = np.empty(n)
    y[d1 == 1] = 1.0
    y[d2 == 1] = 0.0
    inner = (d1 == 0) & (d2 == 0)
    y[inner] = draw_interior(rng, cfg.kappa_true * lam[inner], cfg.kappa_true)
    truth = SimTruth(theta1, theta0, lam, d1, d2, y, arm, exp_t, exp_c, cfg.kappa_true)
    return Dataset(X, y, arm), truth


def generate_train_test(cfg: SimConfig):
    """Draw ``n + n_test`` rows in one pass and split off the last ``n_test``."""
    data, truth = generate_dataset(replace(cfg, n=cfg.n + cfg.n_test))
    tr = np.arange(cfg.n)
    te = np.arange(cfg.n, cfg.n + cfg.n_test)
    return data.subset(tr), truth.rows(tr), data.subset(te), truth.rows(te)


def _coefs(rng, dim, scale=0.5):
    return tuple(rng.normal(0.0, scale, dim + 1))


def _preset(name, n, p_base, coef_seed, n_test, expansion=None, nonlinear=False, **kw):
    dim = expansion.select_k if expansion is not None else p_base
    rng = np.random.default_rng(coef_seed)
    return SimConfig(n=n, p_base=p_base, beta_alpha=_coefs(rng, dim), beta_gamma=_coefs(rng, dim),
                     beta_mu=_coefs(rng, dim), expansion=expansion, nonlinear=nonlinear,
                     n_test=n_test, name=name, **kw)


def scenario_presets() -> list[SimConfig]:
    """Interaction grid cells plus the tree-count study configs and a null config.

    In the grid the stated ``n`` is split evenly into training and held-out
    rows.  The tree-count configs train on ``n`` rows and hold out as many.
    """
    out = []
    for i, n_total in enumerate((250, 500, 750)):
        for j, k in enumerate((5, 15, 45)):
            idx = 3 * i + j
            out.append(_preset(f"grid_n{n_total}_p{k}", n_total // 2, 6, 1000 + idx, n_total - n_total // 2,
                               expansion=Expansion(k, 6, 2000 + j)))
    out.append(_preset("s1_linear", 100, 3, 3001, 100))
    out.append(_preset("s2_linear", 500, 7, 3002, 500))
    out.append(_preset("s2_nonlinear", 500, 7, 3003, 500, nonlinear=True))
    zeros = (0.0,) * 6
    out.append(SimConfig(n=200, p_base=5, beta_alpha=zeros, beta_gamma=zeros, beta_mu=zeros,
                         n_test=200, name="null"))
    return out


def get_preset(name: str, seed: int | None = None) -> SimConfig:
    for cfg in scenario_presets():
        if cfg.name == name:
            return cfg if seed is None else replace(cfg, seed=seed)
    names = ", ".join(c.name for c in scenario_presets())
    raise ValidationError(f"unknown preset {name!r}; choose from {names}")
