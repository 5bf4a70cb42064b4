"""Tree arena, shared-forest container, tree prior and structural proposals.

Trees are stored as flat index arenas.  Node ``k`` of a tree is described by

    var[k]    covariate index for internal nodes, ``LEAF`` (-1) for leaves,
              ``FREE`` (-2) for unused slots
    cut[k]    split value; rows with ``x[var[k]] <= cut[k]`` go left
    left[k], right[k]
              child slots (-1 on leaves)
    depth[k]  root has depth 0

The root always lives in slot 0.  Each node also carries the three leaf
parameters of the shared forest (``theta1``, ``theta0``, ``mu``), which are
only meaningful on leaves.  A forest stacks ``T`` arenas into ``(T, capacity)``
arrays so the compiled sampler can index them directly.

The hot kernels are compiled with numba and are shared by the public
wrappers here and by :mod:`hobzbart.sampler`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import ValidationError

LEAF = -1
FREE = -2

GROW, PRUNE, CHANGE = 0, 1, 2
MOVE_NAMES = ("grow", "prune", "change")

DEFAULT_CAPACITY = 255


@dataclass(frozen=True)
class SplitRule:
    covariate_index: int
    cutpoint: float


@dataclass(frozen=True)
class LeafParams:
    theta1: float
    theta0: float
    mu: float

    @property
    def lam(self) -> float:
        return math.exp(self.mu)


@dataclass(frozen=True)
class Hyperparams:
    """Prior and proposal settings for the shared forest.

    ``sigma_theta1`` / ``sigma_theta0`` default to the usual probit-BART
    calibration ``3 / (k * sqrt(num_trees))``.  The Gamma priors on the
    Beta-mean leaves and on the precision use the shape/rate convention.
    """

    num_trees: int = 100
    tree_alpha: float = 0.95
    tree_beta: float = 2.0
    sigma_theta1: float | None = None
    sigma_theta0: float | None = None
    k: float = 2.0
    alpha_g: float = 0.5
    beta_g: float = 0.15
    alpha_kappa: float = 1.0
    beta_kappa: float = 2.0
    p_grow: float = 0.3
    p_prune: float = 0.3
    p_change: float = 0.4
    min_leaf_size: int = 1
    capacity: int = DEFAULT_CAPACITY
    kappa_slice_width: float = 1.0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValidationError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0.0 < self.tree_alpha < 1.0:
            raise ValidationError(f"tree_alpha must lie in (0, 1), got {self.tree_alpha}")
        positive = {
            "tree_beta": self.tree_beta,
            "k": self.k,
            "alpha_g": self.alpha_g,
            "beta_g": self.beta_g,
            "alpha_kappa": self.alpha_kappa,
            "beta_kappa": self.beta_kappa,
            "kappa_slice_width": self.kappa_slice_width,
        }
        for s in (self.sigma_theta1, self.sigma_theta0):
            if s is not None and not s > 0:
                raise ValidationError(f"probit leaf prior sd must be positive, got {s}")
        for name, value in positive.items():
            if not value > 0:
                raise ValidationError(f"{name} must be positive, got {value}")
        probs = (self.p_grow, self.p_prune, self.p_change)
        if min(probs) < 0 or not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
            raise ValidationError(f"move probabilities must be >= 0 and sum to 1, got {probs}")
        if self.p_grow <= 0:
            raise ValidationError("p_grow must be positive")
        if self.min_leaf_size < 0:
            raise ValidationError("min_leaf_size must be >= 0")
        if self.capacity < 3 or self.capacity % 2 == 0:
            raise ValidationError("capacity must be an odd number >= 3")

    @property
    def sd_theta1(self) -> float:
        if self.sigma_theta1 is not None:
            return self.sigma_theta1
        return 3.0 / (self.k * math.sqrt(self.num_trees))

    @property
    def sd_theta0(self) -> float:
        if self.sigma_theta0 is not None:
            return self.sigma_theta0
        return 3.0 / (self.k * math.sqrt(self.num_trees))


@dataclass(frozen=True)
class SplitGrid:
    """Candidate cutpoints: the sorted distinct training values per covariate.

    ``values`` is padded to a rectangle; only the first ``counts[j]`` entries
    of row ``j`` are used.
    """

    values: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_data(cls, X) -> SplitGrid:
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        uniq = [np.unique(X[:, j]) for j in range(p)]
        width = max([len(u) for u in uniq], default=0)
        values = np.zeros((p, max(width, 1)))
        counts = np.zeros(p, dtype=np.int64)
        for j, u in enumerate(uniq):
            values[j, : len(u)] = u
            counts[j] = len(u)
        return cls(values, counts)

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass
class LeafSuffStats:
    """Per-leaf sufficient statistics for the three hurdle components.

    ``beta_row_term`` accumulates the partition-free per-row factor of the
    integrated Beta likelihood, ``kappa*log(kappa*eta) + (kappa-1)*log(1-y)
    - lgamma(kappa) - log(y)``.
    """

    n1: int = 0
    rbar1: float = 0.0
    sse1: float = 0.0
    n0: int = 0
    rbar0: float = 0.0
    sse0: float = 0.0
    n_beta: int = 0
    s_beta: float = 0.0
    beta_row_term: float = 0.0


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _descend(var, cut, left, right, x):
    k = 0
    while var[k] >= 0:
        if x[var[k]] <= cut[k]:
            k = left[k]
        else:
            k = right[k]
    return k


@njit(cache=True)
def _assign_rows(var, cut, left, right, X, out):
    for i in range(X.shape[0]):
        k = 0
        while var[k] >= 0:
            if X[i, var[k]] <= cut[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = k


@njit(cache=True)
def _split_prob(alpha, beta, d):
    return alpha * (1.0 + d) ** (-beta)


@njit(cache=True)
def _tree_log_prior(var, depth, n_nodes, alpha, beta):
    lp = 0.0
    for k in range(n_nodes):
        v = var[k]
        if v == FREE:
            continue
        ps = _split_prob(alpha, beta, depth[k])
        if v >= 0:
            lp += math.log(ps) if ps > 0 else -np.inf
        else:
            lp += math.log1p(-ps)
    return lp


@njit(cache=True)
def _count_nodes(var, left, right, n_nodes):
    """Return (#leaves, #internal, #internal nodes whose children are both leaves)."""
    b = 0
    internal = 0
    nog = 0
    for k in range(n_nodes):
        v = var[k]
        if v == LEAF:
            b += 1
        elif v >= 0:
            internal += 1
            if var[left[k]] == LEAF and var[right[k]] == LEAF:
                nog += 1
    return b, internal, nog


@njit(cache=True)
def _pick_node(var, left, right, n_nodes, kind, j):
    """Return the j-th node of the given kind in slot order.

    kind 0 = leaf, 1 = internal, 2 = internal with two leaf children.
    """
    c = 0
    for k in range(n_nodes):
        v = var[k]
        if kind == 0:
            hit = v == LEAF
        elif kind == 1:
            hit = v >= 0
        else:
            hit = v >= 0 and var[left[k]] == LEAF and var[right[k]] == LEAF
        if hit:
            if c == j:
                return k
            c += 1
    return -1


@njit(cache=True)
def _draw_rule(gvals, gcounts, rng):
    p = gcounts.shape[0]
    if p == 0:
        return -1, 0.0
    j = rng.integers(0, p)
    m = gcounts[j]
    if m == 0:
        return -1, 0.0
    return j, gvals[j, rng.integers(0, m)]


@njit(cache=True)
def _propose(var, cut, left, right, depth, n_nodes, gvals, gcounts, p_grow, p_prune, rng):
    """Apply one random structural move in place.

    Returns ``(move, log_ratio, ok, new_n_nodes, node)`` where ``log_ratio`` is
    log q(T'->T) - log q(T->T') with split-rule selection probabilities
    omitted (they cancel against the same factors in the tree prior).
    The caller passes scratch copies; when ``ok`` is False the arrays may be
    partially modified and must be discarded.
    """
    b, internal, nog = _count_nodes(var, left, right, n_nodes)
    u = rng.random()
    if internal == 0 or u < p_grow:
        move = GROW
    elif u < p_grow + p_prune:
        move = PRUNE
    else:
        move = CHANGE
    capacity = var.shape[0]

    if move == GROW:
        pg_here = 1.0 if internal == 0 else p_grow
        node = _pick_node(var, left, right, n_nodes, 0, rng.integers(0, b))
        j, c = _draw_rule(gvals, gcounts, rng)
        if j < 0:
            return move, 0.0, False, n_nodes, node
        # two free slots, reusing holes left by earlier prunes
        a = -1
        z = -1
        for k in range(1, n_nodes):
            if var[k] == FREE:
                if a < 0:
                    a = k
                else:
                    z = k
                    break
        new_n = n_nodes
        if a < 0:
            a = new_n
            new_n += 1
        if z < 0:
            z = new_n
            new_n += 1
        if new_n > capacity:
            return move, 0.0, False, n_nodes, node
        var[node] = j
        cut[node] = c
        left[node] = a
        right[node] = z
        for k in (a, z):
            var[k] = LEAF
            cut[k] = 0.0
            left[k] = -1
            right[k] = -1
            depth[k] = depth[node] + 1
        # nog count of the proposed tree
        nog_new = nog + 1
        if node != 0:
            for k in range(new_n):
                if var[k] >= 0 and (left[k] == node or right[k] == node):
                    sib = right[k] if left[k] == node else left[k]
                    if var[sib] == LEAF:
                        nog_new -= 1
                    break
        log_ratio = math.log(p_prune) - math.log(nog_new) - math.log(pg_here) + math.log(b)
        return move, log_ratio, True, new_n, node

    if move == PRUNE:
        node = _pick_node(var, left, right, n_nodes, 2, rng.integers(0, nog))
        a = left[node]
        z = right[node]
        var[a] = FREE
        var[z] = FREE
        var[node] = LEAF
        left[node] = -1
        right[node] = -1
        cut[node] = 0.0
        new_n = n_nodes
        while new_n > 1 and var[new_n - 1] == FREE:
            new_n -= 1
        pg_rev = 1.0 if internal == 1 else p_grow
        log_ratio = math.log(pg_rev) - math.log(b - 1) - math.log(p_prune) + math.log(nog)
        return move, log_ratio, True, new_n, node

    node = _pick_node(var, left, right, n_nodes, 1, rng.integers(0, internal))
    j, c = _draw_rule(gvals, gcounts, rng)
    if j < 0:
        return move, 0.0, False, n_nodes, node
    var[node] = j
    cut[node] = c
    return move, 0.0, True, n_nodes, node


@njit(cache=True)
def _leaf_counts_ok(var, n_nodes, leaf_idx, min_leaf):
    if min_leaf <= 0:
        return True
    counts = np.zeros(n_nodes, dtype=np.int64)
    for i in range(leaf_idx.shape[0]):
        counts[leaf_idx[i]] += 1
    for k in range(n_nodes):
        if var[k] == LEAF and counts[k] < min_leaf:
            return False
    return True


@njit(cache=True)
def _evaluate_forest(var, cut, left, right, theta1, theta0, mu, X, f1, f0, logfb):
    n = X.shape[0]
    for i in range(n):
        f1[i] = 0.0
        f0[i] = 0.0
        logfb[i] = 0.0
    for t in range(var.shape[0]):
        for i in range(n):
            k = _descend(var[t], cut[t], left[t], right[t], X[i])
            f1[i] += theta1[t, k]
            f0[i] += theta0[t, k]
            logfb[i] += mu[t, k]


@njit(cache=True)
def _grow_prior_subtree(var, cut, left, right, depth, n_nodes, node, gvals, gcounts, alpha, beta, rng):
    """Recursively split ``node`` by the branching-process prior; returns new n_nodes or -1."""
    capacity = var.shape[0]
    stack = np.empty(capacity, dtype=np.int64)
    top = 0
    stack[top] = node
    top += 1
    while top > 0:
        top -= 1
        k = stack[top]
        if rng.random() >= _split_prob(alpha, beta, depth[k]):
            continue
        j, c = _draw_rule(gvals, gcounts, rng)
        if j < 0:
            continue
        if n_nodes + 2 > capacity:
            return -1
        a = n_nodes
        z = n_nodes + 1
        n_nodes += 2
        var[k] = j
        cut[k] = c
        left[k] = a
        right[k] = z
        for m in (a, z):
            var[m] = LEAF
            left[m] = -1
            right[m] = -1
            cut[m] = 0.0
            depth[m] = depth[k] + 1
            stack[top] = m
            top += 1
    return n_nodes


# --------------------------------------------------------------------------
# Python-facing structures
# --------------------------------------------------------------------------


@dataclass
class Tree:
    """One arena tree together with its per-node leaf parameters."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    theta1: np.ndarray
    theta0: np.ndarray
    mu: np.ndarray

    @classmethod
    def stump(cls, capacity: int = DEFAULT_CAPACITY) -> Tree:
        var = np.full(capacity, FREE, dtype=np.int64)
        var[0] = LEAF
        return cls(
            var=var,
            cut=np.zeros(capacity),
            left=np.full(capacity, -1, dtype=np.int64),
            right=np.full(capacity, -1, dtype=np.int64),
            depth=np.zeros(capacity, dtype=np.int64),
            theta1=np.zeros(capacity),
            theta0=np.zeros(capacity),
            mu=np.zeros(capacity),
        )

    @classmethod
    def from_splits(cls, splits, capacity: int = DEFAULT_CAPACITY) -> Tree:
        """Build a tree from ``{node: (covariate, cutpoint)}`` in heap numbering.

        Heap numbering puts the root at 1 and the children of ``h`` at
        ``2h`` and ``2h+1``; it is only a construction convenience.
        """
        tree = cls.stump(capacity)
        slot = {1: 0}
        n_nodes = 1
        for h in sorted(splits):
            if h not in slot:
                raise ValidationError(f"split at heap node {h} has no parent split")
            j, c = splits[h]
            k = slot[h]
            a, z = n_nodes, n_nodes + 1
            n_nodes += 2
            tree.var[k], tree.cut[k] = j, c
            tree.left[k], tree.right[k] = a, z
            for m, hh in ((a, 2 * h), (z, 2 * h + 1)):
                tree.var[m] = LEAF
                tree.depth[m] = tree.depth[k] + 1
                slot[hh] = m
        return tree

    def copy(self) -> Tree:
        return Tree(*(getattr(self, f).copy() for f in self.__dataclass_fields__))

    @property
    def capacity(self) -> int:
        return self.var.shape[0]

    @property
    def n_nodes(self) -> int:
        used = np.flatnonzero(self.var != FREE)
        return int(used[-1]) + 1

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.var == LEAF)

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.var >= 0)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.var == LEAF))

    def is_stump(self) -> bool:
        return self.var[0] == LEAF

    def rule(self, node: int) -> SplitRule:
        if self.var[node] < 0:
            raise ValidationError(f"node {node} is not an internal node")
        return SplitRule(int(self.var[node]), float(self.cut[node]))

    def leaf_params(self, node: int) -> LeafParams:
        return LeafParams(float(self.theta1[node]), float(self.theta0[node]), float(self.mu[node]))

    def canonical(self):
        """Nested-tuple form of the topology and rules, independent of slot layout."""

        def walk(k):
            if self.var[k] == LEAF:
                return ()
            return (int(self.var[k]), float(self.cut[k]), walk(self.left[k]), walk(self.right[k]))

        return walk(0)

    def assign(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.int64)
        _assign_rows(self.var, self.cut, self.left, self.right, X, out)
        return out


@dataclass
class Forest:
    """``T`` arena trees stacked into ``(T, capacity)`` arrays."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    theta1: np.ndarray
    theta0: np.ndarray
    mu: np.ndarray
    n_nodes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_nodes is None:
            self.n_nodes = np.array(
                [int(np.flatnonzero(v != FREE)[-1]) + 1 for v in self.var], dtype=np.int64
            )

    @classmethod
    def stumps(cls, num_trees: int, capacity: int = DEFAULT_CAPACITY) -> Forest:
        return cls.from_trees([Tree.stump(capacity) for _ in range(num_trees)])

    @classmethod
    def from_trees(cls, trees) -> Forest:
        names = ("var", "cut", "left", "right", "depth", "theta1", "theta0", "mu")
        arrays = {name: np.stack([getattr(t, name) for t in trees]) for name in names}
        return cls(**arrays)

    def __len__(self) -> int:
        return self.var.shape[0]

    def tree(self, t: int) -> Tree:
        """Tree ``t`` as views into the forest arrays."""
        return Tree(
            self.var[t], self.cut[t], self.left[t], self.right[t], self.depth[t],
            self.theta1[t], self.theta0[t], self.mu[t],
        )

    def set_tree(self, t: int, tree: Tree) -> None:
        for name in ("var", "cut", "left", "right", "depth", "theta1", "theta0", "mu"):
            getattr(self, name)[t] = getattr(tree, name)
        self.n_nodes[t] = tree.n_nodes

    def copy(self) -> Forest:
        return Forest(*(getattr(self, f).copy() for f in self.__dataclass_fields__))

    def evaluate(self, X):
        """Return ``(f1, f0, log f_b)`` at the rows of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        n = X.shape[0]
        f1, f0, logfb = np.empty(n), np.empty(n), np.empty(n)
        _evaluate_forest(self.var, self.cut, self.left, self.right,
                         self.theta1, self.theta0, self.mu, X, f1, f0, logfb)
        return f1, f0, logfb


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def assign_leaf(tree: Tree, x) -> int:
    """Slot index of the leaf whose region contains ``x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return int(_descend(tree.var, tree.cut, tree.left, tree.right, x))


def tree_log_prior(tree: Tree, h: Hyperparams) -> float:
    """Log branching-process prior of the topology (split-rule choice excluded)."""
    return float(_tree_log_prior(tree.var, tree.depth, tree.n_nodes, h.tree_alpha, h.tree_beta))


class Proposal(NamedTuple):
    tree: Tree
    log_ratio: float
    move: str
    node: int
    valid: bool


def propose_move(tree: Tree, grid: SplitGrid, rng: np.random.Generator, h: Hyperparams, X=None) -> Proposal:
    """Draw a GROW / PRUNE / CHANGE proposal from ``tree``.

    A stump always proposes GROW.  The returned ``log_ratio`` is the
    reverse-over-forward proposal log-ratio.  When ``X`` is given, a proposal
    that leaves a leaf with fewer than ``h.min_leaf_size`` rows is flagged
    ``valid=False`` and must be rejected by the caller.
    """
    new = tree.copy()
    move, log_ratio, ok, n_nodes, node = _propose(
        new.var, new.cut, new.left, new.right, new.depth, tree.n_nodes,
        grid.values, grid.counts, h.p_grow, h.p_prune, rng,
    )
    if ok:
        if move == GROW:
            a, z = new.left[node], new.right[node]
            for name in ("theta1", "theta0", "mu"):
                arr = getattr(new, name)
                arr[a] = arr[z] = arr[node]
        elif move == PRUNE:
            a = tree.left[node]
            for name in ("theta1", "theta0", "mu"):
                getattr(new, name)[node] = getattr(tree, name)[a]
        if X is not None:
            leaf_idx = new.assign(X)
            ok = bool(_leaf_counts_ok(new.var, n_nodes, leaf_idx, h.min_leaf_size))
    return Proposal(new if ok else tree, float(log_ratio), MOVE_NAMES[move], int(node), bool(ok))


def sample_prior_tree(grid: SplitGrid, rng: np.random.Generator, h: Hyperparams) -> Tree:
    """Draw a topology from the branching-process prior with uniform split rules."""
    while True:
        tree = Tree.stump(h.capacity)
        n_nodes = _grow_prior_subtree(tree.var, tree.cut, tree.left, tree.right, tree.depth, 1, 0,
                                      grid.values, grid.counts, h.tree_alpha, h.tree_beta, rng)
        if n_nodes > 0:
            return tree


def leaf_sufficient_stats(tree: Tree, X, y, residuals1, residuals0, eta, kappa: float) -> dict[int, LeafSuffStats]:
    """Per-leaf statistics under the hurdle exclusion rules.

    ``residuals1`` covers every row, ``residuals0`` is read only on rows with
    ``y < 1`` and ``eta`` only on rows with ``0 < y < 1``; other entries are
    ignored.  Every leaf of the tree gets an entry, empty ones included.
    """
    y = np.asarray(y, dtype=np.float64)
    leaf_idx = tree.assign(X) if len(y) else np.empty(0, dtype=np.int64)
    below_one = y < 1.0
    interior = (y > 0.0) & below_one
    r1 = np.asarray(residuals1, dtype=np.float64)
    r0 = np.asarray(residuals0, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    lgk = math.lgamma(kappa)
    out = {}
    for leaf in tree.leaves:
        here = leaf_idx == leaf
        st = LeafSuffStats()
        a = r1[here]
        st.n1 = a.size
        if a.size:
            st.rbar1 = float(a.mean())
            st.sse1 = float(((a - st.rbar1) ** 2).sum())
        a = r0[here & below_one]
        st.n0 = a.size
        if a.size:
            st.rbar0 = float(a.mean())
            st.sse0 = float(((a - st.rbar0) ** 2).sum())
        sel = here & interior
        yy, ee = y[sel], eta[sel]
        st.n_beta = yy.size
        if yy.size:
            st.s_beta = float((ee * np.log(yy)).sum())
            st.beta_row_term = float(
                (kappa * np.log(kappa * ee) + (kappa - 1.0) * np.log1p(-yy) - lgk - np.log(yy)).sum()
            )
        out[int(leaf)] = st
    return out
