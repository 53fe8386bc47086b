"""Reversible-jump Metropolis-Hastings sampling over decision trees.

The chain moves between trees of different sizes via birth/death moves and
within a size via change-split/change-rule moves.  Split rules are drawn
uniformly from the observed values of the chosen feature among the rows
reaching the node, so the proposal cancels the matching prior factor and
only the structure terms survive in the acceptance ratio.

Acceptance for a proposal: min(1, exp(d_loglik + proposal + split_prior))
where the three log terms are computed by `log_marginal_likelihood`,
`proposal_log_ratio`, and `split_prior_log_ratio`.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .data import Dataset, DataError
from .tree import (
    DecisionTree,
    Leaf,
    Split,
    collapse_split,
    fit_partition,
    leaf_predictive,
    prunable_splits,
    replace_leaf,
    single_leaf_tree,
    summarize,
    tree_predictive,
    with_split_params,
)

MOVE_BIRTH = "birth"
MOVE_DEATH = "death"
MOVE_CHANGE_SPLIT = "change_split"
MOVE_CHANGE_RULE = "change_rule"
MOVE_KINDS = (MOVE_BIRTH, MOVE_DEATH, MOVE_CHANGE_SPLIT, MOVE_CHANGE_RULE)


@dataclass(frozen=True)
class UniformSplitPrior:
    """Every tree with the same number of leaves is equally likely."""


@dataclass(frozen=True)
class DepthPenaltySplitPrior:
    """Split probability base*(1+depth)^-decay; decay=0 is depth-free."""

    base: float
    decay: float

    def __post_init__(self):
        if not 0.0 < self.base < 1.0:
            raise ValueError("base split probability must lie strictly in (0, 1)")
        if self.decay < 0.0:
            raise ValueError("decay must be non-negative")

    def split_probability(self, depth: int) -> float:
        return self.base * (1.0 + depth) ** (-self.decay)


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings.

    move_probs is (birth, death, change_split, change_rule) and must sum
    to 1.  min_leaf_rows is the pruning factor: any proposal leaving a leaf
    with fewer rows is rejected outright.  max_leaves defaults to n - 1 at
    run time.
    """

    move_probs: tuple[float, float, float, float] = (0.1, 0.1, 0.1, 0.7)
    burn_in: int = 2000
    post_burn_in: int = 2000
    sample_rate: int = 1
    restarts: int = 50
    min_leaf_rows: int = 5
    dirichlet_alpha: float | tuple[float, ...] = 1.0
    split_prior: UniformSplitPrior | DepthPenaltySplitPrior = field(default_factory=UniformSplitPrior)
    max_leaves: int | None = None
    change_rule_window: int | None = 2
    seed: int = 0

    def __post_init__(self):
        probs = tuple(float(p) for p in self.move_probs)
        object.__setattr__(self, "move_probs", probs)
        if len(probs) != 4 or any(p < 0 for p in probs):
            raise ValueError("move_probs must be four non-negative numbers")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"move_probs must sum to 1, got {sum(probs)}")
        for name in ("burn_in", "post_burn_in", "sample_rate", "restarts", "min_leaf_rows"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be positive")
        if self.change_rule_window is not None and self.change_rule_window < 1:
            raise ValueError("change_rule_window must be positive (or None for a global redraw)")
        if isinstance(self.dirichlet_alpha, (int, float)):
            if self.dirichlet_alpha <= 0:
                raise ValueError("dirichlet_alpha must be positive")
        else:
            alpha = tuple(float(a) for a in self.dirichlet_alpha)
            object.__setattr__(self, "dirichlet_alpha", alpha)
            if not alpha or any(a <= 0 for a in alpha):
                raise ValueError("dirichlet_alpha entries must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def resolve_alpha(alpha, class_count: int) -> np.ndarray:
    if isinstance(alpha, (int, float)):
        out = np.full(class_count, float(alpha))
    else:
        out = np.asarray(alpha, dtype=np.float64)
        if out.shape != (class_count,):
            raise ValueError(f"alpha must have {class_count} entries, got shape {out.shape}")
    if np.any(out <= 0):
        raise ValueError("alpha entries must be positive")
    return out


@dataclass
class MoveCounters:
    proposed: dict = field(default_factory=lambda: {k: 0 for k in MOVE_KINDS})
    accepted: dict = field(default_factory=lambda: {k: 0 for k in MOVE_KINDS})

    @property
    def total_proposed(self) -> int:
        return sum(self.proposed.values())

    @property
    def total_accepted(self) -> int:
        return sum(self.accepted.values())

    @property
    def acceptance_rate(self) -> float:
        """Accepted over all proposals; invalid proposals count in the denominator."""
        total = self.total_proposed
        return self.total_accepted / total if total else 0.0

    def merge(self, other: "MoveCounters") -> None:
        for k in MOVE_KINDS:
            self.proposed[k] += other.proposed[k]
            self.accepted[k] += other.accepted[k]


@dataclass
class ChainState:
    tree: DecisionTree
    log_lik: float
    rows_by_node: dict
    counters: MoveCounters = field(default_factory=MoveCounters)


@dataclass(frozen=True)
class PosteriorSample:
    tree: DecisionTree
    run_index: int
    iteration: int


class TraceRow(NamedTuple):
    run_index: int
    iteration: int
    phase: str  # "burn" or "post"
    log_lik: float
    split_count: int
    move: str
    accepted: bool


@dataclass
class ChainResult:
    samples: list
    trace: list
    counters: MoveCounters
    warnings: tuple = ()


@dataclass(frozen=True)
class Proposal:
    kind: str
    valid: bool
    tree: DecisionTree | None = None
    rows_by_node: dict | None = None
    log_proposal_ratio: float = 0.0


# ---------------------------------------------------------------------------
# Closed-form pieces
# ---------------------------------------------------------------------------


def log_catalan(k: int) -> float:
    """log of binom(2k, k) / (k + 1), via log-gamma (safe for large k)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(gammaln(2 * k + 1) - 2.0 * gammaln(k + 1) - math.log(k + 1))


def log_marginal_likelihood(tree: DecisionTree, alpha) -> float:
    """Log probability of the attached leaf counts with class probabilities
    integrated out under a per-leaf Dirichlet(alpha) prior."""
    alpha = np.asarray(alpha, dtype=np.float64)
    counts = []
    for nid in tree.leaf_ids:
        leaf = tree.nodes[nid]
        if leaf.counts is None:
            raise ValueError("leaf counts not fitted")
        counts.append(leaf.counts)
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.shape[0]
    alpha_sum = alpha.sum()
    normalizer = k * (gammaln(alpha_sum) - gammaln(alpha).sum())
    leaf_terms = gammaln(counts + alpha).sum() - gammaln(counts.sum(axis=1) + alpha_sum).sum()
    return float(normalizer + leaf_terms)


def valid_rules(values: np.ndarray) -> np.ndarray:
    """Sorted distinct observed values; their count is the rule-prior support size."""
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("no rows at node")
    return np.unique(values)


# ---------------------------------------------------------------------------
# Moves
# ---------------------------------------------------------------------------


def _effective_max_leaves(cfg: McmcConfig, n: int) -> int:
    cap = n - 1
    return min(cfg.max_leaves, cap) if cfg.max_leaves is not None else cap


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _draw_kind(rng: np.random.Generator, move_probs) -> str:
    u = rng.random()
    acc = 0.0
    for kind, p in zip(MOVE_KINDS, move_probs):
        acc += p
        if u < acc:
            return kind
    return MOVE_KINDS[-1]


def propose_move(
    state: ChainState,
    X: np.ndarray,
    y: np.ndarray,
    class_count: int,
    cfg: McmcConfig,
    rng: np.random.Generator,
) -> Proposal:
    """Draw a move kind and build the refitted proposal tree.

    A proposal is invalid (to be rejected, still counted as proposed) when a
    resulting leaf would hold fewer than min_leaf_rows rows, a birth would
    exceed the leaf cap, or a structural move has no candidate node.
    """
    kind = _draw_kind(rng, cfg.move_probs)
    tree = state.tree

    if kind == MOVE_BIRTH:
        if tree.leaf_count + 1 > _effective_max_leaves(cfg, len(y)):
            return Proposal(kind=kind, valid=False)
        leaf_id = _pick(rng, tree.leaf_ids)
        rows = state.rows_by_node[leaf_id]
        feature = int(rng.integers(X.shape[1]))
        rules = valid_rules(X[rows, feature])
        threshold = float(_pick(rng, rules))
        new_tree = replace_leaf(tree, leaf_id, feature, threshold)
    elif kind == MOVE_DEATH:
        candidates = [
            nid
            for nid in tree.split_ids
            if isinstance(tree.nodes[tree.nodes[nid].left], Leaf)
            and isinstance(tree.nodes[tree.nodes[nid].right], Leaf)
        ]
        if not candidates:
            return Proposal(kind=kind, valid=False)
        new_tree = collapse_split(tree, _pick(rng, candidates))
    else:
        if not tree.split_ids:
            return Proposal(kind=kind, valid=False)
        node_id = _pick(rng, tree.split_ids)
        rows = state.rows_by_node[node_id]
        if kind == MOVE_CHANGE_SPLIT:
            feature = int(rng.integers(X.shape[1]))
            rules = valid_rules(X[rows, feature])
            threshold = float(_pick(rng, rules))
        else:
            feature = tree.nodes[node_id].feature
            rules = valid_rules(X[rows, feature])
            if cfg.change_rule_window is None:
                threshold = float(_pick(rng, rules))
            else:
                # Local symmetric step on the node's observed-value grid.  The
                # rows reaching the node (hence the grid) are unchanged by the
                # move, so forward and reverse steps have equal probability;
                # a step off the grid, or a current rule that upstream moves
                # pushed off the grid (reverse impossible), is invalid.
                w = cfg.change_rule_window
                here = np.nonzero(rules == tree.nodes[node_id].threshold)[0]
                offset = int(rng.integers(2 * w))
                offset = offset - w if offset < w else offset - w + 1
                if len(here) == 0:
                    return Proposal(kind=kind, valid=False)
                j = int(here[0]) + offset
                if not 0 <= j < len(rules):
                    return Proposal(kind=kind, valid=False)
                threshold = float(rules[j])
        new_tree = with_split_params(tree, node_id, feature, threshold)

    fitted, parts = fit_partition(new_tree, X, y, class_count)
    if any(fitted.nodes[nid].n < cfg.min_leaf_rows for nid in fitted.leaf_ids):
        return Proposal(kind=kind, valid=False)
    ratio = proposal_log_ratio(kind, tree, fitted, cfg)
    return Proposal(kind=kind, valid=True, tree=fitted, rows_by_node=parts, log_proposal_ratio=ratio)


def proposal_log_ratio(kind: str, old_tree: DecisionTree, new_tree: DecisionTree, cfg: McmcConfig) -> float:
    """Log proposal-times-structure-prior ratio for the move.

    Birth (k -> k+1 leaves) uses the prunable-split count of the proposed
    tree, death (k -> k-1) that of the current tree, making an exact
    birth/death reverse pair sum to zero.  Change moves contribute zero:
    a global redraw cancels against the matching prior factor, and the
    local rule step is symmetric on a grid the move cannot alter.
    """
    k_old, k_new = old_tree.leaf_count, new_tree.leaf_count
    birth_p, death_p = cfg.move_probs[0], cfg.move_probs[1]
    if kind == MOVE_BIRTH:
        if k_new != k_old + 1:
            raise ValueError("birth must add exactly one leaf")
        if birth_p == 0 or death_p == 0:
            raise ValueError("birth/death ratio undefined with zero move probability")
        q = prunable_splits(new_tree)
        return (
            math.log(death_p / birth_p)
            + math.log(k_old / q)
            + log_catalan(k_old)
            - log_catalan(k_old + 1)
        )
    if kind == MOVE_DEATH:
        if k_new != k_old - 1:
            raise ValueError("death must remove exactly one leaf")
        if birth_p == 0 or death_p == 0:
            raise ValueError("birth/death ratio undefined with zero move probability")
        q = prunable_splits(old_tree)
        return (
            math.log(birth_p / death_p)
            + math.log(q / (k_old - 1))
            + log_catalan(k_old)
            - log_catalan(k_old - 1)
        )
    if kind in (MOVE_CHANGE_SPLIT, MOVE_CHANGE_RULE):
        if k_new != k_old:
            raise ValueError("change moves must preserve the leaf count")
        return 0.0
    raise ValueError(f"unknown move kind {kind!r}")


def _growth_depth(small: DecisionTree, large: DecisionTree) -> int:
    """Depth of the one leaf of `small` that `large` splits."""

    def walk(sid: int, lid: int, depth: int):
        s, l = small.nodes[sid], large.nodes[lid]
        if isinstance(s, Leaf) and isinstance(l, Split):
            return depth
        if isinstance(s, Leaf) and isinstance(l, Leaf):
            return None
        if isinstance(s, Split) and isinstance(l, Split):
            found = walk(s.left, l.left, depth + 1)
            if found is None:
                found = walk(s.right, l.right, depth + 1)
            return found
        raise ValueError("inconsistent tree pair")

    depth = walk(small.root, large.root, 0)
    if depth is None:
        raise ValueError("trees do not differ by a single split")
    return depth


def split_prior_log_ratio(kind: str, old_tree: DecisionTree, new_tree: DecisionTree, cfg: McmcConfig) -> float:
    """Extra prior term for depth-penalized split priors (zero if uniform)."""
    prior = cfg.split_prior
    if isinstance(prior, UniformSplitPrior) or kind in (MOVE_CHANGE_SPLIT, MOVE_CHANGE_RULE):
        return 0.0

    def birth_term(depth: int) -> float:
        p_here = prior.split_probability(depth)
        p_child = prior.split_probability(depth + 1)
        return math.log(p_here) + 2.0 * math.log(1.0 - p_child) - math.log(1.0 - p_here)

    if kind == MOVE_BIRTH:
        return birth_term(_growth_depth(old_tree, new_tree))
    if kind == MOVE_DEATH:
        return -birth_term(_growth_depth(new_tree, old_tree))
    raise ValueError(f"unknown move kind {kind!r}")


def mh_step(
    state: ChainState,
    X: np.ndarray,
    y: np.ndarray,
    class_count: int,
    cfg: McmcConfig,
    rng: np.random.Generator,
) -> tuple[str, bool]:
    """One Metropolis-Hastings transition; mutates state, returns (kind, accepted)."""
    proposal = propose_move(state, X, y, class_count, cfg, rng)
    state.counters.proposed[proposal.kind] += 1
    if not proposal.valid:
        return proposal.kind, False
    alpha = resolve_alpha(cfg.dirichlet_alpha, class_count)
    new_log_lik = log_marginal_likelihood(proposal.tree, alpha)
    total = (
        (new_log_lik - state.log_lik)
        + proposal.log_proposal_ratio
        + split_prior_log_ratio(proposal.kind, state.tree, proposal.tree, cfg)
    )
    if total >= 0.0 or rng.random() < math.exp(total):
        state.tree = proposal.tree
        state.log_lik = new_log_lik
        state.rows_by_node = proposal.rows_by_node
        state.counters.accepted[proposal.kind] += 1
        return proposal.kind, True
    return proposal.kind, False


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


def draw_initial_split(
    X: np.ndarray, y: np.ndarray, min_leaf_rows: int, rng: np.random.Generator
) -> tuple[int, float] | None:
    """One (feature, rule) pair from the split prior restricted to pairs that
    leave both sides with at least min_leaf_rows rows; None if none exists."""
    n, m = X.shape
    features, thresholds, weights = [], [], []
    for f in range(m):
        vals, counts = np.unique(X[:, f], return_counts=True)
        left = np.cumsum(counts)
        ok = (left >= min_leaf_rows) & (n - left >= min_leaf_rows)
        for v in vals[ok]:
            features.append(f)
            thresholds.append(float(v))
            weights.append(1.0 / (m * len(vals)))
    if not features:
        return None
    w = np.asarray(weights)
    w = np.cumsum(w / w.sum())
    w[-1] = 1.0
    j = int(np.searchsorted(w, rng.random(), side="right"))
    return features[j], thresholds[j]


def _derived_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, run_index)))


def run_chain(ds: Dataset, cfg: McmcConfig, run_index: int = 0) -> ChainResult:
    """One restart: random single-split start, burn-in, then sampled post phase.

    Collects every sample_rate-th post-burn-in tree and a full per-iteration
    trace.  The private PRNG is derived from (cfg.seed, run_index), so runs
    are reproducible regardless of execution order.
    """
    X, y, class_count = ds.features, ds.labels, ds.class_count
    present = np.bincount(y, minlength=class_count)
    if (present == 0).any():
        raise DataError("every class must be present in the training data")
    alpha = resolve_alpha(cfg.dirichlet_alpha, class_count)
    rng = _derived_rng(cfg.seed, run_index)
    warnings = ()

    start = draw_initial_split(X, y, cfg.min_leaf_rows, rng)
    if start is None:
        warnings = ("no valid split under min_leaf_rows; chain holds the root-only model",)
        tree = single_leaf_tree()
    else:
        feature, threshold = start
        tree = replace_leaf(single_leaf_tree(), 0, feature, threshold)
    tree, parts = fit_partition(tree, X, y, class_count)
    state = ChainState(tree=tree, log_lik=log_marginal_likelihood(tree, alpha), rows_by_node=parts)

    samples, trace = [], []
    total_iters = cfg.burn_in + cfg.post_burn_in
    for i in range(1, total_iters + 1):
        kind, accepted = mh_step(state, X, y, class_count, cfg, rng)
        phase = "burn" if i <= cfg.burn_in else "post"
        trace.append(
            TraceRow(
                run_index=run_index,
                iteration=i,
                phase=phase,
                log_lik=state.log_lik,
                split_count=state.tree.split_count,
                move=kind,
                accepted=accepted,
            )
        )
        if i > cfg.burn_in and (i - cfg.burn_in) % cfg.sample_rate == 0:
            samples.append(PosteriorSample(tree=state.tree, run_index=run_index, iteration=i))
    return ChainResult(samples=samples, trace=trace, counters=state.counters, warnings=warnings)


def _chain_job(args) -> ChainResult:
    ds, cfg, run_index = args
    return run_chain(ds, cfg, run_index)


def run_restarts(ds: Dataset, cfg: McmcConfig, workers: int = 1) -> ChainResult:
    """Pool the samples of `cfg.restarts` independent chains.

    Chains own private PRNGs derived from (seed, run_index); results are
    merged in run order, so parallel and serial execution give identical
    output.
    """
    jobs = [(ds, cfg, r) for r in range(cfg.restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(job) for job in jobs]

    merged = ChainResult(samples=[], trace=[], counters=MoveCounters(), warnings=())
    for res in results:
        merged.samples.extend(res.samples)
        merged.trace.extend(res.trace)
        merged.counters.merge(res.counters)
        merged.warnings = merged.warnings + res.warnings
    merged.samples.sort(key=lambda s: (s.run_index, s.iteration))
    return merged


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionSummary:
    probabilities: np.ndarray  # (n, C) posterior-averaged class probabilities
    votes: np.ndarray  # (n, C) hard-label histogram over samples


def predict_average(samples, X: np.ndarray, alpha) -> PredictionSummary:
    """Average the per-tree class probabilities and tally hard votes."""
    if not samples:
        raise ValueError("no posterior samples to average")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    first = samples[0].tree
    class_count = len(first.nodes[first.leaf_ids[0]].counts)
    alpha = resolve_alpha(alpha, class_count)
    n = X.shape[0]
    probs = np.zeros((n, class_count))
    votes = np.zeros((n, class_count), dtype=np.int64)
    rows = np.arange(n)
    for s in samples:
        p = tree_predictive(s.tree, X, alpha)
        probs += p
        votes[rows, np.argmax(p, axis=1)] += 1
    probs /= len(samples)
    return PredictionSummary(probabilities=probs, votes=votes)


class PathRow(NamedTuple):
    feature_path: tuple
    split_count: int
    weight: float
    count: int


def posterior_path_summary(samples) -> tuple[list[PathRow], dict[int, int]]:
    """Group samples by their pre-order feature path.

    Returns rows sorted by posterior weight (descending, ties by path) and
    the histogram of split counts across samples.
    """
    if not samples:
        raise ValueError("no posterior samples to summarize")
    groups: dict[tuple, int] = {}
    histogram: dict[int, int] = {}
    for s in samples:
        summary = summarize(s.tree)
        groups[summary.feature_path] = groups.get(summary.feature_path, 0) + 1
        histogram[summary.split_count] = histogram.get(summary.split_count, 0) + 1
    total = len(samples)
    rows = [
        PathRow(feature_path=path, split_count=len(path), weight=count / total, count=count)
        for path, count in groups.items()
    ]
    rows.sort(key=lambda r: (-r.weight, r.feature_path))
    return rows, dict(sorted(histogram.items()))
