"""Binary axis-parallel decision trees: structure, routing, leaf statistics.

Trees are immutable values stored as a pre-order node arena (root at id 0,
left subtree before right).  Structural edits return new trees with a fresh
pre-order numbering, so serialization and summaries are canonical.

Routing convention: a point goes left iff ``x[feature] <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: int
    right: int


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, ...] | None = None  # per-class rows; None until fitted

    @property
    def n(self) -> int:
        if self.counts is None:
            raise ValueError("leaf counts not fitted")
        return int(sum(self.counts))


Node = Split | Leaf


@dataclass(frozen=True)
class TreeSummary:
    split_count: int
    leaf_count: int
    depth: int
    feature_path: tuple[int, ...]  # split features in pre-order


@dataclass(frozen=True)
class DecisionTree:
    nodes: tuple[Node, ...]
    root: int = 0

    @cached_property
    def leaf_ids(self) -> tuple[int, ...]:
        return tuple(i for i, nd in enumerate(self.nodes) if isinstance(nd, Leaf))

    @cached_property
    def split_ids(self) -> tuple[int, ...]:
        return tuple(i for i, nd in enumerate(self.nodes) if isinstance(nd, Split))

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_ids)

    @property
    def split_count(self) -> int:
        return len(self.split_ids)


def single_leaf_tree(counts=None) -> DecisionTree:
    return DecisionTree(nodes=(Leaf(counts=tuple(counts) if counts is not None else None),))


# ---------------------------------------------------------------------------
# Structural edits (each returns a freshly numbered pre-order arena)
# ---------------------------------------------------------------------------


def _nested(tree: DecisionTree, nid: int):
    node = tree.nodes[nid]
    if isinstance(node, Leaf):
        return node
    return (node.feature, node.threshold, _nested(tree, node.left), _nested(tree, node.right))


def _flatten(nested) -> DecisionTree:
    nodes: list[Node] = []

    def emit(sub) -> int:
        my_id = len(nodes)
        nodes.append(None)  # placeholder, patched below
        if isinstance(sub, Leaf):
            nodes[my_id] = sub
        else:
            feature, threshold, left, right = sub
            left_id = emit(left)
            right_id = emit(right)
            nodes[my_id] = Split(feature=feature, threshold=float(threshold), left=left_id, right=right_id)
        return my_id

    emit(nested)
    return DecisionTree(nodes=tuple(nodes))


def _edit(tree: DecisionTree, target: int, replace) -> DecisionTree:
    def walk(nid: int):
        node = tree.nodes[nid]
        if nid == target:
            return replace(node)
        if isinstance(node, Leaf):
            return node
        return (node.feature, node.threshold, walk(node.left), walk(node.right))

    return _flatten(walk(tree.root))


def replace_leaf(tree: DecisionTree, leaf_id: int, feature: int, threshold: float) -> DecisionTree:
    """Grow: turn a leaf into a split with two unfitted leaves."""
    if not isinstance(tree.nodes[leaf_id], Leaf):
        raise ValueError(f"node {leaf_id} is not a leaf")
    return _edit(tree, leaf_id, lambda _: (feature, threshold, Leaf(), Leaf()))


def collapse_split(tree: DecisionTree, split_id: int) -> DecisionTree:
    """Prune: replace a split whose children are both leaves by one leaf."""
    node = tree.nodes[split_id]
    if not isinstance(node, Split):
        raise ValueError(f"node {split_id} is not a split")
    left, right = tree.nodes[node.left], tree.nodes[node.right]
    if not (isinstance(left, Leaf) and isinstance(right, Leaf)):
        raise ValueError(f"split {split_id} has non-leaf children")
    if left.counts is not None and right.counts is not None:
        merged = tuple(a + b for a, b in zip(left.counts, right.counts))
    else:
        merged = None
    return _edit(tree, split_id, lambda _: Leaf(counts=merged))


def with_split_params(tree: DecisionTree, node_id: int, feature: int, threshold: float) -> DecisionTree:
    """Re-parameterize one split in place (structure unchanged)."""
    node = tree.nodes[node_id]
    if not isinstance(node, Split):
        raise ValueError(f"node {node_id} is not a split")
    return _edit(
        tree,
        node_id,
        lambda nd: (feature, threshold, _nested(tree, nd.left), _nested(tree, nd.right)),
    )


# ---------------------------------------------------------------------------
# Routing and leaf statistics
# ---------------------------------------------------------------------------


def route(tree: DecisionTree, point) -> int:
    """Leaf id reached by the point (left iff value <= threshold)."""
    point = np.asarray(point, dtype=np.float64)
    nid = tree.root
    node = tree.nodes[nid]
    while isinstance(node, Split):
        nid = node.left if point[node.feature] <= node.threshold else node.right
        node = tree.nodes[nid]
    return nid


def route_rows(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Leaf id per row of X, vectorized over the tree's partition."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    stack = [(tree.root, np.arange(n))]
    while stack:
        nid, idx = stack.pop()
        node = tree.nodes[nid]
        if isinstance(node, Leaf):
            out[idx] = nid
        else:
            mask = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return out


def partition_rows(tree: DecisionTree, X: np.ndarray) -> dict[int, np.ndarray]:
    """Row indices reaching every node (splits included)."""
    n = X.shape[0]
    parts: dict[int, np.ndarray] = {}
    stack = [(tree.root, np.arange(n))]
    while stack:
        nid, idx = stack.pop()
        parts[nid] = idx
        node = tree.nodes[nid]
        if isinstance(node, Split):
            mask = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return parts


def refit_counts(tree: DecisionTree, X: np.ndarray, y: np.ndarray, class_count: int) -> DecisionTree:
    """Recompute every leaf's class counts by routing all rows.

    Empty leaves are reported with zero counts; validity is the caller's
    concern.
    """
    tree_out, _ = fit_partition(tree, X, y, class_count)
    return tree_out


def fit_partition(
    tree: DecisionTree, X: np.ndarray, y: np.ndarray, class_count: int
) -> tuple[DecisionTree, dict[int, np.ndarray]]:
    """refit_counts plus the per-node row partition (same node ids)."""
    parts = partition_rows(tree, X)
    nodes = list(tree.nodes)
    for nid, node in enumerate(nodes):
        if isinstance(node, Leaf):
            counts = np.bincount(y[parts[nid]], minlength=class_count)
            nodes[nid] = Leaf(counts=tuple(int(c) for c in counts))
    return DecisionTree(nodes=tuple(nodes), root=tree.root), parts


def min_leaf_size(tree: DecisionTree) -> int:
    return min(tree.nodes[i].n for i in tree.leaf_ids)


def leaf_predictive(counts, alpha) -> np.ndarray:
    """Dirichlet posterior-mean class probabilities for one leaf."""
    counts = np.asarray(counts, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet prior must be strictly positive")
    return (counts + alpha) / (counts.sum() + alpha.sum())


def tree_predictive(tree: DecisionTree, X: np.ndarray, alpha) -> np.ndarray:
    """Per-row class probabilities from the routed leaf of each row."""
    alpha = np.asarray(alpha, dtype=np.float64)
    table = np.zeros((len(tree.nodes), alpha.shape[0]))
    for nid in tree.leaf_ids:
        table[nid] = leaf_predictive(tree.nodes[nid].counts, alpha)
    return table[route_rows(tree, X)]


def hard_labels(tree: DecisionTree, X: np.ndarray, alpha) -> np.ndarray:
    """Majority class per row (ties break to the lowest class index)."""
    return np.argmax(tree_predictive(tree, X, alpha), axis=1)


def hard_label(tree: DecisionTree, point, alpha) -> int:
    probs = leaf_predictive(tree.nodes[route(tree, point)].counts, alpha)
    return int(np.argmax(probs))


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def summarize(tree: DecisionTree) -> TreeSummary:
    path: list[int] = []
    max_depth = 0

    def walk(nid: int, depth: int) -> None:
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        node = tree.nodes[nid]
        if isinstance(node, Split):
            path.append(node.feature)
            walk(node.left, depth + 1)
            walk(node.right, depth + 1)

    walk(tree.root, 0)
    return TreeSummary(
        split_count=tree.split_count,
        leaf_count=tree.leaf_count,
        depth=max_depth,
        feature_path=tuple(path),
    )


def prunable_splits(tree: DecisionTree) -> int:
    """Splits whose two children are both leaves (death-move candidates)."""
    count = 0
    for nid in tree.split_ids:
        node = tree.nodes[nid]
        if isinstance(tree.nodes[node.left], Leaf) and isinstance(tree.nodes[node.right], Leaf):
            count += 1
    return count


def format_feature_path(path, feature_count: int) -> str:
    """1-based display form; digits concatenate when all features fit one digit."""
    shown = [str(f + 1) for f in path]
    return "".join(shown) if feature_count <= 9 else "-".join(shown)


# ---------------------------------------------------------------------------
# Serialization: one node per line, pre-order
#   S <feature> <threshold>
#   L <count_0> <count_1> ...
# ---------------------------------------------------------------------------


def serialize(tree: DecisionTree) -> str:
    lines = []

    def walk(nid: int) -> None:
        node = tree.nodes[nid]
        if isinstance(node, Split):
            lines.append(f"S {node.feature} {node.threshold!r}")
            walk(node.left)
            walk(node.right)
        else:
            if node.counts is None:
                raise ValueError("cannot serialize a tree with unfitted leaves")
            lines.append("L " + " ".join(str(c) for c in node.counts))

    walk(tree.root)
    return "\n".join(lines)


def deserialize(text: str) -> DecisionTree:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    pos = 0

    def read():
        nonlocal pos
        if pos >= len(lines):
            raise ValueError("truncated tree text")
        parts = lines[pos].split()
        pos += 1
        if parts[0] == "L":
            return Leaf(counts=tuple(int(tok) for tok in parts[1:]))
        if parts[0] == "S":
            feature, threshold = int(parts[1]), float(parts[2])
            return (feature, threshold, read(), read())
        raise ValueError(f"bad node line: {lines[pos - 1]!r}")

    nested = read()
    if pos != len(lines):
        raise ValueError("trailing content after tree")
    return _flatten(nested)


def write_tree_file(path, trees, metas=None) -> None:
    """Dump trees to a text file: `tree nodes=<k> [key=value ...]` headers."""
    metas = metas if metas is not None else [{} for _ in trees]
    chunks = []
    for tree, meta in zip(trees, metas):
        extra = "".join(f" {k}={v}" for k, v in meta.items())
        chunks.append(f"tree nodes={len(tree.nodes)}{extra}\n{serialize(tree)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(chunks) + "\n")


def read_tree_file(path) -> list[tuple[DecisionTree, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if not lines[i].startswith("tree "):
            raise ValueError(f"expected tree header at line {i + 1}")
        meta = dict(tok.split("=", 1) for tok in lines[i].split()[1:])
        node_count = int(meta.pop("nodes"))
        body = "\n".join(lines[i + 1 : i + 1 + node_count])
        out.append((deserialize(body), meta))
        i += 1 + node_count
    return out
