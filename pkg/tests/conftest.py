import numpy as np
import pytest

from treeuq import synth
from treeuq.tree import fit_partition, replace_leaf, single_leaf_tree


@pytest.fixture(scope="session")
def canonical_data():
    """The pinned 250-train / 1000-test synthetic draw."""
    return synth.canonical_datasets()


@pytest.fixture(scope="session")
def random_tree_factory():
    """Build random fitted trees by repeated random valid births."""

    def build(X, y, class_count, split_budget, rng, min_leaf_rows=1):
        tree, parts = fit_partition(single_leaf_tree(), X, y, class_count)
        for _ in range(split_budget):
            leaves = tree.leaf_ids
            leaf = leaves[int(rng.integers(len(leaves)))]
            rows = parts[leaf]
            if len(rows) < 2 * min_leaf_rows:
                continue
            feature = int(rng.integers(X.shape[1]))
            values = np.unique(X[rows, feature])
            threshold = float(values[int(rng.integers(len(values)))])
            candidate = replace_leaf(tree, leaf, feature, threshold)
            fitted, new_parts = fit_partition(candidate, X, y, class_count)
            if min(fitted.nodes[i].n for i in fitted.leaf_ids) >= min_leaf_rows:
                tree, parts = fitted, new_parts
        return tree

    return build
