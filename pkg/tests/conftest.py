"""Shared fixtures and small builders used across the test modules."""
from __future__ import annotations

import numpy as np
import pytest

from hierknn import FeatureBank, bank_build, default_taxonomy


@pytest.fixture(scope="session")
def tax():
    """The packaged 3-lineage / 13-leaf taxonomy, loaded once per session."""
    return default_taxonomy()


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n random unit-norm rows, float32, guaranteed nonzero."""
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def angled_bank(tax, leaf_names: list[str], dim: int = 4, step: float = 0.01):
    """Bank whose entries sit at increasing angles from the axis query.

    Entry i lies at angle step*(i+1) from e1 inside the (e1, e2) plane, so
    cosine similarity to the query [1, 0, ...] strictly decreases with the
    entry index. top_k with k = len(leaf_names) therefore returns the
    entries in declaration order, which makes vote outcomes easy to stage.
    """
    records = []
    for i, leaf in enumerate(leaf_names):
        a = step * (i + 1)
        vec = [0.0] * dim
        vec[0] = float(np.cos(a))
        vec[1] = float(np.sin(a))
        records.append({"id": f"e{i}", "label": leaf, "vector": vec})
    return bank_build(records, tax)


def axis_query(dim: int = 4) -> np.ndarray:
    q = np.zeros(dim)
    q[0] = 1.0
    return q


def bank_from_arrays(tax, vectors: np.ndarray, leaves: list[int],
                     ids: list[str] | None = None) -> FeatureBank:
    """Directly assemble a FeatureBank from unit rows and leaf indices."""
    n = vectors.shape[0]
    if ids is None:
        ids = [f"r{i}" for i in range(n)]
    labels = np.asarray(
        [tax.path_of(int(leaf)).as_tuple() for leaf in leaves], dtype=np.uint16
    ).reshape(n, 3)
    return FeatureBank(int(vectors.shape[1]), ids, labels, vectors, tax.digest)


def crossed_label_bank(tax, rng, n_near: int = 6, dim: int = 6) -> FeatureBank:
    """Bank whose nearest entries carry level-2/3 labels from the wrong branch.

    The near block claims lineage Blast but reuses group and leaf indices
    from other lineages, so the child-constrained vote finds no usable
    neighbor and must fall back to a filtered re-query. A far block of
    correctly labeled entries covering every leaf guarantees the re-query
    always finds support somewhere in the bank.
    """
    near = unit_rows(rng, n_near, dim)
    blast = tax.index_of(1, "Blast")
    wrong_group = tax.index_of(2, "monocytic")
    wrong_leaf = tax.index_of(3, "MO")
    labels = [[blast, wrong_group, wrong_leaf]] * n_near

    far = -near[:1].repeat(tax.leaf_count, axis=0)
    far += 0.01 * unit_rows(rng, tax.leaf_count, dim)
    far /= np.linalg.norm(far, axis=1, keepdims=True)
    labels += [list(tax.path_of(leaf).as_tuple()) for leaf in range(tax.leaf_count)]

    vectors = np.vstack([near, far]).astype(np.float32)
    ids = [f"n{i}" for i in range(n_near)] + [f"f{i}" for i in range(tax.leaf_count)]
    return FeatureBank(dim, ids, np.asarray(labels, dtype=np.uint16), vectors, tax.digest)
