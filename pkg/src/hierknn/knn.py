"""Exact cosine-similarity top-k retrieval over a feature bank.

A full scan, not an approximate index: bank sizes this engine targets make
exactness cheap, and the deterministic tie rule (equal similarity resolves
to the lower entry index) keeps results reproducible across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import FeatureBank

DEFAULT_K = 7


@dataclass(frozen=True)
class NeighborSet:
    """Top-k retrieval result; similarities descending, ties by ascending index."""

    entry_indices: tuple[int, ...]
    similarities: tuple[float, ...]
    k_requested: int

    def __len__(self) -> int:
        return len(self.entry_indices)


def cosine_similarity(a, b) -> float:
    """Dot product of two unit-norm vectors, accumulated in float64."""
    av = np.asarray(a)
    bv = np.asarray(b)
    if av.shape != bv.shape:
        raise ValueError(f"dim mismatch ({av.shape} vs {bv.shape})")
    return float(np.dot(av.astype(np.float64), bv.astype(np.float64)))


def _query64(bank: FeatureBank, q) -> np.ndarray:
    qv = np.asarray(q)
    if qv.shape != (bank.dim,):
        raise ValueError(f"query shape {qv.shape} != ({bank.dim},)")
    return qv.astype(np.float64)


def _rank(sims: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -sims keeps ascending original index within a tie group
    return np.argsort(-sims, kind="stable")[:k]


def top_k(bank: FeatureBank, q, k: int) -> NeighborSet:
    """The ``k`` bank entries most cosine-similar to ``q`` (all of them if k exceeds the bank)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(bank) == 0:
        raise ValueError("empty bank")
    sims = bank.vectors64 @ _query64(bank, q)
    order = _rank(sims, k)
    return NeighborSet(
        tuple(int(i) for i in order),
        tuple(float(sims[i]) for i in order),
        k,
    )


def top_k_filtered(
    bank: FeatureBank, q, k: int, level: int, allowed
) -> NeighborSet:
    """Top-k among entries whose level-``level`` label is in ``allowed``.

    Returns an empty NeighborSet when no entry qualifies.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(bank) == 0:
        raise ValueError("empty bank")
    if level not in (1, 2, 3):
        raise ValueError(f"level must be 1, 2, or 3, got {level}")
    allowed_arr = np.asarray(sorted(set(int(a) for a in allowed)), dtype=np.int64)
    if allowed_arr.size == 0:
        raise ValueError("allowed node set is empty")
    candidates = np.nonzero(np.isin(bank.labels[:, level - 1].astype(np.int64), allowed_arr))[0]
    if candidates.size == 0:
        return NeighborSet((), (), k)
    sims = bank.vectors64[candidates] @ _query64(bank, q)
    order = _rank(sims, k)
    return NeighborSet(
        tuple(int(candidates[i]) for i in order),
        tuple(float(sims[i]) for i in order),
        k,
    )
