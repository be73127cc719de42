"""Coarse-to-fine prediction over a feature bank, plus a flat-kNN baseline.

Level 1 is decided by majority vote over the retrieved neighbors. Each finer
level votes only over neighbors whose label sits under the already-predicted
parent, which makes the output path valid by construction. If that
constrained subset of the neighborhood is empty (possible only when bank
entries carry parent-inconsistent label triples), the vote falls back to a
bank-wide retrieval restricted to the valid children, and the prediction
records that the fallback fired.
"""
from __future__ import annotations

from dataclasses import dataclass

from .bank import FeatureBank
from .errors import InferenceError
from .knn import NeighborSet, top_k, top_k_filtered
from .taxonomy import LabelPath, Taxonomy


@dataclass(frozen=True)
class HierPrediction:
    """Voted labels per level, with the tallies and fallback flags behind them."""

    y1: int
    y2: int
    y3: int
    tallies: tuple[dict[int, int], dict[int, int], dict[int, int]]
    fallback_used: tuple[bool, bool, bool]

    def label_path(self) -> LabelPath:
        return LabelPath(self.y1, self.y2, self.y3)


def vote_mode(labels, sims) -> int:
    """Most frequent label; ties go to the larger summed similarity, then the lower index."""
    counts: dict[int, int] = {}
    simsum: dict[int, float] = {}
    for label, sim in zip(labels, sims):
        label = int(label)
        counts[label] = counts.get(label, 0) + 1
        simsum[label] = simsum.get(label, 0.0) + float(sim)
    if not counts:
        raise ValueError("empty label list")
    return min(counts, key=lambda c: (-counts[c], -simsum[c], c))


def _tally(labels, sims) -> tuple[int, dict[int, int]]:
    winner = vote_mode(labels, sims)
    counts: dict[int, int] = {}
    for label in labels:
        label = int(label)
        counts[label] = counts.get(label, 0) + 1
    return winner, counts


def _check_digest(bank: FeatureBank, tax: Taxonomy) -> None:
    if bank.taxonomy_digest != tax.digest:
        raise InferenceError("bank was built against a different taxonomy (digest mismatch)")


def predict_hierarchical(
    bank: FeatureBank, q, k: int, tax: Taxonomy
) -> HierPrediction:
    """Classify ``q`` coarse-to-fine; see the module docstring for the procedure."""
    _check_digest(bank, tax)
    neighbors = top_k(bank, q, k)
    n_labels = bank.labels[list(neighbors.entry_indices)]

    y1, tally1 = _tally(n_labels[:, 0], neighbors.similarities)
    tallies = [tally1]
    fallback = [False, False, False]
    parent = y1
    path = [y1]
    for level in (2, 3):
        allowed = set(tax.children(level, parent))
        in_set = [
            (int(lab), sim)
            for lab, sim in zip(n_labels[:, level - 1], neighbors.similarities)
            if int(lab) in allowed
        ]
        if in_set:
            winner, tally = _tally([l for l, _ in in_set], [s for _, s in in_set])
        else:
            fb: NeighborSet = top_k_filtered(bank, q, k, level, allowed)
            if len(fb) == 0:
                raise InferenceError(
                    f"no bank entry under predicted level-{level - 1} node "
                    f"{tax.name_of(level - 1, parent)!r}"
                )
            fallback[level - 1] = True
            fb_labels = bank.labels[list(fb.entry_indices), level - 1]
            winner, tally = _tally(fb_labels, fb.similarities)
        tallies.append(tally)
        path.append(winner)
        parent = winner

    return HierPrediction(
        path[0], path[1], path[2],
        (tallies[0], tallies[1], tallies[2]),
        (fallback[0], fallback[1], fallback[2]),
    )


def flat_vote(bank: FeatureBank, q, k: int) -> tuple[int, dict[int, int]]:
    """Leaf-level vote over the raw neighborhood; returns (leaf, tally)."""
    neighbors = top_k(bank, q, k)
    leaf_labels = bank.labels[list(neighbors.entry_indices), 2]
    return _tally(leaf_labels, neighbors.similarities)


def predict_flat(bank: FeatureBank, q, k: int) -> int:
    """Unconstrained leaf prediction: majority vote over the k nearest neighbors."""
    leaf, _ = flat_vote(bank, q, k)
    return leaf


def vote_margin(tally: dict[int, int], k: int) -> float:
    """(top count - runner-up count) / k; runner-up is 0 for a unanimous tally."""
    ranked = sorted(tally.values(), reverse=True)
    runner_up = ranked[1] if len(ranked) > 1 else 0
    return (ranked[0] - runner_up) / k
