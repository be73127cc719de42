"""Majority-vote aggregation of leaf predictions from several member banks.

A member is a (bank, k) pair, typically a bank built from a different
train split or model export. Each member classifies a query independently
and reports a confidence margin from its own leaf vote; the ensemble takes
the most frequent leaf, breaking ties per the configured policy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import FeatureBank
from .errors import InferenceError
from .infer import flat_vote, predict_hierarchical, vote_margin
from .knn import DEFAULT_K
from .metrics import ConfusionMatrix, macro_f1
from .taxonomy import Taxonomy

TIE_POLICIES = ("similarity-margin", "first-member")


@dataclass
class EnsembleConfig:
    member_banks: tuple[FeatureBank, ...]
    k: int = DEFAULT_K
    tie_policy: str = "similarity-margin"

    def __post_init__(self):
        self.member_banks = tuple(self.member_banks)
        if not self.member_banks:
            raise ValueError("ensemble needs at least one member bank")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"unknown tie policy {self.tie_policy!r}")
        digest = self.member_banks[0].taxonomy_digest
        if any(b.taxonomy_digest != digest for b in self.member_banks):
            raise InferenceError("member banks disagree on taxonomy digest")
        dim = self.member_banks[0].dim
        for b in self.member_banks:
            if len(b) == 0:
                raise InferenceError("empty member bank")
            if b.dim != dim:
                raise InferenceError(f"member dim mismatch ({b.dim} vs {dim})")


def ensemble_vote(member_preds, member_margins, policy: str = "similarity-margin") -> int:
    """Most frequent leaf across members, with deterministic tie handling.

    ``similarity-margin`` breaks a count tie by the larger summed margin
    among the tied leaves, then by the earliest predicting member;
    ``first-member`` goes straight to the earliest predicting member.
    """
    preds = [int(p) for p in member_preds]
    margins = [float(m) for m in member_margins]
    if not preds:
        raise ValueError("empty member prediction list")
    if len(preds) != len(margins):
        raise ValueError("preds and margins are not aligned")
    if policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {policy!r}")

    counts: dict[int, int] = {}
    margin_sum: dict[int, float] = {}
    first_member: dict[int, int] = {}
    for i, (leaf, margin) in enumerate(zip(preds, margins)):
        counts[leaf] = counts.get(leaf, 0) + 1
        margin_sum[leaf] = margin_sum.get(leaf, 0.0) + margin
        first_member.setdefault(leaf, i)

    if policy == "similarity-margin":
        key = lambda leaf: (-counts[leaf], -margin_sum[leaf], first_member[leaf])
    else:
        key = lambda leaf: (-counts[leaf], first_member[leaf])
    return min(counts, key=key)


@dataclass(frozen=True)
class MemberOutputs:
    """One member's per-query leaves and margins, reusable across ensemble sizes."""

    leaves: tuple[int, ...]
    margins: tuple[float, ...]


def member_outputs(
    bank: FeatureBank, queries, k: int, tax: Taxonomy, flat: bool = False
) -> MemberOutputs:
    """Run one member over query vectors; margin is the member's own leaf-vote margin."""
    leaves: list[int] = []
    margins: list[float] = []
    for q in queries:
        if flat:
            leaf, tally = flat_vote(bank, q, k)
        else:
            pred = predict_hierarchical(bank, q, k, tax)
            leaf, tally = pred.y3, pred.tallies[2]
        leaves.append(leaf)
        margins.append(vote_margin(tally, k))
    return MemberOutputs(tuple(leaves), tuple(margins))


def combine_members(members: list[MemberOutputs], policy: str = "similarity-margin") -> list[int]:
    """Ensemble-vote each query across the given members, in member-index order."""
    if not members:
        raise ValueError("no members")
    n = len(members[0].leaves)
    if any(len(m.leaves) != n for m in members):
        raise ValueError("members scored different query counts")
    return [
        ensemble_vote(
            [m.leaves[j] for m in members],
            [m.margins[j] for m in members],
            policy,
        )
        for j in range(n)
    ]


def run_ensemble(cfg: EnsembleConfig, queries, tax: Taxonomy, flat: bool = False) -> list[tuple[str, int]]:
    """Classify manifest records with every member, majority-vote the leaves.

    ``queries`` is an iterable of manifest records (``id`` + ``vector``,
    already unit-norm). Returns (id, leaf index) per query in input order.
    """
    records = list(queries)
    vectors = [np.asarray(rec["vector"], dtype=np.float32) for rec in records]
    members = [
        member_outputs(bank, vectors, cfg.k, tax, flat=flat) for bank in cfg.member_banks
    ]
    winners = combine_members(members, cfg.tie_policy)
    return [(rec["id"], leaf) for rec, leaf in zip(records, winners)]


@dataclass(frozen=True)
class AblationRow:
    members: int
    without_hierarchy_mf1: float
    with_hierarchy_mf1: float


def ablation_grid(
    banks: list[FeatureBank],
    query_vectors,
    truth_leaves,
    k: int,
    tax: Taxonomy,
    policy: str = "similarity-margin",
) -> list[AblationRow]:
    """Macro F1 for every ensemble size 1..len(banks), flat and hierarchical.

    Member outputs are computed once per bank and reused across sizes, so
    the grid costs the same as scoring each member once.
    """
    truth = [int(t) for t in truth_leaves]
    vectors = list(query_vectors)
    flat_members = [member_outputs(b, vectors, k, tax, flat=True) for b in banks]
    hier_members = [member_outputs(b, vectors, k, tax, flat=False) for b in banks]
    rows = []
    for m in range(1, len(banks) + 1):
        flat_preds = combine_members(flat_members[:m], policy)
        hier_preds = combine_members(hier_members[:m], policy)
        rows.append(
            AblationRow(
                m,
                macro_f1(ConfusionMatrix.from_pairs(truth, flat_preds, tax.leaf_count)),
                macro_f1(ConfusionMatrix.from_pairs(truth, hier_preds, tax.leaf_count)),
            )
        )
    return rows
