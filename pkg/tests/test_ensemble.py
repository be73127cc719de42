"""Majority voting across member banks and the ensemble-size ablation grid."""
from __future__ import annotations

import numpy as np
import pytest

from hierknn import (
    EnsembleConfig,
    FeatureBank,
    InferenceError,
    ablation_grid,
    combine_members,
    ensemble_vote,
    load_taxonomy,
    member_outputs,
    predict_flat,
    predict_hierarchical,
    run_ensemble,
)
from hierknn.ensemble import MemberOutputs
from conftest import bank_from_arrays, unit_rows


def random_outputs(rng, n_members: int, n_queries: int) -> list[MemberOutputs]:
    return [
        MemberOutputs(
            tuple(int(x) for x in rng.integers(0, 13, n_queries)),
            tuple(float(x) for x in rng.random(n_queries)),
        )
        for _ in range(n_members)
    ]


class TestVote:
    def test_strict_majority(self, tax):
        bl, ly = tax.index_of(3, "BL"), tax.index_of(3, "LY")
        assert ensemble_vote([bl, bl, ly], [0.2, 0.2, 0.9]) == bl

    def test_single_member_identity(self, tax):
        sne = tax.index_of(3, "SNE")
        assert ensemble_vote([sne], [0.3]) == sne

    def test_count_tie_broken_by_margin(self, tax):
        bl, ly = tax.index_of(3, "BL"), tax.index_of(3, "LY")
        assert ensemble_vote([bl, ly], [0.12, 0.30]) == ly
        assert ensemble_vote([bl, ly], [0.30, 0.12]) == bl

    def test_full_tie_falls_to_lower_member_index(self):
        assert ensemble_vote([9, 4], [0.5, 0.5]) == 9
        assert ensemble_vote([4, 9], [0.5, 0.5]) == 4

    def test_first_member_policy(self):
        assert ensemble_vote([9, 4], [0.1, 0.9], policy="first-member") == 9

    def test_hand_vote_table(self):
        """Three disagreeing members resolved case by case by hand."""
        cases = [
            (([5, 5, 2], [0.1, 0.1, 0.9]), 5),
            (([5, 2, 2], [0.9, 0.1, 0.1]), 2),
            (([1, 2, 3], [0.2, 0.5, 0.3]), 2),
            (([1, 2, 3], [0.2, 0.2, 0.2]), 1),
        ]
        for (preds, margins), want in cases:
            assert ensemble_vote(preds, margins) == want

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            ensemble_vote([], [])
        with pytest.raises(ValueError, match="aligned"):
            ensemble_vote([1, 2], [0.5])
        with pytest.raises(ValueError, match="tie policy"):
            ensemble_vote([1], [0.5], policy="coin-flip")


class TestCombine:
    def test_one_member_is_identity(self):
        rng = np.random.default_rng(0)
        (m,) = random_outputs(rng, 1, 30)
        assert combine_members([m]) == list(m.leaves)

    def test_identical_members_equal_single(self):
        rng = np.random.default_rng(1)
        (m,) = random_outputs(rng, 1, 25)
        for copies in (2, 5, 7):
            assert combine_members([m] * copies) == list(m.leaves)

    def test_unanimous_members_keep_the_leaf(self):
        """Seven members agreeing on every query cannot be outvoted."""
        rng = np.random.default_rng(2)
        leaves = tuple(int(x) for x in rng.integers(0, 13, 20))
        members = [MemberOutputs(leaves, tuple(rng.random(20))) for _ in range(7)]
        assert combine_members(members) == list(leaves)

    def test_permutation_robustness(self):
        """Member order does not change winners when margins are generic."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            members = random_outputs(rng, int(rng.integers(2, 8)), 12)
            base = combine_members(members)
            perm = list(rng.permutation(len(members)))
            assert combine_members([members[i] for i in perm]) == base

    def test_adding_an_agreeing_member_never_flips(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            members = random_outputs(rng, int(rng.integers(1, 6)), 10)
            base = combine_members(members)
            extra = MemberOutputs(tuple(base), tuple(rng.random(10)))
            assert combine_members(members + [extra]) == base

    def test_mismatched_query_counts_rejected(self):
        rng = np.random.default_rng(5)
        a = random_outputs(rng, 1, 10)[0]
        b = random_outputs(rng, 1, 11)[0]
        with pytest.raises(ValueError, match="query counts"):
            combine_members([a, b])


class TestMemberOutputs:
    def test_margins_and_leaves_match_direct_prediction(self, tax):
        rng = np.random.default_rng(6)
        bank = bank_from_arrays(tax, unit_rows(rng, 50, 6), list(rng.integers(0, 13, 50)))
        queries = [unit_rows(rng, 1, 6)[0] for _ in range(8)]
        out = member_outputs(bank, queries, 5, tax)
        for q, leaf in zip(queries, out.leaves):
            assert leaf == predict_hierarchical(bank, q, 5, tax).y3
        flat = member_outputs(bank, queries, 5, tax, flat=True)
        for q, leaf in zip(queries, flat.leaves):
            assert leaf == predict_flat(bank, q, 5)
        assert all(0.0 <= m <= 1.0 for m in out.margins)


class TestConfig:
    def test_validation(self, tax):
        rng = np.random.default_rng(7)
        bank = bank_from_arrays(tax, unit_rows(rng, 4, 5), [0, 1, 2, 3])
        with pytest.raises(ValueError, match="at least one member"):
            EnsembleConfig(())
        with pytest.raises(ValueError, match="k must be"):
            EnsembleConfig((bank,), k=0)
        with pytest.raises(ValueError, match="tie policy"):
            EnsembleConfig((bank,), tie_policy="random")
        with pytest.raises(InferenceError, match="empty member bank"):
            EnsembleConfig((bank, FeatureBank.empty(5, tax.digest)))

    def test_member_dim_mismatch_rejected(self, tax):
        rng = np.random.default_rng(8)
        a = bank_from_arrays(tax, unit_rows(rng, 3, 5), [0, 1, 2])
        b = bank_from_arrays(tax, unit_rows(rng, 3, 6), [0, 1, 2])
        with pytest.raises(InferenceError, match="dim mismatch"):
            EnsembleConfig((a, b))

    def test_member_digest_mismatch_rejected(self, tax):
        other = load_taxonomy("[level1]\nA\n[level2]\nm -> A\n[level3]\nx -> m\ny -> m\n")
        rng = np.random.default_rng(9)
        a = bank_from_arrays(tax, unit_rows(rng, 3, 5), [0, 1, 2])
        b = bank_from_arrays(other, unit_rows(rng, 3, 5), [0, 1, 0])
        with pytest.raises(InferenceError, match="taxonomy digest"):
            EnsembleConfig((a, b))


class TestRunEnsemble:
    def queries(self, rng, n, dim):
        return [
            {"id": f"q{i}", "vector": [float(v) for v in unit_rows(rng, 1, dim)[0]]}
            for i in range(n)
        ]

    def test_single_member_matches_direct_calls(self, tax):
        rng = np.random.default_rng(10)
        bank = bank_from_arrays(tax, unit_rows(rng, 60, 6), list(rng.integers(0, 13, 60)))
        recs = self.queries(rng, 12, 6)
        preds = run_ensemble(EnsembleConfig((bank,), k=5), recs, tax)
        assert [qid for qid, _ in preds] == [r["id"] for r in recs]
        for rec, (_, leaf) in zip(recs, preds):
            assert leaf == predict_hierarchical(bank, np.asarray(rec["vector"]), 5, tax).y3

    def test_identical_members_match_single(self, tax):
        rng = np.random.default_rng(11)
        bank = bank_from_arrays(tax, unit_rows(rng, 60, 6), list(rng.integers(0, 13, 60)))
        recs = self.queries(rng, 10, 6)
        one = run_ensemble(EnsembleConfig((bank,), k=7), recs, tax)
        three = run_ensemble(EnsembleConfig((bank,) * 3, k=7), recs, tax)
        assert one == three


class TestAblationGrid:
    def test_grid_shape_and_prefix_semantics(self, tax):
        """Row m scores the first m members; the members column counts up."""
        rng = np.random.default_rng(12)
        banks = [
            bank_from_arrays(tax, unit_rows(rng, 40, 6), list(rng.integers(0, 13, 40)))
            for _ in range(3)
        ]
        queries = [unit_rows(rng, 1, 6)[0] for _ in range(15)]
        truth = list(rng.integers(0, 13, 15))
        rows = ablation_grid(banks, queries, truth, 5, tax)
        assert [r.members for r in rows] == [1, 2, 3]
        assert all(0.0 <= r.without_hierarchy_mf1 <= 1.0 for r in rows)
        assert all(0.0 <= r.with_hierarchy_mf1 <= 1.0 for r in rows)
        first_again = ablation_grid(banks[:1], queries, truth, 5, tax)
        assert rows[0] == first_again[0]

    def test_perfect_member_scores_one(self, tax):
        """A bank equal to the labeled queries retrieves itself perfectly."""
        rng = np.random.default_rng(13)
        vecs = unit_rows(rng, 26, 8)
        truth = [i % 13 for i in range(26)]
        bank = bank_from_arrays(tax, vecs, truth)
        rows = ablation_grid([bank], [v.astype(np.float64) for v in vecs], truth, 1, tax)
        assert rows[0].without_hierarchy_mf1 == 1.0
        assert rows[0].with_hierarchy_mf1 == 1.0
