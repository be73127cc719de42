"""Feature bank construction, normalization, serialization, and merging."""
from __future__ import annotations

import io

import numpy as np
import pytest

from hierknn import (
    BankError,
    BankFormatError,
    FeatureBank,
    ManifestError,
    bank_build,
    bank_load,
    bank_merge,
    bank_save,
    l2_normalize,
    load_taxonomy,
    read_manifest,
    write_manifest,
)
from conftest import bank_from_arrays, unit_rows


def roundtrip(bank: FeatureBank, tax) -> FeatureBank:
    buf = io.BytesIO()
    bank_save(bank, buf)
    buf.seek(0)
    return bank_load(buf, tax)


def records_for(tax, leaves: list[str], dim: int = 4, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [
        {"id": f"r{i}", "label": leaf, "vector": list(rng.standard_normal(dim))}
        for i, leaf in enumerate(leaves)
    ]


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-7)

    def test_zero_vector_rejected(self):
        with pytest.raises(BankError, match="zero-norm"):
            l2_normalize([0.0] * 8)

    def test_empty_vector_rejected(self):
        with pytest.raises(BankError, match="empty"):
            l2_normalize([])

    def test_non_finite_rejected(self):
        with pytest.raises(BankError, match="non-finite"):
            l2_normalize([1.0, float("nan")])

    def test_random_vectors_come_back_unit(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            v = l2_normalize(rng.standard_normal(64) * rng.uniform(0.01, 100))
            assert v.dtype == np.float32
            assert abs(np.linalg.norm(v.astype(np.float64)) - 1.0) <= 1e-6


class TestBuild:
    def test_three_leaves_three_lineages(self, tax):
        """Leaf names resolve to full three-level label paths."""
        bank = bank_build(records_for(tax, ["BL", "LY", "SNE"]), tax)
        assert len(bank) == 3
        l1_names = {tax.name_of(1, int(l1)) for l1 in bank.labels[:, 0]}
        assert l1_names == {"Blast", "Lymphoid", "Myeloid"}

    def test_order_preserved(self, tax):
        recs = records_for(tax, ["MO", "BA", "PC", "MO"], seed=3)
        bank = bank_build(recs, tax)
        assert bank.ids == tuple(r["id"] for r in recs)

    def test_vectors_are_normalized(self, tax):
        bank = bank_build(records_for(tax, ["EO"] * 20, dim=9, seed=5), tax)
        norms = np.linalg.norm(bank.vectors.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_unknown_leaf_rejected(self, tax):
        recs = records_for(tax, ["XYZ"])
        with pytest.raises(BankError, match="unknown leaf"):
            bank_build(recs, tax)

    def test_mixed_dims_rejected(self, tax):
        recs = [
            {"id": "a", "label": "BL", "vector": [1.0, 0.0, 0.0, 0.0]},
            {"id": "b", "label": "LY", "vector": [1.0, 0.0, 0.0, 0.0, 0.0]},
        ]
        with pytest.raises(BankError, match="dim mismatch"):
            bank_build(recs, tax)

    def test_duplicate_id_rejected(self, tax):
        recs = records_for(tax, ["BL", "LY"])
        recs[1]["id"] = recs[0]["id"]
        with pytest.raises(BankError, match="duplicate id"):
            bank_build(recs, tax)

    def test_zero_vector_record_named_in_error(self, tax):
        recs = records_for(tax, ["BL"])
        recs[0]["vector"] = [0.0, 0.0, 0.0, 0.0]
        with pytest.raises(BankError, match="r0"):
            bank_build(recs, tax)

    def test_missing_label_rejected(self, tax):
        with pytest.raises(BankError, match="missing leaf label"):
            bank_build([{"id": "a", "vector": [1.0, 0.0]}], tax)

    def test_empty_manifest_rejected(self, tax):
        with pytest.raises(BankError, match="empty manifest"):
            bank_build([], tax)


class TestManifestIO:
    def test_round_trip(self):
        recs = [
            {"id": "a", "label": "BL", "vector": [1.0, 0.5]},
            {"id": "b", "label": "LY", "vector": [0.25, -1.0]},
        ]
        buf = io.StringIO()
        write_manifest(recs, buf)
        assert list(read_manifest(io.StringIO(buf.getvalue()))) == recs

    def test_invalid_json_line_rejected(self):
        with pytest.raises(ManifestError, match="line 2"):
            list(read_manifest(io.StringIO('{"id": "a"}\n{oops\n')))

    def test_non_object_line_rejected(self):
        with pytest.raises(ManifestError, match="not an object"):
            list(read_manifest(io.StringIO("[1, 2]\n")))

    def test_missing_id_rejected(self):
        with pytest.raises(ManifestError, match="'id'"):
            list(read_manifest(io.StringIO('{"label": "BL"}\n')))


class TestSerialization:
    def test_round_trip_bit_identical(self, tax):
        rng = np.random.default_rng(11)
        bank = bank_from_arrays(
            tax,
            unit_rows(rng, 40, 12),
            list(rng.integers(0, tax.leaf_count, 40)),
            ids=[f"id-α{i}" for i in range(40)],
        )
        loaded = roundtrip(bank, tax)
        assert loaded.ids == bank.ids
        assert loaded.dim == bank.dim
        assert np.array_equal(loaded.labels, bank.labels)
        assert loaded.vectors.tobytes() == bank.vectors.tobytes()

    def test_special_float_bit_patterns_survive(self, tax):
        """Negative zero, subnormals, and huge values round-trip exactly."""
        vecs = np.array(
            [[-0.0, 1e-45, 3e38, 1.0], [5e-41, -3e38, -0.0, -1.0]], dtype=np.float32
        )
        bank = bank_from_arrays(tax, vecs, [0, 12])
        loaded = roundtrip(bank, tax)
        assert loaded.vectors.tobytes() == vecs.tobytes()

    def test_empty_bank_round_trips(self, tax):
        empty = FeatureBank.empty(6, tax.digest)
        loaded = roundtrip(empty, tax)
        assert len(loaded) == 0 and loaded.dim == 6

    def test_fuzzed_round_trips(self, tax):
        """Random sizes, dims, and ids all reproduce exact bytes."""
        rng = np.random.default_rng(2024)
        for _ in range(25):
            n = int(rng.integers(0, 60))
            dim = int(rng.integers(2, 33))
            bank = bank_from_arrays(
                tax,
                unit_rows(rng, n, dim) if n else np.zeros((0, dim), dtype=np.float32),
                list(rng.integers(0, tax.leaf_count, n)),
            )
            loaded = roundtrip(bank, tax)
            assert loaded.ids == bank.ids
            assert np.array_equal(loaded.labels, bank.labels)
            assert loaded.vectors.tobytes() == bank.vectors.tobytes()

    def test_bad_magic_rejected(self, tax):
        buf = io.BytesIO()
        bank_save(bank_from_arrays(tax, unit_rows(np.random.default_rng(0), 2, 4), [0, 1]), buf)
        data = bytearray(buf.getvalue())
        data[:4] = b"NOPE"
        with pytest.raises(BankFormatError, match="bad magic"):
            bank_load(io.BytesIO(bytes(data)), tax)

    def test_taxonomy_mismatch_rejected(self, tax):
        other = load_taxonomy("[level1]\nA\n[level2]\nm -> A\n[level3]\nx -> m\n")
        buf = io.BytesIO()
        bank_save(bank_from_arrays(tax, unit_rows(np.random.default_rng(1), 2, 4), [0, 1]), buf)
        buf.seek(0)
        with pytest.raises(BankFormatError, match="taxonomy mismatch"):
            bank_load(buf, other)

    def test_truncated_stream_rejected(self, tax):
        buf = io.BytesIO()
        bank_save(bank_from_arrays(tax, unit_rows(np.random.default_rng(2), 3, 4), [0, 1, 2]), buf)
        data = buf.getvalue()
        with pytest.raises(BankFormatError, match="truncated"):
            bank_load(io.BytesIO(data[: len(data) - 3]), tax)

    def test_trailing_bytes_rejected(self, tax):
        buf = io.BytesIO()
        bank_save(bank_from_arrays(tax, unit_rows(np.random.default_rng(3), 1, 4), [5]), buf)
        with pytest.raises(BankFormatError, match="trailing"):
            bank_load(io.BytesIO(buf.getvalue() + b"x"), tax)

    def test_out_of_range_label_rejected(self, tax):
        bank = bank_from_arrays(tax, unit_rows(np.random.default_rng(4), 1, 4), [0])
        bank.labels[0, 2] = tax.leaf_count
        buf = io.BytesIO()
        bank_save(bank, buf)
        buf.seek(0)
        with pytest.raises(BankFormatError, match="out of range"):
            bank_load(buf, tax)


class TestMerge:
    def test_two_plus_three(self, tax):
        a = bank_build(records_for(tax, ["BL", "LY"], seed=1), tax)
        b = bank_build(
            [
                {"id": f"s{i}", "label": leaf, "vector": list(np.eye(4)[i % 4])}
                for i, leaf in enumerate(["MO", "EO", "BA"])
            ],
            tax,
        )
        merged = bank_merge(a, b)
        assert len(merged) == 5
        assert merged.ids == a.ids + b.ids
        assert np.array_equal(merged.vectors[:2], a.vectors)
        assert np.array_equal(merged.vectors[2:], b.vectors)

    def test_merge_with_empty_is_identity(self, tax):
        b = bank_build(records_for(tax, ["PMY", "PC"], seed=9), tax)
        merged = bank_merge(FeatureBank.empty(b.dim, tax.digest), b)
        assert merged.ids == b.ids
        assert merged.vectors.tobytes() == b.vectors.tobytes()

    def test_duplicate_id_rejected(self, tax):
        a = bank_build(records_for(tax, ["BL"], seed=2), tax)
        b = bank_build(records_for(tax, ["LY"], seed=3), tax)
        with pytest.raises(BankError, match="duplicate id"):
            bank_merge(a, b)

    def test_dim_mismatch_rejected(self, tax):
        a = bank_build(records_for(tax, ["BL"], dim=4), tax)
        b = bank_build(records_for(tax, ["LY"], dim=5), tax)
        b = FeatureBank(5, ["other"], b.labels, b.vectors, tax.digest)
        with pytest.raises(BankError, match="dim mismatch"):
            bank_merge(a, b)

    def test_digest_mismatch_rejected(self, tax):
        other = load_taxonomy("[level1]\nA\n[level2]\nm -> A\n[level3]\nx -> m\ny -> m\n")
        a = bank_build(records_for(tax, ["BL"]), tax)
        b = bank_build(records_for(other, ["x"]), other)
        with pytest.raises(BankError, match="taxonomy mismatch"):
            bank_merge(a, b)
