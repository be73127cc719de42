"""Immutable store of L2-normalized labeled embeddings, plus its file formats.

Binary bank format (little-endian):

    magic   4 bytes  "HBNK"
    version u32      1
    dim     u32
    count   u64
    digest  32 bytes taxonomy digest
    entries, each:
        id_len  u16
        id      id_len bytes UTF-8
        l1      u16
        l2      u16
        l3      u16
        vector  dim * f32

Manifest format: one JSON object per line with fields ``id`` (string),
``label`` (leaf name), ``vector`` (array of numbers).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, TextIO

import numpy as np

from .errors import BankError, BankFormatError, ManifestError
from .taxonomy import LabelPath, Taxonomy

EPS_NORM = 1e-12
UNIT_TOL = 1e-6

_MAGIC = b"HBNK"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQ32s")
_U16 = struct.Struct("<H")
_LABELS = struct.Struct("<HHH")


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm; float32 output, float64 arithmetic.

    Raises BankError for near-zero (norm <= 1e-12) or non-finite input.
    """
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise BankError("empty vector")
    if not np.all(np.isfinite(arr)):
        raise BankError("non-finite vector")
    norm = float(np.linalg.norm(arr))
    if norm <= EPS_NORM:
        raise BankError("zero-norm vector")
    return (arr / norm).astype(np.float32)


@dataclass(frozen=True)
class BankEntry:
    """One stored embedding: stable id, full label path, unit-norm vector."""

    id: str
    labels: LabelPath
    vector: np.ndarray


class FeatureBank:
    """Ordered, immutable collection of unit-norm embeddings with labels.

    Storage is columnar: ids as a tuple, labels as a (n, 3) uint16 array,
    vectors as a (n, dim) float32 array. Entry order is insertion order.
    The constructor checks shapes and id uniqueness but deliberately not
    per-entry label-path consistency, so corrupted or adversarial banks can
    be represented and exercised; the manifest builder always derives
    consistent paths.
    """

    def __init__(
        self,
        dim: int,
        ids: Iterable[str],
        labels: np.ndarray,
        vectors: np.ndarray,
        taxonomy_digest: bytes,
    ):
        self.dim = int(dim)
        self.ids: tuple[str, ...] = tuple(ids)
        self.labels = np.ascontiguousarray(labels, dtype=np.uint16)
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.taxonomy_digest = bytes(taxonomy_digest)
        if self.dim < 1:
            raise BankError(f"bank dim must be >= 1, got {self.dim}")
        if len(self.taxonomy_digest) != 32:
            raise BankError("taxonomy digest must be 32 bytes")
        n = len(self.ids)
        if self.labels.shape != (n, 3):
            raise BankError(f"labels shape {self.labels.shape} != ({n}, 3)")
        if self.vectors.shape != (n, self.dim):
            raise BankError(f"vectors shape {self.vectors.shape} != ({n}, {self.dim})")
        if len(set(self.ids)) != n:
            raise BankError("duplicate id in bank")
        self._vectors64: np.ndarray | None = None

    @classmethod
    def empty(cls, dim: int, taxonomy_digest: bytes) -> "FeatureBank":
        return cls(
            dim,
            (),
            np.zeros((0, 3), dtype=np.uint16),
            np.zeros((0, dim), dtype=np.float32),
            taxonomy_digest,
        )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vectors64(self) -> np.ndarray:
        """Float64 view of the vectors, cached; used for 64-bit similarity sums."""
        if self._vectors64 is None:
            self._vectors64 = self.vectors.astype(np.float64)
        return self._vectors64

    def entry(self, i: int) -> BankEntry:
        l1, l2, l3 = (int(x) for x in self.labels[i])
        return BankEntry(self.ids[i], LabelPath(l1, l2, l3), self.vectors[i])

    def __iter__(self) -> Iterator[BankEntry]:
        return (self.entry(i) for i in range(len(self)))

    def leaf_histogram(self) -> dict[int, int]:
        """Entry count per leaf index, leaves with entries only."""
        leaves, counts = np.unique(self.labels[:, 2], return_counts=True)
        return {int(l): int(c) for l, c in zip(leaves, counts)}

    def __repr__(self) -> str:
        return f"FeatureBank(dim={self.dim}, entries={len(self)})"


def read_manifest(source: TextIO | Iterable[str]) -> Iterator[dict]:
    """Yield records from line-delimited JSON: one object per nonempty line.

    Field requirements depend on the consumer (bank building needs id,
    label, and vector; prediction streams carry no vectors), so only the
    record shape and a string ``id`` are enforced here.
    """
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ManifestError(f"line {lineno}: record is not an object")
        if not isinstance(rec.get("id"), str):
            raise ManifestError(f"line {lineno}: missing or non-string 'id'")
        yield rec


def write_manifest(records: Iterable[dict], sink: TextIO) -> None:
    """Write records as one JSON object per line (deterministic float repr)."""
    for rec in records:
        sink.write(json.dumps(rec, separators=(", ", ": ")))
        sink.write("\n")


def bank_build(records: Iterable[dict], tax: Taxonomy) -> FeatureBank:
    """Build a bank from manifest records, resolving leaf names to full paths.

    Every record needs ``id``, ``label`` (leaf name) and ``vector``; vectors
    are normalized and the input order is preserved.
    """
    ids: list[str] = []
    labels: list[tuple[int, int, int]] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None

    for rec in records:
        rid = rec["id"]
        if rid in seen:
            raise BankError(f"duplicate id {rid!r}")
        seen.add(rid)
        label = rec.get("label")
        if not isinstance(label, str):
            raise BankError(f"record {rid!r}: missing leaf label")
        try:
            leaf = tax.index_of(3, label)
        except Exception:
            raise BankError(f"record {rid!r}: unknown leaf {label!r}") from None
        if "vector" not in rec:
            raise BankError(f"record {rid!r}: missing vector")
        vec = np.asarray(rec["vector"], dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise BankError(f"record {rid!r}: vector must be a nonempty flat list")
        if dim is None:
            dim = int(vec.size)
        elif vec.size != dim:
            raise BankError(
                f"record {rid!r}: dim mismatch (got {vec.size}, expected {dim})"
            )
        try:
            rows.append(l2_normalize(vec))
        except BankError as exc:
            raise BankError(f"record {rid!r}: {exc}") from None
        ids.append(rid)
        labels.append(tax.path_of(leaf).as_tuple())

    if dim is None:
        raise BankError("empty manifest: cannot infer vector dim")
    if max(tax.node_count(l) for l in (1, 2, 3)) > 0xFFFF:
        raise BankError("taxonomy too large for 16-bit label indices")
    return FeatureBank(
        dim,
        ids,
        np.asarray(labels, dtype=np.uint16).reshape(len(ids), 3),
        np.vstack(rows),
        tax.digest,
    )


def bank_save(bank: FeatureBank, sink: BinaryIO) -> None:
    """Serialize a bank; round-trips bit-exactly through :func:`bank_load`."""
    sink.write(_HEADER.pack(_MAGIC, _VERSION, bank.dim, len(bank), bank.taxonomy_digest))
    for i, rid in enumerate(bank.ids):
        id_bytes = rid.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise BankError(f"id {rid!r} exceeds 65535 UTF-8 bytes")
        sink.write(_U16.pack(len(id_bytes)))
        sink.write(id_bytes)
        sink.write(_LABELS.pack(*(int(x) for x in bank.labels[i])))
        sink.write(bank.vectors[i].astype("<f4", copy=False).tobytes())


def _read_exact(source: BinaryIO, n: int) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise BankFormatError(f"truncated stream (wanted {n} bytes, got {len(data)})")
    return data


def bank_load(source: BinaryIO, tax: Taxonomy) -> FeatureBank:
    """Deserialize a bank, checking magic, version, and taxonomy digest.

    Label indices are range-checked against ``tax``; parent consistency of
    stored triples is not re-derived, matching what was written.
    """
    magic, version, dim, count, digest = _HEADER.unpack(_read_exact(source, _HEADER.size))
    if magic != _MAGIC:
        raise BankFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise BankFormatError(f"unsupported version {version}")
    if digest != tax.digest:
        raise BankFormatError("taxonomy mismatch (digest differs)")

    ids: list[str] = []
    labels = np.zeros((count, 3), dtype=np.uint16)
    vectors = np.zeros((count, dim), dtype=np.float32)
    vec_bytes = 4 * dim
    limits = tuple(tax.node_count(l) for l in (1, 2, 3))
    for i in range(count):
        (id_len,) = _U16.unpack(_read_exact(source, _U16.size))
        ids.append(_read_exact(source, id_len).decode("utf-8"))
        triple = _LABELS.unpack(_read_exact(source, _LABELS.size))
        for level, (value, limit) in enumerate(zip(triple, limits), start=1):
            if value >= limit:
                raise BankFormatError(
                    f"entry {ids[-1]!r}: level-{level} label {value} out of range"
                )
        labels[i] = triple
        vectors[i] = np.frombuffer(_read_exact(source, vec_bytes), dtype="<f4")
    if source.read(1):
        raise BankFormatError("trailing bytes after final entry")
    try:
        return FeatureBank(dim, ids, labels, vectors, digest)
    except BankError as exc:
        raise BankFormatError(str(exc)) from None


def bank_merge(a: FeatureBank, b: FeatureBank) -> FeatureBank:
    """Concatenate two banks (a's entries first); dims and digests must match."""
    if a.dim != b.dim:
        raise BankError(f"dim mismatch ({a.dim} vs {b.dim})")
    if a.taxonomy_digest != b.taxonomy_digest:
        raise BankError("taxonomy mismatch (digest differs)")
    overlap = set(a.ids) & set(b.ids)
    if overlap:
        raise BankError(f"duplicate id {sorted(overlap)[0]!r}")
    return FeatureBank(
        a.dim,
        a.ids + b.ids,
        np.vstack([a.labels, b.labels]),
        np.vstack([a.vectors, b.vectors]),
        a.taxonomy_digest,
    )
