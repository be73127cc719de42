"""Synthetic embedding datasets whose cluster geometry follows the taxonomy.

Level-1 groups sit at mutually orthogonal cluster centers; each leaf mean
is a small offset from its group's center. Same-group leaves therefore lie
closer to each other than to any cross-group leaf, which is exactly the
structure coarse-to-fine voting can exploit. Samples are Gaussian around
the leaf means and L2-normalized, with controllable long-tail class counts
and an optional domain shift (rotation + bias + noise) for query sets.

Everything is deterministic given the config seed; independent streams are
derived with numpy's SeedSequence spawning so, for example, member banks
share cluster geometry but draw disjoint sample noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import FeatureBank, bank_build, l2_normalize
from .errors import SynthError
from .taxonomy import Taxonomy

# Long-tailed per-leaf counts for the packaged 13-leaf taxonomy, ordered by
# leaf index. A few classes dominate while the rarest get a handful of
# samples, mimicking the frequency skew of real differential counts.
DEFAULT_PER_LEAF_COUNTS = (60, 76, 50, 220, 600, 140, 56, 36, 72, 440, 44, 32, 100)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 10
    per_leaf_counts: tuple[int, ...] = DEFAULT_PER_LEAF_COUNTS
    lineage_separation: float = 3.55
    leaf_separation: float = 1.7
    noise_sigma: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "per_leaf_counts", tuple(int(c) for c in self.per_leaf_counts))
        if self.dim < 4:
            raise ValueError(f"dim must be >= 4, got {self.dim}")
        if not self.lineage_separation > self.leaf_separation > 0:
            raise ValueError(
                "need lineage_separation > leaf_separation > 0, got "
                f"{self.lineage_separation} and {self.leaf_separation}"
            )
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if any(c < 0 for c in self.per_leaf_counts):
            raise ValueError("per-leaf counts must be >= 0")


@dataclass(frozen=True)
class ShiftSpec:
    """Domain shift for query vectors: plane rotation, bias, extra noise.

    ``bias`` is a scalar magnitude applied along a seeded random direction.
    The rotation is orthogonal by construction (it acts in a random
    2-plane), so it cannot destroy unit norms on its own.
    """

    rotation_angle: float = 0.0
    bias: float = 0.0
    extra_noise: float = 0.0

    def __post_init__(self):
        for name in ("rotation_angle", "bias", "extra_noise"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.extra_noise < 0:
            raise ValueError("extra_noise must be >= 0")


MODERATE_SHIFT = ShiftSpec(rotation_angle=0.3, bias=0.1, extra_noise=0.1)


def parse_synth_config(text: str) -> SynthConfig:
    """Parse a ``key = value`` config file into a SynthConfig.

    Recognized keys: dim, counts (comma- or space-separated integers),
    lineage_separation, leaf_separation, noise_sigma, seed. ``#`` starts a
    comment; omitted keys keep their defaults; a repeated key wins with its
    last value.
    """
    kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SynthError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        try:
            if key == "dim":
                kwargs["dim"] = int(value)
            elif key in ("counts", "per_leaf_counts"):
                kwargs["per_leaf_counts"] = tuple(
                    int(tok) for tok in value.replace(",", " ").split()
                )
            elif key in ("lineage_separation", "leaf_separation", "noise_sigma"):
                kwargs[key] = float(value)
            elif key == "seed":
                kwargs["seed"] = int(value)
            else:
                raise SynthError(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise SynthError(f"line {lineno}: bad value {value!r} for {key!r}") from None
    try:
        return SynthConfig(**kwargs)
    except ValueError as exc:
        raise SynthError(str(exc)) from None


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _draw_plane(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Orthonormal (dim, 2) basis spanning a random rotation plane."""
    raw = rng.standard_normal((dim, 2))
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))  # fix QR sign ambiguity for reproducibility


def _rotate_in_plane(x: np.ndarray, plane: np.ndarray, angle: float) -> np.ndarray:
    """Rotate rows of x by angle inside the plane; other directions fixed."""
    u, v = plane[:, 0], plane[:, 1]
    a = x @ u
    b = x @ v
    cos_t, sin_t = np.cos(angle), np.sin(angle)
    return (
        x
        + (cos_t - 1.0) * (np.outer(a, u) + np.outer(b, v))
        + sin_t * (np.outer(a, v) - np.outer(b, u))
    )


# Sibling leaves sit this much closer to their mid-level group mean than the
# group means sit to the lineage center, so proximity mirrors tree distance
# at both levels of the hierarchy.
_LEAF_OFFSET_RATIO = 0.4

# Same-lineage group directions share this much of a common component
# (pairwise cosine is the square of this), so sibling groups crowd each
# other by a fixed, seed-independent amount. That crowding is what makes
# coarse votes informative: neighborhoods near a group boundary mix entries
# from sibling groups, which leaf-level pluralities fragment over but
# level-wise aggregation resolves.
_GROUP_CROWDING = 0.75


def _offset_frame(rng: np.random.Generator, dim: int, n: int, avoid: np.ndarray) -> np.ndarray:
    """n unit offset directions, mutually orthogonal and orthogonal to the
    columns of ``avoid`` when the dimension allows it.

    Orthogonal sibling offsets keep every seed's geometry equally well
    conditioned: no unlucky draw can collapse two sibling clusters onto
    each other or push one toward a foreign branch. If dim is too small to
    grant that many orthogonal directions, plain random units are used.
    """
    if n > dim - avoid.shape[1]:
        return np.stack([_unit(rng, dim) for _ in range(n)])
    raw = rng.standard_normal((dim, n))
    raw = raw - avoid @ (avoid.T @ raw)
    q, r = np.linalg.qr(raw)
    return (q * np.sign(np.diag(r))).T


def _leaf_means(cfg: SynthConfig, tax: Taxonomy, seed: np.random.SeedSequence) -> np.ndarray:
    """One mean per leaf, placed tree-first: lineage center, then the
    mid-level group's offset, then a smaller leaf-specific offset."""
    rng = np.random.default_rng(seed)
    lineages = tax.names(1)
    if len(lineages) > cfg.dim:
        raise SynthError(
            f"dim {cfg.dim} too small for {len(lineages)} orthogonal group centers"
        )
    raw = rng.standard_normal((cfg.dim, len(lineages)))
    q, r = np.linalg.qr(raw)
    basis = q * np.sign(np.diag(r))  # fix QR sign ambiguity for reproducibility
    centers = cfg.lineage_separation * basis.T  # (n_lineages, dim)

    group_dirs = np.empty((tax.node_count(2), cfg.dim))
    group_means = np.empty((tax.node_count(2), cfg.dim))
    crowd = _GROUP_CROWDING
    for lin in range(tax.node_count(1)):
        kids = tax.children(2, lin)
        frame = _offset_frame(rng, cfg.dim, len(kids) + 1, basis)
        common, dirs = frame[0], frame[1:]
        dirs = crowd * common + np.sqrt(1.0 - crowd * crowd) * dirs
        for j, g in enumerate(kids):
            group_dirs[g] = dirs[j]
            group_means[g] = centers[lin] + cfg.leaf_separation * dirs[j]

    means = np.empty((tax.leaf_count, cfg.dim))
    for g in range(tax.node_count(2)):
        kids = tax.children(3, g)
        avoid = np.column_stack([basis, group_dirs[g]])
        dirs = _offset_frame(rng, cfg.dim, len(kids), avoid)
        for j, leaf_idx in enumerate(kids):
            means[leaf_idx] = (
                group_means[g] + _LEAF_OFFSET_RATIO * cfg.leaf_separation * dirs[j]
            )
    return means


def _split_counts(cfg: SynthConfig, tax: Taxonomy) -> list[tuple[int, int]]:
    counts = cfg.per_leaf_counts
    if len(counts) != tax.leaf_count:
        raise SynthError(
            f"config has {len(counts)} per-leaf counts, taxonomy has {tax.leaf_count} leaves"
        )
    split = []
    for leaf_idx, n in enumerate(counts):
        if n == 1:
            name = tax.name_of(3, leaf_idx)
            raise SynthError(f"count 1 for leaf {name} is too small to split 80/20")
        n_bank = int(0.8 * n) if n else 0
        split.append((n_bank, n - n_bank))
    return split


def _draw(rng, mean: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """n unit-normalized samples around a leaf mean."""
    x = mean + sigma * rng.standard_normal((n, mean.shape[0]))
    out = np.empty((n, mean.shape[0]), dtype=np.float32)
    for i in range(n):
        out[i] = l2_normalize(x[i])
    return out


def _records(prefix: str, leaf_name: str, vectors: np.ndarray, start: int = 0) -> list[dict]:
    return [
        {
            "id": f"{prefix}{leaf_name}-{start + i}",
            "label": leaf_name,
            "vector": [float(v) for v in vec],
        }
        for i, vec in enumerate(vectors)
    ]


def generate(cfg: SynthConfig, tax: Taxonomy) -> tuple[FeatureBank, list[dict]]:
    """Deterministic bank plus held-out query records, split 80/20 per leaf.

    The bank share is floor(0.8 * count); a leaf may have count 0 (absent
    entirely) but count 1 cannot be split and is an error.
    """
    split = _split_counts(cfg, tax)
    root = np.random.SeedSequence(cfg.seed)
    geom_seed, data_seed = root.spawn(2)
    means = _leaf_means(cfg, tax, geom_seed)
    rng = np.random.default_rng(data_seed)

    bank_records: list[dict] = []
    query_records: list[dict] = []
    for leaf_idx, (n_bank, n_query) in enumerate(split):
        name = tax.name_of(3, leaf_idx)
        samples = _draw(rng, means[leaf_idx], n_bank + n_query, cfg.noise_sigma)
        bank_records.extend(_records("", name, samples[:n_bank]))
        query_records.extend(_records("q-", name, samples[n_bank:]))
    return bank_build(bank_records, tax), query_records


# Each member bank stands in for a separate model export of the same data:
# besides redrawing sample noise, a member sees the class geometry through
# its own pair of rotations. Members therefore make partially independent
# systematic errors, which is what gives a majority vote across them
# something to correct. Rotation magnitude is graded down with the member
# index (member 0 is the most displaced export, the last member the
# cleanest), so growing an ensemble prefix both averages out member biases
# and mixes in progressively better members.
_MEMBER_EXPORT_ROTATION = 0.9
_MEMBER_EXPORT_BIAS = 0.0


def generate_member_banks(
    cfg: SynthConfig, n_members: int, tax: Taxonomy
) -> tuple[list[FeatureBank], list[dict]]:
    """Several banks over one shared cluster geometry, plus one query set.

    Each member redraws its sample noise independently and is then passed
    through a member-specific export transform (small seeded rotation plus
    bias), standing in for banks built from different training splits or
    model checkpoints. Bank sizes per leaf follow the same 80/20 rule as
    generate(); the query set uses the 20% share and stays untransformed.
    """
    if n_members < 1:
        raise ValueError(f"need at least one member, got {n_members}")
    split = _split_counts(cfg, tax)
    root = np.random.SeedSequence(cfg.seed)
    seeds = root.spawn(2 + n_members)
    means = _leaf_means(cfg, tax, seeds[0])

    query_rng = np.random.default_rng(seeds[1])
    query_records: list[dict] = []
    for leaf_idx, (_, n_query) in enumerate(split):
        name = tax.name_of(3, leaf_idx)
        query_records.extend(
            _records("q-", name, _draw(query_rng, means[leaf_idx], n_query, cfg.noise_sigma))
        )

    banks: list[FeatureBank] = []
    for m in range(n_members):
        rng = np.random.default_rng(seeds[2 + m])
        chunks: list[np.ndarray] = []
        layout: list[tuple[str, int]] = []
        for leaf_idx, (n_bank, _) in enumerate(split):
            chunks.append(_draw(rng, means[leaf_idx], n_bank, cfg.noise_sigma))
            layout.append((tax.name_of(3, leaf_idx), n_bank))
        stacked = np.concatenate(chunks).astype(np.float64)
        bias_vec = _MEMBER_EXPORT_BIAS * _unit(rng, cfg.dim)
        angle = _MEMBER_EXPORT_ROTATION * (n_members - m) / n_members
        # two independent planes: a single-plane displacement could line
        # up with a query-side shift by chance, a composed pair cannot
        stacked = _rotate_in_plane(stacked, _draw_plane(rng, cfg.dim), angle)
        stacked = _rotate_in_plane(stacked, _draw_plane(rng, cfg.dim), angle) + bias_vec
        records: list[dict] = []
        offset = 0
        for name, n_bank in layout:
            block = np.empty((n_bank, cfg.dim), dtype=np.float32)
            for i in range(n_bank):
                block[i] = l2_normalize(stacked[offset + i])
            records.extend(_records(f"m{m}-", name, block))
            offset += n_bank
        banks.append(bank_build(records, tax))
    return banks, query_records


def apply_shift(records: list[dict], spec: ShiftSpec, seed: int) -> list[dict]:
    """Shifted copy of a query manifest; ids, labels, and order unchanged.

    Each vector is rotated by the given angle inside one seeded random
    2-plane, offset by a seeded random bias direction, perturbed with
    Gaussian noise, and re-normalized.
    """
    out = []
    rng = np.random.default_rng(seed)
    dim = None
    plane = bias_vec = None
    for rec in records:
        x = np.asarray(rec["vector"], dtype=np.float64)
        if dim is None:
            dim = x.shape[0]
            plane = _draw_plane(rng, dim)
            bias_vec = spec.bias * _unit(rng, dim)
        elif x.shape[0] != dim:
            raise SynthError(f"record {rec.get('id')!r} has dim {x.shape[0]}, expected {dim}")

        rotated = _rotate_in_plane(x[None, :], plane, spec.rotation_angle)[0]
        shifted = rotated + bias_vec + spec.extra_noise * rng.standard_normal(dim)
        out.append(
            {
                "id": rec["id"],
                "label": rec["label"],
                "vector": [float(val) for val in l2_normalize(shifted)],
            }
        )
    return out
