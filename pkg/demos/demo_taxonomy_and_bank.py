#!/usr/bin/env python3
"""Walk the built-in label tree and round-trip a small feature bank.

Shows the three fixed levels (lineage, group, leaf), how leaf indices map
to full paths, and that a bank built in memory survives save/load with
identical bytes. NumPy only.
"""
import argparse
import io

import numpy as np

from hierknn import FeatureBank, bank_load, bank_save, default_taxonomy, l2_normalize


def show_tree(tax) -> None:
    print(f"taxonomy digest: {tax.digest.hex()[:16]}...")
    for l1 in range(tax.node_count(1)):
        print(f"  {tax.name_of(1, l1)}")
        for l2 in tax.children(2, l1):
            leaves = tax.children(3, l2)
            names = ", ".join(tax.name_of(3, leaf) for leaf in leaves)
            print(f"    {tax.name_of(2, l2)}: {names}")


def build_demo_bank(tax, rng, n_per_leaf: int) -> FeatureBank:
    ids, labels, rows = [], [], []
    for leaf in range(tax.leaf_count):
        path = tax.path_of(leaf)
        for j in range(n_per_leaf):
            ids.append(f"{tax.name_of(3, leaf)}-{j}")
            labels.append(list(path.as_tuple()))
            rows.append(l2_normalize(rng.standard_normal(8)))
    vectors = np.asarray(rows, dtype=np.float32)
    return FeatureBank(8, ids, np.asarray(labels, dtype=np.uint16), vectors, tax.digest)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--per-leaf", type=int, default=2, dest="per_leaf")
    args = parser.parse_args()

    tax = default_taxonomy()
    print("=== label tree ===")
    show_tree(tax)

    print("\n=== leaf paths ===")
    for name in ("BL", "SNE", "PC"):
        leaf = tax.index_of(3, name)
        path = tax.path_of(leaf)
        chain = " > ".join(
            tax.name_of(level, idx)
            for level, idx in zip((1, 2, 3), path.as_tuple())
        )
        print(f"  leaf {leaf:2d} ({name}): {chain}")

    rng = np.random.default_rng(args.seed)
    bank = build_demo_bank(tax, rng, args.per_leaf)
    print(f"\n=== bank round trip ===")
    print(f"built bank: {len(bank)} entries, dim {bank.dim}")

    buf = io.BytesIO()
    bank_save(bank, buf)
    payload = buf.getvalue()
    print(f"serialized size: {len(payload)} bytes")

    loaded = bank_load(io.BytesIO(payload), tax)
    same = (
        loaded.ids == bank.ids
        and np.array_equal(loaded.labels, bank.labels)
        and loaded.vectors.tobytes() == bank.vectors.tobytes()
    )
    print(f"round trip bit-identical: {same}")

    buf2 = io.BytesIO()
    bank_save(loaded, buf2)
    print(f"re-serialization identical: {buf2.getvalue() == payload}")


if __name__ == "__main__":
    main()
