"""Enumerate exclusive rings of dimension n, group them, and keep the min-grank variants.

    python3 scripts/ring_search.py --n 4 [--restarts 50] [--seed 0] [--csv search.csv]
"""

import argparse
import time

from ringcnn.catalog import catalog
from ringcnn.search import match_catalog, search_rings


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--restarts", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv")
    args = ap.parse_args()

    t0 = time.perf_counter()
    res = search_rings(args.n, restarts=args.restarts, seed=args.seed)
    known = catalog()
    for c in res.classes:
        print(f"class {c.perm_class.class_id}: {len(c.perm_class.members)} permutation(s), "
              f"{c.raw_sign_patterns} sign patterns, {len(c.orbit_granks)} orbits, min grank {c.min_grank}")
        for v in c.variants:
            print(f"    variant -> {match_catalog(v, known) or 'unmatched'}")
    print(f"{len(res.rings)} rings in {time.perf_counter() - t0:.1f}s")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(res.to_csv())


if __name__ == "__main__":
    main()
