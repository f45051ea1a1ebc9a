#!/usr/bin/env python3
"""Time compute_closure and detect_diamond on random layered package graphs.

A desk-scale stand-in for production closures of a few hundred packages:
reports the closure size and wall time per graph size.
"""

import argparse
import random
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from gardenkit import fake_hash, make_package  # noqa: E402

from gardenctl.closure import compute_closure, detect_diamond  # noqa: E402


def build_graph(root, n, fanout, rng):
    # labels share stems so that some closures contain several versions of one library
    hs = [fake_hash(f"lib{i % max(1, n // 4)}-1.{i}", str(n)) for i in range(n)]
    for i in reversed(range(n)):
        later = range(i + 1, n)
        refs = rng.sample(later, min(fanout, len(later)))
        make_package(root, hs[i], refs=[hs[j] for j in refs])
    return hs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 175, 500, 1000])
    ap.add_argument("--fanout", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = random.Random(args.seed)
    print(f"{'nodes':>6} {'closure':>8} {'diamonds':>8} {'closure ms':>11} {'diamond ms':>11}")
    with tempfile.TemporaryDirectory() as tmp:
        for n in args.sizes:
            root = Path(tmp) / f"n{n}"
            hs = build_graph(root, n, args.fanout, rng)
            t0 = time.perf_counter()
            for _ in range(args.repeat):
                g = compute_closure(hs[0], [root])
            t1 = time.perf_counter()
            for _ in range(args.repeat):
                conflicts = detect_diamond(g)
            t2 = time.perf_counter()
            print(f"{n:>6} {len(g.members):>8} {len(conflicts):>8} "
                  f"{(t1 - t0) / args.repeat * 1e3:>11.1f} {(t2 - t1) / args.repeat * 1e3:>11.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
