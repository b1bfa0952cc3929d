"""Storage/multiplication efficiency and 8-bit complexity for each catalog ring,
plus measured multiplication counts and timings of one frconv layer.

    python3 scripts/cost_profile.py [--size 16] [--channels 4]
"""

import argparse
import time

import numpy as np

from ringcnn.catalog import catalog
from ringcnn.fast import cost_profile
from ringcnn.tensor import MultCounter, frconv, rconv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    print(f"{'ring':8s} {'n':>2s} {'m':>3s} {'store':>6s} {'mult':>6s} {'w_g,w_x':>8s} {'cplx8':>6s} "
          f"{'measured':>8s} {'t_fast':>8s} {'t_direct':>8s}")
    for spec in catalog():
        p = cost_profile(spec, spec.fast)
        c = args.channels
        x = rng.standard_normal((args.size, args.size, c, spec.n))
        g = rng.standard_normal((3, 3, c, c, spec.n))
        cnt = MultCounter()
        t0 = time.perf_counter()
        frconv(x, g, None, spec, counter=cnt)
        t_fast = time.perf_counter() - t0
        t0 = time.perf_counter()
        rconv(x, g, None, spec)
        t_direct = time.perf_counter() - t0
        real = args.size ** 2 * 9 * (c * spec.n) ** 2
        print(f"{spec.name:8s} {spec.n:2d} {p.real_mults:3d} {p.storage_efficiency:6.2f} {p.mult_efficiency:6.2f} "
              f"{str(p.bitwidth_pair):>8s} {p.complexity_8bit:6.2f} {real / cnt.count:8.2f} "
              f"{t_fast * 1e3:7.1f}ms {t_direct * 1e3:7.1f}ms")


if __name__ == "__main__":
    main()
