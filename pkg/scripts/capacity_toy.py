"""Directional vs component-wise ReLU on the split-identity toy, for several seeds.

The target is the identity on images whose pixels are spread over the n ring
components through a Hadamard mix, so a component-wise ReLU has to discard
signal that the directional ReLU keeps.

    python3 scripts/capacity_toy.py [--steps 600] [--lr 0.1] [--seeds 0 1 2]
"""

import argparse

from ringcnn.catalog import get_ring
from ringcnn.model import build_model, split_identity_dataset, train_toy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ring", default="R_I4")
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    spec = get_ring(args.ring)

    for seed in args.seeds:
        data = split_identity_dataset(spec.n, 1, 6, 2, seed=seed)
        out = {}
        for nl in ("directional_relu", "component_relu"):
            model = build_model(spec, [1, 2, 2, 1], kinds=["conv3x3", "conv1x1", "conv1x1"],
                                nonlinearity=nl, seed=seed)
            out[nl] = train_toy(model, data, args.steps, args.lr, seed=seed)
        d, c = out["directional_relu"], out["component_relu"]
        print(f"seed {seed}: directional {d[0]:.4f} -> {d[-1]:.4f}   component-wise {c[0]:.4f} -> {c[-1]:.4f}")


if __name__ == "__main__":
    main()
