"""On-the-fly directional ReLU vs quantizing its input to 8 bits first.

Builds random 3-layer models, calibrates Q-formats, and reports per-layer L2
error of both pipelines against the exact nonlinearity, plus end-to-end PSNR.

    python3 scripts/fixed_point_ablation.py [--rings R_I4 R_H4] [--seeds 0 1]
"""

import argparse

import numpy as np

from ringcnn.catalog import get_ring
from ringcnn.fixed import calibrate, quantization_error_report
from ringcnn.model import build_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rings", nargs="+", default=["R_I4", "R_H4", "R_I2"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--size", type=int, default=12)
    args = ap.parse_args()

    for name in args.rings:
        spec = get_ring(name)
        for seed in args.seeds:
            rng = np.random.default_rng(seed)
            model = build_model(spec, [2, 4, 4, 2], nonlinearity="directional_relu", seed=seed)
            for layer in model.layers:
                layer.bias = rng.uniform(-0.1, 0.1, layer.bias.shape)
            images = [rng.uniform(0, 1, (args.size, args.size, 2, spec.n)) for _ in range(3)]
            plan = calibrate(model, images)
            rep = quantization_error_report(model, images, plan)
            print(f"{name} seed {seed}: PSNR on-the-fly {rep.psnr:.2f} dB, pre-quantized {rep.psnr_ablation:.2f} dB "
                  f"(delta {rep.psnr_delta:+.2f})")
            for e in rep.layers:
                if e.onthefly_l2 is not None:
                    print(f"    layer {e.layer}: L2 on-the-fly {e.onthefly_l2:.3e}  pre-quantized {e.ablation_l2:.3e}")


if __name__ == "__main__":
    main()
