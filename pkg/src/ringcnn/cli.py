"""``ringcnn`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from ringcnn import formats
from ringcnn.catalog import CATALOG_NAMES, catalog, get_ring
from ringcnn.fast import cost_profile, verify_fast
from ringcnn.fixed import calibrate
from ringcnn.model import (
    GradientMismatch,
    build_model,
    finite_difference_check,
    forward,
    identity_dataset,
    split_identity_dataset,
    train_toy,
)
from ringcnn.ring import RingError, check_associativity, check_commutativity, ring_multiply, unity
from ringcnn.search import Unresolved, grank_estimate, match_catalog, search_rings
from ringcnn.tensor import MultCounter, frconv, real_conv2d, real_expand_features, real_expand_weights

EXPECTED_CLASSES = {2: [2], 4: [2, 4]}


class UsageError(Exception):
    pass


def _ring(name):
    try:
        return get_ring(name)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None


def _write(path, text):
    if path:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- search / grank

def cmd_search(args) -> int:
    if args.n not in EXPECTED_CLASSES:
        raise UsageError("search supports --n 2 or --n 4")
    try:
        res = search_rings(args.n, restarts=args.restarts, seed=args.seed)
    except Unresolved as e:
        print(f"unresolved: {e}")
        for k, v in e.residuals.items():
            print(f"  {k}: {v}")
        return 1
    known = catalog()
    found = []
    for c in res.classes:
        print(f"class {c.perm_class.class_id}: {c.perm_class.size} permutation(s), "
              f"{c.raw_sign_patterns} sign patterns, min grank {c.min_grank}, {len(c.variants)} variant(s)")
        for v in c.variants:
            name = match_catalog(v, known)
            found.append(v.spec(name or f"n{args.n}-class{c.perm_class.class_id}-{len(found)}"))
            print(f"  grank <= {v.grank_upper}  matches {name}  S={v.S.tolist()}")
    _write(args.out, formats.dump_catalog(found))
    _write(args.csv, res.to_csv())
    counts = [len(c.variants) for c in res.classes]
    ok = counts == EXPECTED_CLASSES[args.n] and all(match_catalog(v, known) for v in res.rings)
    print("expected class counts:", "yes" if ok else "NO")
    return 0 if ok else 1


def cmd_grank(args) -> int:
    spec = _ring(args.ring)
    try:
        est = grank_estimate(spec.m_tensor, r_max=args.r_max, restarts=args.restarts, seed=args.seed)
    except Unresolved as e:
        print(f"{spec.name}: unresolved; best residual per rank {e.residuals}")
        return 1
    print(f"{spec.name}: grank {est.grank}")
    print(f"  {est.evidence}")
    rows = [(r, f"{v:.3e}") for r, v in sorted(est.residuals.items())]
    for r, v in rows:
        print(f"  rank {r}: residual {v}")
    _write(args.csv, formats.to_csv(["rank", "residual"], rows))
    return 0


# ---------------------------------------------------------------- verify

def gradient_check(spec, seed=0, probes=12) -> float:
    """Worst relative error of analytic vs central-difference weight gradients on a small model."""
    nl = "directional_relu" if spec.n in (2, 4, 8) else "component_relu"
    model = build_model(spec, [1, 2, 1], nonlinearity=nl, skips=[(-1, 1)], seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 4, 1, spec.n))
    up = rng.standard_normal((4, 4, 1, spec.n))
    return finite_difference_check(model, x, up, probes, seed=seed)


def verify_ring(spec, seed=0):
    """List of ``(check, passed, detail)``."""
    out = []
    u = unity(spec)
    out.append(("unity", u is not None, "none" if u is None else str(u.tolist())))
    rng = np.random.default_rng(seed)
    g, x, y = rng.standard_normal((3, spec.n))
    a, b = rng.standard_normal(2)
    lin = ring_multiply(spec, g, a * x + b * y) - (a * ring_multiply(spec, g, x) + b * ring_multiply(spec, g, y))
    out.append(("bilinearity", float(np.max(np.abs(lin))) < 1e-12, f"{np.max(np.abs(lin)):.2e}"))
    assoc = check_associativity(spec, seed=seed)
    out.append(("associativity", bool(assoc), f"{assoc.max_deviation:.2e}"))
    comm = check_commutativity(spec, seed=seed)
    out.append(("commutativity", comm.element_commutative == comm.basis_commutative,
                f"commutative={comm.element_commutative} (E_k commute: {comm.basis_commutative})"))
    if spec.fast is None:
        out.append(("fast", False, "no fast algorithm"))
    else:
        rep = verify_fast(spec, spec.fast, seed=seed)
        out.append(("fast", bool(rep), f"m={spec.fast.m} deviation {rep.max_deviation:.2e}"))
    try:
        err = gradient_check(spec, seed)
        out.append(("gradient", err < 1e-4, f"relative error {err:.2e}"))
    except (GradientMismatch, RingError) as e:
        out.append(("gradient", False, str(e)))
    return out


def cmd_verify(args) -> int:
    if args.catalog:
        rings = formats.load_catalog(Path(args.catalog).read_text(encoding="utf-8"))
        if args.ring:
            rings = [r for r in rings if r.name in args.ring]
    elif args.ring:
        rings = [_ring(r) for r in args.ring]
    else:
        rings = catalog()
    failed = False
    for spec in rings:
        for name, ok, detail in verify_ring(spec, args.seed):
            print(f"{spec.name:8s} {name:14s} {'pass' if ok else 'FAIL'}  {detail}")
            failed |= not ok
    return 1 if failed else 0


# ---------------------------------------------------------------- inference

MODE_MAP = {"float": "float_direct", "fast": "float_fast", "fixed": "fixed"}


def cmd_infer(args) -> int:
    model, plan = formats.read_model(args.model)
    pixels = formats.read_image(args.input)
    channels = model.image_channels or pixels.shape[2]
    if pixels.shape[2] != channels:
        raise UsageError(f"image has {pixels.shape[2]} channels, model expects {channels}")
    x = formats.image_to_features(pixels, model.layers[0].c_in, model.n)
    mode = MODE_MAP[args.mode]
    if mode == "fixed" and plan is None:
        raise UsageError("model file has no QFormat plan; run `calibrate` first")
    out, _ = forward(model, x, mode, plan=plan, workers=args.workers)
    img = formats.features_to_image(out, channels)
    if args.out:
        formats.write_image(args.out, img)
    if args.ref:
        ref = formats.read_image(args.ref)
        if ref.shape != img.shape:
            raise UsageError(f"reference shape {ref.shape} differs from output {img.shape}")
        print(f"PSNR {formats.format_psnr(formats.psnr_8bit(ref, img))}")
    return 0


def cmd_calibrate(args) -> int:
    model, _ = formats.read_model(args.model)
    images = [formats.image_to_features(formats.read_image(p), model.layers[0].c_in, model.n) for p in args.images]
    plan = calibrate(model, images)
    rows = [(l, f.in_fracs, f.weight_frac, f.out_fracs) for l, f in enumerate(plan.layers)]
    for r in rows:
        print(f"layer {r[0]}: in {r[1]} weight {r[2]} out {r[3]}")
    formats.save_model(args.out or args.model, model, plan)
    _write(args.csv, formats.to_csv(["layer", "in_fracs", "weight_frac", "out_fracs"], rows))
    return 0


# ---------------------------------------------------------------- bench

def bench_records(names, sizes=(8, 16), channels=(2, 4), k=3, repetitions=1, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for name in names:
        spec = _ring(name)
        n, m = spec.n, spec.fast.m
        for size in sizes:
            for c in channels:
                x = rng.standard_normal((size, size, c, n))
                g = rng.standard_normal((k, k, c, c, n))
                for _ in range(repetitions):
                    cnt = MultCounter()
                    t0 = time.perf_counter()
                    frconv(x, g, None, spec, counter=cnt)
                    t_ring = time.perf_counter() - t0
                    t0 = time.perf_counter()
                    real_conv2d(real_expand_features(x), real_expand_weights(g, spec))
                    t_real = time.perf_counter() - t0
                    real_mults = size * size * k * k * (n * c) * (n * c)
                    rows.append({
                        "ring": spec.name, "op": "frconv", "shape": f"{size}x{size}x{c}->{c}", "k": k,
                        "ring_mults": cnt.count, "real_mults": real_mults,
                        "mults_per_output": cnt.count / (size * size * c * n),
                        "ratio": real_mults / cnt.count, "expected_ratio": n * n / m,
                        "complexity_8bit": cost_profile(spec, spec.fast).complexity_8bit,
                        "ring_seconds": t_ring, "real_seconds": t_real,
                    })
    return rows


def cmd_bench(args) -> int:
    names = args.ring or list(CATALOG_NAMES)
    rows = bench_records(names, repetitions=args.repetitions, seed=args.seed)
    bad = False
    for r in rows:
        ok = r["ring_mults"] * r["expected_ratio"] == r["real_mults"]
        bad |= not ok
        print(f"{r['ring']:8s} {r['shape']:12s} ratio {r['ratio']:.4f} (n^2/m {r['expected_ratio']:.4f}) "
              f"8-bit complexity {r['complexity_8bit']:.3f} {'ok' if ok else 'MISMATCH'}")
    if rows:
        _write(args.csv, formats.to_csv(list(rows[0]), [list(r.values()) for r in rows]))
    return 1 if bad else 0


# ---------------------------------------------------------------- train-toy

def cmd_train_toy(args) -> int:
    spec = _ring(args.ring)
    if args.task == "split" and spec.n not in (2, 4, 8):
        raise UsageError("the split task needs n in {2, 4, 8}")
    make = split_identity_dataset if args.task == "split" else identity_dataset
    data = make(spec.n, 1, args.size, args.images, seed=args.seed)
    nl = {"directional": "directional_relu", "component": "component_relu"}[args.nonlinearity]
    model = build_model(spec, [1, 2, 2, 1], kinds=["conv3x3", "conv1x1", "conv1x1"], nonlinearity=nl,
                        seed=args.seed, image_channels=1)
    trace = train_toy(model, data, args.steps, args.lr, seed=args.seed)
    print(f"{spec.name} {args.nonlinearity}: loss {trace[0]:.6g} -> {trace[-1]:.6g}")
    if args.out:
        formats.save_model(args.out, model)
    _write(args.csv, formats.to_csv(["step", "loss"], [(i, repr(v)) for i, v in enumerate(trace)]))
    return 0


# ---------------------------------------------------------------- entry

def build_parser():
    p = argparse.ArgumentParser(prog="ringcnn", description="Ring-algebra CNN toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="discover proper rings of dimension n")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=50)
    s.add_argument("--out", help="catalog file for the discovered rings")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("grank", help="estimate the generic rank of a catalog ring")
    s.add_argument("--ring", required=True)
    s.add_argument("--r-max", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=50)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_grank)

    s = sub.add_parser("verify", help="algebra, fast-algorithm and gradient checks")
    s.add_argument("ring", nargs="*", help="ring names (default: whole catalog)")
    s.add_argument("--catalog", help="catalog file to verify instead of the built-ins")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("infer", help="run a model file on an image")
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("--mode", choices=sorted(MODE_MAP), default="float")
    s.add_argument("--out")
    s.add_argument("--ref")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("calibrate", help="choose Q-formats from calibration images")
    s.add_argument("model")
    s.add_argument("images", nargs="+")
    s.add_argument("--out", help="output model file (default: overwrite the input)")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("bench", help="multiplication counts and timings vs the real expansion")
    s.add_argument("--ring", action="append")
    s.add_argument("--repetitions", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("train-toy", help="train a small model on a synthetic identity task")
    s.add_argument("--ring", default="R_I4")
    s.add_argument("--nonlinearity", choices=["directional", "component"], default="directional")
    s.add_argument("--task", choices=["identity", "split"], default="identity")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--size", type=int, default=6)
    s.add_argument("--images", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, formats.FormatError, RingError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
