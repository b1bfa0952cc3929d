from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringcnn.catalog import get_ring
from ringcnn.fixed import (
    AccumulatorOverflow,
    WidthViolation,
    bitwidth,
    butterfly,
    calibrate,
    dequantize,
    directional_relu_fixed,
    directional_relu_reference,
    forward_fixed,
    frac_for_max,
    frconv_fixed,
    quantization_error_report,
    quantize,
    shift_counts,
    shift_round,
)
from ringcnn.model import build_model, forward
from ringcnn.tensor import rconv


def fraction_reference(y, n_y, n_x, total_bits=8):
    """Arbitrary-precision oracle for one element: dequantize, H relu(H y), round half away, clamp."""
    n = len(y)
    h = [[1]]
    while len(h) < n:
        h = [r + r for r in h] + [r + [-v for v in r] for r in h]
    v = [Fraction(int(a), 2 ** int(f)) for a, f in zip(y, n_y)]
    mid = [max(Fraction(0), sum(h[i][j] * v[j] for j in range(n))) for i in range(n)]
    out = []
    lim = 2 ** (total_bits - 1)
    for i in range(n):
        z = sum(h[i][j] * mid[j] for j in range(n)) * Fraction(2) ** int(n_x[i])
        mag = abs(z)
        q = int(mag + Fraction(1, 2))  # floor(|z| + 1/2)
        q = q if z >= 0 else -q
        out.append(min(max(q, -lim), lim - 1))
    return out


def test_calibration_rule():
    assert frac_for_max(0.75) == 7
    assert frac_for_max(3.2) == 5
    assert [frac_for_max(v) for v in (0.9, 3.1, 1.8, 1.7)] == [7, 5, 6, 6]
    assert frac_for_max(200.0) == -1


def test_quantize_examples():
    codes, sat = quantize([0.75, 2.0, -0.005], [6, 7, 7])
    assert codes.tolist() == [48, 127, -1] and sat == 1
    assert dequantize(48, 6) == 0.75
    assert dequantize(127, 7) == pytest.approx(0.9922, abs=1e-4)
    assert quantize([0.5 / 128, -0.5 / 128], 7)[0].tolist() == [1, -1]  # ties away from zero


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.99, 0.99, allow_nan=False), st.integers(0, 7))
def test_round_trip_bound(v, f):
    limit = 127 * 2.0 ** -f
    if abs(v) <= limit:
        assert abs(dequantize(quantize(v, f)[0], f) - v) <= 2.0 ** (-f - 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2 ** 40), 2 ** 40), st.integers(-4, 20))
def test_shift_round_matches_fraction(c, s):
    z = Fraction(c, 2 ** s) if s >= 0 else Fraction(c * 2 ** -s)
    q = int(abs(z) + Fraction(1, 2))
    assert int(shift_round(c, s)) == (q if z >= 0 else -q)


def test_shift_counts_example():
    s, t = shift_counts((6, 4, 5, 5), (3, 3, 3, 3))
    assert s.tolist() == [0, 2, 1, 1] and t.tolist() == [3, 3, 3, 3]


def test_butterfly_is_hadamard(rng):
    from ringcnn.catalog import hadamard
    for n in (2, 4, 8):
        v = rng.integers(-1000, 1000, size=(20, n))
        assert np.array_equal(butterfly(v), v @ hadamard(n).astype(np.int64).T)


def test_zero_in_zero_out():
    assert not np.any(directional_relu_fixed(np.zeros((5, 4), dtype=np.int64), [6, 4, 5, 5], [7, 7, 7, 7]))


def _stimuli(rng, count, n=4):
    n_y = rng.integers(10, 16, size=n)
    n_y[0] = n_y.min() + 5  # use the full 5-bit alignment budget
    y = rng.integers(-(2 ** 23), 2 ** 23, size=(count, n))
    # output formats chosen so codes mostly land inside the 8-bit range
    n_x = n_y.max() - 18 + rng.integers(-1, 2, size=n)
    return y, n_y, n_x


def test_directional_fixed_vs_fraction_oracle(rng):
    for n in (2, 4):
        y, n_y, n_x = _stimuli(rng, 300, n)
        got = directional_relu_fixed(y, n_y, n_x)
        for row, out in zip(y, got):
            assert out.tolist() == fraction_reference(row, n_y, n_x)


def test_directional_fixed_scale_exact(rng):
    y, n_y, n_x = _stimuli(rng, 2000)
    y = y // 2
    a = directional_relu_fixed(y, n_y, n_x)
    b = directional_relu_fixed(2 * y, n_y + 1, n_x)
    assert np.array_equal(a, b)


def test_width_checks(rng):
    y = np.full((1, 4), 2 ** 23, dtype=np.int64)
    with pytest.raises(WidthViolation):
        directional_relu_fixed(y, [10] * 4, [0] * 4)
    with pytest.raises(WidthViolation):
        directional_relu_fixed(np.ones((1, 4), dtype=np.int64), [16, 10, 10, 10], [0] * 4)
    y, n_y, n_x = _stimuli(rng, 5000)
    _, tr = directional_relu_fixed(y, n_y, n_x, trace=True)
    assert tr.internal_bits <= 33
    assert bitwidth(y) <= 24


def test_frconv_fixed_single_product():
    spec = get_ring("R_I2")
    x = np.array([48, 48]).reshape(1, 1, 1, 2)
    g = np.array([32, 32]).reshape(1, 1, 1, 1, 2)
    acc = frconv_fixed(x, [6, 6], g, 7, None, spec)
    assert acc.values.ravel().tolist() == [1536, 1536]
    assert acc.fracs.tolist() == [13, 13]


def test_frconv_fixed_identity_filter(rng):
    spec = get_ring("R_H4")
    x = rng.integers(-128, 128, size=(5, 5, 1, 4))
    g = np.zeros((3, 3, 1, 1, 4), dtype=np.int64)
    g[1, 1, 0, 0, 0] = 64  # unity at weight frac 6
    acc = frconv_fixed(x, [7] * 4, g, 6, None, spec)
    assert np.array_equal(shift_round(acc.values, acc.fracs - 7), x)
    assert np.array_equal(acc.values, np.left_shift(x, acc.fracs - 7))


@pytest.mark.parametrize("name", ["R_I4", "R_H4", "C", "H", "R_H4-I", "R_O4"])
def test_frconv_fixed_is_exact(name, rng):
    spec = get_ring(name)
    n = spec.n
    fx = rng.integers(4, 8, size=n) if name.startswith("R_I") else np.full(n, 6)
    x = rng.integers(-128, 128, size=(6, 5, 2, n))
    g = rng.integers(-128, 128, size=(3, 3, 2, 2, n))
    acc = frconv_fixed(x, fx, g, 7, None, spec)
    ref = rconv(dequantize(x, fx), dequantize(g, 7), None, spec)
    assert np.array_equal(dequantize(acc.values, acc.fracs), ref)
    assert np.array_equal(frconv_fixed(x, fx, g, 7, None, spec, workers=3).values, acc.values)


def test_accumulator_overflow_named():
    spec = get_ring("R_I2")
    x = np.full((4, 4, 8, 2), 127)
    g = np.full((3, 3, 8, 1, 2), 127)
    with pytest.raises(AccumulatorOverflow, match="conv7"):
        frconv_fixed(x, [20, 20], g, 7, None, spec, layer_name="conv7", acc_bits=16)


def _toy(name="R_I4", nl="directional_relu", seed=0):
    spec = get_ring(name)
    model = build_model(spec, [1, 2, 2, 1], nonlinearity=nl, skips=[(0, 1)], seed=seed)
    r = np.random.default_rng(seed + 1)
    for layer in model.layers:
        layer.bias = r.uniform(-0.1, 0.1, layer.bias.shape)
    images = [r.uniform(0, 1, (8, 8, 1, spec.n)) for _ in range(3)]
    return model, images


def test_calibrated_plan_shapes():
    model, images = _toy()
    plan = calibrate(model, images)
    assert len(plan.layers) == 3
    for a, b in zip(plan.layers, plan.layers[1:]):
        assert a.out_fracs == b.in_fracs
    cw, imgs = _toy(nl="component_relu")
    p2 = calibrate(cw, imgs)
    for l in p2.layers:
        assert len(set(l.out_fracs)) == 1 and len(set(l.in_fracs)) == 1
    with pytest.raises(ValueError):
        calibrate(model, [])


def test_saturation_monotone():
    model, images = _toy()
    plan = calibrate(model, images)
    sats = []
    for bump in range(4):
        plan.layers[0].out_fracs = [f + (1 if bump else 0) for f in plan.layers[0].out_fracs]
        plan.layers[1].in_fracs = plan.layers[0].out_fracs
        sats.append(sum(forward_fixed(model, x, plan)[1].saturation[0] for x in images))
    assert sats[0] == 0
    assert all(a <= b for a, b in zip(sats, sats[1:]))


def test_fixed_inference_deterministic():
    model, images = _toy("R_H4")
    plan = calibrate(model, images)
    a, ta = forward_fixed(model, images[0], plan)
    b, tb = forward_fixed(model, images[0], plan, workers=4)
    assert np.array_equal(a, b)
    assert all(np.array_equal(x, y) for x, y in zip(ta.codes, tb.codes))


def test_fixed_close_to_float():
    model, images = _toy()
    plan = calibrate(model, images)
    out_q, _ = forward(model, images[0], "fixed", plan=plan)
    out_f, _ = forward(model, images[0])
    assert np.max(np.abs(out_q - out_f)) < 0.1


def test_error_report_no_quantization():
    model, images = _toy()
    rep = quantization_error_report(model, images, None)
    assert rep.psnr == float("inf")
    assert all(l.max_abs == 0 for l in rep.layers)


def test_single_layer_error_bound():
    spec = get_ring("R_I2")
    model = build_model(spec, [1, 1], seed=3)
    r = np.random.default_rng(0)
    images = [r.uniform(0, 1, (6, 6, 1, 2)) for _ in range(2)]
    plan = calibrate(model, images)
    f = plan.layers[0]
    k, ci = 3, 1
    gmax = np.max(np.abs(model.layers[0].weights))
    bound = k * k * ci * (gmax * 2.0 ** (-min(f.in_fracs) - 1) + 1.0 * 2.0 ** (-f.weight_frac - 1)
                          + 2.0 ** (-min(f.in_fracs) - f.weight_frac - 2)) + 2.0 ** (-min(f.out_fracs) - 1)
    rep = quantization_error_report(model, images, plan)
    assert rep.layers[0].max_abs <= bound
