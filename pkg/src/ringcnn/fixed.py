"""Dynamic fixed-point inference with component-wise Q-formats.

A value ``v`` in a format with ``f`` fraction bits is the integer code
``round(v * 2**f)``. Rounding is half away from zero everywhere (input
quantization and every right shift); saturation clamps to the signed
``total_bits`` range and is counted, never wrapped.

Per layer the integer pipeline is: align input components to a common
fraction, integer ``T_x``/``T_g`` transforms, m-tuple products accumulated
in int64 with a 32-bit overflow check, integer ``T_z`` (scaled by ``2**k``),
exact bias and skip adds, then either a plain requantizing ReLU or the
on-the-fly directional ReLU (left shift, butterfly, relu, butterfly, rounding
right shift, clamp).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ringcnn.catalog import hadamard
from ringcnn.ring import RingError, RingSpec
from ringcnn.tensor import accumulate_products


class AccumulatorOverflow(RuntimeError):
    pass


class WidthViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class QFormat:
    total_bits: int = 8
    frac_bits: int = 0

    @property
    def code_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def code_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1


# ---------------------------------------------------------------- scalar helpers

def round_half_away(v):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def shift_round(codes, shift):
    """``codes * 2**-shift`` rounded half away from zero, exact on int64 (negative shift = left shift)."""
    codes = np.asarray(codes, dtype=np.int64)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.int64), codes.shape)
    left = np.left_shift(codes, np.maximum(-shift, 0))
    s = np.maximum(shift, 0)
    mag = np.abs(codes)
    half = np.where(s > 0, np.left_shift(np.int64(1), np.maximum(s - 1, 0)), 0)
    right = np.sign(codes) * np.right_shift(mag + half, s)
    return np.where(shift > 0, right, left)


def frac_for_max(max_abs: float, total_bits: int = 8, lo: int = -32, hi: int = 32) -> int:
    """Largest ``f`` with ``round(max_abs * 2**f) <= 2**(total_bits-1) - 1``."""
    limit = (1 << (total_bits - 1)) - 1
    if max_abs <= 0:
        return total_bits - 1
    for f in range(hi, lo - 1, -1):
        if round_half_away(max_abs * 2.0 ** f) <= limit:
            return f
    raise ValueError(f"cannot represent {max_abs} in {total_bits} bits")


def quantize(values, frac_bits, total_bits: int = 8):
    """Codes and saturation count; ``frac_bits`` is a scalar or one entry per ring component."""
    fmt = QFormat(total_bits)
    scaled = round_half_away(np.asarray(values, dtype=np.float64) * np.exp2(np.asarray(frac_bits, dtype=np.float64)))
    sat = int(np.count_nonzero((scaled > fmt.code_max) | (scaled < fmt.code_min)))
    return np.clip(scaled, fmt.code_min, fmt.code_max).astype(np.int64), sat


def dequantize(codes, frac_bits) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * np.exp2(-np.asarray(frac_bits, dtype=np.float64))


def clamp_codes(codes, total_bits: int = 8):
    fmt = QFormat(total_bits)
    sat = int(np.count_nonzero((codes > fmt.code_max) | (codes < fmt.code_min)))
    return np.clip(codes, fmt.code_min, fmt.code_max), sat


def bitwidth(codes) -> int:
    """Signed two's-complement width needed for every value in ``codes``."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        return 1
    hi = int(np.max(codes))
    lo = int(np.min(codes))
    return max(hi.bit_length() + 1, (-lo - 1).bit_length() + 1 if lo < 0 else 1)


# ---------------------------------------------------------------- plans

@dataclass
class LayerFormats:
    in_fracs: list[int]  # per component, format of this layer's input features
    weight_frac: int
    out_fracs: list[int]  # per component, format of this layer's 8-bit output
    pre_fracs: list[int] | None = None  # 8-bit pre-activation formats (used only by the ablation)
    acc_bits: int = 32


@dataclass
class QFormatPlan:
    layers: list[LayerFormats]
    total_bits: int = 8
    in_bits: int = 24  # declared accumulator width entering the directional ReLU
    align_bits: int = 5  # declared left-shift budget for component alignment

    def to_dict(self) -> dict:
        return {
            "total_bits": self.total_bits,
            "in_bits": self.in_bits,
            "align_bits": self.align_bits,
            "layers": [
                {
                    "in_fracs": list(map(int, l.in_fracs)),
                    "weight_frac": int(l.weight_frac),
                    "out_fracs": list(map(int, l.out_fracs)),
                    "pre_fracs": None if l.pre_fracs is None else list(map(int, l.pre_fracs)),
                    "acc_bits": int(l.acc_bits),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d) -> QFormatPlan:
        layers = [LayerFormats(**l) for l in d["layers"]]
        return cls(layers, d["total_bits"], d["in_bits"], d["align_bits"])


def _component_fracs(max_per_component, per_component: bool, total_bits):
    m = np.asarray(max_per_component, dtype=np.float64)
    if per_component:
        return [frac_for_max(v, total_bits) for v in m]
    f = frac_for_max(float(m.max()), total_bits)
    return [f] * len(m)


def calibrate(model, images, total_bits: int = 8) -> QFormatPlan:
    """Per-layer weight formats and per-component feature formats from float inference.

    Feature formats are component-wise only when the consuming non-linearity
    is directional; otherwise all components share one format.
    """
    from ringcnn.model import forward

    images = list(images)
    if not images:
        raise ValueError("calibration needs at least one image")
    n = model.n
    in_max = np.zeros(n)
    act_max = [np.zeros(n) for _ in model.layers]
    pre_max = [np.zeros(n) for _ in model.layers]
    for x in images:
        x = np.asarray(x, dtype=np.float64)
        in_max = np.maximum(in_max, np.abs(x).reshape(-1, n).max(axis=0))
        _, taps = forward(model, x, "float_direct")
        for l in range(len(model.layers)):
            act_max[l] = np.maximum(act_max[l], np.abs(taps.act[l]).reshape(-1, n).max(axis=0))
            pre_max[l] = np.maximum(pre_max[l], np.abs(taps.pre[l]).reshape(-1, n).max(axis=0))
    directional_in = any(l.nonlinearity == "directional_relu" for l in model.layers)
    fracs_in = _component_fracs(in_max, directional_in, total_bits)
    layers = []
    for l, layer in enumerate(model.layers):
        w_frac = frac_for_max(float(np.max(np.abs(layer.weights))), total_bits)
        out = _component_fracs(act_max[l], layer.nonlinearity == "directional_relu", total_bits)
        pre = _component_fracs(pre_max[l], True, total_bits)
        layers.append(LayerFormats(fracs_in, w_frac, out, pre))
        fracs_in = out
    return QFormatPlan(layers, total_bits)


# ---------------------------------------------------------------- integer transforms

def integer_matrix(t, what) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    r = np.round(t)
    if np.max(np.abs(t - r)) > 1e-12:
        raise RingError(f"{what} is not an integer matrix; fixed-point needs integer T_g and T_x")
    return r.astype(np.int64)


def dyadic_matrix(t, max_shift: int = 16):
    """``(Z, k)`` with ``t == Z / 2**k`` and ``Z`` integer."""
    t = np.asarray(t, dtype=np.float64)
    for k in range(max_shift + 1):
        z = t * 2.0 ** k
        if np.max(np.abs(z - np.round(z))) <= 1e-12:
            return np.round(z).astype(np.int64), k
    raise RingError("T_z is not dyadic")


def _align_rows(t_int, fracs):
    """Per-row common fraction (max over the row's nonzero columns) and per-entry left shifts."""
    fracs = np.asarray(fracs, dtype=np.int64)
    row_f = np.array([fracs[np.flatnonzero(row)].max() if np.any(row) else fracs.max() for row in t_int])
    return row_f, row_f[:, None] - fracs[None, :]


def _apply_aligned(t_int, codes, fracs):
    """Integer ``T @ v`` with each input component shifted up to its row's common fraction."""
    row_f, shifts = _align_rows(t_int, fracs)
    out = np.zeros(codes.shape[:-1] + (t_int.shape[0],), dtype=np.int64)
    for r in range(t_int.shape[0]):
        for j in np.flatnonzero(t_int[r]):
            out[..., r] += t_int[r, j] * np.left_shift(codes[..., j], shifts[r, j])
    return out, row_f


def quantize_weights(layer, plan_layer: LayerFormats, total_bits: int = 8):
    codes, sat = quantize(layer.weights, plan_layer.weight_frac, total_bits)
    return codes, sat


@dataclass
class Accumulators:
    values: np.ndarray  # int64, (H, W, C_out, n)
    fracs: np.ndarray  # implied fraction bits per component
    max_bits: int = 0  # widest signed value seen anywhere in the layer


def frconv_fixed(x_codes, in_fracs, g_codes, weight_frac, bias, spec: RingSpec, layer_name="layer",
                 acc_bits: int = 32, workers: int = 1) -> Accumulators:
    """Exact integer fast ring convolution; returns wide accumulators and their fraction bits."""
    if spec.fast is None:
        raise RingError(f"{spec.name}: fixed-point convolution needs a fast algorithm")
    alg = spec.fast
    tx = integer_matrix(alg.t_x, f"{spec.name} T_x")
    tg = integer_matrix(alg.t_g, f"{spec.name} T_g")
    tz, k = dyadic_matrix(alg.t_z)
    x_codes = np.asarray(x_codes, dtype=np.int64)
    g_codes = np.asarray(g_codes, dtype=np.int64)
    xt, xt_f = _apply_aligned(tx, x_codes, in_fracs)
    gt = g_codes @ tg.T
    acc = accumulate_products(xt, gt, workers)  # column r carries fraction xt_f[r] + weight_frac
    prod_f = xt_f + weight_frac
    y, y_f = _apply_aligned(tz, acc, prod_f)
    y_f = y_f + k
    widest = max(bitwidth(xt), bitwidth(acc), bitwidth(y))
    if bias is not None:
        b_codes = round_half_away(np.asarray(bias, dtype=np.float64) * np.exp2(y_f.astype(np.float64)))
        if np.max(np.abs(b_codes), initial=0) >= 2.0 ** 62:
            raise AccumulatorOverflow(f"{layer_name}: bias does not fit at {y_f.tolist()} fraction bits")
        y = y + b_codes.astype(np.int64)
        widest = max(widest, bitwidth(y))
    if widest > acc_bits:
        raise AccumulatorOverflow(f"{layer_name}: accumulator needs {widest} bits, limit {acc_bits}")
    return Accumulators(y, y_f, widest)


# ---------------------------------------------------------------- directional ReLU datapath

def butterfly(v) -> np.ndarray:
    """Unnormalized Sylvester Hadamard transform of the last axis by log2(n) add/subtract stages."""
    v = np.array(v, dtype=np.int64)
    n = v.shape[-1]
    h = 1
    while h < n:
        blocks = v.reshape(v.shape[:-1] + (n // (2 * h), 2, h))
        a = blocks[..., 0, :].copy()
        b = blocks[..., 1, :].copy()
        blocks[..., 0, :] = a + b
        blocks[..., 1, :] = a - b
        v = blocks.reshape(v.shape)
        h *= 2
    return v


def shift_counts(n_y, n_x):
    n_y = np.asarray(n_y, dtype=np.int64)
    n_x = np.asarray(n_x, dtype=np.int64)
    top = n_y.max()
    return top - n_y, top - n_x


@dataclass
class DatapathTrace:
    aligned: np.ndarray
    stage1: np.ndarray
    rectified: np.ndarray
    stage2: np.ndarray
    internal_bits: int
    saturated: int


def directional_relu_fixed(y, n_y, n_x, total_bits: int = 8, in_bits: int | None = 24, align_bits: int = 5,
                           trace: bool = False):
    """On-the-fly ``H relu(H y)`` on integer accumulators ``y`` (last axis = component).

    ``n_y``/``n_x`` are the per-component fraction bits of input and output.
    Widths are checked against ``in_bits`` for the inputs and
    ``in_bits + align_bits + 2 log2(n)`` internally; ``in_bits=None`` disables
    the checks.
    """
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[-1]
    if n not in (2, 4, 8) or len(n_y) != n or len(n_x) != n:
        raise RingError("directional ReLU datapath needs n in {2, 4, 8} and one format per component")
    s, t = shift_counts(n_y, n_x)
    stages = int(math.log2(n))
    if in_bits is not None:
        if bitwidth(y) > in_bits:
            raise WidthViolation(f"input needs {bitwidth(y)} bits, declared {in_bits}")
        if s.max() > align_bits:
            raise WidthViolation(f"alignment shift {int(s.max())} exceeds declared {align_bits} bits")
    aligned = np.left_shift(y, s)
    stage1 = butterfly(aligned)
    rect = np.maximum(stage1, 0)
    stage2 = butterfly(rect)
    internal = max(bitwidth(aligned), bitwidth(stage1), bitwidth(stage2))
    if in_bits is not None and internal > in_bits + align_bits + 2 * stages:
        raise WidthViolation(f"internal value needs {internal} bits, declared {in_bits + align_bits + 2 * stages}")
    out, sat = clamp_codes(shift_round(stage2, t), total_bits)
    if trace:
        return out, DatapathTrace(aligned, stage1, rect, stage2, internal, sat)
    return out


def directional_relu_reference(y, n_y, n_x, total_bits: int = 8):
    """Float model of the datapath: dequantize, ``H relu(H y)``, quantize.

    Exact whenever all intermediates fit in 53 bits (always true for the
    declared widths), so it doubles as a vectorized rational oracle.
    """
    v = dequantize(y, n_y)
    h = hadamard(np.shape(y)[-1])
    z = np.maximum(v @ h.T, 0.0) @ h.T
    codes, _ = quantize(z, n_x, total_bits)
    return codes


def requantize(y, n_y, n_x, total_bits: int = 8, relu: bool = False):
    s = np.asarray(n_y, dtype=np.int64) - np.asarray(n_x, dtype=np.int64)
    v = np.maximum(y, 0) if relu else y
    return clamp_codes(shift_round(v, s), total_bits)


# ---------------------------------------------------------------- model inference

@dataclass
class FixedTaps:
    acc: list[Accumulators] = field(default_factory=list)  # after conv + bias + skips
    codes: list[np.ndarray] = field(default_factory=list)  # 8-bit layer outputs
    fracs: list[np.ndarray] = field(default_factory=list)
    saturation: list[int] = field(default_factory=list)
    internal_bits: list[int] = field(default_factory=list)

    @property
    def act(self):
        return [dequantize(c, f) for c, f in zip(self.codes, self.fracs)]


def _add_aligned(acc: Accumulators, codes, fracs):
    """Exact ``acc + codes`` by shifting both up to the finer fraction per component."""
    fracs = np.asarray(fracs, dtype=np.int64)
    top = np.maximum(acc.fracs, fracs)
    v = np.left_shift(acc.values, top - acc.fracs) + np.left_shift(np.asarray(codes, dtype=np.int64), top - fracs)
    return Accumulators(v, top, max(acc.max_bits, bitwidth(v)))


def forward_fixed(model, x, plan: QFormatPlan, workers: int = 1, ablate: bool = False):
    """Integer-only inference. With ``ablate`` the directional ReLU first requantizes its
    accumulators to 8-bit (conventional MAC pipeline) instead of running on the fly.

    Returns ``(float output, FixedTaps)``.
    """
    if len(plan.layers) != len(model.layers):
        raise RingError("plan does not cover every layer")
    tb = plan.total_bits
    first = plan.layers[0]
    codes, sat = quantize(x, first.in_fracs, tb)
    acts = {-1: (codes, np.asarray(first.in_fracs, dtype=np.int64))}
    taps = FixedTaps()
    for l, (layer, fmt) in enumerate(zip(model.layers, plan.layers)):
        g_codes, _ = quantize_weights(layer, fmt, tb)
        x_codes, x_f = acts[l - 1]
        acc = frconv_fixed(x_codes, x_f, g_codes, fmt.weight_frac, layer.bias, model.ring, f"layer {l}",
                           fmt.acc_bits, workers)
        for src in model.skips_into(l):
            acc = _add_aligned(acc, *acts[src])
        if acc.max_bits > fmt.acc_bits:
            raise AccumulatorOverflow(f"layer {l}: skip add needs {acc.max_bits} bits, limit {fmt.acc_bits}")
        out_f = np.asarray(fmt.out_fracs, dtype=np.int64)
        internal = acc.max_bits
        if layer.nonlinearity == "directional_relu":
            if model.directional is not None and not (
                np.array_equal(model.directional.U, hadamard(model.n)) and np.array_equal(model.directional.V, hadamard(model.n))
            ):
                raise RingError("fixed-point directional ReLU is implemented for f_H only")
            y, y_f = acc.values, acc.fracs
            if ablate:
                y, s = requantize(y, y_f, fmt.pre_fracs, tb)
                sat += s
                y_f = np.asarray(fmt.pre_fracs, dtype=np.int64)
            out, tr = directional_relu_fixed(y, y_f, out_f, tb, in_bits=None if ablate else plan.in_bits,
                                             align_bits=plan.align_bits, trace=True)
            sat += tr.saturated
            internal = max(internal, tr.internal_bits)
        else:
            out, s = requantize(acc.values, acc.fracs, out_f, tb, relu=layer.nonlinearity == "component_relu")
            sat += s
        acts[l] = (out, out_f)
        taps.acc.append(acc)
        taps.codes.append(out)
        taps.fracs.append(out_f)
        taps.saturation.append(sat)
        taps.internal_bits.append(internal)
        sat = 0
    out_codes, out_f = acts[len(model.layers) - 1]
    return dequantize(out_codes, out_f), taps


# ---------------------------------------------------------------- error reports

def psnr(a, b, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)


@dataclass
class LayerError:
    layer: int
    max_abs: float
    mean_abs: float
    saturation: int
    onthefly_l2: float | None = None  # isolated: exact nonlinearity vs on-the-fly codes
    ablation_l2: float | None = None  # isolated: exact nonlinearity vs 8-bit-pre-quantized codes


@dataclass
class QuantReport:
    layers: list[LayerError]
    psnr: float
    psnr_ablation: float

    @property
    def psnr_delta(self) -> float:
        return self.psnr - self.psnr_ablation


def isolated_ablation(acc: Accumulators, pre_fracs, out_fracs, total_bits: int = 8):
    """L2 error of both pipelines on identical accumulators, against the exact ``H relu(H y)``.

    Returns ``(on-the-fly error, pre-quantized error, per-element on-the-fly
    error, per-element pre-quantized error)``.
    """
    n = acc.values.shape[-1]
    h = hadamard(n)
    exact = np.maximum(dequantize(acc.values, acc.fracs) @ h.T, 0.0) @ h.T
    otf = directional_relu_fixed(acc.values, acc.fracs, out_fracs, total_bits, in_bits=None)
    y8, _ = requantize(acc.values, acc.fracs, pre_fracs, total_bits)
    abl = directional_relu_fixed(y8, pre_fracs, out_fracs, total_bits, in_bits=None)
    e_otf = np.abs(dequantize(otf, out_fracs) - exact)
    e_abl = np.abs(dequantize(abl, out_fracs) - exact)
    return float(np.linalg.norm(e_otf)), float(np.linalg.norm(e_abl)), e_otf, e_abl


def quantization_error_report(model, images, plan: QFormatPlan, fixed_model=None) -> QuantReport:
    """Float vs fixed errors per layer, end-to-end PSNR, and the pre-quantization ablation.

    ``fixed_model`` defaults to ``model`` (same weights quantized by the plan).
    With ``plan=None`` no quantization is applied and errors are zero.
    """
    from ringcnn.model import forward

    fixed_model = model if fixed_model is None else fixed_model
    images = list(images)
    errs = [[0.0, 0.0, 0, 0, 0.0, 0.0, False] for _ in model.layers]  # max, sum, count, sat, otf, abl, dir
    outs_f, outs_q, outs_a = [], [], []
    for x in images:
        out_f, taps_f = forward(model, x, "float_direct")
        outs_f.append(out_f)
        if plan is None:
            outs_q.append(out_f)
            outs_a.append(out_f)
            continue
        out_q, taps_q = forward_fixed(fixed_model, x, plan)
        out_a, _ = forward_fixed(fixed_model, x, plan, ablate=True)
        outs_q.append(out_q)
        outs_a.append(out_a)
        for l, layer in enumerate(model.layers):
            d = np.abs(taps_q.act[l] - taps_f.act[l])
            e = errs[l]
            e[0] = max(e[0], float(d.max()))
            e[1] += float(d.sum())
            e[2] += d.size
            e[3] += taps_q.saturation[l]
            if layer.nonlinearity == "directional_relu":
                o, a, _, _ = isolated_ablation(taps_q.acc[l], plan.layers[l].pre_fracs, plan.layers[l].out_fracs,
                                               plan.total_bits)
                e[4] += o * o
                e[5] += a * a
                e[6] = True
    layers = [
        LayerError(l, e[0], e[1] / max(e[2], 1), e[3], math.sqrt(e[4]) if e[6] else None,
                   math.sqrt(e[5]) if e[6] else None)
        for l, e in enumerate(errs)
    ]
    ref = np.concatenate([o.ravel() for o in outs_f])
    return QuantReport(
        layers,
        psnr(ref, np.concatenate([o.ravel() for o in outs_q])),
        psnr(ref, np.concatenate([o.ravel() for o in outs_a])),
    )
