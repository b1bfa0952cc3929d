"""Layer graphs of ring convolutions: construction, forward, backward and a toy trainer.

Activations are numbered by layer: ``act[-1]`` is the model input and
``act[l]`` the output of layer ``l``. A skip ``(src, dst)`` adds
``act[src]`` to the pre-activation of layer ``dst`` before that layer's
non-linearity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ringcnn.ring import RingError, RingSpec, adjoint_basis_map, right_matrix
from ringcnn.tensor import (
    DirectionalReLU,
    f_h,
    frconv,
    init_weights,
    rconv,
    real_collapse_features,
    real_expand_features,
    real_expand_weights,
    relu_cw,
    relu_dir,
)

KINDS = {"conv3x3": 3, "conv1x1": 1}
NONLINEARITIES = ("none", "component_relu", "directional_relu")
MODES = ("float_direct", "float_fast", "fixed")


class GradientMismatch(RuntimeError):
    pass


class Divergence(RuntimeError):
    def __init__(self, step, trace):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
        self.trace = trace


@dataclass(eq=False)
class LayerConfig:
    kind: str
    c_in: int
    c_out: int
    nonlinearity: str
    weights: np.ndarray  # (K, K, c_in, c_out, n)
    bias: np.ndarray  # (c_out, n)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RingError(f"unknown layer kind {self.kind!r}")
        if self.nonlinearity not in NONLINEARITIES:
            raise RingError(f"unknown non-linearity {self.nonlinearity!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        k = KINDS[self.kind]
        if self.weights.shape[:4] != (k, k, self.c_in, self.c_out):
            raise RingError(f"{self.kind} weights have shape {self.weights.shape}")
        if self.bias.shape != (self.c_out, self.weights.shape[-1]):
            raise RingError(f"bias has shape {self.bias.shape}")

    @property
    def k(self) -> int:
        return KINDS[self.kind]


@dataclass(eq=False)
class ModelGraph:
    ring: RingSpec
    layers: list[LayerConfig]
    skips: list[tuple[int, int]] = field(default_factory=list)
    directional: DirectionalReLU | None = None
    image_channels: int | None = None

    def __post_init__(self):
        n = self.ring.n
        if self.directional is None and any(l.nonlinearity == "directional_relu" for l in self.layers):
            self.directional = f_h(n)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.c_out != b.c_in:
                raise RingError(f"layer channels do not chain: {a.c_out} -> {b.c_in}")
        for layer in self.layers:
            if layer.weights.shape[-1] != n:
                raise RingError("layer weights do not match the ring dimension")
        self.skips = [tuple(int(v) for v in s) for s in self.skips]
        for src, dst in self.skips:
            if not (-1 <= src < dst < len(self.layers)):
                raise RingError(f"skip {(src, dst)} is not a forward edge")
            c_src = self.layers[0].c_in if src == -1 else self.layers[src].c_out
            if c_src != self.layers[dst].c_out:
                raise RingError(f"skip {(src, dst)} joins {c_src} and {self.layers[dst].c_out} channels")

    @property
    def n(self) -> int:
        return self.ring.n

    def skips_into(self, dst):
        return [s for s, d in self.skips if d == dst]

    def weight_count(self) -> int:
        return sum(l.weights.size for l in self.layers)

    def real_weight_count(self) -> int:
        return sum(l.weights.size * self.n for l in self.layers)


def build_model(ring: RingSpec, channels, kinds=None, nonlinearity="component_relu", skips=(), seed=0,
                directional=None, image_channels=None) -> ModelGraph:
    """Random model with tuple-channel counts ``channels = [c0, c1, ..., cL]``.

    Hidden layers use ``nonlinearity``; the last layer has none.
    """
    rng = np.random.default_rng(seed)
    n_layers = len(channels) - 1
    kinds = ["conv3x3"] * n_layers if kinds is None else list(kinds)
    layers = []
    for l in range(n_layers):
        k = KINDS[kinds[l]]
        w = init_weights(k, channels[l], channels[l + 1], ring.n, rng)
        b = np.zeros((channels[l + 1], ring.n))
        nl = nonlinearity if l < n_layers - 1 else "none"
        layers.append(LayerConfig(kinds[l], channels[l], channels[l + 1], nl, w, b))
    return ModelGraph(ring, layers, list(skips), directional, image_channels)


@dataclass
class ConversionReport:
    real_channels: list[int]
    tuple_channels: list[int]
    real_weights: int
    ring_weights: int

    @property
    def weight_ratio(self) -> float:
        return self.real_weights / self.ring_weights


def convert_real_config(real_channels, kernel_sizes, n: int, ring: RingSpec, nonlinearity="component_relu",
                        seed=0) -> tuple[ModelGraph, ConversionReport]:
    """Ring counterpart of a real CNN with channel counts ``real_channels`` (C -> C/n tuples)."""
    if ring.n != n:
        raise RingError(f"ring {ring.name} has n={ring.n}, expected {n}")
    bad = [c for c in real_channels if c % n]
    if bad:
        raise RingError(f"real channel counts {bad} are not divisible by n={n}")
    if len(kernel_sizes) != len(real_channels) - 1:
        raise RingError("need one kernel size per layer")
    kinds = [{3: "conv3x3", 1: "conv1x1"}[k] for k in kernel_sizes]
    tuples = [c // n for c in real_channels]
    model = build_model(ring, tuples, kinds, nonlinearity, seed=seed)
    real = sum(k * k * a * b for k, a, b in zip(kernel_sizes, real_channels, real_channels[1:]))
    return model, ConversionReport(list(real_channels), tuples, real, model.weight_count())


# ---------------------------------------------------------------- forward

def apply_nonlinearity(model: ModelGraph, kind: str, y):
    if kind == "none":
        return y
    if kind == "component_relu":
        return relu_cw(y)
    return relu_dir(y, model.directional)


@dataclass
class Taps:
    pre: list[np.ndarray]  # conv + bias + skips, before the non-linearity
    act: list[np.ndarray]  # layer outputs
    conv: list[np.ndarray]  # conv + bias only


def forward(model: ModelGraph, x, mode: str = "float_direct", plan=None, workers: int = 1):
    """Run the model; returns ``(output, taps)``. Fixed mode needs a calibrated plan."""
    if mode not in MODES:
        raise RingError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "fixed":
        from ringcnn.fixed import forward_fixed

        if plan is None:
            raise RingError("fixed mode needs a QFormatPlan (run calibrate first)")
        return forward_fixed(model, x, plan, workers=workers)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[2:] != (model.layers[0].c_in, model.n):
        raise RingError(f"input must be (H, W, {model.layers[0].c_in}, {model.n}), got {x.shape}")
    conv = rconv if mode == "float_direct" else frconv
    acts = {-1: x}
    taps = Taps([], [], [])
    for l, layer in enumerate(model.layers):
        c = conv(acts[l - 1], layer.weights, layer.bias, model.ring, workers=workers)
        y = c
        for src in model.skips_into(l):
            y = y + acts[src]
        acts[l] = apply_nonlinearity(model, layer.nonlinearity, y)
        taps.conv.append(c)
        taps.pre.append(y)
        taps.act.append(acts[l])
    return acts[len(model.layers) - 1], taps


# ---------------------------------------------------------------- backward

@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_bias: list[np.ndarray]
    d_input: np.ndarray


def nonlinearity_backward(model: ModelGraph, kind: str, pre, d_out):
    if kind == "none":
        return d_out
    if kind == "component_relu":
        return d_out * (pre > 0)
    f = model.directional
    mask = (pre @ f.V.T) > 0
    return ((d_out @ f.U) * mask) @ f.V


def _real_conv_backward(x_real, w_real, d_real):
    """Gradients of a real "same" convolution w.r.t. its input and weights."""
    k = w_real.shape[0]
    r = k // 2
    h, w = d_real.shape[:2]
    xp = np.pad(x_real, ((r, r), (r, r), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    d_w = np.einsum("pqcab,pqo->abco", win, d_real)[::-1, ::-1]
    wf = w_real[::-1, ::-1]
    dxp = np.zeros_like(xp)
    for a in range(k):
        for b in range(k):
            dxp[a:a + h, b:b + w] += d_real @ wf[a, b].T
    return dxp[r:r + h, r:r + w], d_w


def _matrix_conv_backward(spec: RingSpec, x, g, d_z):
    n = spec.n
    x_real = real_expand_features(x)
    w_real = real_expand_weights(g, spec)
    dx_real, dw_real = _real_conv_backward(x_real, w_real, real_expand_features(d_z))
    k, _, ci, co, _ = g.shape
    # W[s, t, ci*n + j, co*n + i] = sum_k M[i, k, j] g_k
    blocks = dw_real.reshape(k, k, ci, n, co, n)  # (s, t, ci, j, co, i)
    d_g = np.einsum("stcjoi,ikj->stcok", blocks, spec.m_tensor.astype(np.float64))
    return real_collapse_features(dx_real, n), d_g


def ring_adjoint(spec: RingSpec, g) -> np.ndarray:
    """Element ``g'`` with ``G(g') = G(g)^T``.

    Identity for the symmetric-G rings (R_I, R_H, R_O4), the conjugate for C
    and H, and the fold ``(g0, g3, g2, g1)`` for 4-point circular convolution.
    """
    a = adjoint_basis_map(spec)
    if a is None:
        raise RingError(f"{spec.name}: G(g)^T is not a ring element")
    return np.asarray(g) @ a.T


def circular_fold(g) -> np.ndarray:
    g = np.asarray(g)
    return np.concatenate([g[..., :1], g[..., :0:-1]], axis=-1)


def quaternion_conjugate(g) -> np.ndarray:
    g = np.asarray(g)
    return np.concatenate([g[..., :1], -g[..., 1:]], axis=-1)


def _ring_conv_backward(spec: RingSpec, x, g, d_z):
    """Same gradients in ring form: ``d_x`` is a ring convolution of ``d_z`` with adjoint weights."""
    g_adj = ring_adjoint(spec, g)
    g_back = np.transpose(g_adj, (0, 1, 3, 2, 4))[::-1, ::-1]
    d_x = rconv(d_z, g_back, None, spec)
    k = g.shape[0]
    r = k // 2
    h, w = x.shape[:2]
    xp = np.pad(x, ((r, r), (r, r), (0, 0), (0, 0)))
    d_g = np.zeros_like(g, dtype=np.float64)
    for s in range(k):
        for t in range(k):
            xs = xp[2 * r - s:2 * r - s + h, 2 * r - t:2 * r - t + w]  # x[p - s + r]
            xm = right_matrix(spec, xs)  # (h, w, ci, i, k)
            d_g[s, t] = np.einsum("pqcik,pqoi->cok", xm, d_z)
    return d_x, d_g


def backward(model: ModelGraph, x, upstream, check: bool = True, tol: float = 1e-8) -> GradientSet:
    """Gradients of ``sum(upstream * output)``.

    The matrix form (real expansion) is returned; with ``check`` the ring
    form is computed as well and both must agree to ``tol`` (relative).
    """
    _, taps = forward(model, x, "float_direct")
    acts = {-1: np.asarray(x, dtype=np.float64)}
    acts.update(dict(enumerate(taps.act)))
    d_act = {l: np.zeros_like(a) for l, a in acts.items()}
    d_act[len(model.layers) - 1] = np.asarray(upstream, dtype=np.float64)
    d_w = [None] * len(model.layers)
    d_b = [None] * len(model.layers)
    for l in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[l]
        d_pre = nonlinearity_backward(model, layer.nonlinearity, taps.pre[l], d_act[l])
        for src in model.skips_into(l):
            d_act[src] = d_act[src] + d_pre
        d_x, d_g = _matrix_conv_backward(model.ring, acts[l - 1], layer.weights, d_pre)
        if check and adjoint_basis_map(model.ring) is not None:
            d_x2, d_g2 = _ring_conv_backward(model.ring, acts[l - 1], layer.weights, d_pre)
            for name, a, b in (("d_input", d_x, d_x2), ("d_weights", d_g, d_g2)):
                scale = max(1.0, float(np.max(np.abs(a))))
                dev = float(np.max(np.abs(a - b))) / scale
                if dev > tol:
                    raise GradientMismatch(f"layer {l} {name}: ring and matrix forms differ by {dev:.3g}")
        d_act[l - 1] = d_act[l - 1] + d_x
        d_w[l] = d_g
        d_b[l] = d_pre.sum(axis=(0, 1))
    return GradientSet(d_w, d_b, d_act[-1])


# ---------------------------------------------------------------- training

def l2_loss(out, target) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean((out - target) ** 2))


def train_toy(model: ModelGraph, dataset, steps: int, learning_rate: float, seed: int = 0,
              batch: int | None = None) -> list[float]:
    """Plain SGD on mean squared error. Updates ``model`` in place and returns the loss per step.

    Each step draws ``batch`` pairs (all pairs by default) with a seeded RNG.
    """
    rng = np.random.default_rng(seed)
    pairs = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)) for a, b in dataset]
    if not pairs:
        raise ValueError("empty dataset")
    trace = []
    for step in range(steps):
        idx = range(len(pairs)) if batch is None else rng.choice(len(pairs), size=batch, replace=False)
        loss = 0.0
        grads_w = [np.zeros_like(l.weights) for l in model.layers]
        grads_b = [np.zeros_like(l.bias) for l in model.layers]
        count = 0
        for i in idx:
            x, t = pairs[i]
            out, _ = forward(model, x, "float_fast" if model.ring.fast is not None else "float_direct")
            loss += l2_loss(out, t)
            grad = backward(model, x, 2.0 * (out - t) / out.size, check=False)
            for l in range(len(model.layers)):
                grads_w[l] += grad.d_weights[l]
                grads_b[l] += grad.d_bias[l]
            count += 1
        loss /= count
        if not np.isfinite(loss):
            raise Divergence(step, trace)
        trace.append(loss)
        for l, layer in enumerate(model.layers):
            layer.weights = layer.weights - learning_rate * grads_w[l] / count
            layer.bias = layer.bias - learning_rate * grads_b[l] / count
    return trace


def split_identity_dataset(n: int, channels: int, size: int, count: int, seed: int = 0):
    """Toy task whose target is spread across tuple components: input ``H t``, target ``t``."""
    from ringcnn.catalog import hadamard

    rng = np.random.default_rng(seed)
    h = hadamard(n) / np.sqrt(n)
    out = []
    for _ in range(count):
        t = rng.uniform(0.0, 1.0, size=(size, size, channels, n))
        out.append((t @ h.T, t))
    return out


def identity_dataset(n: int, channels: int, size: int, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [(x, x.copy()) for x in (rng.uniform(0.0, 1.0, size=(size, size, channels, n)) for _ in range(count))]


def clone(model: ModelGraph) -> ModelGraph:
    return copy.deepcopy(model)


def _activation_pattern(model: ModelGraph, taps: Taps):
    pats = []
    for layer, pre in zip(model.layers, taps.pre):
        if layer.nonlinearity == "component_relu":
            pats.append(pre > 0)
        elif layer.nonlinearity == "directional_relu":
            pats.append(pre @ model.directional.V.T > 0)
    return pats


def finite_difference_check(model: ModelGraph, x, upstream, probes: int = 20, h: float = 1e-5, seed: int = 0,
                            include_bias: bool = True) -> float:
    """Worst relative error between analytic and central-difference gradients of ``sum(upstream * out)``.

    Probes whose ±h perturbation flips any ReLU activation are redrawn,
    since the loss is not differentiable across that kink.
    """
    rng = np.random.default_rng(seed)
    grads = backward(model, x, upstream)
    worst, done, tries = 0.0, 0, 0
    while done < probes:
        tries += 1
        if tries > 50 * probes:
            raise RuntimeError("could not find probes away from ReLU kinks")
        l = int(rng.integers(len(model.layers)))
        use_bias = include_bias and rng.random() < 0.25
        param = model.layers[l].bias if use_bias else model.layers[l].weights
        grad = (grads.d_bias if use_bias else grads.d_weights)[l]
        idx = tuple(int(rng.integers(s)) for s in param.shape)
        old = param[idx]
        vals, pats = [], []
        for d in (h, -h):
            param[idx] = old + d
            out, taps = forward(model, x)
            vals.append(float(np.sum(out * upstream)))
            pats.append(_activation_pattern(model, taps))
        param[idx] = old
        if any(not np.array_equal(a, b) for a, b in zip(*pats)):
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-8))
        done += 1
    return worst
