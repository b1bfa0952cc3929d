"""Ring-valued feature maps, ring convolutions and the two ReLU kinds.

Array conventions (plain numpy, last axis is the ring component):

* features ``x``: ``(H, W, C, n)``
* weights ``g``: ``(K, K, C_in, C_out, n)``
* bias: ``(C_out, n)``

Convolution is "same"-size with zero padding and ``K`` odd::

    z[p, q, co] = sum_{s, t, ci} g[s, t, ci, co] . x[p - s + K//2, q - t + K//2, ci] + b[co]

Terms are accumulated in ``(s, t, ci)`` row-major order for every output
element, so worker count never changes results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ringcnn.catalog import hadamard, reflected_householder
from ringcnn.ring import RingError, RingSpec, isomorphic_matrix


@dataclass
class MultCounter:
    """Running count of real multiplications."""

    count: int = 0

    def add(self, k: int):
        self.count += int(k)


@dataclass(frozen=True, eq=False)
class DirectionalReLU:
    """``f(y) = U relu(V y)`` applied per ring element."""

    n: int
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("U", "V"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != (self.n, self.n):
                raise RingError(f"{name} must be {self.n}x{self.n}, got {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def f_h(n: int) -> DirectionalReLU:
    """``H relu(H y)`` with the unnormalized Sylvester Hadamard matrix (gain n on the positive cone)."""
    if n not in (2, 4, 8):
        raise ValueError("f_H is defined for n in {2, 4, 8}")
    h = hadamard(n)
    return DirectionalReLU(n, h, h)


def f_o4() -> DirectionalReLU:
    o = reflected_householder()
    return DirectionalReLU(4, o.T, o)


# ---------------------------------------------------------------- shapes

def _check_conv(x, g, bias, n):
    x = np.asarray(x)
    g = np.asarray(g)
    if x.ndim != 4 or x.shape[-1] != n:
        raise RingError(f"features must be (H, W, C, {n}), got {x.shape}")
    if g.ndim != 5 or g.shape[-1] != n or g.shape[0] != g.shape[1]:
        raise RingError(f"weights must be (K, K, C_in, C_out, {n}), got {g.shape}")
    if g.shape[0] % 2 == 0:
        raise RingError(f"kernel size must be odd, got {g.shape[0]}")
    if g.shape[2] != x.shape[2]:
        raise RingError(f"weights expect {g.shape[2]} input channels, features have {x.shape[2]}")
    if bias is not None and np.shape(bias) != (g.shape[3], n):
        raise RingError(f"bias must be ({g.shape[3]}, {n}), got {np.shape(bias)}")


def _pad(x, r):
    return np.pad(x, ((r, r), (r, r)) + ((0, 0),) * (x.ndim - 2))


def _bands(h, workers):
    workers = max(1, min(int(workers), h))
    edges = np.linspace(0, h, workers + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_bands(fn, h, workers):
    bands = _bands(h, workers)
    if len(bands) == 1:
        return fn(*bands[0])
    with ThreadPoolExecutor(len(bands)) as pool:
        parts = list(pool.map(lambda ab: fn(*ab), bands))
    return np.concatenate(parts, axis=0)


def accumulate_products(xt, gt, workers: int = 1):
    """``acc[p, q, co] = sum_{s,t,ci} gt[s,t,ci,co] * xt[p-s+r, q-t+r, ci]`` (element-wise on the last axis).

    Dtype-generic: used with float transforms and with integer codes.
    """
    k = gt.shape[0]
    r = k // 2
    h, w, ci = xt.shape[:3]
    xp = _pad(xt, r)

    def band(a, b):
        acc = np.zeros((b - a, w, gt.shape[3], gt.shape[-1]), dtype=np.result_type(xt, gt))
        for s in range(k):
            for t in range(k):
                rows = xp[a - s + 2 * r:b - s + 2 * r, 2 * r - t:2 * r - t + w]
                for c in range(ci):
                    acc += gt[s, t, c][None, None] * rows[:, :, c][:, :, None, :]
        return acc

    return _run_bands(band, h, workers)


# ---------------------------------------------------------------- convolutions

def rconv(x, g, bias, spec: RingSpec, workers: int = 1, counter: MultCounter | None = None):
    """Direct ring convolution via the isomorphic matrix of every weight element."""
    n = spec.n
    _check_conv(x, g, bias, n)
    x = np.asarray(x, dtype=np.float64)
    blocks = isomorphic_matrix(spec, g)  # (K, K, ci, co, n, n)
    k = blocks.shape[0]
    r = k // 2
    h, w, ci = x.shape[:3]
    xp = _pad(x, r)

    def band(a, b):
        acc = np.zeros((b - a, w, blocks.shape[3], n))
        for s in range(k):
            for t in range(k):
                rows = xp[a - s + 2 * r:b - s + 2 * r, 2 * r - t:2 * r - t + w]
                for c in range(ci):
                    acc += np.einsum("oij,pqj->pqoi", blocks[s, t, c], rows[:, :, c])
        return acc

    z = _run_bands(band, h, workers)
    if counter is not None:
        counter.add(h * w * k * k * ci * blocks.shape[3] * n * n)
    return z if bias is None else z + np.asarray(bias, dtype=np.float64)


def transform_weights(spec: RingSpec, g) -> np.ndarray:
    """Cached ``g~ = T_g g`` for every weight element, ``(K, K, ci, co, m)``."""
    if spec.fast is None:
        raise RingError(f"{spec.name}: no fast algorithm")
    return np.asarray(g, dtype=np.float64) @ spec.fast.t_g.T


def frconv(x, g, bias, spec: RingSpec, g_tilde=None, workers: int = 1, counter: MultCounter | None = None):
    """Fast ring convolution: transform inputs once, m-tuple products, ``T_z`` once per output."""
    if spec.fast is None:
        raise RingError(f"{spec.name}: frconv needs a fast algorithm")
    _check_conv(x, g, bias, spec.n)
    alg = spec.fast
    gt = transform_weights(spec, g) if g_tilde is None else np.asarray(g_tilde)
    xt = np.asarray(x, dtype=np.float64) @ alg.t_x.T
    acc = accumulate_products(xt, gt, workers)
    if counter is not None:
        k, _, ci, co, m = gt.shape
        counter.add(x.shape[0] * x.shape[1] * k * k * ci * co * m)
    z = acc @ alg.t_z.T
    return z if bias is None else z + np.asarray(bias, dtype=np.float64)


# ---------------------------------------------------------------- real expansion

def real_expand_features(x) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def real_collapse_features(xr, n: int) -> np.ndarray:
    xr = np.asarray(xr)
    return xr.reshape(xr.shape[:-1] + (xr.shape[-1] // n, n))


def real_expand_weights(g, spec: RingSpec) -> np.ndarray:
    """Real conv weights ``(K, K, n*ci, n*co)`` with ``W[s, t, ci*n + j, co*n + i] = G(g[s,t,ci,co])[i, j]``."""
    blocks = isomorphic_matrix(spec, g)  # (K, K, ci, co, i, j)
    k, _, ci, co, n, _ = blocks.shape
    return np.transpose(blocks, (0, 1, 2, 5, 3, 4)).reshape(k, k, ci * n, co * n)


def real_expand_bias(bias) -> np.ndarray:
    return np.asarray(bias, dtype=np.float64).reshape(-1)


def real_conv2d(x, w, bias=None):
    """Plain real "same" convolution ``(H, W, C_in) * (K, K, C_in, C_out)`` via sliding windows."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    k = w.shape[0]
    r = k // 2
    win = np.lib.stride_tricks.sliding_window_view(_pad(x, r), (k, k), axis=(0, 1))  # (H, W, C, k, k)
    out = np.einsum("pqcab,abco->pqo", win, w[::-1, ::-1])
    return out if bias is None else out + bias


# ---------------------------------------------------------------- non-linearities

def relu_cw(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_dir(x, f: DirectionalReLU) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != f.n:
        raise RingError(f"directional ReLU is {f.n}-dimensional, features have n={x.shape[-1]}")
    return np.maximum(x @ f.V.T, 0.0) @ f.U.T


def init_weights(k: int, c_in: int, c_out: int, n: int, rng) -> np.ndarray:
    """Uniform weights scaled by ``1/sqrt(K^2 c_in n)`` (the real fan-in)."""
    bound = 1.0 / np.sqrt(k * k * c_in * n)
    return rng.uniform(-bound, bound, size=(k, k, c_in, c_out, n))
