import numpy as np
import pytest

from ringcnn.catalog import CATALOG_NAMES, get_ring
from ringcnn.model import (
    Divergence,
    GradientMismatch,
    LayerConfig,
    ModelGraph,
    backward,
    build_model,
    circular_fold,
    convert_real_config,
    finite_difference_check,
    forward,
    identity_dataset,
    quaternion_conjugate,
    ring_adjoint,
    train_toy,
)
from ringcnn.ring import RingError, isomorphic_matrix, multiply, unity
from ringcnn.tensor import (
    real_collapse_features,
    real_conv2d,
    real_expand_bias,
    real_expand_features,
    real_expand_weights,
    relu_dir,
)


def test_convert_real_config():
    model, rep = convert_real_config([32, 32, 32], [3, 3], 4, get_ring("R_H4"))
    assert [l.c_in for l in model.layers] == [8, 8]
    assert rep.weight_ratio == 4.0
    assert model.real_weight_count() == 4 * model.weight_count()
    with pytest.raises(RingError):
        convert_real_config([3, 8], [3], 2, get_ring("C"))


def test_convert_degenerate_n1():
    ring1 = __import__("ringcnn.ring", fromlist=["RingSpec"]).RingSpec("R", np.ones((1, 1, 1)))
    model, rep = convert_real_config([3, 5, 2], [3, 1], 1, ring1)
    assert [(l.c_in, l.c_out) for l in model.layers] == [(3, 5), (5, 2)]
    assert rep.weight_ratio == 1.0


def test_identity_layer_forward(rng):
    spec = get_ring("R_O4")
    w = np.zeros((1, 1, 1, 1, 4))
    w[0, 0, 0, 0] = unity(spec)
    model = ModelGraph(spec, [LayerConfig("conv1x1", 1, 1, "none", w, np.zeros((1, 4)))])
    x = rng.standard_normal((4, 4, 1, 4))
    assert np.array_equal(forward(model, x)[0], x)


def test_model_validation():
    spec = get_ring("C")
    with pytest.raises(RingError):
        build_model(spec, [1, 2, 3], skips=[(0, 1)])  # 2 vs 3 channels
    with pytest.raises(RingError):
        build_model(spec, [1, 1, 1], skips=[(1, 0)])
    model = build_model(spec, [1, 1])
    with pytest.raises(RingError):
        forward(model, np.zeros((4, 4, 2, 2)))
    with pytest.raises(RingError):
        forward(model, np.zeros((4, 4, 1, 2)), "fixed")
    with pytest.raises(RingError):
        forward(model, np.zeros((4, 4, 1, 2)), "bogus")


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_fast_matches_direct(name, rng):
    spec = get_ring(name)
    model = build_model(spec, [2, 3, 3, 2], nonlinearity="component_relu", seed=2)
    x = rng.standard_normal((6, 6, 2, spec.n))
    a, _ = forward(model, x, "float_direct")
    b, _ = forward(model, x, "float_fast")
    assert np.max(np.abs(a - b)) < 1e-9


def test_residual_directional_tap(rng):
    model = build_model(get_ring("R_I4"), [2, 2, 2], nonlinearity="directional_relu", skips=[(-1, 0)], seed=1)
    x = rng.standard_normal((5, 5, 2, 4))
    _, taps = forward(model, x)
    assert np.array_equal(taps.pre[0], taps.conv[0] + x)
    assert np.array_equal(taps.act[0], relu_dir(taps.conv[0] + x, model.directional))


def _real_forward(model, x):
    """Reference: the real-expanded network with the same graph."""
    n = model.n
    acts = {-1: real_expand_features(x)}
    for l, layer in enumerate(model.layers):
        y = real_conv2d(acts[l - 1], real_expand_weights(layer.weights, model.ring), real_expand_bias(layer.bias))
        for src in model.skips_into(l):
            y = y + acts[src]
        ring_y = real_collapse_features(y, n)
        if layer.nonlinearity == "component_relu":
            ring_y = np.maximum(ring_y, 0)
        elif layer.nonlinearity == "directional_relu":
            ring_y = relu_dir(ring_y, model.directional)
        acts[l] = real_expand_features(ring_y)
    return acts[len(model.layers) - 1]


@pytest.mark.parametrize("name", ["R_O4", "C", "H", "R_H4-II"])
def test_expansion_equivalence_with_skips(name, rng):
    spec = get_ring(name)
    nl = "directional_relu" if spec.n in (2, 4) else "component_relu"
    model = build_model(spec, [2, 2, 2, 2], nonlinearity=nl, skips=[(-1, 1), (0, 2)], seed=4)
    x = rng.standard_normal((6, 7, 2, spec.n))
    out, _ = forward(model, x)
    assert np.max(np.abs(real_expand_features(out) - _real_forward(model, x))) < 1e-8


def test_linear_layer_gradient_is_transpose(rng):
    spec = get_ring("C")
    g = rng.standard_normal((1, 1, 1, 1, 2))
    model = ModelGraph(spec, [LayerConfig("conv1x1", 1, 1, "none", g, np.zeros((1, 2)))])
    x = rng.standard_normal((3, 3, 1, 2))
    up = rng.standard_normal((3, 3, 1, 2))
    grad = backward(model, x, up)
    gt = isomorphic_matrix(spec, g[0, 0, 0, 0]).T
    assert np.allclose(grad.d_input, up @ gt.T)


def test_identity_ring_gradient_is_product(rng):
    spec = get_ring("R_I2")
    g = rng.standard_normal((1, 1, 1, 1, 2))
    model = ModelGraph(spec, [LayerConfig("conv1x1", 1, 1, "none", g, np.zeros((1, 2)))])
    x = rng.standard_normal((3, 3, 1, 2))
    up = rng.standard_normal((3, 3, 1, 2))
    assert np.allclose(backward(model, x, up).d_input, multiply(spec, g[0, 0, 0, 0], up))


def test_named_adjoints(rng):
    g = rng.standard_normal((5, 4))
    assert np.allclose(ring_adjoint(get_ring("R_H4-I"), g), circular_fold(g))
    assert np.allclose(ring_adjoint(get_ring("H"), g), quaternion_conjugate(g))
    assert np.allclose(ring_adjoint(get_ring("C"), g[:, :2]), quaternion_conjugate(g[:, :2]))
    for name in ("R_I4", "R_H4", "R_O4"):
        assert np.allclose(ring_adjoint(get_ring(name), g), g)


def test_gradient_forms_agree_and_mismatch_detected(rng, monkeypatch):
    model = build_model(get_ring("H"), [1, 2, 1], nonlinearity="directional_relu", seed=0)
    x = rng.standard_normal((4, 4, 1, 4))
    up = rng.standard_normal((4, 4, 1, 4))
    backward(model, x, up)
    import ringcnn.model as m
    monkeypatch.setattr(m, "ring_adjoint", lambda spec, g: np.asarray(g))  # wrong for H
    with pytest.raises(GradientMismatch):
        backward(model, x, up)


@pytest.mark.parametrize("name", ["R_I4", "C", "H", "R_O4-II"])
def test_finite_differences(name, rng):
    spec = get_ring(name)
    model = build_model(spec, [1, 2, 2, 1], nonlinearity="directional_relu", skips=[(0, 1)], seed=3)
    x = rng.standard_normal((5, 4, 1, spec.n))
    up = rng.standard_normal((5, 4, 1, spec.n))
    assert finite_difference_check(model, x, up, probes=20) < 1e-4


def test_train_zero_lr_constant():
    model = build_model(get_ring("R_I2"), [1, 1, 1], nonlinearity="directional_relu", seed=0)
    trace = train_toy(model, identity_dataset(2, 1, 4, 1), 5, 0.0)
    assert len(set(trace)) == 1


def test_train_deterministic():
    data = identity_dataset(2, 1, 4, 3, seed=1)
    traces = []
    for _ in range(2):
        model = build_model(get_ring("C"), [1, 1, 1], nonlinearity="component_relu", seed=0)
        traces.append(train_toy(model, data, 10, 0.1, seed=5, batch=2))
    assert traces[0] == traces[1]


def test_train_divergence_reported():
    model = build_model(get_ring("R_I2"), [1, 2, 1], nonlinearity="component_relu", seed=0)
    with pytest.raises(Divergence) as err:
        train_toy(model, identity_dataset(2, 1, 4, 1), 200, 1e6)
    assert err.value.step >= 1


def test_identity_toy_regression():
    """3-layer R_I4 + f_H model on the identity task: final loss < 1% of initial."""
    model = build_model(get_ring("R_I4"), [1, 2, 2, 1], kinds=["conv3x3", "conv1x1", "conv1x1"],
                        nonlinearity="directional_relu", seed=0)
    trace = train_toy(model, identity_dataset(4, 1, 6, 2, seed=0), 2000, 0.1, seed=0)
    assert trace[-1] < 0.01 * trace[0]
