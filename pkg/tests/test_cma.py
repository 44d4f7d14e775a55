import numpy as np
import pytest

from helpers import max_rel_error, numeric_grad
from snnfuse.cma import (
    FUSION_MODES,
    CmaParams,
    CrossModalAttention,
    FusionConfig,
    build_model,
    class_probabilities,
    cma_forward,
    early_fuse,
    fuse_spatial,
    fuse_temporal,
    late_fuse_avg,
    late_fuse_or,
    middle_fuse,
    reduced_width,
    required_inputs,
    spatial_attention,
    spatial_rate,
    temporal_attention,
    temporal_rate,
)
from snnfuse.neurons import NeuronParams, sigmoid
from snnfuse.nn.model import ModelSpec

TOL = 1e-4
STRATEGIES = [("TA", "SA"), ("TA", "TA"), ("SA", "SA"), ("SA", "TA")]


def spikes(rng, shape, p=0.3):
    return (rng.random(shape) < p).astype(float)


# -- rates ------------------------------------------------------------------------


def test_rates_match_loops():
    s = spikes(np.random.default_rng(0), (4, 3, 5, 6))
    T, C, H, W = s.shape
    rt = [sum(s[t, c, i, j] for c in range(C) for i in range(H) for j in range(W)) / (C * H * W) for t in range(T)]
    np.testing.assert_allclose(temporal_rate(s), rt, rtol=1e-15)
    rs = [[sum(s[t, c, i, j] for t in range(T) for c in range(C)) / (T * C) for j in range(W)] for i in range(H)]
    np.testing.assert_allclose(spatial_rate(s), rs, rtol=1e-15)


def test_spatial_rate_of_bernoulli_field():
    s = spikes(np.random.default_rng(1), (200, 50, 4, 4), p=0.2)
    assert np.all(np.abs(spatial_rate(s) - 0.2) < 0.02)


# -- attention scores ---------------------------------------------------------------


def test_zero_params_give_half():
    for T in (1, 4, 10):
        p = CmaParams.zeros(T)
        r = np.random.default_rng(T).random(T)
        d = temporal_attention(r, p.M1, p.M2)
        assert np.all(d == 0.5)


def test_temporal_scores_in_unit_interval():
    rng = np.random.default_rng(2)
    p = CmaParams.init(8, 4, rng)
    for _ in range(20):
        d = temporal_attention(rng.random(8) * 5, p.M1 * 10, p.M2 * 10)
        assert np.all((d >= 0) & (d <= 1))
    d = temporal_attention(rng.random(8), p.M1, p.M2, literal_order=True)
    assert np.all(d >= 0)


def test_temporal_attention_hand_values():
    M1 = np.array([[1.0], [-1.0]])
    M2 = np.array([[2.0, -1.0]])
    r = np.array([0.8, 0.3])
    z = max(0.8 - 0.3, 0)
    np.testing.assert_allclose(temporal_attention(r, M1, M2), [sigmoid(2 * z), sigmoid(-z)])
    np.testing.assert_allclose(temporal_attention(r, M1, M2, literal_order=True), [2 * sigmoid(0.5), 0.0])


def test_reduced_width():
    assert reduced_width(10, 4) == 5  # r falls back to a divisor
    assert reduced_width(8, 4) == 2
    assert reduced_width(2, 16) == 1
    with pytest.raises(ValueError):
        CmaParams(np.zeros((4, 3)), np.zeros((3, 4)), np.zeros((3, 3)), r=3)


def test_spatial_attention_centre_kernel_is_rate():
    r = np.random.default_rng(3).random((5, 7))
    M3 = np.zeros((3, 3))
    M3[1, 1] = 1.0
    np.testing.assert_array_equal(spatial_attention(r, M3), r)
    assert np.all(spatial_attention(r, -M3) == 0)


def test_spatial_attention_matches_loop():
    rng = np.random.default_rng(4)
    r, M3 = rng.random((5, 6)), rng.normal(size=(3, 3))
    pad = np.pad(r, 1)
    ref = np.array([[max(0.0, sum(pad[i + a, j + b] * M3[a, b] for a in range(3) for b in range(3)))
                     for j in range(6)] for i in range(5)])
    np.testing.assert_allclose(spatial_attention(r, M3), ref, rtol=1e-12, atol=1e-15)


# -- gating and fusion --------------------------------------------------------------------


def test_fuse_identity_zero_and_indicator():
    rng = np.random.default_rng(5)
    s = spikes(rng, (4, 3, 5, 5))
    np.testing.assert_array_equal(fuse_temporal(np.ones(4), s), s)
    np.testing.assert_array_equal(fuse_spatial(np.ones((5, 5)), s), s)
    assert not fuse_temporal(np.zeros(4), s).any()
    ind = np.zeros(4)
    ind[2] = 1
    out = fuse_temporal(ind, s)
    np.testing.assert_array_equal(out[2], s[2])
    assert not np.delete(out, 2, axis=0).any()
    mask = np.zeros((5, 5))
    mask[1, 3] = 1
    out = fuse_spatial(mask, s)
    np.testing.assert_array_equal(out[..., 1, 3], s[..., 1, 3])
    assert out.sum() == s[..., 1, 3].sum()


def test_fuse_is_linear_in_scores():
    rng = np.random.default_rng(6)
    s = rng.random((4, 2, 3, 3))
    a, b = rng.random(4), rng.random(4)
    np.testing.assert_allclose(fuse_temporal(a + 2 * b, s), fuse_temporal(a, s) + 2 * fuse_temporal(b, s))
    with pytest.raises(ValueError):
        fuse_temporal(np.ones(3), s)
    with pytest.raises(ValueError):
        fuse_spatial(np.ones((3, 4)), s)


def test_identity_scores_reduce_to_middle_fusion():
    rng = np.random.default_rng(7)
    s_e, s_f = spikes(rng, (4, 3, 6, 6)), spikes(rng, (4, 3, 6, 6))
    p = CmaParams.init(4, 4, rng)
    out = cma_forward(s_e, s_f, p, scores=(np.ones(4), np.ones((6, 6))))
    assert out.shape == (4, 6, 6, 6)
    assert out.tobytes() == middle_fuse(s_e, s_f).tobytes()


def test_cma_forward_composes_gates():
    rng = np.random.default_rng(8)
    s_e, s_f = spikes(rng, (4, 2, 5, 5)), spikes(rng, (4, 2, 5, 5))
    p = CmaParams.init(4, 2, rng)
    d_e = temporal_attention(temporal_rate(s_e), p.M1, p.M2)
    d_f = spatial_attention(spatial_rate(s_f), p.M3)
    out = cma_forward(s_e, s_f, p)
    np.testing.assert_array_equal(out[:, :2], d_f[None, None] * s_e)
    np.testing.assert_array_equal(out[:, 2:], d_e[:, None, None, None] * s_f)
    with pytest.raises(ValueError):
        cma_forward(s_e, s_f[:, :1], p)


def test_batched_layer_matches_single_sample():
    rng = np.random.default_rng(9)
    layer = CrossModalAttention(4, r=2, rng=rng, dtype=np.float64)
    s_e, s_f = spikes(rng, (4, 3, 2, 5, 5)), spikes(rng, (4, 3, 2, 5, 5))
    out = layer.forward(s_e, s_f)
    ps = layer.params()
    p = CmaParams(ps["event_TA.M1"].value, ps["event_TA.M2"].value, ps["frame_SA.M3"].value, 2)
    for b in range(3):
        np.testing.assert_allclose(out[:, b], cma_forward(s_e[:, b], s_f[:, b], p), rtol=1e-12)


def test_identity_override_matches_middle_fusion_batched():
    rng = np.random.default_rng(10)
    layer = CrossModalAttention(4, rng=rng, dtype=np.float64)
    s_e, s_f = spikes(rng, (4, 2, 3, 5, 5)), spikes(rng, (4, 2, 3, 5, 5))
    layer.override = (np.ones((4, 2)), np.ones((2, 5, 5)))
    assert layer.forward(s_e, s_f).tobytes() == np.concatenate([s_e, s_f], axis=2).tobytes()


def test_early_middle_late_fusion():
    rng = np.random.default_rng(11)
    x_e, x_f = rng.random((4, 2, 6, 6)), rng.random((4, 3, 6, 6))
    ef = early_fuse(x_e, x_f)
    assert ef.shape == (4, 5, 6, 6)
    np.testing.assert_array_equal(ef[:, :2], x_e)
    np.testing.assert_array_equal(ef[:, 2:], x_f)
    with pytest.raises(ValueError):
        early_fuse(x_e, x_f[:, :, :5])
    with pytest.raises(ValueError):
        middle_fuse(x_e, x_f)
    o_e, o_f = spikes(rng, (4, 10)), spikes(rng, (4, 10))
    np.testing.assert_array_equal(late_fuse_or(o_e, o_f), np.logical_or(o_e, o_f).astype(float))
    p_e, p_f = rng.random(5), rng.random(5)
    np.testing.assert_array_equal(late_fuse_avg(p_e, p_f), (p_e + p_f) / 2)
    with pytest.raises(ValueError):
        late_fuse_avg(p_e, p_f[:4])


def test_class_probabilities():
    O = np.array([[1.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(class_probabilities(O), [2 / 3, 0, 1 / 3])
    np.testing.assert_allclose(class_probabilities(np.zeros((2, 4))), np.full(4, 0.25))


def test_fusion_config_validation():
    FusionConfig().validate(2)
    with pytest.raises(ValueError, match="valid: none-event"):
        FusionConfig(mode="XF").validate(2)
    with pytest.raises(ValueError, match="placement"):
        FusionConfig(placement=3).validate(2)
    with pytest.raises(ValueError, match="attention kind"):
        FusionConfig(event_attn="CA").validate(2)
    with pytest.raises(ValueError):
        CrossModalAttention(4, event_attn="XX")
    assert required_inputs("none-frame") == ("frame",)
    assert required_inputs("CMA") == ("event", "frame")


# -- gradients -----------------------------------------------------------------------------


def _gradcheck_layer(layer, s_e, s_f, gy):
    f = lambda: float(np.sum(layer.forward(s_e, s_f, training=True) * gy))
    layer.forward(s_e, s_f, training=True)
    for p in layer.params().values():
        p.zero_grad()
    g_e, g_f = layer.backward(gy)
    for p in layer.params().values():
        assert max_rel_error(p.grad, numeric_grad(f, p.value)) < TOL
    assert max_rel_error(g_e, numeric_grad(f, s_e)) < TOL
    assert max_rel_error(g_f, numeric_grad(f, s_f)) < TOL


@pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: "/".join(s))
@pytest.mark.parametrize("literal", [False, True])
def test_attention_layer_gradcheck(strategy, literal):
    rng = np.random.default_rng(12)
    layer = CrossModalAttention(4, r=2, event_attn=strategy[0], frame_attn=strategy[1],
                                literal_order=literal, rng=rng, dtype=np.float64)
    for p in layer.params().values():  # move SA off its identity start
        p.value += rng.normal(0, 0.2, p.value.shape)
    s_e, s_f = rng.uniform(0.05, 1, (4, 2, 3, 5, 5)), rng.uniform(0.05, 1, (4, 2, 3, 5, 5))
    _gradcheck_layer(layer, s_e, s_f, rng.normal(size=(4, 2, 6, 5, 5)))


def toy_spec():
    return ModelSpec(n_conv=2, n_fc=2, channels=(3, 4), hidden=8, n_classes=2, height=8, width=8,
                     dropout=0.0, dtype="float64", neuron=NeuronParams(soft=True, detach_reset=False))


def _toy_batch(rng, T=4, B=2):
    return {"event": rng.poisson(1.0, (T, B, 2, 8, 8)).astype(float), "frame": rng.random((T, B, 3, 8, 8))}


def _gradcheck_network(model, batch, gy):
    f = lambda: float(np.sum(model.forward(batch, training=True) * gy))
    model.forward(batch, training=True)
    for p in model.params().values():
        p.zero_grad()
    model.backward(gy)
    worst = {name: max_rel_error(p.grad, numeric_grad(f, p.value)) for name, p in model.params().items()}
    assert max(worst.values()) < TOL, {k: v for k, v in worst.items() if v >= TOL}


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_network_soft_gradcheck(mode):
    rng = np.random.default_rng(13)
    model = build_model(toy_spec(), FusionConfig(mode=mode, reduction=2), T=4, rng=14)
    _gradcheck_network(model, _toy_batch(rng), rng.normal(size=(4, 2, 2)))


@pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: "/".join(s))
@pytest.mark.parametrize("placement", [1, 2])
def test_cma_network_soft_gradcheck(strategy, placement):
    rng = np.random.default_rng(15)
    fusion = FusionConfig(mode="CMA", placement=placement, event_attn=strategy[0], frame_attn=strategy[1], reduction=2)
    model = build_model(toy_spec(), fusion, T=4, rng=16)
    _gradcheck_network(model, _toy_batch(rng), rng.normal(size=(4, 2, 2)))


def test_model_input_channels_per_mode():
    spec = toy_spec()
    for mode, n in (("none-event", 2), ("none-frame", 3), ("EF", 5)):
        assert build_model(spec, FusionConfig(mode=mode), 4).net.spec.in_channels == n
    batch = _toy_batch(np.random.default_rng(17))
    for mode in FUSION_MODES:
        out = build_model(spec, FusionConfig(mode=mode), 4).forward(batch)
        assert out.shape == (4, 2, 2)
