"""Net-map tests: LSTM against a scalar reference, encoder/decoder shape
inversion, purity, and gradient checks."""

import math

import numpy as np
import pytest

from gtmlab import engine as E
from gtmlab import nets
from gtmlab.engine import Tensor, anchored

F64 = np.float64


@pytest.fixture(autouse=True)
def f64():
    E.set_default_dtype(F64)
    yield
    E.set_default_dtype(np.float32)


def rng_for(seed=0):
    return np.random.default_rng(seed)


# -- LSTM -----------------------------------------------------------------------


def make_cell(n_in, n_h, seed=0, forget_bias=1.0):
    return nets.LstmCell(n_in, n_h, rng_for(seed), F64, forget_bias=forget_bias)


def test_lstm_zero_weights_zero_output():
    cell = make_cell(3, 4)
    for _, p in cell.parameters():
        p.data[:] = 0.0
    state = cell.init_state(2, F64)
    state, h = cell(state, Tensor(rng_for(1).standard_normal((2, 3))))
    assert np.allclose(h.data, 0.0) and np.allclose(state.c.data, 0.0)


def test_lstm_saturated_forget_gate_preserves_cell():
    cell = make_cell(2, 3)
    for name, p in cell.parameters():
        p.data[:] = 0.0
    cell.b.data[3:6] = 20.0  # forget gate slice; sigmoid(20) ~ 1
    state = nets.LstmState(h=Tensor(np.zeros((1, 3))), c=Tensor(np.ones((1, 3)) * 0.7))
    new_state, _ = cell(state, Tensor(np.zeros((1, 2))))
    assert np.max(np.abs(new_state.c.data - 0.7)) < 1e-8


def scalar_lstm_reference(wx, wh, b, h, c, x):
    """Independent H=1 LSTM in plain floats (gate order i, f, g, o)."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    pre = [x * wx[k] + h * wh[k] + b[k] for k in range(4)]
    i, f, g, o = sig(pre[0]), sig(pre[1]), math.tanh(pre[2]), sig(pre[3])
    c_new = f * c + i * g
    h_new = o * math.tanh(c_new)
    return h_new, c_new


def test_lstm_matches_scalar_reference():
    cell = make_cell(1, 1, seed=5)
    rng = rng_for(6)
    h, c = 0.0, 0.0
    state = cell.init_state(1, F64)
    for _ in range(8):
        x = float(rng.standard_normal())
        state, hh = cell(state, Tensor(np.array([[x]])))
        h, c = scalar_lstm_reference(cell.w_x.data[0], cell.w_h.data[0],
                                     cell.b.data, h, c, x)
        assert abs(float(hh.data[0, 0]) - h) < 1e-12
        assert abs(float(state.c.data[0, 0]) - c) < 1e-12


def test_lstm_gradient():
    cell = make_cell(3, 4, seed=2)
    x = Tensor(rng_for(3).standard_normal((2, 3)))
    target = rng_for(4).uniform(0.5, 1.5, (2, 4))

    def fn():
        state = cell.init_state(2, F64)
        state, h = cell(state, x)
        state, h = cell(state, x)
        return E.sum_(E.mul(h, Tensor(target)))

    err = E.grad_check(fn, [p for _, p in cell.parameters()], h=1e-5)
    assert err < 1e-6


def test_lstm_width_mismatch():
    cell = make_cell(3, 4)
    with pytest.raises(E.ShapeError):
        cell(cell.init_state(1, F64), Tensor(np.zeros((1, 5))))


# -- MLP ---------------------------------------------------------------------------


def test_mlp_identity_passthrough():
    spec = nets.MlpSpec(widths=[3], activations=["identity"])
    mlp = nets.Mlp(3, spec, rng_for(0), F64)
    mlp.layers[0].w.data = np.eye(3)
    mlp.layers[0].b.data[:] = 0.0
    x = rng_for(1).standard_normal((4, 3))
    assert np.allclose(mlp(Tensor(x)).data, x)


def test_mlp_zero_input_gives_activated_bias():
    spec = nets.MlpSpec(widths=[4], activations=["tanh"])
    mlp = nets.Mlp(2, spec, rng_for(0), F64)
    mlp.layers[0].b.data[:] = [0.5, -0.5, 1.0, 0.0]
    out = mlp(Tensor(np.zeros((1, 2))))
    assert np.allclose(out.data, np.tanh([0.5, -0.5, 1.0, 0.0]))


def test_mlp_gradient():
    spec = nets.MlpSpec(widths=[6, 3], activations=["tanh", "identity"])
    mlp = nets.Mlp(4, spec, rng_for(7), F64)
    x = Tensor(rng_for(8).standard_normal((3, 4)))
    w = Tensor(rng_for(9).uniform(0.5, 1.5, (3, 3)))
    fn = lambda: E.sum_(E.mul(mlp(x), w))
    assert E.grad_check(fn, [p for _, p in mlp.parameters()], h=1e-5) < 1e-5


def test_mlp_spec_validation():
    with pytest.raises(ValueError):
        nets.MlpSpec(widths=[])
    with pytest.raises(ValueError):
        nets.MlpSpec(widths=[3], activations=["bogus"])


# -- encoder / decoder ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["small-conv", "mlp"])
@pytest.mark.parametrize("dims", [(1, 8, 8), (1, 6, 6), (2, 8, 8)])
def test_decoder_inverts_encoder_dims(kind, dims):
    spec = nets.EncoderSpec(kind=kind, image_dims=dims, feature_width=10)
    enc = nets.Encoder(spec, rng_for(0), F64)
    dec = nets.Decoder(spec, n_latent=5, rng=rng_for(1), dtype=F64)
    x = Tensor(rng_for(2).uniform(0, 1, (3,) + dims))
    feat = enc(x)
    assert feat.shape == (3, 10)
    logits = dec(Tensor(rng_for(3).standard_normal((3, 5))))
    assert logits.shape == x.shape


def test_encoder_zero_image_zero_features():
    spec = nets.EncoderSpec(image_dims=(1, 8, 8), feature_width=6)
    enc = nets.Encoder(spec, rng_for(0), F64)
    out = enc(Tensor(np.zeros((2, 1, 8, 8))))
    assert np.allclose(out.data, 0.0)  # biases start at zero; conv stack is linear


def test_encoder_deterministic():
    spec = nets.EncoderSpec(image_dims=(1, 8, 8), feature_width=6)
    enc = nets.Encoder(spec, rng_for(0), F64)
    x = rng_for(1).uniform(0, 1, (2, 1, 8, 8))
    a = enc(Tensor(x.copy())).data
    b = enc(Tensor(x.copy())).data
    assert np.array_equal(a, b)


def test_decoder_zero_everything_gives_half_mean():
    spec = nets.EncoderSpec(image_dims=(1, 8, 8), feature_width=6)
    dec = nets.Decoder(spec, n_latent=4, rng=rng_for(0), dtype=F64)
    for _, p in dec.parameters():
        p.data[:] = 0.0
    logits = dec(Tensor(np.zeros((2, 4))))
    assert np.allclose(logits.data, 0.0)
    mean = 1.0 / (1.0 + np.exp(-logits.data))
    assert np.allclose(mean, 0.5)


def test_encoder_gradient_wrt_pixels():
    spec = nets.EncoderSpec(image_dims=(1, 6, 6), feature_width=4)
    enc = nets.Encoder(spec, rng_for(4), F64)
    x = Tensor(rng_for(5).uniform(0.2, 0.8, (2, 1, 6, 6)), requires_grad=True)
    w = Tensor(rng_for(6).uniform(0.5, 1.5, (2, 4)))
    fn = lambda: E.sum_(E.mul(enc(x), w))
    assert E.grad_check(fn, [x], h=1e-5) < 1e-5


def test_decode_encode_pipeline_gradient():
    spec = nets.EncoderSpec(image_dims=(1, 6, 6), feature_width=4)
    enc = nets.Encoder(spec, rng_for(7), F64)
    dec = nets.Decoder(spec, n_latent=4, rng=rng_for(8), dtype=F64)
    x = Tensor(rng_for(9).uniform(0.2, 0.8, (2, 1, 6, 6)))
    params = [p for _, p in enc.parameters()] + [p for _, p in dec.parameters()]
    w = Tensor(rng_for(10).uniform(0.5, 1.5, (2, 1, 6, 6)))
    body = lambda: E.sum_(E.mul(E.sigmoid(dec(enc(x))), w))
    assert E.grad_check(anchored(body, params, rng_for(11)), params, h=1e-5) < 1e-4


def test_decoder_extra_context_width_check():
    spec = nets.EncoderSpec(image_dims=(1, 8, 8), feature_width=6)
    dec = nets.Decoder(spec, n_latent=4, rng=rng_for(0), dtype=F64, n_extra=3)
    with pytest.raises(E.ShapeError):
        dec(Tensor(np.zeros((1, 4))))  # missing the extra context
    out = dec(Tensor(np.zeros((1, 4))), extra=Tensor(np.zeros((1, 3))))
    assert out.shape == (1, 1, 8, 8)
