"""Neural building blocks: linear/MLP heads, an LSTM cell, and the
image encoder/decoder pair used by the sequence models.

All modules expose ``parameters() -> list[(name, Tensor)]`` in a fixed order
(checkpoint manifests rely on it) and are pure: outputs depend only on inputs
and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gtmlab import engine as E
from gtmlab.engine import ShapeError, Tensor

ACTIVATIONS = {
    "tanh": E.tanh,
    "relu": E.relu,
    "sigmoid": E.sigmoid,
    "identity": lambda x: x,
}


def uniform_init(rng, shape, fan_in, dtype, scale=None):
    """uniform(-s, s) with s = scale or 1/sqrt(fan_in)."""
    s = scale if scale is not None else 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-s, s, shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear:
    def __init__(self, n_in, n_out, rng, dtype, scale=None):
        self.n_in, self.n_out = n_in, n_out
        self.w = uniform_init(rng, (n_in, n_out), n_in, dtype, scale)
        self.b = zeros_param((n_out,), dtype)

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear: input width {x.shape[-1]} != {self.n_in}")
        return E.add(E.matmul(x, self.w), self.b)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]


@dataclass
class MlpSpec:
    """Feedforward stack: layer output widths and per-layer activations."""

    widths: list[int]
    activations: list[str] = field(default_factory=list)
    init_scale: float | None = None

    def __post_init__(self):
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError(f"MlpSpec needs positive widths, got {self.widths}")
        if not self.activations:
            self.activations = ["tanh"] * (len(self.widths) - 1) + ["identity"]
        if len(self.activations) != len(self.widths):
            raise ValueError("MlpSpec: one activation per layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation '{a}'")


class Mlp:
    def __init__(self, n_in, spec: MlpSpec, rng, dtype):
        self.n_in = n_in
        self.spec = spec
        self.layers = []
        prev = n_in
        for width in spec.widths:
            self.layers.append(Linear(prev, width, rng, dtype, spec.init_scale))
            prev = width
        self.n_out = prev

    def __call__(self, x):
        for layer, act in zip(self.layers, self.spec.activations):
            x = ACTIVATIONS[act](layer(x))
        return x

    def parameters(self):
        return [(f"l{i}.{n}", p) for i, layer in enumerate(self.layers)
                for n, p in layer.parameters()]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


class LstmCell:
    """Standard LSTM cell (gates i, f, g, o); forget-gate bias starts at +1."""

    def __init__(self, n_in, n_hidden, rng, dtype, forget_bias=1.0):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_x = uniform_init(rng, (n_in, 4 * n_hidden), n_in, dtype)
        self.w_h = uniform_init(rng, (n_hidden, 4 * n_hidden), n_hidden, dtype)
        b = np.zeros(4 * n_hidden, dtype=dtype)
        b[n_hidden:2 * n_hidden] = forget_bias
        self.b = Tensor(b, requires_grad=True)

    def init_state(self, batch, dtype):
        z = lambda: Tensor(np.zeros((batch, self.n_hidden), dtype=dtype))
        return LstmState(h=z(), c=z())

    def __call__(self, state, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"lstm: input width {x.shape[-1]} != {self.n_in}")
        gates = E.add(E.add(E.matmul(x, self.w_x), E.matmul(state.h, self.w_h)), self.b)
        nh = self.n_hidden
        i = E.sigmoid(E.narrow(gates, -1, 0, nh))
        f = E.sigmoid(E.narrow(gates, -1, nh, nh))
        g = E.tanh(E.narrow(gates, -1, 2 * nh, nh))
        o = E.sigmoid(E.narrow(gates, -1, 3 * nh, nh))
        c = E.add(E.mul(f, state.c), E.mul(i, g))
        h = E.mul(o, E.tanh(c))
        return LstmState(h=h, c=c), h

    def parameters(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("b", self.b)]


# -- encoder / decoder -----------------------------------------------------------

DEFAULT_CONV_TABLE = ((8, 3, 2, 1), (16, 3, 2, 1))  # (channels, kernel, stride, pad)


@dataclass
class EncoderSpec:
    """Image-to-feature map. kind 'small-conv' halves H,W per conv layer."""

    kind: str = "small-conv"           # 'small-conv' | 'mlp'
    image_dims: tuple = (1, 8, 8)      # (C, H, W)
    feature_width: int = 64
    conv_table: tuple = DEFAULT_CONV_TABLE
    mlp_widths: tuple = (64,)

    def __post_init__(self):
        if self.kind not in ("small-conv", "mlp"):
            raise ValueError(f"unknown encoder kind '{self.kind}'")
        c, h, w = self.image_dims
        floor = 4 if self.kind == "small-conv" else 1
        if c <= 0 or h < floor or w < floor:
            raise ValueError(f"image dims too small for {self.kind}: {self.image_dims}")


def _conv_sizes(h, w, table):
    sizes = [(h, w)]
    for _, k, s, p in table:
        h = (h + 2 * p - k) // s + 1
        w = (w + 2 * p - k) // s + 1
        if h <= 0 or w <= 0:
            raise ValueError("conv table collapses the image to nothing")
        sizes.append((h, w))
    return sizes


class Encoder:
    """Deterministic feature map from an image batch (B,C,H,W) to (B,F)."""

    def __init__(self, spec: EncoderSpec, rng, dtype):
        self.spec = spec
        c, h, w = spec.image_dims
        self.convs = []
        if spec.kind == "small-conv":
            self.sizes = _conv_sizes(h, w, spec.conv_table)
            prev_c = c
            for ch, k, s, p in spec.conv_table:
                fan_in = prev_c * k * k
                self.convs.append((
                    uniform_init(rng, (ch, prev_c, k, k), fan_in, dtype),
                    zeros_param((ch,), dtype), s, p))
                prev_c = ch
            fh, fw = self.sizes[-1]
            flat = prev_c * fh * fw
        else:
            self.hidden = []
            prev = c * h * w
            for wd in spec.mlp_widths:
                self.hidden.append(Linear(prev, wd, rng, dtype))
                prev = wd
            flat = prev
        self.out = Linear(flat, spec.feature_width, rng, dtype)

    def __call__(self, x):
        c, h, w = self.spec.image_dims
        if x.shape[1:] != (c, h, w):
            raise ShapeError(f"encode: image dims {x.shape[1:]} != {(c, h, w)}")
        if self.spec.kind == "small-conv":
            out = x
            for wt, b, s, p in self.convs:
                out = E.relu(E.add(E.conv2d(out, wt, stride=s, pad=p),
                                   E.reshape(b, (1, -1, 1, 1))))
            out = E.reshape(out, (x.shape[0], -1))
        else:
            out = E.reshape(x, (x.shape[0], -1))
            for layer in self.hidden:
                out = E.relu(layer(out))
        return self.out(out)

    def parameters(self):
        ps = []
        if self.spec.kind == "small-conv":
            for i, (wt, b, _, _) in enumerate(self.convs):
                ps += [(f"conv{i}.w", wt), (f"conv{i}.b", b)]
        else:
            for i, layer in enumerate(self.hidden):
                ps += [(f"h{i}.{n}", p) for n, p in layer.parameters()]
        ps += [(f"out.{n}", p) for n, p in self.out.parameters()]
        return ps


class Decoder:
    """Latent (plus optional extra context) to per-pixel Bernoulli logits.

    Mirrors the encoder: transposed convs walk the recorded conv sizes back up,
    so output dims always equal the encoder's input dims.
    """

    def __init__(self, spec: EncoderSpec, n_latent, rng, dtype, n_extra=0):
        self.spec = spec
        self.n_in = n_latent + n_extra
        c, h, w = spec.image_dims
        if spec.kind == "small-conv":
            self.sizes = _conv_sizes(h, w, spec.conv_table)
            chans = [c] + [row[0] for row in spec.conv_table]
            fh, fw = self.sizes[-1]
            self.seed_shape = (chans[-1], fh, fw)
            self.fc = Linear(self.n_in, chans[-1] * fh * fw, rng, dtype)
            self.deconvs = []
            # walk back: layer i maps sizes[i+1] -> sizes[i]
            for i in reversed(range(len(spec.conv_table))):
                ch_out, k, s, p = spec.conv_table[i][0], spec.conv_table[i][1], \
                    spec.conv_table[i][2], spec.conv_table[i][3]
                c_in, c_out = chans[i + 1], chans[i]
                th, tw = self.sizes[i]
                sh, sw = self.sizes[i + 1]
                op_h = th - ((sh - 1) * s + k - 2 * p)
                op_w = tw - ((sw - 1) * s + k - 2 * p)
                if op_h != op_w:
                    raise ValueError("non-square output padding unsupported")
                fan_in = c_in * k * k
                self.deconvs.append((
                    uniform_init(rng, (c_in, c_out, k, k), fan_in, dtype),
                    zeros_param((c_out,), dtype), s, p, op_h))
        else:
            widths = list(spec.mlp_widths)
            self.hidden = []
            prev = self.n_in
            for wd in widths:
                self.hidden.append(Linear(prev, wd, rng, dtype))
                prev = wd
            self.fc = Linear(prev, c * h * w, rng, dtype)

    def __call__(self, z, extra=None):
        x = z if extra is None else E.concat([z, extra], axis=-1)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"decode: input width {x.shape[-1]} != {self.n_in}")
        c, h, w = self.spec.image_dims
        batch = x.shape[0]
        if self.spec.kind == "small-conv":
            out = E.reshape(E.relu(self.fc(x)), (batch,) + self.seed_shape)
            for i, (wt, b, s, p, op) in enumerate(self.deconvs):
                out = E.add(E.conv2d_transpose(out, wt, stride=s, pad=p, out_pad=op),
                            E.reshape(b, (1, -1, 1, 1)))
                if i < len(self.deconvs) - 1:
                    out = E.relu(out)
            return out
        out = x
        for layer in self.hidden:
            out = E.relu(layer(out))
        return E.reshape(self.fc(out), (batch, c, h, w))

    def parameters(self):
        ps = [(f"fc.{n}", p) for n, p in self.fc.parameters()]
        if self.spec.kind == "small-conv":
            for i, (wt, b, _, _, _) in enumerate(self.deconvs):
                ps += [(f"deconv{i}.w", wt), (f"deconv{i}.b", b)]
        else:
            for i, layer in enumerate(self.hidden):
                ps += [(f"h{i}.{n}", p) for n, p in layer.parameters()]
        return ps
