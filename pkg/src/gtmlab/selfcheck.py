"""Property suites shared by the CLI (`selftest`, `gradcheck`) and the test
suite. Each check returns a CheckResult; suites are deterministic given their
sizes, and every expected value is produced by an independent route (finite
differences, Monte-Carlo sampling, straight-line reimplementation, or
hand-tracked reference state)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from gtmlab import engine as E
from gtmlab import memory as M
from gtmlab import tasks as task_mod
from gtmlab.engine import Tensor, anchored, grad_check
from gtmlab.model import ModelConfig, TemporalVae, gaussian_kl
from gtmlab.nets import Encoder, EncoderSpec, LstmCell, Mlp, MlpSpec
from gtmlab.seeds import seeded_rng
from gtmlab.tasks import TaskConfig

F64 = np.float64

PRIMITIVE_TOL = 1e-5
MAP_TOL = 1e-4
LSTM_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name=name, passed=passed, detail=detail,
                       seconds=time.perf_counter() - t0)


# -- chi-square without scipy -----------------------------------------------------------


def _gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x) (series / continued fraction)."""
    if x < 0 or a <= 0:
        raise ValueError("gammainc domain")
    if x == 0:
        return 1.0
    gln = math.lgamma(a)
    if x < a + 1.0:
        # lower series, then complement
        term = 1.0 / a
        total = term
        n = a
        for _ in range(500):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-15:
                break
        return 1.0 - total * math.exp(-x + a * math.log(x) - gln)
    # Lentz continued fraction for the upper tail
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h * math.exp(-x + a * math.log(x) - gln)


def chi_square_pvalue(counts, expected=None):
    """p-value of the one-sample chi-square test against `expected` (uniform
    by default)."""
    counts = np.asarray(counts, dtype=np.float64)
    if expected is None:
        expected = np.full_like(counts, counts.sum() / counts.size)
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = counts.size - 1
    return _gammainc_upper(dof / 2.0, stat / 2.0)


# -- gradient suite -------------------------------------------------------------------------


def _moderate(rng, shape, positive=False):
    x = rng.uniform(0.3, 1.8, shape)
    if not positive:
        x *= rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True)


def _wsum(rng, make_out):
    shape = make_out().shape
    w = Tensor(rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape))
    return lambda: E.sum_(E.mul(make_out(), w))


def _rd(rng, lo, hi):
    return int(rng.integers(lo, hi + 1))


def primitive_cases():
    """name -> builder(rng) -> (params, loss_fn); shapes drawn per call."""

    def binary(op):
        def build(rng):
            shape = (_rd(rng, 1, 4), _rd(rng, 2, 6))
            a, b = _moderate(rng, shape), _moderate(rng, shape)
            return [a, b], _wsum(rng, lambda: op(a, b))
        return build

    def broadcast(op):
        def build(rng):
            n, m = _rd(rng, 2, 4), _rd(rng, 2, 6)
            a, b = _moderate(rng, (n, m)), _moderate(rng, (m,))
            return [a, b], _wsum(rng, lambda: op(a, b))
        return build

    def unary(op, positive=False):
        def build(rng):
            a = _moderate(rng, (_rd(rng, 1, 4), _rd(rng, 2, 6)), positive=positive)
            return [a], _wsum(rng, lambda: op(a))
        return build

    def matmul(rng):
        n, km, m = _rd(rng, 1, 4), _rd(rng, 2, 5), _rd(rng, 1, 4)
        a, b = _moderate(rng, (n, km)), _moderate(rng, (km, m))
        return [a, b], _wsum(rng, lambda: E.matmul(a, b))

    def bmm(rng):
        bt, n, km, m = _rd(rng, 1, 3), _rd(rng, 1, 4), _rd(rng, 2, 4), _rd(rng, 1, 4)
        a, b = _moderate(rng, (bt, n, km)), _moderate(rng, (bt, km, m))
        return [a, b], _wsum(rng, lambda: E.bmm(a, b))

    def concat(rng):
        n = _rd(rng, 1, 4)
        a, b = _moderate(rng, (n, _rd(rng, 1, 4))), _moderate(rng, (n, _rd(rng, 1, 4)))
        return [a, b], _wsum(rng, lambda: E.concat([a, b], axis=-1))

    def narrow(rng):
        n, m = _rd(rng, 1, 4), _rd(rng, 3, 7)
        start = _rd(rng, 0, m - 2)
        length = _rd(rng, 1, m - start - 1)
        a = _moderate(rng, (n, m))
        return [a], _wsum(rng, lambda: E.narrow(a, 1, start, length))

    def reshape(rng):
        n, m = _rd(rng, 1, 4), _rd(rng, 2, 6)
        a = _moderate(rng, (n, m))
        return [a], _wsum(rng, lambda: E.reshape(a, (m, n)))

    def roll(rng):
        a = _moderate(rng, (_rd(rng, 1, 3), _rd(rng, 3, 7)))
        shift = _rd(rng, 1, 3)
        return [a], _wsum(rng, lambda: E.roll(a, shift, axis=-1))

    def row_assign(rng):
        b, l, k = _rd(rng, 1, 3), _rd(rng, 2, 5), _rd(rng, 1, 4)
        m, v = _moderate(rng, (b, l, k)), _moderate(rng, (b, k))
        row = _rd(rng, 0, l - 1)
        return [m, v], _wsum(rng, lambda: E.row_assign(m, row, v))

    def sum_axis(rng):
        a = _moderate(rng, (_rd(rng, 2, 4), _rd(rng, 2, 6)))
        axis = _rd(rng, 0, 1)
        return [a], _wsum(rng, lambda: E.sum_(a, axis=axis))

    def mean_axis(rng):
        a = _moderate(rng, (_rd(rng, 2, 4), _rd(rng, 2, 6)))
        axis = _rd(rng, 0, 1)
        return [a], _wsum(rng, lambda: E.mean_(a, axis=axis))

    def softmax(rng):
        a = _moderate(rng, (_rd(rng, 1, 4), _rd(rng, 2, 6)))
        return [a], _wsum(rng, lambda: E.softmax(a))

    def clamp(rng):
        a = Tensor(np.random.default_rng(int(rng.integers(1 << 30)))
                   .uniform(-5.5, 5.5, (_rd(rng, 1, 4), _rd(rng, 2, 6))),
                   requires_grad=True)
        return [a], _wsum(rng, lambda: E.clamp(a, -7.0, 7.0))

    def cosine(rng):
        l, w = _rd(rng, 2, 5), _rd(rng, 2, 4)
        m, k = _moderate(rng, (l, w)), _moderate(rng, (w,))
        return [m, k], _wsum(rng, lambda: E.cosine_scores(m, k))

    def cosine_batched(rng):
        b, l, w = _rd(rng, 1, 3), _rd(rng, 2, 5), _rd(rng, 2, 4)
        m, k = _moderate(rng, (b, l, w)), _moderate(rng, (b, w))
        return [m, k], _wsum(rng, lambda: E.cosine_scores(m, k))

    def conv(rng):
        n, c, o = _rd(rng, 1, 2), _rd(rng, 1, 2), _rd(rng, 1, 3)
        hw, kk = _rd(rng, 4, 6), _rd(rng, 2, 3)
        stride, pad = _rd(rng, 1, 2), _rd(rng, 0, 1)
        x, w = _moderate(rng, (n, c, hw, hw)), _moderate(rng, (o, c, kk, kk))
        return [x, w], _wsum(rng, lambda: E.conv2d(x, w, stride=stride, pad=pad))

    def deconv(rng):
        n, c, o = _rd(rng, 1, 2), _rd(rng, 1, 3), _rd(rng, 1, 2)
        hw, kk = _rd(rng, 2, 4), _rd(rng, 2, 3)
        stride = _rd(rng, 1, 2)
        pad = _rd(rng, 0, min(1, kk - 1))
        op = _rd(rng, 0, stride - 1)
        x, w = _moderate(rng, (n, c, hw, hw)), _moderate(rng, (c, o, kk, kk))
        return [x, w], _wsum(rng, lambda: E.conv2d_transpose(
            x, w, stride=stride, pad=pad, out_pad=op))

    return {
        "add": binary(E.add), "sub": binary(E.sub), "mul": binary(E.mul),
        "div": binary(E.div), "broadcast_add": broadcast(E.add),
        "neg": unary(E.neg), "sigmoid": unary(E.sigmoid), "tanh": unary(E.tanh),
        "softplus": unary(E.softplus), "relu": unary(E.relu),
        "exp": unary(E.exp), "log": unary(E.log, positive=True),
        "square": unary(E.square), "sqrt": unary(E.sqrt, positive=True),
        "matmul": matmul, "bmm": bmm, "concat": concat, "narrow": narrow,
        "reshape": reshape, "roll": roll, "row_assign": row_assign,
        "sum": sum_axis, "mean": mean_axis, "softmax": softmax, "clamp": clamp,
        "cosine_scores": cosine, "cosine_scores_batched": cosine_batched,
        "conv2d": conv, "conv2d_transpose": deconv,
    }


def check_primitive_gradients(n_seeds=100):
    """Every primitive against central differences on random shapes/seeds."""
    E.set_default_dtype(F64)

    def run():
        worst_name, worst = "", 0.0
        for name, build in primitive_cases().items():
            for seed in range(n_seeds):
                rng = np.random.default_rng(10_000 + seed)
                params, fn = build(rng)
                err = grad_check(fn, params, h=1e-5)
                if err > worst:
                    worst_name, worst = name, err
            if worst >= PRIMITIVE_TOL:
                return False, f"{worst_name} rel err {worst:.2e} >= {PRIMITIVE_TOL}"
        return True, f"worst {worst_name} rel err {worst:.2e} < {PRIMITIVE_TOL}"

    return _timed("gradients/primitives", run)


def _net_map_cases():
    rng0 = np.random.default_rng(77)

    def lstm_case():
        cell = LstmCell(3, 4, np.random.default_rng(1), F64)
        x = Tensor(rng0.standard_normal((2, 3)))
        w = Tensor(rng0.uniform(0.5, 1.5, (2, 4)))

        def fn():
            state = cell.init_state(2, F64)
            state, h = cell(state, x)
            state, h = cell(state, x)
            return E.sum_(E.mul(h, w))

        return [p for _, p in cell.parameters()], fn, LSTM_TOL

    def mlp_case():
        mlp = Mlp(4, MlpSpec(widths=[6, 3]), np.random.default_rng(2), F64)
        x = Tensor(rng0.standard_normal((3, 4)))
        w = Tensor(rng0.uniform(0.5, 1.5, (3, 3)))
        params = [p for _, p in mlp.parameters()]
        return params, anchored(lambda: E.sum_(E.mul(mlp(x), w)), params,
                                np.random.default_rng(3)), MAP_TOL

    def encoder_case():
        enc = Encoder(EncoderSpec(image_dims=(1, 6, 6), feature_width=4),
                      np.random.default_rng(4), F64)
        x = Tensor(rng0.uniform(0.2, 0.8, (2, 1, 6, 6)), requires_grad=True)
        w = Tensor(rng0.uniform(0.5, 1.5, (2, 4)))
        params = [p for _, p in enc.parameters()] + [x]
        return params, anchored(lambda: E.sum_(E.mul(enc(x), w)), params,
                                np.random.default_rng(5)), MAP_TOL

    return {"lstm": lstm_case, "mlp": mlp_case, "encoder": encoder_case}


def check_net_gradients():
    E.set_default_dtype(F64)

    def run():
        details = []
        for name, case in _net_map_cases().items():
            params, fn, tol = case()
            err = grad_check(fn, params, h=1e-5)
            details.append(f"{name} {err:.1e}")
            if err >= tol:
                return False, f"{name} rel err {err:.2e} >= {tol}"
        return True, ", ".join(details)

    return _timed("gradients/net-maps", run)


def check_memory_gradients():
    E.set_default_dtype(F64)

    def run():
        details = []
        for kind in M.KINDS:
            cfg = M.MemoryConfig(kind=kind, latent=3, heads=2, slots=4, hidden=4,
                                 feature=5)
            system = M.build_memory(cfg, np.random.default_rng(6), F64)
            rng = np.random.default_rng(7)
            z1 = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
            z2 = Tensor(rng.standard_normal((1, 3)))
            xf = Tensor(rng.standard_normal((1, 5)))
            params = [p for _, p in system.parameters()] + [z1]
            target = Tensor(rng.uniform(0.5, 1.5, (1, system.psi_width)))

            def body():
                state = system.init_state(1)
                _, state = system.step(state, z1, x_feat_prev=xf)
                psi, _ = system.step(state, z2, x_feat_prev=xf)
                return E.sum_(E.mul(psi, target))

            err = grad_check(anchored(body, params, np.random.default_rng(8)),
                             params, h=1e-5)
            details.append(f"{kind} {err:.1e}")
            if err >= MAP_TOL:
                return False, f"{kind} rel err {err:.2e} >= {MAP_TOL}"
        return True, ", ".join(details)

    return _timed("gradients/memory-steps", run)


def check_free_energy_gradient():
    """Full one-step bound with frozen reparameterization noise."""
    E.set_default_dtype(F64)

    def run():
        details = []
        for kind in ("introspection", "vrnn"):
            model = TemporalVae(
                ModelConfig(kind=kind, latent=2, heads=2, slots=3, hidden=4,
                            image_dims=(1, 3, 3), feature_width=5,
                            encoder_kind="mlp", mlp_widths=(6,), head_widths=(6,)),
                np.random.default_rng(9), dtype=F64)
            rng = np.random.default_rng(10)
            frames = rng.uniform(0.1, 0.9, (2, 2, 1, 3, 3))
            eps = rng.standard_normal((2, 2, 2))
            params = model.param_tensors()
            fn = anchored(lambda: model.sequence_elbo(frames, eps=eps).loss,
                          params, np.random.default_rng(11))
            err = grad_check(fn, params, h=1e-5)
            details.append(f"{kind} {err:.1e}")
            if err >= MAP_TOL:
                return False, f"{kind} rel err {err:.2e} >= {MAP_TOL}"
        return True, ", ".join(details)

    return _timed("gradients/free-energy", run)


def gradient_suite(n_seeds=100):
    return [check_primitive_gradients(n_seeds=n_seeds), check_net_gradients(),
            check_memory_gradients(), check_free_energy_gradient()]


# -- KL oracle --------------------------------------------------------------------------------


def check_kl_oracle(n_pairs=50, n_samples=10 ** 6, tol=1e-2):
    E.set_default_dtype(F64)

    def run():
        rng = np.random.default_rng(55)
        worst = 0.0
        for _ in range(n_pairs):
            mu_q, mu_p = rng.uniform(-0.5, 0.5, 2)
            ls_q, ls_p = rng.uniform(-0.25, 0.25, 2)
            q = dict(mu=mu_q, ls=ls_q)
            closed = float(gaussian_kl(
                _gp(mu_q, ls_q), _gp(mu_p, ls_p)).data.reshape(-1)[0])
            z = mu_q + math.exp(ls_q) * rng.standard_normal(n_samples)
            log_q = -0.5 * ((z - mu_q) / math.exp(ls_q)) ** 2 - ls_q
            log_p = -0.5 * ((z - mu_p) / math.exp(ls_p)) ** 2 - ls_p
            mc = float((log_q - log_p).mean())
            worst = max(worst, abs(closed - mc))
        ok = worst < tol
        return ok, f"max |closed - MC| = {worst:.2e} over {n_pairs} pairs"

    return _timed("kl-oracle", run)


def _gp(mu, ls):
    from gtmlab.model import GaussianParams
    return GaussianParams(mu=Tensor(np.array([[float(mu)]])),
                          log_sigma=Tensor(np.array([[float(ls)]])))


# -- ELBO oracle -------------------------------------------------------------------------------


def linear_toy_model():
    """K=1, two-pixel frames, every configurable map a single linear layer."""
    cfg = ModelConfig(kind="introspection", latent=1, heads=1, slots=2, hidden=1,
                      image_dims=(1, 1, 2), feature_width=2, encoder_kind="mlp",
                      mlp_widths=(), head_widths=())
    model = TemporalVae(cfg, np.random.default_rng(21), dtype=F64)
    rng = np.random.default_rng(22)
    for _, p in model.parameters():
        p.data[:] = rng.uniform(-0.7, 0.7, p.data.shape)
    return model


def straight_line_two_step(model, frames, eps):
    """Independent plain-numpy evaluation of the 2-step bound."""
    softplus = lambda v: np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    p = dict(model.parameters())
    w_e, b_e = p["enc.out.w"].data, p["enc.out.b"].data
    w_d, b_d = p["dec.fc.w"].data, p["dec.fc.b"].data
    w_pr, b_pr = p["prior.l0.w"].data, p["prior.l0.b"].data
    w_po, b_po = p["post.l0.w"].data, p["post.l0.b"].data
    w_x, w_h, b_l = p["mem.ctrl.w_x"].data, p["mem.ctrl.w_h"].data, p["mem.ctrl.b"].data
    gate = 1.0 / (1.0 + np.exp(-p["mem.gates"].data[0, 0]))
    z0 = float(p["z0"].data[0])

    def lstm(h, c, x):
        pre = x * w_x[0] + h * w_h[0] + b_l
        i, f = 1 / (1 + np.exp(-pre[0])), 1 / (1 + np.exp(-pre[1]))
        g, o = np.tanh(pre[2]), 1 / (1 + np.exp(-pre[3]))
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new

    def head(w, b, vec):
        raw = vec @ w + b
        return raw[0], float(np.clip(raw[1], -7.0, 7.0))

    def step(psi, x, e):
        mu_p, ls_p = head(w_pr, b_pr, np.array([psi]))
        feat = (2.0 * x - 1.0) @ w_e + b_e
        mu_q, ls_q = head(w_po, b_po, np.concatenate([[psi], feat]))
        z = mu_q + math.exp(ls_q) * e
        logits = np.array([z]) @ w_d + b_d
        ll = float((x * logits - softplus(logits)).sum())
        kl = (ls_p - ls_q
              + (math.exp(2 * ls_q) + (mu_q - mu_p) ** 2) / (2 * math.exp(2 * ls_p))
              - 0.5)
        return z, ll, kl

    h, c = lstm(0.0, 0.0, z0)
    z1, ll1, kl1 = step(0.0, frames[0], eps[0])
    h, c = lstm(h, c, z1)
    _, ll2, kl2 = step(z1 * gate, frames[1], eps[1])
    return (ll1 - kl1) + (ll2 - kl2)


def check_elbo_oracle(tol=1e-10):
    E.set_default_dtype(F64)

    def run():
        model = linear_toy_model()
        rng = np.random.default_rng(23)
        frames = rng.uniform(0, 1, (1, 2, 1, 1, 2))
        eps = rng.standard_normal((2, 1, 1))
        out = model.sequence_elbo(frames, eps=eps)
        oracle = straight_line_two_step(model, frames[0, :, 0, 0, :], eps[:, 0, 0])
        diff = abs(out.total - oracle)
        return diff < tol, f"|model - straight-line| = {diff:.2e}"

    return _timed("elbo-oracle", run)


# -- memory invariants ------------------------------------------------------------------------


def check_memory_invariants(total_steps=10_000, episode_len=25):
    """Randomized driving of every system with reference-tracked invariants."""
    E.set_default_dtype(F64)

    def simplex_ok(w, tol=1e-6):
        return np.all(w >= -1e-12) and np.max(np.abs(w.sum(axis=-1) - 1.0)) < tol

    def run():
        rng = np.random.default_rng(99)
        for kind in ("introspection", "ntm", "lru", "dnc"):
            steps_done = 0
            episode = 0
            while steps_done < total_steps:
                cfg = M.MemoryConfig(kind=kind, latent=int(rng.integers(2, 5)),
                                     heads=int(rng.integers(1, 4)),
                                     slots=int(rng.integers(3, 9)), hidden=4)
                system = M.build_memory(
                    cfg, np.random.default_rng(1000 + episode), F64)
                state = system.init_state(2)
                fifo_ref = []
                for t in range(episode_len):
                    z = rng.standard_normal((2, cfg.latent))
                    if kind == "introspection" and t > 0:
                        fifo_ref.append(z.copy())
                    pre_mem = None if kind == "introspection" else state.memory.data
                    psi, state = system.step(state, Tensor(z.copy()))
                    steps_done += 1

                    if kind == "introspection":
                        expect = fifo_ref[-cfg.slots:]
                        if state.fill != len(expect):
                            return False, f"introspection fill {state.fill} != {len(expect)}"
                        held = {state.buffer.data[:, i].tobytes()
                                for i in range(state.fill)}
                        want = {e.tobytes() for e in expect}
                        if held != want:
                            return False, "introspection FIFO contents diverged"
                        if state.fill == 0 and np.any(psi.data != 0.0):
                            return False, "introspection psi nonzero on empty buffer"
                        if state.fill:
                            for w in system.head_weights(state.controller.h, state.fill):
                                if not simplex_ok(w.data):
                                    return False, "introspection weights not simplex"
                    elif kind == "dnc":
                        link = state.link.data
                        if np.max(np.abs(np.diagonal(link, axis1=1, axis2=2))) != 0.0:
                            return False, "dnc link diagonal nonzero"
                        if link.sum(axis=2).max() > 1.0 + 1e-6 or \
                           link.sum(axis=1).max() > 1.0 + 1e-6:
                            return False, "dnc link row/col sum exceeds 1"
                        if state.usage.data.min() < -1e-12 or \
                           state.usage.data.max() > 1.0 + 1e-9:
                            return False, "dnc usage left [0,1]"
                        for w in state.read_weights:
                            if np.any(w.data < -1e-12) or \
                               w.data.sum(axis=-1).max() > 1.0 + 1e-6:
                                return False, "dnc read weights not sub-simplex"
                        lo = np.minimum(state.memory.data.min(axis=1), 0.0) - 1e-7
                        hi = np.maximum(state.memory.data.max(axis=1), 0.0) + 1e-7
                        for r in range(cfg.heads):
                            read = psi.data[:, r * cfg.word:(r + 1) * cfg.word]
                            if np.any(read < lo) or np.any(read > hi):
                                return False, "dnc read left the row hull"
                    else:  # ntm / lru
                        weights = list(state.read_weights)
                        if hasattr(state, "write_weights"):
                            weights.append(state.write_weights)
                        for w in weights:
                            if not simplex_ok(w.data):
                                return False, f"{kind} weights not simplex"
                        lo = pre_mem.min(axis=1) - 1e-7
                        hi = pre_mem.max(axis=1) + 1e-7
                        for r in range(cfg.heads):
                            read = psi.data[:, r * cfg.word:(r + 1) * cfg.word]
                            if np.any(read < lo) or np.any(read > hi):
                                return False, f"{kind} read left the row hull"
                        if kind == "lru":
                            u = state.usage.data
                            if u.min() < -1e-12 or u.max() > 1.0 + 1e-9:
                                return False, "lru usage left [0,1]"
                            if t == 0 and np.any(np.argmax(u, axis=-1) != 0):
                                return False, "lru first write missed slot 0"
                episode += 1
        return True, f"{total_steps} randomized steps per system"

    return _timed("memory-invariants", run)


# -- task validators ---------------------------------------------------------------------------


def check_task_validators(n_samples=1000):
    def run():
        dims = (1, 8, 8)
        cfg = TaskConfig(l=10, k=5, image_dims=dims)
        digits = task_mod.synth_glyphs(n_classes=10, per_class=30, dims=dims, seed=11)
        alphabets = task_mod.synth_alphabets(per_class=8, dims=dims, seed=12)

        label_counts = np.zeros(10)
        r_counts = np.zeros(cfg.l - cfg.k)
        for seed in range(n_samples):
            for task in ("perfect-recall", "parity-recall", "dynamic-dependency",
                         "similarity-recall", "mnist-map"):
                s = task_mod.generate(task, digits, cfg, seed)
                task_mod.validate_sample(s, cfg)
                if task == "perfect-recall":
                    for lab in s.labels[:cfg.l]:
                        label_counts[lab] += 1
                if task == "similarity-recall":
                    r_counts[s.meta["r"] - 1] += 1
            s = task_mod.generate("one-shot-recall", alphabets, cfg, seed,
                                  split="test" if seed % 2 else "train")
            task_mod.validate_sample(s, cfg)
            if seed % 50 == 0:
                task_mod.validate_sample(task_mod.gen_rotation_standin(cfg, seed), cfg)

        p_labels = chi_square_pvalue(label_counts)
        p_r = chi_square_pvalue(r_counts)
        if p_labels <= 0.001:
            return False, f"prefix labels not uniform (p={p_labels:.1e})"
        if p_r <= 0.001:
            return False, f"similarity r not uniform (p={p_r:.1e})"
        return True, (f"{n_samples} samples/generator validated; "
                      f"label p={p_labels:.3f}, r p={p_r:.3f}")

    return _timed("task-validators", run)


# -- rng checks -------------------------------------------------------------------------------


def check_rng():
    def run():
        seen = set()
        rng = np.random.default_rng(0)
        for _ in range(1000):
            triple = (int(rng.integers(1 << 30)), str(rng.integers(1 << 16)),
                      int(rng.integers(1 << 16)))
            draws = tuple(seeded_rng(*triple).integers(0, 1 << 62, 4).tolist())
            if draws in seen:
                return False, "stream collision within first 4 draws"
            seen.add(draws)
        x = seeded_rng(3, "noise").standard_normal(10 ** 6)
        if abs(x.mean()) >= 0.01 or abs(x.var() - 1.0) >= 0.01:
            return False, f"normal moments off: m={x.mean():.4f} v={x.var():.4f}"
        return True, "1000-triple collision scan + moment sanity"

    return _timed("rng", run)


def all_suites(fast=False):
    """Everything the CLI selftest runs; `fast` shrinks the sampled sizes."""
    results = gradient_suite(n_seeds=10 if fast else 100)
    results.append(check_kl_oracle(n_pairs=10 if fast else 50,
                                   n_samples=10 ** 5 if fast else 10 ** 6))
    results.append(check_elbo_oracle())
    results.append(check_memory_invariants(total_steps=1000 if fast else 10_000))
    results.append(check_task_validators(n_samples=100 if fast else 1000))
    results.append(check_rng())
    return results
