"""External memory systems with one uniform step interface.

Each system consumes the previous latent (plus optional action context) and
returns the memory context psi for the current step together with its updated
state. psi at step t is a function only of latents generated before step t.

Systems:
  introspection  FIFO buffer of raw latents, positional softplus attention,
                 per-head sigmoid gates. psi width R*K.
  ntm            content addressing refined by interpolation, circular shift
                 and sharpening; erase/add write. psi width R*W + H.
  lru            content reads; single write head steered toward least-used
                 slots. psi width R*W + H.
  dnc            allocation-gated write, temporal link matrix, and per-head
                 mixing of content/forward/backward reads. psi width R*W + H.
  vrnn           no external buffer; the controller state itself is the
                 context. psi width H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gtmlab import engine as E
from gtmlab.engine import ShapeError, Tensor
from gtmlab.nets import Linear, LstmCell, LstmState, Mlp, MlpSpec

KINDS = ("introspection", "ntm", "lru", "dnc", "vrnn")

SHARPEN_EPS = 1e-12     # keeps w^gamma differentiable at w = 0
LEAST_USED_BETA = 50.0  # temperature of the least-used softmax
USAGE_DECAY = 0.95      # LRU usage decay gamma
TIE_JITTER = 1e-6       # breaks least-used ties toward the lowest index


@dataclass
class MemoryConfig:
    kind: str
    latent: int                 # K
    heads: int = 5              # R
    slots: int = 15             # L
    hidden: int = 64            # controller H
    word: int | None = None     # W; defaults to latent
    context: int = 0            # width of the per-step action context
    feature: int = 0            # encoded-frame width (vrnn controller input)
    att_widths: tuple = (64,)   # hidden layers of the positional score net
    usage_decay: float = USAGE_DECAY
    least_used_beta: float = LEAST_USED_BETA

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown memory kind '{self.kind}'")
        if self.word is None:
            self.word = self.latent
        for name in ("latent", "heads", "slots", "hidden", "word"):
            if getattr(self, name) <= 0:
                raise ValueError(f"memory config: {name} must be positive")
        if self.kind == "vrnn" and self.feature <= 0:
            raise ValueError("vrnn context needs the encoded-frame width")


def default_slots(kind, seq_len):
    """Slot count rule: one per step, five per step for the LRU."""
    return 5 * seq_len if kind == "lru" else seq_len


def content_attention(m, key, beta):
    """softmax(beta * cosine(row, key)) over memory rows.

    m: (L,W) or (B,L,W); key: (W,) or (B,W); beta: positive scalar tensor,
    float, or (B,1). All-zero rows or keys score 0 via the norm guard, so a
    zero key yields uniform weights.
    """
    if not isinstance(beta, Tensor):
        if beta <= 0:
            raise ValueError(f"content_attention: beta must be positive, got {beta}")
        beta = Tensor(np.asarray(beta, dtype=m.dtype))
    return E.softmax(E.mul(E.cosine_scores(m, key), beta))


def weighted_read(weights, memory):
    """Convex read: (B,L) weights over (B,L,W) rows -> (B,W)."""
    return E.sum_(E.mul(E.reshape(weights, weights.shape + (1,)), memory), axis=1)


def erase_add_write(memory, weights, erase, word):
    """M <- M * (1 - w e^T) + w a^T for one write head.

    memory (B,L,W), weights (B,L), erase/word (B,W).
    """
    w3 = E.reshape(weights, weights.shape + (1,))
    keep = E.sub(Tensor(np.ones(1, dtype=memory.dtype)),
                 E.mul(w3, E.reshape(erase, (erase.shape[0], 1, -1))))
    return E.add(E.mul(memory, keep),
                 E.mul(w3, E.reshape(word, (word.shape[0], 1, -1))))


def ntm_address(memory, prev_w, key, beta, gate, shift, gamma):
    """Content lookup, interpolation with the previous weights, circular
    shift over offsets {-1, 0, +1}, then sharpening to a simplex."""
    c = content_attention(memory, key, beta)
    wg = E.add(E.mul(gate, c), E.mul(E.sub(Tensor(np.ones(1, dtype=c.dtype)), gate), prev_w))
    ws = E.add(E.add(E.mul(E.narrow(shift, -1, 0, 1), E.roll(wg, -1, axis=-1)),
                     E.mul(E.narrow(shift, -1, 1, 1), wg)),
               E.mul(E.narrow(shift, -1, 2, 1), E.roll(wg, 1, axis=-1)))
    powed = E.exp(E.mul(gamma, E.log(E.add(ws, Tensor(np.full(1, SHARPEN_EPS, dtype=ws.dtype))))))
    return E.div(powed, E.sum_(powed, axis=-1, keepdims=True))


def least_used_weights(usage, beta):
    """softmax(-beta * usage), with +index jitter so ties go to the lowest slot."""
    slots = usage.shape[-1]
    jitter = Tensor(np.arange(slots, dtype=usage.dtype) * TIE_JITTER)
    return E.softmax(E.mul(E.add(usage, jitter),
                           Tensor(np.asarray(-beta, dtype=usage.dtype))))


def temporal_link_update(link, precedence, write_w):
    """Record write adjacency: TL[i,j] <- (1 - w_i - w_j) TL[i,j] + w_i p_j,
    diagonal forced to zero; p <- (1 - sum w) p + w with the pre-update p."""
    batch, slots = write_w.shape
    one = Tensor(np.ones(1, dtype=write_w.dtype))
    w_i = E.reshape(write_w, (batch, slots, 1))
    w_j = E.reshape(write_w, (batch, 1, slots))
    p_j = E.reshape(precedence, (batch, 1, slots))
    keep = E.sub(E.sub(one, w_i), w_j)
    new_link = E.mul(E.add(E.mul(link, keep), E.mul(w_i, p_j)),
                     Tensor(1.0 - np.eye(slots, dtype=write_w.dtype)))
    w_sum = E.sum_(write_w, axis=-1, keepdims=True)
    new_precedence = E.add(E.mul(E.sub(one, w_sum), precedence), write_w)
    return new_link, new_precedence


def directional_read_weights(link, prev_w, forward):
    """Follow temporal links from the previous read position.

    forward follows rows (who was written after), backward follows columns."""
    batch, slots = prev_w.shape
    if forward:
        return E.reshape(E.bmm(link, E.reshape(prev_w, (batch, slots, 1))), (batch, slots))
    return E.reshape(E.bmm(E.reshape(prev_w, (batch, 1, slots)), link), (batch, slots))


def _zeros(shape, dtype, grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=grad)


def _uniform_simplex(batch, slots, dtype):
    return Tensor(np.full((batch, slots), 1.0 / slots, dtype=dtype))


def _ctrl_input(parts):
    parts = [p for p in parts if p is not None]
    return parts[0] if len(parts) == 1 else E.concat(parts, axis=-1)


# -- introspection -------------------------------------------------------------


@dataclass
class IntrospectionState:
    buffer: Tensor        # (B, L, K); rows [0, fill) hold stored latents
    fill: int
    cursor: int           # next FIFO row to overwrite
    controller: LstmState
    steps: int


class IntrospectionMemory:
    """FIFO latent buffer with positional attention.

    The previous step's latent is written before reading, so attention can
    address everything up to and including it. Raw scores come from a softplus
    head over the occupied rows and are normalised to sum to one; retrieved
    vectors are gated by learnable per-head biases (sigmoid, init +2).
    """

    def __init__(self, config: MemoryConfig, rng, dtype):
        self.config = config
        self.dtype = dtype
        k, r, ell, h = config.latent, config.heads, config.slots, config.hidden
        self.cell = LstmCell(k + config.context, h, rng, dtype)
        # deep feed-forward score net; relu hidden layers let the softplus
        # scores sharpen far faster than a single linear map
        att_spec = MlpSpec(widths=list(config.att_widths) + [r * ell],
                           activations=["relu"] * len(config.att_widths) + ["identity"])
        self.att = Mlp(h, att_spec, rng, dtype)
        self.gates = Tensor(np.full((r, k), 2.0, dtype=dtype), requires_grad=True)
        self.psi_width = r * k

    def init_state(self, batch):
        cfg = self.config
        return IntrospectionState(
            buffer=_zeros((batch, cfg.slots, cfg.latent), self.dtype),
            fill=0, cursor=0,
            controller=self.cell.init_state(batch, self.dtype),
            steps=0)

    def step(self, state, z_prev, c_t=None, x_feat_prev=None):
        cfg = self.config
        if z_prev.shape[-1] != cfg.latent:
            raise ShapeError(f"introspection: latent width {z_prev.shape[-1]} != {cfg.latent}")
        buffer, fill, cursor = state.buffer, state.fill, state.cursor
        if state.steps > 0:  # first call has no sampled latent to store
            buffer = E.row_assign(buffer, cursor, z_prev)
            cursor = (cursor + 1) % cfg.slots
            fill = min(fill + 1, cfg.slots)
        controller, h = self.cell(state.controller, _ctrl_input([z_prev, c_t]))

        batch = z_prev.shape[0]
        if fill == 0:
            psi = _zeros((batch, self.psi_width), self.dtype)
        else:
            rows = E.narrow(buffer, 1, 0, fill)
            contexts = []
            for r, w in enumerate(self.head_weights(h, fill)):
                phi = weighted_read(w, rows)
                gate = E.sigmoid(E.reshape(E.narrow(self.gates, 0, r, 1), (1, cfg.latent)))
                contexts.append(E.mul(phi, gate))
            psi = E.concat(contexts, axis=-1)
        new_state = IntrospectionState(buffer=buffer, fill=fill, cursor=cursor,
                                       controller=controller, steps=state.steps + 1)
        return psi, new_state

    def head_weights(self, h, fill):
        """Per-head attention over the occupied rows: softplus scores from the
        controller output, truncated to `fill` entries, normalised to sum 1."""
        scores = E.softplus(self.att(h))
        out = []
        for r in range(self.config.heads):
            s = E.narrow(E.narrow(scores, -1, r * self.config.slots, self.config.slots),
                         -1, 0, fill)
            out.append(E.div(s, E.sum_(s, axis=-1, keepdims=True)))
        return out

    def parameters(self):
        ps = [(f"ctrl.{n}", p) for n, p in self.cell.parameters()]
        ps += [(f"att.{n}", p) for n, p in self.att.parameters()]
        ps.append(("gates", self.gates))
        return ps


# -- content-addressed systems ---------------------------------------------------


class _ContentMemory:
    """Shared plumbing: controller fed with previous reads, word projection."""

    def __init__(self, config: MemoryConfig, rng, dtype):
        self.config = config
        self.dtype = dtype
        k, r, h, w = config.latent, config.heads, config.hidden, config.word
        self.cell = LstmCell(k + config.context + r * w, h, rng, dtype)
        self.word_proj = Linear(k + h, w, rng, dtype)
        self.psi_width = r * w + h

    def _controller(self, state, z_prev, c_t):
        if z_prev.shape[-1] != self.config.latent:
            raise ShapeError(
                f"{self.config.kind}: latent width {z_prev.shape[-1]} != {self.config.latent}")
        flat_reads = E.concat(state.reads, axis=-1) if len(state.reads) > 1 else state.reads[0]
        return self.cell(state.controller, _ctrl_input([z_prev, c_t, flat_reads]))

    def _word(self, z_prev, h):
        return self.word_proj(E.concat([z_prev, h], axis=-1))

    def _base_params(self, extra):
        ps = [(f"ctrl.{n}", p) for n, p in self.cell.parameters()]
        ps += [(f"word.{n}", p) for n, p in self.word_proj.parameters()]
        return ps + extra


@dataclass
class NtmState:
    memory: Tensor               # (B, L, W)
    read_weights: list           # R tensors (B, L), each a simplex
    write_weights: Tensor        # (B, L)
    reads: list                  # R tensors (B, W) from the previous step
    controller: LstmState


class NtmMemory(_ContentMemory):
    """Content plus positional addressing with a single erase/add write head.

    Reads use the pre-write memory, so retrieved content reflects only data
    stored on earlier steps.
    """

    HEAD_EXTRA = 6  # beta, gate, shift x3, gamma

    def __init__(self, config, rng, dtype):
        super().__init__(config, rng, dtype)
        w, h, r = config.word, config.hidden, config.heads
        self.read_heads = [Linear(h, w + self.HEAD_EXTRA, rng, dtype) for _ in range(r)]
        self.write_head = Linear(h, 2 * w + self.HEAD_EXTRA, rng, dtype)

    def init_state(self, batch):
        cfg = self.config
        return NtmState(
            memory=_zeros((batch, cfg.slots, cfg.word), self.dtype),
            read_weights=[_uniform_simplex(batch, cfg.slots, self.dtype)
                          for _ in range(cfg.heads)],
            write_weights=_uniform_simplex(batch, cfg.slots, self.dtype),
            reads=[_zeros((batch, cfg.word), self.dtype) for _ in range(cfg.heads)],
            controller=self.cell.init_state(batch, self.dtype))

    def _head_fields(self, raw, w):
        key = E.narrow(raw, -1, 0, w)
        beta = E.softplus(E.narrow(raw, -1, w, 1))
        gate = E.sigmoid(E.narrow(raw, -1, w + 1, 1))
        shift = E.softmax(E.narrow(raw, -1, w + 2, 3))
        gamma = E.add(E.softplus(E.narrow(raw, -1, w + 5, 1)),
                      Tensor(np.ones(1, dtype=self.dtype)))
        return key, beta, gate, shift, gamma

    def step(self, state, z_prev, c_t=None, x_feat_prev=None):
        cfg = self.config
        controller, h = self._controller(state, z_prev, c_t)

        read_ws, reads = [], []
        for head, prev_w in zip(self.read_heads, state.read_weights):
            key, beta, gate, shift, gamma = self._head_fields(head(h), cfg.word)
            w = ntm_address(state.memory, prev_w, key, beta, gate, shift, gamma)
            read_ws.append(w)
            reads.append(weighted_read(w, state.memory))

        raw = self.write_head(h)
        key, beta, gate, shift, gamma = self._head_fields(raw, cfg.word)
        erase = E.sigmoid(E.narrow(raw, -1, cfg.word + self.HEAD_EXTRA, cfg.word))
        w_w = ntm_address(state.memory, state.write_weights, key, beta, gate, shift, gamma)
        memory = erase_add_write(state.memory, w_w, erase, self._word(z_prev, h))

        psi = E.concat(reads + [h], axis=-1)
        return psi, NtmState(memory=memory, read_weights=read_ws, write_weights=w_w,
                             reads=reads, controller=controller)

    def parameters(self):
        extra = [(f"read{i}.{n}", p) for i, head in enumerate(self.read_heads)
                 for n, p in head.parameters()]
        extra += [(f"write.{n}", p) for n, p in self.write_head.parameters()]
        return self._base_params(extra)


@dataclass
class LruState:
    memory: Tensor        # (B, L, W)
    usage: Tensor         # (B, L) in [0, 1]
    read_weights: list    # R tensors (B, L)
    reads: list           # R tensors (B, W)
    controller: LstmState


class LruMemory(_ContentMemory):
    """Content reads with a least-used additive write.

    Stored usage is the decayed read+write mass normalised by (R+1)/(1-gamma),
    which keeps it in [0,1] exactly: u' = gamma*u + (1-gamma)/(R+1) * mass.
    The write head mixes the mean previous read weights with a softmax over
    negated usage (ties broken toward the lowest slot index).
    """

    def __init__(self, config, rng, dtype):
        super().__init__(config, rng, dtype)
        w, h, r = config.word, config.hidden, config.heads
        self.read_heads = [Linear(h, w + 1, rng, dtype) for _ in range(r)]
        self.alpha_head = Linear(h, 1, rng, dtype)

    def init_state(self, batch):
        cfg = self.config
        return LruState(
            memory=_zeros((batch, cfg.slots, cfg.word), self.dtype),
            usage=_zeros((batch, cfg.slots), self.dtype),
            read_weights=[_uniform_simplex(batch, cfg.slots, self.dtype)
                          for _ in range(cfg.heads)],
            reads=[_zeros((batch, cfg.word), self.dtype) for _ in range(cfg.heads)],
            controller=self.cell.init_state(batch, self.dtype))

    def step(self, state, z_prev, c_t=None, x_feat_prev=None):
        cfg = self.config
        controller, h = self._controller(state, z_prev, c_t)

        read_ws, reads = [], []
        for head in self.read_heads:
            raw = head(h)
            key = E.narrow(raw, -1, 0, cfg.word)
            beta = E.softplus(E.narrow(raw, -1, cfg.word, 1))
            w = content_attention(state.memory, key, beta)
            read_ws.append(w)
            reads.append(weighted_read(w, state.memory))

        alpha = E.sigmoid(self.alpha_head(h))
        prev_mean = state.read_weights[0]
        for w in state.read_weights[1:]:
            prev_mean = E.add(prev_mean, w)
        prev_mean = E.mul(prev_mean, Tensor(np.asarray(1.0 / cfg.heads, dtype=self.dtype)))
        w_lu = least_used_weights(state.usage, cfg.least_used_beta)
        w_w = E.add(E.mul(alpha, prev_mean),
                    E.mul(E.sub(Tensor(np.ones(1, dtype=self.dtype)), alpha), w_lu))

        word = self._word(z_prev, h)
        memory = E.add(state.memory,
                       E.mul(E.reshape(w_w, w_w.shape + (1,)),
                             E.reshape(word, (word.shape[0], 1, -1))))

        mass = w_w
        for w in read_ws:
            mass = E.add(mass, w)
        gamma = cfg.usage_decay
        usage = E.add(E.mul(state.usage, Tensor(np.asarray(gamma, dtype=self.dtype))),
                      E.mul(mass, Tensor(np.asarray((1.0 - gamma) / (cfg.heads + 1),
                                                    dtype=self.dtype))))
        usage = E.clamp(usage, 0.0, 1.0)

        psi = E.concat(reads + [h], axis=-1)
        return psi, LruState(memory=memory, usage=usage, read_weights=read_ws,
                             reads=reads, controller=controller)

    def parameters(self):
        extra = [(f"read{i}.{n}", p) for i, head in enumerate(self.read_heads)
                 for n, p in head.parameters()]
        extra += [(f"alpha.{n}", p) for n, p in self.alpha_head.parameters()]
        return self._base_params(extra)


@dataclass
class DncState:
    memory: Tensor        # (B, L, W)
    usage: Tensor         # (B, L) in [0, 1]
    precedence: Tensor    # (B, L) sub-simplex
    link: Tensor          # (B, L, L); diag 0, row/col sums <= 1
    read_weights: list    # R tensors (B, L)
    reads: list           # R tensors (B, W)
    controller: LstmState


class DncMemory(_ContentMemory):
    """Content addressing plus temporal links between consecutively written rows.

    Write first (allocation gated against content lookup), then read from the
    updated memory with per-head softmax mixing of backward / content / forward
    modes, where forward follows link rows (TL . w_prev) and backward follows
    link columns (TL^T . w_prev).
    """

    def __init__(self, config, rng, dtype):
        super().__init__(config, rng, dtype)
        w, h, r = config.word, config.hidden, config.heads
        # write interface: key + beta + allocation gate + erase vector
        self.write_head = Linear(h, 2 * w + 2, rng, dtype)
        # per read head: key + beta + free gate + three mode logits
        self.read_heads = [Linear(h, w + 5, rng, dtype) for _ in range(r)]

    def init_state(self, batch):
        cfg = self.config
        return DncState(
            memory=_zeros((batch, cfg.slots, cfg.word), self.dtype),
            usage=_zeros((batch, cfg.slots), self.dtype),
            precedence=_zeros((batch, cfg.slots), self.dtype),
            link=_zeros((batch, cfg.slots, cfg.slots), self.dtype),
            read_weights=[_uniform_simplex(batch, cfg.slots, self.dtype)
                          for _ in range(cfg.heads)],
            reads=[_zeros((batch, cfg.word), self.dtype) for _ in range(cfg.heads)],
            controller=self.cell.init_state(batch, self.dtype))

    def step(self, state, z_prev, c_t=None, x_feat_prev=None):
        cfg = self.config
        batch = z_prev.shape[0]
        controller, h = self._controller(state, z_prev, c_t)

        raw = self.write_head(h)
        write_key = E.narrow(raw, -1, 0, cfg.word)
        write_beta = E.softplus(E.narrow(raw, -1, cfg.word, 1))
        alloc_gate = E.sigmoid(E.narrow(raw, -1, cfg.word + 1, 1))
        erase = E.sigmoid(E.narrow(raw, -1, cfg.word + 2, cfg.word))

        read_raws = [head(h) for head in self.read_heads]
        free_gates = [E.sigmoid(E.narrow(r_, -1, cfg.word + 1, 1)) for r_ in read_raws]

        # usage retained after frees, then allocation-gated write
        one = Tensor(np.ones(1, dtype=self.dtype))
        retention = None
        for fg, prev_w in zip(free_gates, state.read_weights):
            term = E.sub(one, E.mul(fg, prev_w))
            retention = term if retention is None else E.mul(retention, term)
        u_ret = E.mul(state.usage, retention)
        alloc = least_used_weights(u_ret, cfg.least_used_beta)
        c_w = content_attention(state.memory, write_key, write_beta)
        w_w = E.add(E.mul(alloc_gate, alloc),
                    E.mul(E.sub(one, alloc_gate), c_w))
        usage = E.add(u_ret, E.sub(w_w, E.mul(u_ret, w_w)))

        # temporal link update uses the pre-step precedence
        link, precedence = temporal_link_update(state.link, state.precedence, w_w)

        memory = erase_add_write(state.memory, w_w, erase, self._word(z_prev, h))

        read_ws, reads = [], []
        for raw_r, prev_w in zip(read_raws, state.read_weights):
            key = E.narrow(raw_r, -1, 0, cfg.word)
            beta = E.softplus(E.narrow(raw_r, -1, cfg.word, 1))
            modes = E.softmax(E.narrow(raw_r, -1, cfg.word + 2, 3))
            content = content_attention(memory, key, beta)
            fwd = directional_read_weights(link, prev_w, forward=True)
            bwd = directional_read_weights(link, prev_w, forward=False)
            w = E.add(E.add(E.mul(E.narrow(modes, -1, 0, 1), bwd),
                            E.mul(E.narrow(modes, -1, 1, 1), content)),
                      E.mul(E.narrow(modes, -1, 2, 1), fwd))
            read_ws.append(w)
            reads.append(weighted_read(w, memory))

        psi = E.concat(reads + [h], axis=-1)
        return psi, DncState(memory=memory, usage=usage, precedence=precedence,
                             link=link, read_weights=read_ws, reads=reads,
                             controller=controller)

    def parameters(self):
        extra = [(f"write.{n}", p) for n, p in self.write_head.parameters()]
        extra += [(f"read{i}.{n}", p) for i, head in enumerate(self.read_heads)
                  for n, p in head.parameters()]
        return self._base_params(extra)


# -- vrnn baseline ----------------------------------------------------------------


@dataclass
class VrnnState:
    controller: LstmState


def vrnn_context(cell, state, x_features, z, c_t=None):
    """One transition h_t = lstm(h_{t-1}, [features(x_t), z_t, c]); h is the context."""
    new_state, h = cell(state, _ctrl_input([x_features, z, c_t]))
    return new_state, h


class VrnnContext:
    """Baseline without external memory: a dense recurrent state carries all
    dependencies. The update is applied lazily at the start of the next step,
    fed with the previous frame's features and latent."""

    def __init__(self, config: MemoryConfig, rng, dtype):
        self.config = config
        self.dtype = dtype
        n_in = config.feature + config.latent + config.context
        self.cell = LstmCell(n_in, config.hidden, rng, dtype)
        self.psi_width = config.hidden

    def init_state(self, batch):
        return VrnnState(controller=self.cell.init_state(batch, self.dtype))

    def step(self, state, z_prev, c_t=None, x_feat_prev=None):
        if x_feat_prev is None:
            x_feat_prev = _zeros((z_prev.shape[0], self.config.feature), self.dtype)
        controller, h = vrnn_context(self.cell, state.controller, x_feat_prev, z_prev, c_t)
        return h, VrnnState(controller=controller)

    def parameters(self):
        return [(f"ctrl.{n}", p) for n, p in self.cell.parameters()]


_CLASSES = {
    "introspection": IntrospectionMemory,
    "ntm": NtmMemory,
    "lru": LruMemory,
    "dnc": DncMemory,
    "vrnn": VrnnContext,
}


def build_memory(config: MemoryConfig, rng, dtype):
    return _CLASSES[config.kind](config, rng, dtype)


def memory_init(system, batch):
    """Fresh per-episode state for a built memory system."""
    return system.init_state(batch)
