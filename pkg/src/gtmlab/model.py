"""Memory-conditioned temporal VAE.

Per step: the memory system turns the previous latent into a context psi; a
prior head maps psi to a diagonal Gaussian; a posterior head maps psi plus the
encoded frame to another; the latent is a single reparameterized sample from
the posterior; the decoder scores the frame under a Bernoulli likelihood. The
sequence bound is the sum over steps of log-likelihood minus KL, estimated
forward in time (filtering) with one sample per step.

The same prior head serves inference (KL at step t) and generation (sampling
at step t) on the same psi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gtmlab import engine as E
from gtmlab.engine import NumericError, ShapeError, Tensor
from gtmlab.memory import MemoryConfig, build_memory
from gtmlab.nets import Decoder, Encoder, EncoderSpec, Mlp, MlpSpec
from gtmlab.seeds import seeded_rng

LOG_SIGMA_CLAMP = 7.0


@dataclass
class GaussianParams:
    mu: Tensor
    log_sigma: Tensor  # clamped to [-7, 7]


def make_gaussian(raw, latent):
    """Split a (B, 2K) head output into clamped Gaussian parameters."""
    mu = E.narrow(raw, -1, 0, latent)
    log_sigma = E.clamp(E.narrow(raw, -1, latent, latent),
                        -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    return GaussianParams(mu=mu, log_sigma=log_sigma)


def reparameterize(params, eps):
    """z = mu + sigma * eps with caller-provided standard-normal eps."""
    return E.add(params.mu, E.mul(E.exp(params.log_sigma), eps))


def gaussian_kl(q, p):
    """KL(q || p) per batch row, in nats, for diagonal Gaussians.

    sum_i [ log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2 ].
    """
    half = Tensor(np.full(1, 0.5, dtype=q.mu.dtype))
    two = Tensor(np.full(1, 2.0, dtype=q.mu.dtype))
    d_ls = E.sub(p.log_sigma, q.log_sigma)
    var_q = E.exp(E.mul(two, q.log_sigma))
    inv_var_p = E.exp(E.mul(Tensor(np.full(1, -2.0, dtype=q.mu.dtype)), p.log_sigma))
    quad = E.mul(E.mul(E.add(var_q, E.square(E.sub(q.mu, p.mu))), inv_var_p), half)
    return E.sum_(E.sub(E.add(d_ls, quad), half), axis=-1)


def bernoulli_log_lik(logits, x):
    """Per-row Bernoulli log-likelihood over all pixels, in nats.

    Uses the stable logit form sum[x * logit - softplus(logit)], which equals
    sum[x log s(logit) + (1-x) log(1-s(logit))].
    """
    if logits.shape != x.shape:
        raise ShapeError(f"bernoulli_log_lik: {logits.shape} vs {x.shape}")
    if np.any(x.data < 0.0) or np.any(x.data > 1.0):
        raise NumericError("bernoulli_log_lik: targets must lie in [0, 1]")
    batch = x.shape[0]
    elem = E.sub(E.mul(x, logits), E.softplus(logits))
    return E.sum_(E.reshape(elem, (batch, -1)), axis=-1)


@dataclass
class StepRecord:
    z: Tensor
    kl: Tensor        # (B,)
    log_lik: Tensor   # (B,)
    prior: GaussianParams
    posterior: GaussianParams


@dataclass
class ElboBreakdown:
    total: float                  # batch-mean per-sequence bound, nats
    per_step: list
    seq_len: int
    loss: Tensor                  # scalar -total/T as a graph node
    per_sample_total: np.ndarray  # (B,)

    def kl_per_frame(self):
        return np.array([float(r.kl.data.mean()) for r in self.per_step])

    def log_lik_per_frame(self):
        return np.array([float(r.log_lik.data.mean()) for r in self.per_step])


@dataclass
class Rollout:
    mem_state: object
    z_prev: Tensor
    feat_prev: Tensor | None


@dataclass
class ModelConfig:
    kind: str = "introspection"
    latent: int = 8
    heads: int = 5
    slots: int = 15
    hidden: int = 64
    image_dims: tuple = (1, 8, 8)
    feature_width: int = 64
    encoder_kind: str = "small-conv"
    mlp_widths: tuple = (64,)
    head_widths: tuple = (64,)
    context: int = 0
    init_log_sigma: float = -1.0  # starting log-sigma bias of both heads

    def memory_config(self):
        return MemoryConfig(kind=self.kind, latent=self.latent, heads=self.heads,
                            slots=self.slots, hidden=self.hidden,
                            context=self.context, feature=self.feature_width)


class TemporalVae:
    """Sequence VAE over one of the five dependency carriers."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        enc_spec = EncoderSpec(kind=config.encoder_kind, image_dims=config.image_dims,
                               feature_width=config.feature_width,
                               mlp_widths=config.mlp_widths)
        self.encoder = Encoder(enc_spec, rng, dtype)
        self.memory = build_memory(config.memory_config(), rng, dtype)
        n_extra = self.memory.psi_width if config.kind == "vrnn" else 0
        self.decoder = Decoder(enc_spec, config.latent, rng, dtype, n_extra=n_extra)
        head_spec = MlpSpec(widths=list(config.head_widths) + [2 * config.latent])
        self.prior_head = Mlp(self.memory.psi_width, head_spec, rng, dtype)
        self.posterior_head = Mlp(self.memory.psi_width + config.feature_width,
                                  head_spec, rng, dtype)
        for head in (self.prior_head, self.posterior_head):
            # start with sigma = e^init_log_sigma so early latents carry signal
            head.layers[-1].b.data[config.latent:] = config.init_log_sigma
        self.z0 = Tensor(np.zeros(config.latent, dtype=dtype), requires_grad=True)

    # -- heads -------------------------------------------------------------------

    def prior_params(self, psi):
        if psi.shape[-1] != self.memory.psi_width:
            raise ShapeError(f"prior: context width {psi.shape[-1]} != {self.memory.psi_width}")
        return make_gaussian(self.prior_head(psi), self.config.latent)

    def posterior_params(self, psi, x_t):
        return self.posterior_from_features(psi, self.features(x_t))

    def posterior_from_features(self, psi, feat):
        raw = self.posterior_head(E.concat([psi, feat], axis=-1))
        return make_gaussian(raw, self.config.latent)

    def features(self, x_t):
        """Encoded frame; pixel saturations are mapped into (-1, 1) first."""
        two = Tensor(np.full(1, 2.0, dtype=self.dtype))
        one = Tensor(np.ones(1, dtype=self.dtype))
        return self.encoder(E.sub(E.mul(x_t, two), one))

    # -- rollouts -----------------------------------------------------------------

    def begin_episode(self, batch):
        z_prev = E.add(E.reshape(self.z0, (1, -1)),
                       Tensor(np.zeros((batch, self.config.latent), dtype=self.dtype)))
        return Rollout(mem_state=self.memory.init_state(batch), z_prev=z_prev,
                       feat_prev=None)

    def infer_step(self, roll, x_t, c_t, eps_t):
        """One filtering step: context, prior, posterior, sample, score."""
        psi, mem_state = self.memory.step(roll.mem_state, roll.z_prev, c_t,
                                          roll.feat_prev)
        prior = self.prior_params(psi)
        feat = self.features(x_t)
        posterior = self.posterior_from_features(psi, feat)
        z = reparameterize(posterior, eps_t)
        extra = psi if self.config.kind == "vrnn" else None
        log_lik = bernoulli_log_lik(self.decoder(z, extra), x_t)
        kl = gaussian_kl(posterior, prior)
        record = StepRecord(z=z, kl=kl, log_lik=log_lik, prior=prior,
                            posterior=posterior)
        new_roll = Rollout(mem_state=mem_state, z_prev=z,
                           feat_prev=feat if self.config.kind == "vrnn" else None)
        return record, new_roll

    def sequence_elbo(self, frames, actions=None, eps=None, seed=None):
        """Bound over a batch of sequences.

        frames: (B,T,C,H,W) array in [0,1]; actions: optional (B,T,A);
        eps: (T,B,K) standard-normal draws, or a seed to derive them from.
        """
        frames = np.asarray(frames, dtype=self.dtype)
        batch, seq_len = frames.shape[0], frames.shape[1]
        if eps is None:
            if seed is None:
                raise ValueError("sequence_elbo needs eps draws or a seed")
            eps = seeded_rng(seed, "elbo-noise").standard_normal(
                (seq_len, batch, self.config.latent))
        eps = np.asarray(eps, dtype=self.dtype)
        if actions is not None and actions.shape[1] != seq_len:
            raise ShapeError(f"actions length {actions.shape[1]} != frames {seq_len}")

        roll = self.begin_episode(batch)
        records = []
        ll_sum, kl_sum = None, None
        for t in range(seq_len):
            x_t = Tensor(frames[:, t])
            c_t = Tensor(np.asarray(actions[:, t], dtype=self.dtype)) \
                if actions is not None else None
            record, roll = self.infer_step(roll, x_t, c_t, Tensor(eps[t]))
            records.append(record)
            ll_sum = record.log_lik if ll_sum is None else E.add(ll_sum, record.log_lik)
            kl_sum = record.kl if kl_sum is None else E.add(kl_sum, record.kl)

        per_sample = E.sub(ll_sum, kl_sum)                     # (B,)
        scale = Tensor(np.asarray(-1.0 / seq_len, dtype=self.dtype))
        loss = E.mul(E.mean_(per_sample), scale)               # -mean/T, nats per frame
        return ElboBreakdown(total=float(per_sample.data.mean()), per_step=records,
                             seq_len=seq_len, loss=loss,
                             per_sample_total=per_sample.data.copy())

    def generate(self, n, seq_len, actions=None, seed=0):
        """Ancestral rollout from the prior; frames are Bernoulli means in [0,1]."""
        if actions is not None and actions.shape[1] != seq_len:
            raise ShapeError(f"actions length {actions.shape[1]} != {seq_len}")
        rng = seeded_rng(seed, "generate-noise")
        c_, h_, w_ = self.config.image_dims
        frames = np.zeros((n, seq_len, c_, h_, w_), dtype=self.dtype)
        latents = np.zeros((n, seq_len, self.config.latent), dtype=self.dtype)
        with E.no_grad():
            roll = self.begin_episode(n)
            for t in range(seq_len):
                c_t = Tensor(np.asarray(actions[:, t], dtype=self.dtype)) \
                    if actions is not None else None
                psi, mem_state = self.memory.step(roll.mem_state, roll.z_prev, c_t,
                                                  roll.feat_prev)
                prior = self.prior_params(psi)
                eps = Tensor(rng.standard_normal((n, self.config.latent)).astype(self.dtype))
                z = reparameterize(prior, eps)
                extra = psi if self.config.kind == "vrnn" else None
                mean = E.sigmoid(self.decoder(z, extra))
                frames[:, t] = mean.data
                latents[:, t] = z.data
                feat = self.features(mean) if self.config.kind == "vrnn" else None
                roll = Rollout(mem_state=mem_state, z_prev=z, feat_prev=feat)
        return frames, latents

    # -- parameters ------------------------------------------------------------------

    def parameters(self):
        ps = [("z0", self.z0)]
        ps += [(f"enc.{n}", p) for n, p in self.encoder.parameters()]
        ps += [(f"dec.{n}", p) for n, p in self.decoder.parameters()]
        ps += [(f"mem.{n}", p) for n, p in self.memory.parameters()]
        ps += [(f"prior.{n}", p) for n, p in self.prior_head.parameters()]
        ps += [(f"post.{n}", p) for n, p in self.posterior_head.parameters()]
        return ps

    def param_tensors(self):
        return [p for _, p in self.parameters()]
