"""Training and evaluation harness.

A run is fully determined by (config, seed): data, noise, and initialization
draw from independent named streams keyed off the run seed. Each run directory
holds config.json, metrics.csv (schema:
step,neg_elbo,last_frame_kl,wall_s,kl_f0,...,kl_f{T-1}) and checkpoints. The
wall_s column records real elapsed seconds and is the one column excluded from
bitwise reproducibility; every other output byte is reproducible.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from gtmlab import engine as E
from gtmlab import tasks as task_mod
from gtmlab.engine import Adam, NumericError, Tensor
from gtmlab.memory import default_slots
from gtmlab.model import ModelConfig, TemporalVae
from gtmlab.seeds import derive_seed, seeded_rng
from gtmlab.tasks import TaskConfig

MODEL_KINDS = ("vrnn", "introspection", "ntm", "lru", "dnc")
STRIP_SEPARATOR = 255  # byte value of the 1-px frame separators


@dataclass
class TrainConfig:
    model: str = "introspection"
    task: str = "perfect-recall"
    l: int = 10
    k: int = 5
    grid: int = 4
    walk_steps: int = 25
    rotation_steps: int = 30
    image: int = 8
    latent: int = 8
    heads: int = 5
    slots: int = 0            # 0 = auto from the task length
    hidden: int = 64
    feature: int = 64
    encoder: str = "small-conv"
    lr: float = 1e-3
    batch: int = 10
    steps: int = 2000
    seed: int = 0
    eval_every: int = 100
    replica: int = 0
    out: str = "runs/run"
    dataset: str = "synthetic"
    precision: str = "f32"
    per_class: int = 40

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.model}'")
        if self.task not in task_mod.TASK_KINDS:
            raise ValueError(f"unknown task kind '{self.task}'")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got '{self.precision}'")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch and steps must be at least 1")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    @property
    def seq_len(self):
        if self.task == "mnist-map":
            return self.walk_steps + 1
        if self.task == "rotation":
            return self.rotation_steps
        return self.l + self.k

    @property
    def context_width(self):
        return {"mnist-map": 4, "rotation": 1}.get(self.task, 0)

    @property
    def resolved_slots(self):
        return self.slots if self.slots > 0 else default_slots(self.model, self.seq_len)

    @property
    def run_seed(self):
        """Replica id feeds the effective seed."""
        return derive_seed(self.seed, "replica", self.replica)

    def task_config(self):
        return TaskConfig(l=self.l, k=self.k, grid=self.grid, steps=self.walk_steps,
                          image_dims=(1, self.image, self.image),
                          rotation_steps=self.rotation_steps)

    def model_config(self):
        return ModelConfig(kind=self.model, latent=self.latent, heads=self.heads,
                           slots=self.resolved_slots, hidden=self.hidden,
                           image_dims=(1, self.image, self.image),
                           feature_width=self.feature, encoder_kind=self.encoder,
                           context=self.context_width)


def build_model(config: TrainConfig):
    rng = seeded_rng(config.run_seed, "init")
    return TemporalVae(config.model_config(), rng, dtype=config.dtype)


def make_dataset(config: TrainConfig):
    if config.task == "rotation":
        return None
    if config.dataset != "synthetic":
        return task_mod.load_idx(config.dataset,
                                 dims=(1, config.image, config.image))
    ds_seed = derive_seed(config.run_seed, "dataset")
    dims = (1, config.image, config.image)
    if config.task == "one-shot-recall":
        return task_mod.synth_alphabets(per_class=max(config.per_class // 2, 4),
                                        dims=dims, seed=ds_seed)
    return task_mod.synth_glyphs(per_class=config.per_class, dims=dims, seed=ds_seed)


def make_batch(config: TrainConfig, ds, base_seed, index, split="train"):
    """Batch `index` of the stream rooted at base_seed: stacked frames/actions."""
    cfg = config.task_config()
    samples = []
    for i in range(config.batch):
        s_seed = derive_seed(base_seed, "data", index * config.batch + i)
        if config.task == "one-shot-recall":
            samples.append(task_mod.generate(config.task, ds, cfg, s_seed, split=split))
        else:
            samples.append(task_mod.generate(config.task, ds, cfg, s_seed))
    frames = np.stack([s.frames for s in samples])
    actions = None
    if samples[0].actions is not None:
        actions = np.stack([s.actions for s in samples])
    return frames, actions


def batch_noise(config: TrainConfig, base_seed, index):
    rng = seeded_rng(base_seed, "noise", index)
    return rng.standard_normal((config.seq_len, config.batch, config.latent))


def row_from_breakdown(step, out, wall_s):
    kl = out.kl_per_frame()
    return {"step": step,
            "neg_elbo": float(out.loss.data.reshape(-1)[0]),
            "last_frame_kl": float(kl[-1]),
            "wall_s": wall_s,
            "kl_per_frame": kl}


METRIC_FMT = "{:.10g}"


def write_metrics_csv(path, rows, seq_len):
    cols = ["step", "neg_elbo", "last_frame_kl", "wall_s"] + \
        [f"kl_f{t}" for t in range(seq_len)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            vals = [str(row["step"]),
                    METRIC_FMT.format(row["neg_elbo"]),
                    METRIC_FMT.format(row["last_frame_kl"]),
                    METRIC_FMT.format(row["wall_s"])]
            vals += [METRIC_FMT.format(v) for v in row["kl_per_frame"]]
            fh.write(",".join(vals) + "\n")


def read_metrics_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [dict(zip(header, line.strip().split(","))) for line in fh if line.strip()]
    return header, rows


# -- checkpoints -----------------------------------------------------------------------


def save_checkpoint(path, model, config: TrainConfig, step):
    manifest = [[name, list(p.data.shape)] for name, p in model.parameters()]
    header = {"config": asdict(config), "step": step, "manifest": manifest}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild the model a checkpoint was saved from and restore its weights."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        config = TrainConfig(**header["config"])
        model = build_model(config)
        params = model.parameters()
        manifest = header["manifest"]
        if len(manifest) != len(params):
            raise ValueError(f"{path}: manifest has {len(manifest)} entries, "
                             f"model '{config.model}' expects {len(params)}")
        for (name, shape), (have_name, p) in zip(manifest, params):
            if name != have_name or tuple(shape) != p.data.shape:
                raise ValueError(f"{path}: manifest entry {name}{shape} does not "
                                 f"match model parameter {have_name}{p.data.shape}")
            n_bytes = 4 * int(np.prod(shape))
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise ValueError(f"{path}: truncated payload at '{name}'")
            p.data = np.frombuffer(raw, dtype="<f4").reshape(p.data.shape) \
                .astype(config.dtype)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after payload")
    return model, config, header["step"]


# -- training -----------------------------------------------------------------------------


def train(config: TrainConfig):
    """Run one seeded training job; returns (metrics rows, final ckpt path)."""
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config.json"), "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)

    run_seed = config.run_seed
    ds = make_dataset(config)
    model = build_model(config)
    opt = Adam(model.param_tensors(), lr=config.lr)
    rows = []
    t0 = time.perf_counter()
    last_good = [np.array(p.data, copy=True) for p in model.param_tensors()]
    last_good_step = 0

    def log_row(step, out):
        rows.append(row_from_breakdown(step, out, time.perf_counter() - t0))

    try:
        for step in range(config.steps):
            frames, actions = make_batch(config, ds, run_seed, step)
            eps = batch_noise(config, run_seed, step)
            out = model.sequence_elbo(frames, actions=actions, eps=eps)
            if step % config.eval_every == 0 or step == config.steps - 1:
                log_row(step, out)
                last_good = [np.array(p.data, copy=True) for p in model.param_tensors()]
                last_good_step = step
            opt.zero_grad()
            out.loss.backward()
            opt.step()
    except NumericError:
        for p, saved in zip(model.param_tensors(), last_good):
            p.data = saved
        fail_path = os.path.join(config.out, f"ckpt_lastgood_{last_good_step}.bin")
        save_checkpoint(fail_path, model, config, last_good_step)
        write_metrics_csv(os.path.join(config.out, "metrics.csv"), rows, config.seq_len)
        raise

    write_metrics_csv(os.path.join(config.out, "metrics.csv"), rows, config.seq_len)
    ckpt_path = os.path.join(config.out, f"ckpt_{config.steps}.bin")
    save_checkpoint(ckpt_path, model, config, config.steps)
    return rows, ckpt_path


# -- evaluation ------------------------------------------------------------------------------


@dataclass
class EvalResult:
    kl_per_frame: np.ndarray      # (T,) mean over batches
    kl_se: np.ndarray             # (T,) standard error over batches
    neg_elbo: float
    neg_elbo_se: float
    n_batches: int


def evaluate(source, n_batches=5, seed=1234, split="train"):
    """Average per-frame KL and bound over fresh batches.

    `source` is a checkpoint path or a (model, config) pair; batches and noise
    derive from `seed`, so disjoint seeds give unseen data.
    """
    if isinstance(source, (str, os.PathLike)):
        model, config, _ = load_checkpoint(source)
    else:
        model, config = source
    ds = make_dataset(config)
    kl_rows, bounds = [], []
    with E.no_grad():
        for b in range(n_batches):
            frames, actions = make_batch(config, ds, seed, b, split=split)
            eps = batch_noise(config, seed, b)
            out = model.sequence_elbo(frames, actions=actions, eps=eps)
            kl_rows.append(out.kl_per_frame())
            bounds.append(float(out.loss.data.reshape(-1)[0]))
    kl_rows = np.stack(kl_rows)
    bounds = np.asarray(bounds)

    def se(a, axis=0):
        n = a.shape[axis]
        return a.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(a.shape[1:] if axis == 0 else ())

    return EvalResult(kl_per_frame=kl_rows.mean(axis=0), kl_se=se(kl_rows),
                      neg_elbo=float(bounds.mean()), neg_elbo_se=float(se(bounds)),
                      n_batches=n_batches)


def recall_ratio(result: EvalResult, l, k):
    """Mean recall-frame KL over mean distractor-frame KL (frames 2..l, 1-based)."""
    distract = result.kl_per_frame[1:l].mean()
    recall = result.kl_per_frame[l:l + k].mean()
    return float(recall / distract)


# -- image strips ------------------------------------------------------------------------------


def quantize(frames):
    """[0,1] floats to bytes, round half up: 0.5 -> 128."""
    return np.floor(np.clip(frames, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def strip_array(frames):
    """Lay batched frames (N,T,C,H,W) or (T,C,H,W) into one grayscale image
    with 1-px separators between frames and between sequence rows."""
    frames = np.asarray(frames)
    if frames.ndim == 4:
        frames = frames[None]
    n, t, _, h, w = frames.shape
    gray = quantize(frames[:, :, 0])
    out = np.full((n * h + (n - 1), t * w + (t - 1)), STRIP_SEPARATOR, dtype=np.uint8)
    for i in range(n):
        for j in range(t):
            out[i * (h + 1):i * (h + 1) + h, j * (w + 1):j * (w + 1) + w] = gray[i, j]
    return out


def dump_sequence_strip(frames, path):
    """Write the strip as .png (via Pillow) or binary .pgm/.ppm."""
    img = strip_array(frames)
    path = str(path)
    if path.endswith(".png"):
        from PIL import Image
        Image.fromarray(img, mode="L").save(path)
    elif path.endswith(".pgm"):
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            fh.write(img.tobytes())
    elif path.endswith(".ppm"):
        with open(path, "wb") as fh:
            fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            fh.write(np.repeat(img[:, :, None], 3, axis=2).tobytes())
    else:
        raise ValueError(f"unsupported image suffix: {path}")
    return img


def read_pnm(path):
    """Read back a P5/P6 file written by dump_sequence_strip."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        dims = fh.readline().split()
        fh.readline()  # maxval
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if magic == b"P5":
        return data.reshape(h, w)
    if magic == b"P6":
        return data.reshape(h, w, 3)
    raise ValueError(f"{path}: not a P5/P6 file")
