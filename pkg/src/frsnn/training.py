"""Dataset ingestion, rate encoding, AdamW, the training loop, checkpoints.

Images are encoded as Poisson rates: a pixel intensity in [0, 1] becomes a
mean firing rate in spikes/ms with matching variance and no off-diagonal
correlation.  Training runs the single-hidden-layer fast path of
:mod:`frsnn.mnn` with the composite loss of :mod:`frsnn.objective` under
AdamW with decoupled weight decay.

Checkpoint file layout (little-endian):

    magic       4 bytes  b"MNN1"
    version     u32      currently 1
    n_hidden    u32
    sizes       u32 x (n_hidden + 2)     input, hidden..., output
    blocks      f64 row-major, declaration order:
                per hidden layer: weight (n_k x n_{k-1}), external mean (n_k)
                readout weight (n_out x n_K), readout bias (n_out)
    meta_len    u32
    meta        UTF-8 JSON (epoch, seed, mode, accuracy history, LIF and
                loss constants, initialization note)
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import mnn, objective, rng
from .errors import FormatError, InputError, NumericError, ShapeError
from .moment_activation import LifParams

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CHECKPOINT_MAGIC = b"MNN1"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "epoch,split,accuracy,loss_ce,loss_fidelity"


@dataclass
class Dataset:
    images: np.ndarray    # (N, H, W) float64 in [0, 1]
    labels: np.ndarray    # (N,) int64 in [0, 9]
    split: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError("image count must equal label count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise FormatError("labels must lie in [0, 9]")

    def __len__(self):
        return self.images.shape[0]

    @property
    def flat_images(self):
        return self.images.reshape(len(self), -1)


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        data = fh.read()
    if head == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def load_idx(images_path, labels_path, split="train") -> Dataset:
    """Parse an IDX image/label file pair (gzip-compressed variants accepted)."""
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)

    if len(img) < 16:
        raise FormatError(f"{images_path}: truncated header at byte {len(img)}")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x} "
                          f"(expected 0x{IDX_IMAGES_MAGIC:08x})")
    need = 16 + n * rows * cols
    if len(img) < need:
        raise FormatError(f"{images_path}: truncated at byte {len(img)} "
                          f"(need {need})")
    images = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols,
                           offset=16).reshape(n, rows, cols)

    if len(lab) < 8:
        raise FormatError(f"{labels_path}: truncated header at byte {len(lab)}")
    lmagic, ln = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{lmagic:08x} "
                          f"(expected 0x{IDX_LABELS_MAGIC:08x})")
    if ln != n:
        raise FormatError(f"label count {ln} != image count {n}")
    if len(lab) < 8 + n:
        raise FormatError(f"{labels_path}: truncated at byte {len(lab)} "
                          f"(need {8 + n})")
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8)

    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), split)


def random_crop(image, pad, rng_gen):
    """Zero-pad by ``pad`` on all sides, then crop back at a uniform offset."""
    h, w = image.shape
    if h != w:
        raise ShapeError("random_crop expects a square image")
    padded = np.zeros((h + 2 * pad, w + 2 * pad), dtype=image.dtype)
    padded[pad:pad + h, pad:pad + w] = image
    oy, ox = rng_gen.integers(0, 2 * pad + 1, size=2)
    return padded[oy:oy + h, ox:ox + w]


def _crop_batch(images, pad, rng_gen):
    b, h, w = images.shape
    padded = np.zeros((b, h + 2 * pad, w + 2 * pad), dtype=images.dtype)
    padded[:, pad:pad + h, pad:pad + w] = images
    offs = rng_gen.integers(0, 2 * pad + 1, size=(b, 2))
    out = np.empty_like(images)
    for i, (oy, ox) in enumerate(offs):
        out[i] = padded[i, oy:oy + h, ox:ox + w]
    return out


def encode_rates(image) -> mnn.MomentPair:
    """Poisson rate coding: mean = variance = pixel intensity, zero off-diagonals."""
    pix = np.asarray(image, dtype=np.float64).reshape(-1)
    if pix.size and (pix.min() < 0.0 or pix.max() > 1.0):
        raise InputError("pixels must lie in [0, 1]")
    return mnn.MomentPair(pix, np.diag(pix))


def encode_rates_batch(images):
    flat = images.reshape(images.shape[0], -1)
    return flat, flat


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    lr: float = 0.001
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        st = cls(**hyper)
        for name, arr in params.items():
            st.m[name] = np.zeros_like(arr)
            st.v[name] = np.zeros_like(arr)
        return st


def adamw_step(params, grads, state: OptimState):
    """One AdamW update, in place.  Decay is decoupled: applied to the
    parameters directly, never through the gradient."""
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: mnn.NetworkParams
    loss_config: objective.LossConfig
    metadata: dict

    @property
    def lif(self):
        return self.params.lif


def save_checkpoint(ckpt: Checkpoint, path):
    p = ckpt.params
    sizes = p.sizes
    meta = dict(ckpt.metadata)
    meta.setdefault("format", "frsnn-checkpoint")
    meta["lif"] = {"leak": p.lif.leak, "v_threshold": p.lif.v_threshold,
                   "v_reset": p.lif.v_reset, "t_refractory": p.lif.t_refractory,
                   "dt": p.lif.dt}
    meta["loss"] = {"w_top": ckpt.loss_config.w_top,
                    "w_rest": ckpt.loss_config.w_rest,
                    "dt": ckpt.loss_config.dt,
                    "clamp": ckpt.loss_config.clamp}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", p.n_hidden_layers))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for arr in p.iter_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"{path}: truncated reading {what} at byte {off}")
        piece = data[off:off + n]
        off += n
        return piece

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (n_hidden,) = struct.unpack("<I", take(4, "layer count"))
    sizes = struct.unpack(f"<{n_hidden + 2}I", take(4 * (n_hidden + 2), "sizes"))

    def block(shape):
        n = int(np.prod(shape))
        raw = take(8 * n, f"parameter block {shape}")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    hw, he = [], []
    for k in range(n_hidden):
        hw.append(block((sizes[k + 1], sizes[k])))
        he.append(block((sizes[k + 1],)))
    w_r = block((sizes[-1], sizes[-2]))
    bias = block((sizes[-1],))
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    meta = json.loads(take(meta_len, "metadata").decode("utf-8"))

    lif = LifParams(**meta["lif"])
    loss_cfg = objective.LossConfig(**meta["loss"])
    params = mnn.NetworkParams(hw, he, w_r, bias, lif)
    return Checkpoint(params, loss_cfg, meta)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    sizes: tuple = (784, 1000, 10)
    mode: str = "with-fidelity"          # or "mean-only"
    epochs: int = 30
    batch_size: int = 50
    seed: int = 1
    lr: float = 0.001
    weight_decay: float = 0.01
    augment: bool = True
    crop_pad: int = 2
    lif: LifParams = field(default_factory=LifParams)
    loss: objective.LossConfig = field(default_factory=objective.LossConfig)

    def __post_init__(self):
        if self.mode not in ("with-fidelity", "mean-only"):
            raise InputError(f"unknown training mode {self.mode!r}")

    def config_hash(self):
        payload = json.dumps({
            "sizes": list(self.sizes), "mode": self.mode, "epochs": self.epochs,
            "batch": self.batch_size, "seed": self.seed, "lr": self.lr,
            "wd": self.weight_decay, "augment": self.augment,
            "pad": self.crop_pad,
            "lif": [self.lif.leak, self.lif.v_threshold, self.lif.v_reset,
                    self.lif.t_refractory, self.lif.dt],
            "loss": [self.loss.w_top, self.loss.w_rest, self.loss.dt,
                     self.loss.clamp],
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def evaluate_accuracy(params, dataset: Dataset, batch=512):
    """Mean-path test accuracy plus the mean cross-entropy."""
    flat = dataset.flat_images
    correct = 0
    ce_sum = 0.0
    for start in range(0, len(dataset), batch):
        x = flat[start:start + batch]
        labels = dataset.labels[start:start + batch]
        mu, _, _ = mnn.forward_fast(params, x, x, need_cov=False)
        correct += int((mu.argmax(axis=1) == labels).sum())
        z = mu - mu.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1)) + mu.max(axis=1)
        ce_sum += float((lse - mu[np.arange(len(labels)), labels]).sum())
    return correct / len(dataset), ce_sum / len(dataset)


def train(cfg: TrainConfig, train_set: Dataset, test_set: Dataset,
          progress=None):
    """Train an MNN; returns (Checkpoint, metrics rows).

    Metrics rows follow the header ``epoch,split,accuracy,loss_ce,
    loss_fidelity``; the test rows carry the mean-path cross entropy and an
    empty fidelity column.  Deterministic given (seed, config).
    """
    if train_set.flat_images.shape[1] != cfg.sizes[0]:
        raise ShapeError("dataset does not match the configured input size")
    init_rng = rng.stream(cfg.seed, "init")
    shuffle_rng = rng.stream(cfg.seed, "shuffle")
    augment_rng = rng.stream(cfg.seed, "augment")

    params = mnn.NetworkParams.init(cfg.sizes, init_rng, lif=cfg.lif)
    pdict = params.param_dict()
    state = OptimState.for_params(pdict, lr=cfg.lr, weight_decay=cfg.weight_decay)
    mean_only = cfg.mode == "mean-only"
    rows = []
    history = []

    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        ce_sum = fid_sum = 0.0
        hit = 0
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart:bstart + cfg.batch_size]
            imgs = train_set.images[idx]
            if cfg.augment:
                imgs = _crop_batch(imgs, cfg.crop_pad, augment_rng)
            x, v = encode_rates_batch(imgs)
            labels = train_set.labels[idx]

            mu, cov, cache = mnn.forward_fast(params, x, v,
                                              need_cov=not mean_only)
            loss, ce, fid, gmu, gcov = objective.batch_loss(
                mu, cov, labels, cfg.loss, mean_only=mean_only)
            if not np.isfinite(loss):
                raise NumericError(f"loss diverged at epoch {epoch}, "
                                   f"batch {bstart // cfg.batch_size}")
            grads = mnn.backward(params, cache, (gmu, gcov))
            adamw_step(pdict, grads.as_dict(), state)

            ce_sum += ce * len(idx)
            fid_sum += fid * len(idx)
            hit += int((mu.argmax(axis=1) == labels).sum())

        test_acc, test_ce = evaluate_accuracy(params, test_set)
        history.append(test_acc)
        rows.append((epoch, "train", hit / n, ce_sum / n, fid_sum / n))
        rows.append((epoch, "test", test_acc, test_ce, ""))
        if progress is not None:
            progress(epoch, test_acc)

    meta = {
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "sizes": list(cfg.sizes),
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "augment": cfg.augment,
        "test_accuracy_history": history,
        "init": "uniform fan-in scaled weights, external means at rheobase",
        "config_hash": cfg.config_hash(),
    }
    return Checkpoint(params, cfg.loss, meta), rows


def write_metrics_csv(rows, path, stamp):
    """Metrics CSV with a provenance comment line (config hash, seed, version)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# frsnn config_hash={stamp['config_hash']} "
                 f"seed={stamp['seed']} version={stamp['version']}\n")
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
