"""Trainable speech-to-coefficient model and its from-scratch training loop.

The model maps one temporal window of phoneme logits (K frames, 392
classes) to blendshape coefficients: a stack of log2(K) stride-2 residual
conv blocks fuses the window down to a single H-vector, a per-style
embedding row is added to it, and a two-layer head squashes through a
Sigmoid into theta in (0,1)^B. Targets are vertex positions decoded by a
frozen linear skinning layer, so the loss is a plain (optionally
mouth-weighted) squared vertex error.

Everything runs in float64 numpy with hand-written reverse-mode gradients
so analytic derivatives can be held to finite-difference oracles; an
optional float32 path covers inference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arkit import BLINK_NAMES, CHANNEL_COUNT, canonical_index
from .formats import _Reader, _check_header
from .frontend import CLASS_COUNT
from .lbs import BlendCoefficients, LbsRig, MotionSequence

_FORMAT_VERSION = 1
_ADAM_EPS = 1e-8


@dataclass
class BlockParams:
    """One stride-2 residual fusion block.

    conv(k3, s2) -> bias -> ReLU -> conv(k3, s1, same) -> bias, plus a
    1x1 stride-2 shortcut projection added to the result.
    """

    conv1_weight: np.ndarray  # (C_out, C_in, 3)
    conv1_bias: np.ndarray  # (C_out,)
    conv2_weight: np.ndarray  # (C_out, C_out, 3)
    conv2_bias: np.ndarray  # (C_out,)
    shortcut_weight: np.ndarray  # (C_out, C_in, 1)


@dataclass
class ModelParams:
    """All trainable weights; shapes fix (K, H, N, B, class count)."""

    blocks: list[BlockParams]
    style_table: np.ndarray  # (N, H)
    head1_weight: np.ndarray  # (2H, H)
    head1_bias: np.ndarray  # (2H,)
    head2_weight: np.ndarray  # (B, 2H)
    head2_bias: np.ndarray  # (B,)

    @property
    def window_size(self) -> int:
        return 1 << len(self.blocks)

    @property
    def hidden_size(self) -> int:
        return self.style_table.shape[1]

    @property
    def style_count(self) -> int:
        return self.style_table.shape[0]

    @property
    def output_size(self) -> int:
        return self.head2_bias.shape[0]

    @property
    def class_count(self) -> int:
        return self.blocks[0].conv1_weight.shape[1]


def named_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """(name, array) pairs in the fixed declaration order used everywhere:
    checkpoints, gradients, and optimizer state all follow this layout."""
    out = []
    for i, blk in enumerate(params.blocks):
        out.append((f"block{i}.conv1_weight", blk.conv1_weight))
        out.append((f"block{i}.conv1_bias", blk.conv1_bias))
        out.append((f"block{i}.conv2_weight", blk.conv2_weight))
        out.append((f"block{i}.conv2_bias", blk.conv2_bias))
        out.append((f"block{i}.shortcut_weight", blk.shortcut_weight))
    out.append(("style_table", params.style_table))
    out.append(("head1_weight", params.head1_weight))
    out.append(("head1_bias", params.head1_bias))
    out.append(("head2_weight", params.head2_weight))
    out.append(("head2_bias", params.head2_bias))
    return out


def init_params(
    seed: int,
    window_size: int = 8,
    hidden_size: int = 64,
    style_count: int = 10,
    output_size: int = CHANNEL_COUNT,
    class_count: int = CLASS_COUNT,
) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, zero style table."""
    if window_size < 2 or window_size & (window_size - 1):
        raise ValueError("window_size must be a power of two, at least 2")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    blocks = []
    c_in = class_count
    for _ in range(int(np.log2(window_size))):
        blocks.append(
            BlockParams(
                conv1_weight=uniform((hidden_size, c_in, 3), c_in * 3),
                conv1_bias=np.zeros(hidden_size),
                conv2_weight=uniform((hidden_size, hidden_size, 3), hidden_size * 3),
                conv2_bias=np.zeros(hidden_size),
                shortcut_weight=uniform((hidden_size, c_in, 1), c_in),
            )
        )
        c_in = hidden_size
    return ModelParams(
        blocks=blocks,
        style_table=np.zeros((style_count, hidden_size)),
        head1_weight=uniform((2 * hidden_size, hidden_size), hidden_size),
        head1_bias=np.zeros(2 * hidden_size),
        head2_weight=uniform((output_size, 2 * hidden_size), 2 * hidden_size),
        head2_bias=np.zeros(output_size),
    )


def cast_params(params: ModelParams, dtype) -> ModelParams:
    """Copy of the model at another float precision (float32 inference)."""
    return ModelParams(
        blocks=[
            BlockParams(
                conv1_weight=b.conv1_weight.astype(dtype),
                conv1_bias=b.conv1_bias.astype(dtype),
                conv2_weight=b.conv2_weight.astype(dtype),
                conv2_bias=b.conv2_bias.astype(dtype),
                shortcut_weight=b.shortcut_weight.astype(dtype),
            )
            for b in params.blocks
        ],
        style_table=params.style_table.astype(dtype),
        head1_weight=params.head1_weight.astype(dtype),
        head1_bias=params.head1_bias.astype(dtype),
        head2_weight=params.head2_weight.astype(dtype),
        head2_bias=params.head2_bias.astype(dtype),
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _conv1d(x, weight, bias, stride, pad):
    """x (C_in, T) -> (y, cols); cols kept for the backward pass."""
    c_in, t = x.shape
    c_out, _, k = weight.shape
    if pad:
        xp = np.zeros((c_in, t + 2 * pad), dtype=x.dtype)
        xp[:, pad : pad + t] = x
    else:
        xp = x
    t_out = (xp.shape[1] - k) // stride + 1
    gather = stride * np.arange(t_out)[:, None] + np.arange(k)[None, :]
    cols = xp[:, gather].transpose(0, 2, 1).reshape(c_in * k, t_out)
    y = weight.reshape(c_out, c_in * k) @ cols
    if bias is not None:
        y = y + bias[:, None]
    return y, cols


def _conv1d_backward(dy, cols, weight, in_shape, stride, pad):
    """Gradients of _conv1d: returns (dweight, dbias, dx)."""
    c_out, c_in, k = weight.shape
    t = in_shape[1]
    t_out = dy.shape[1]
    dweight = (dy @ cols.T).reshape(c_out, c_in, k)
    dbias = dy.sum(axis=1)
    dcols = weight.reshape(c_out, c_in * k).T @ dy
    dxp = np.zeros((c_in, t + 2 * pad), dtype=dy.dtype)
    gather = stride * np.arange(t_out)[:, None] + np.arange(k)[None, :]
    np.add.at(dxp, (slice(None), gather), dcols.reshape(c_in, k, t_out).transpose(0, 2, 1))
    return dweight, dbias, dxp[:, pad : pad + t] if pad else dxp


def _check_window(params: ModelParams, window) -> np.ndarray:
    w = np.asarray(window, dtype=params.style_table.dtype)
    if w.shape != (params.window_size, params.class_count):
        raise ValueError(
            f"window has shape {w.shape}, model expects "
            f"({params.window_size}, {params.class_count})"
        )
    return w


def _run_forward(params: ModelParams, window, style_id: int, dropout_mask):
    """Full forward pass; returns (theta, tape) for reverse mode."""
    w = _check_window(params, window)
    if not 0 <= style_id < params.style_count:
        raise ValueError(
            f"style_id {style_id} out of range for {params.style_count} styles"
        )
    x = np.ascontiguousarray(w.T)
    taped_blocks = []
    for blk in params.blocks:
        y1, cols1 = _conv1d(x, blk.conv1_weight, blk.conv1_bias, stride=2, pad=1)
        a1 = np.maximum(y1, 0.0)
        y2, cols2 = _conv1d(a1, blk.conv2_weight, blk.conv2_bias, stride=1, pad=1)
        shortcut, cols_s = _conv1d(x, blk.shortcut_weight, None, stride=2, pad=0)
        taped_blocks.append((x, cols1, y1, a1, cols2, cols_s))
        x = y2 + shortcut
    h = x[:, 0]
    fused = h + params.style_table[style_id]
    z1 = params.head1_weight @ fused + params.head1_bias
    a = np.maximum(z1, 0.0)
    dropped = a if dropout_mask is None else a * dropout_mask
    z2 = params.head2_weight @ dropped + params.head2_bias
    theta = 1.0 / (1.0 + np.exp(-z2))
    tape = (taped_blocks, fused, z1, dropped, theta, style_id, dropout_mask)
    return theta, tape


def _run_backward(params: ModelParams, tape, dtheta) -> dict[str, np.ndarray]:
    taped_blocks, fused, z1, dropped, theta, style_id, dropout_mask = tape
    grads: dict[str, np.ndarray] = {}

    dz2 = dtheta * theta * (1.0 - theta)
    grads["head2_weight"] = np.outer(dz2, dropped)
    grads["head2_bias"] = dz2
    da = params.head2_weight.T @ dz2
    if dropout_mask is not None:
        da = da * dropout_mask
    dz1 = da * (z1 > 0.0)
    grads["head1_weight"] = np.outer(dz1, fused)
    grads["head1_bias"] = dz1
    dh = params.head1_weight.T @ dz1

    dstyle = np.zeros_like(params.style_table)
    dstyle[style_id] = dh
    grads["style_table"] = dstyle

    dx = dh[:, None]
    for i in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[i]
        x, cols1, y1, a1, cols2, cols_s = taped_blocks[i]
        dw2, db2, da1 = _conv1d_backward(dx, cols2, blk.conv2_weight, a1.shape, 1, 1)
        dy1 = da1 * (y1 > 0.0)
        dw1, db1, dx_main = _conv1d_backward(dy1, cols1, blk.conv1_weight, x.shape, 2, 1)
        dws, _, dx_side = _conv1d_backward(dx, cols_s, blk.shortcut_weight, x.shape, 2, 0)
        grads[f"block{i}.conv1_weight"] = dw1
        grads[f"block{i}.conv1_bias"] = db1
        grads[f"block{i}.conv2_weight"] = dw2
        grads[f"block{i}.conv2_bias"] = db2
        grads[f"block{i}.shortcut_weight"] = dws
        dx = dx_main + dx_side
    return grads


def _dropout_mask(params: ModelParams, rate: float, rng) -> np.ndarray | None:
    if rate <= 0.0:
        return None
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(2 * params.hidden_size) >= rate
    return keep / (1.0 - rate)


def forward(
    params: ModelParams,
    window,
    style_id: int,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng=None,
) -> BlendCoefficients:
    """Window of logits -> coefficients. Eval mode is a pure function;
    train mode applies inverted dropout between the head layers."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    mask = _dropout_mask(params, dropout_rate, rng) if mode == "train" else None
    theta, _ = _run_forward(params, window, style_id, mask)
    return BlendCoefficients(np.asarray(theta, dtype=np.float64))


def human_decode(rig: LbsRig, theta) -> np.ndarray:
    """Frozen linear decoder: coefficients -> absolute vertex positions.

    Matrix form of the skinning sum, so training can treat the human rig
    as a fixed affine output layer.
    """
    vals = theta.values if isinstance(theta, BlendCoefficients) else np.asarray(theta)
    if vals.shape != (rig.blendshape_count,):
        raise ValueError(
            f"coefficient vector has shape {vals.shape}, rig has "
            f"{rig.blendshape_count} blendshapes"
        )
    return vals @ rig.basis.matrix + rig.mesh.positions


def loss(pred_vertices, target_vertices, mouth_mask, mouth_weight: float) -> float:
    """Squared vertex error plus the weighted mouth term."""
    pred = np.asarray(pred_vertices, dtype=np.float64)
    target = np.asarray(target_vertices, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(
            f"prediction has shape {pred.shape}, target {target.shape}"
        )
    mask = np.asarray(mouth_mask, dtype=np.int64)
    if mask.size and (mask.min() < 0 or mask.max() >= pred.size // 3):
        raise ValueError("mouth mask indexes vertices outside the prediction")
    diff = pred - target
    total = diff @ diff
    rows = (3 * mask[:, None] + np.arange(3)[None, :]).ravel()
    mouth_diff = diff[rows]
    return float(total + mouth_weight * (mouth_diff @ mouth_diff))


def _loss_gradient(pred, target, mouth_mask, mouth_weight):
    diff = pred - target
    grad = 2.0 * diff
    rows = (3 * np.asarray(mouth_mask, dtype=np.int64)[:, None] + np.arange(3)).ravel()
    grad[rows] += 2.0 * mouth_weight * diff[rows]
    return grad


@dataclass(frozen=True)
class TrainingSample:
    """One supervised pair: logit window + style -> target vertex frame."""

    window: np.ndarray
    style_id: int
    target_vertices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "window", np.asarray(self.window, dtype=np.float64))
        object.__setattr__(
            self, "target_vertices", np.asarray(self.target_vertices, dtype=np.float64)
        )
        if self.style_id < 0:
            raise ValueError("style_id must be nonnegative")


def training_loss(
    params: ModelParams,
    rig: LbsRig,
    sample: TrainingSample,
    mouth_weight: float,
    dropout_rate: float = 0.0,
    seed: int | None = None,
) -> float:
    """Loss of one sample; with dropout, the mask is derived from ``seed``
    so the value pairs deterministically with ``backward``."""
    mask = _dropout_mask(params, dropout_rate, np.random.default_rng(seed))
    theta, _ = _run_forward(params, sample.window, sample.style_id, mask)
    return loss(
        human_decode(rig, theta), sample.target_vertices, rig.mouth_mask, mouth_weight
    )


def backward(
    params: ModelParams,
    rig: LbsRig,
    sample: TrainingSample,
    mouth_weight: float,
    dropout_rate: float = 0.0,
    seed: int | None = None,
) -> dict[str, np.ndarray]:
    """Analytic gradients of the sample loss for every trainable array.

    The frozen decoder contributes only its transpose to the chain; no
    gradient entry exists for it.
    """
    mask = _dropout_mask(params, dropout_rate, np.random.default_rng(seed))
    grads, _ = _sample_gradients(params, rig, sample, mouth_weight, mask)
    return grads


def _sample_gradients(params, rig, sample, mouth_weight, dropout_mask):
    theta, tape = _run_forward(params, sample.window, sample.style_id, dropout_mask)
    pred = human_decode(rig, theta)
    value = loss(pred, sample.target_vertices, rig.mouth_mask, mouth_weight)
    dpred = _loss_gradient(pred, sample.target_vertices, rig.mouth_mask, mouth_weight)
    dtheta = rig.basis.matrix @ dpred
    return _run_backward(params, tape, dtheta), value


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epochs: int = 200
    batch_size: int = 16
    dropout_rate: float = 0.1
    mouth_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.learning_rate:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like named_arrays."""

    step: int
    first: dict[str, np.ndarray]
    second: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            step=0,
            first={n: np.zeros_like(a) for n, a in named_arrays(params)},
            second={n: np.zeros_like(a) for n, a in named_arrays(params)},
        )


@dataclass(frozen=True)
class TrainHistory:
    train_loss: np.ndarray
    val_loss: np.ndarray | None = None


def _adam_step(params, grads, state, config):
    state.step += 1
    t = state.step
    correct1 = 1.0 - config.beta1 ** t
    correct2 = 1.0 - config.beta2 ** t
    for name, array in named_arrays(params):
        g = grads[name]
        m = state.first[name]
        v = state.second[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        update = (m / correct1) / (np.sqrt(v / correct2) + _ADAM_EPS)
        array -= config.learning_rate * (update + config.weight_decay * array)


def train(
    params: ModelParams,
    rig: LbsRig,
    dataset,
    config: TrainConfig,
    validation=(),
    adam_state: AdamState | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """AdamW over shuffled mini-batches; mutates and returns ``params``.

    Per-sample gradients reduce in batch order, so a fixed seed reproduces
    the loss history bitwise.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    validation = list(validation)
    rng = np.random.default_rng(config.seed)
    state = adam_state if adam_state is not None else AdamState.zeros_like(params)
    train_hist = np.zeros(config.epochs)
    val_hist = np.zeros(config.epochs) if validation else None
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(dataset), config.batch_size):
            batch = order[start : start + config.batch_size]
            total: dict[str, np.ndarray] | None = None
            for i in batch:
                mask = _dropout_mask(params, config.dropout_rate, rng)
                grads, value = _sample_gradients(
                    params, rig, dataset[i], config.mouth_weight, mask
                )
                epoch_loss += value
                if total is None:
                    total = grads
                else:
                    for name in total:
                        total[name] += grads[name]
            for name in total:
                total[name] /= batch.size
            _adam_step(params, total, state, config)
        train_hist[epoch] = epoch_loss / len(dataset)
        if validation:
            val_hist[epoch] = float(
                np.mean(
                    [
                        training_loss(params, rig, s, config.mouth_weight)
                        for s in validation
                    ]
                )
            )
    return params, TrainHistory(train_hist, val_hist)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------


def save_model(path, params: ModelParams, adam_state: AdamState | None = None) -> None:
    """Binary checkpoint: "MNET", version, dims, f64 blobs in declared
    order, then an optional "ADAM" section with the moment blobs."""
    parts = [
        b"MNET",
        struct.pack(
            "<6I",
            _FORMAT_VERSION,
            params.window_size,
            params.hidden_size,
            params.style_count,
            params.output_size,
            params.class_count,
        ),
    ]
    for _, array in named_arrays(params):
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    if adam_state is not None:
        parts.append(b"ADAM")
        parts.append(struct.pack("<I", adam_state.step))
        for name, _ in named_arrays(params):
            parts.append(np.ascontiguousarray(adam_state.first[name], dtype="<f8").tobytes())
        for name, _ in named_arrays(params):
            parts.append(np.ascontiguousarray(adam_state.second[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> tuple[ModelParams, AdamState | None]:
    r = _Reader(Path(path).read_bytes(), "model file")
    _check_header(r, b"MNET")
    window_size = r.u32()
    hidden = r.u32()
    styles = r.u32()
    outputs = r.u32()
    classes = r.u32()
    params = init_params(
        seed=0,
        window_size=window_size,
        hidden_size=hidden,
        style_count=styles,
        output_size=outputs,
        class_count=classes,
    )
    for _, array in named_arrays(params):
        array[...] = r.f64_array(array.size).reshape(array.shape)
    state = None
    if r.remaining() >= 4 and r.peek(4) == b"ADAM":
        r.take(4)
        state = AdamState.zeros_like(params)
        state.step = r.u32()
        for name, array in named_arrays(params):
            state.first[name][...] = r.f64_array(array.size).reshape(array.shape)
        for name, array in named_arrays(params):
            state.second[name][...] = r.f64_array(array.size).reshape(array.shape)
    return params, state


# ---------------------------------------------------------------------------
# Blink augmentation
# ---------------------------------------------------------------------------


def synth_augment_blinks(
    seq: MotionSequence,
    rate_hz: float,
    seed: int,
    channels: tuple[int, ...] | None = None,
) -> MotionSequence:
    """Overlay raised-cosine eyelid pulses at Poisson-distributed times.

    The pulse spans ~200 ms of playback with an odd frame count so its
    center frame hits exactly 1.0; blinks combine with existing values by
    elementwise max, every other channel passes through untouched.
    """
    if rate_hz < 0.0:
        raise ValueError("blink rate must be nonnegative")
    if channels is None:
        if seq.blendshape_count != CHANNEL_COUNT:
            raise ValueError(
                "sequence does not use the canonical channel layout; "
                "pass eyelid channel indices explicitly"
            )
        channels = tuple(canonical_index(n) for n in BLINK_NAMES)
    if rate_hz == 0.0:
        return MotionSequence(seq.fps, seq.frames)
    pulse_len = max(3, int(round(0.2 * seq.fps)))
    if pulse_len % 2 == 0:
        pulse_len += 1
    ramp = np.arange(pulse_len) / (pulse_len - 1)
    pulse = 0.5 * (1.0 - np.cos(2.0 * np.pi * ramp))
    pulse[pulse_len // 2] = 1.0  # pin the analytic peak against rounding

    rng = np.random.default_rng(seed)
    duration_s = seq.frame_count / seq.fps
    count = rng.poisson(rate_hz * duration_s)
    starts = np.sort(rng.uniform(0.0, duration_s, count))
    frames = seq.frames.copy()
    for t0 in starts:
        begin = int(t0 * seq.fps)
        end = min(begin + pulse_len, seq.frame_count)
        span = end - begin
        if span <= 0:
            continue
        for channel in channels:
            frames[begin:end, channel] = np.maximum(
                frames[begin:end, channel], pulse[:span]
            )
    return MotionSequence(seq.fps, frames)
