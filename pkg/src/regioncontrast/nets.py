"""Toy multi-task network and its training plumbing.

Shared conv encoder (3 -> 16 -> 32 -> 32, one 2x pooling) with one conv head
per task, upsampled back to input resolution: segmentation emits logits,
depth squashes through a sigmoid into (0,1), normals are normalized to unit
length per pixel.  A separate mapper embeds predictions or labels into a
16-channel joint space at half resolution: per-task input adapter, then a
trunk shared by all tasks.

Parameters live in a flat name -> Tensor dict.  Leaf values are updated in
place by the optimizer between tapes; everything recorded on a tape is left
untouched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    accumulate,
    channel_log_softmax,
    conv2d_3x3,
    downsample_avg2x,
    exp,
    relu,
    upsample_nearest2x,
)
from .errors import FormatError
from .tasks import TASKS, task_channels

C_JOINT = 16
SEG_IGNORE = 255
NORM_FLOOR = 1e-8

_ENCODER = (("enc1", 3, 16), ("enc2", 16, 32), ("enc3", 32, 32))
_TRUNK = (("aux.trunk1", C_JOINT, C_JOINT), ("aux.trunk2", C_JOINT, C_JOINT))


def _layer_specs(n_classes: int):
    specs = list(_ENCODER)
    for task in TASKS:
        specs.append((f"head_{task}", 32, task_channels(task, n_classes)))
    for task in TASKS:
        specs.append((f"aux.adapter_{task}", task_channels(task, n_classes), C_JOINT))
    specs.extend(_TRUNK)
    return specs


def param_names(n_classes: int) -> list[str]:
    names = []
    for name, _, _ in _layer_specs(n_classes):
        names.extend((f"{name}.w", f"{name}.b"))
    return names


def init_params(seed: int, n_classes: int) -> dict[str, Tensor]:
    """Uniform(-b, b) weights with b = sqrt(6 / fan_in); zero biases."""
    rng = np.random.default_rng([seed, 0])
    params: dict[str, Tensor] = {}
    for name, cin, cout in _layer_specs(n_classes):
        bound = np.sqrt(6.0 / (cin * 9))
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=(cout, cin, 3, 3)))
        params[f"{name}.b"] = Tensor(np.zeros(cout))
    return params


# ---------------------------------------------------------------------------
# activations fused as single tape nodes


def _sigmoid(tape: Tape, x: Tensor) -> Tensor:
    v = x.values
    out_vals = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                        np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(out_vals)

    def backward(g):
        accumulate(x, g * out_vals * (1.0 - out_vals))

    tape.record("sigmoid", (x,), out, backward)
    return out


def _unit_normalize(tape: Tape, x: Tensor) -> Tensor:
    """Per-pixel channel normalization with the norm floored at NORM_FLOOR."""
    v = x.values
    norm = np.sqrt((v * v).sum(axis=0, keepdims=True))
    denom = np.maximum(norm, NORM_FLOOR)
    out_vals = v / denom
    out = Tensor(out_vals)
    free = norm > NORM_FLOOR  # where the floor binds, the map is plain scaling

    def backward(g):
        dot = (g * out_vals).sum(axis=0, keepdims=True)
        accumulate(x, np.where(free, (g - out_vals * dot) / denom, g / denom))

    tape.record("unit_normalize", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# forward passes


def _conv(tape: Tape, params, name: str, x: Tensor) -> Tensor:
    return conv2d_3x3(tape, x, params[f"{name}.w"], params[f"{name}.b"])


def backbone_forward(tape: Tape, params: dict[str, Tensor], image: Tensor,
                     n_classes: int) -> dict[str, Tensor]:
    """Image (3,H,W) -> {task: prediction at full resolution}."""
    c, h, w = image.values.shape
    if c != 3:
        raise ValueError(f"expected a 3-channel image, got {c}")
    if h % 2 or w % 2:
        raise ValueError(f"extents must be divisible by 2, got {h}x{w}")
    x = relu(tape, _conv(tape, params, "enc1", image))
    x = downsample_avg2x(tape, x)
    x = relu(tape, _conv(tape, params, "enc2", x))
    feats = relu(tape, _conv(tape, params, "enc3", x))
    preds: dict[str, Tensor] = {}
    for task in TASKS:
        y = upsample_nearest2x(tape, _conv(tape, params, f"head_{task}", feats))
        if task == "depth":
            y = _sigmoid(tape, y)
        elif task == "normal":
            y = _unit_normalize(tape, y)
        preds[task] = y
    return preds


def _one_hot(labels: np.ndarray, n_classes: int, ignore_id: int) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError("segmentation labels must be a 2-D class grid")
    valid = lab != ignore_id
    if valid.any() and int(lab[valid].max()) >= n_classes:
        raise ValueError(f"label {int(lab[valid].max())} >= {n_classes} classes")
    planes = np.zeros((n_classes,) + lab.shape)
    rr, cc = np.nonzero(valid)
    planes[lab[rr, cc].astype(np.int64), rr, cc] = 1.0
    return planes


def task_to_adapter_input(tape: Tape, task: str, value, n_classes: int,
                          ignore_id: int = SEG_IGNORE) -> Tensor:
    """Encode a prediction or a ground-truth label for the aux mapper.

    Predictions arrive as taped Tensors: segmentation logits become softmax
    probabilities, depth/normals pass through.  Labels arrive as plain
    arrays and become constant tensors; ignore pixels turn into all-zero
    one-hot rows.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if isinstance(value, Tensor):
        if task == "seg":
            return exp(tape, channel_log_softmax(tape, value))
        return value
    arr = np.asarray(value)
    if task == "seg":
        return Tensor(_one_hot(arr, n_classes, ignore_id))
    if task == "depth":
        if arr.ndim == 2:
            arr = arr[None]
        return Tensor(np.array(arr, dtype=np.float64))
    if arr.shape[0] != 3:
        raise ValueError("normal labels must be (3,H,W)")
    return Tensor(np.array(arr, dtype=np.float64))


def aux_map_forward(tape: Tape, params: dict[str, Tensor], task: str,
                    adapter_input: Tensor) -> Tensor:
    """Adapter input (task channels, H, W) -> joint features (16, H/2, W/2)."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    _, h, w = adapter_input.values.shape
    if h % 2 or w % 2:
        raise ValueError(f"extents must be divisible by 2, got {h}x{w}")
    x = downsample_avg2x(tape, adapter_input)
    x = _conv(tape, params, f"aux.adapter_{task}", x)
    x = relu(tape, _conv(tape, params, "aux.trunk1", x))
    return _conv(tape, params, "aux.trunk2", x)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimState) -> None:
    """Bias-corrected Adam update, in place on the parameter values."""
    state.step += 1
    t = state.step
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        p = params[name]
        if g.shape != p.values.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs {p.values.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.values))
        v = state.v.setdefault(name, np.zeros_like(p.values))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"RDC1"


def save_params(path, params: dict[str, Tensor]) -> None:
    """Manifest (count; per tensor: name, rank, extents) then raw float64 LE."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            vals = params[name].values
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", vals.ndim))
            fh.write(struct.pack(f"<{vals.ndim}Q", *vals.shape))
        for name in names:
            fh.write(np.ascontiguousarray(params[name].values, dtype="<f8").tobytes())


def load_params(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        entries.append((name, tuple(int(s) for s in shape)))
    params: dict[str, Tensor] = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(blob):
            raise FormatError(f"{path}: truncated checkpoint data for {name}")
        params[name] = Tensor(np.frombuffer(blob[off:end], dtype="<f8")
                              .astype(np.float64).reshape(shape))
        off = end
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return params
