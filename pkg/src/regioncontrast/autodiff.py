"""Dense float64 tensors with taped reverse-mode differentiation.

Every compute operation appends one node to a Tape; the node stores the op
name, its input/output tensors and a closure that turns the output gradient
into input gradients.  Backward visits nodes in exact reverse recording
order, so the topological contract holds by construction.  Shapes must
match exactly: there is no broadcasting.

All arithmetic is 64-bit.  Tensors are treated as immutable once created;
only ``grad`` buffers are written during a backward pass.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    """Dense N-dimensional array plus an optional gradient buffer."""

    __slots__ = ("values", "grad")

    def __init__(self, values, copy: bool = False):
        self.values = np.array(values, dtype=np.float64) if copy else np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape})"


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of ops; backward replays it once, in reverse."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, op: str, inputs: Iterable[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], None]) -> None:
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward))

    def backward(self, root: Tensor) -> None:
        if root.values.size != 1:
            raise ValueError("backward requires a scalar root tensor")
        accumulate(root, np.ones_like(root.values))
        for node in reversed(self.nodes):
            if node.output.grad is not None:
                node.backward(node.output.grad)


def accumulate(t: Tensor, delta: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += delta


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.values.shape != b.values.shape:
        raise ValueError(f"{op}: shape mismatch {a.values.shape} vs {b.values.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.values + b.values)

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    tape.record("add", (a, b), out, backward)
    return out


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.values - b.values)

    def backward(g):
        accumulate(a, g)
        accumulate(b, -g)

    tape.record("sub", (a, b), out, backward)
    return out


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.values * b.values)

    def backward(g):
        accumulate(a, g * b.values)
        accumulate(b, g * a.values)

    tape.record("mul", (a, b), out, backward)
    return out


def scale(tape: Tape, a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values * c)

    def backward(g):
        accumulate(a, g * c)

    tape.record("scale", (a,), out, backward)
    return out


def negate(tape: Tape, a: Tensor) -> Tensor:
    out = Tensor(-a.values)

    def backward(g):
        accumulate(a, -g)

    tape.record("negate", (a,), out, backward)
    return out


def exp(tape: Tape, a: Tensor) -> Tensor:
    ev = np.exp(a.values)
    out = Tensor(ev)

    def backward(g):
        accumulate(a, g * ev)

    tape.record("exp", (a,), out, backward)
    return out


def log(tape: Tape, a: Tensor) -> Tensor:
    bad = a.values <= 0.0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"log: non-positive value {a.values[idx]} at index {idx}")
    out = Tensor(np.log(a.values))

    def backward(g):
        accumulate(a, g / a.values)

    tape.record("log", (a,), out, backward)
    return out


def relu(tape: Tape, a: Tensor) -> Tensor:
    mask = a.values > 0.0  # subgradient 0 at exactly 0
    out = Tensor(np.where(mask, a.values, 0.0))

    def backward(g):
        accumulate(a, g * mask)

    tape.record("relu", (a,), out, backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra and spatial ops


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul: both operands must be rank-2")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {av.shape} vs {bv.shape}")
    out = Tensor(av @ bv)

    def backward(g):
        accumulate(a, g @ bv.T)
        accumulate(b, av.T @ g)

    tape.record("matmul", (a, b), out, backward)
    return out


def conv2d_3x3(tape: Tape, x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1; output keeps HxW."""
    xv, kv, bv = x.values, kernel.values, bias.values
    if xv.ndim != 3 or kv.ndim != 4 or kv.shape[2:] != (3, 3):
        raise ValueError("conv2d_3x3: expected input (Cin,H,W) and kernel (Cout,Cin,3,3)")
    cin, h, w = xv.shape
    cout = kv.shape[0]
    if kv.shape[1] != cin:
        raise ValueError(f"conv2d_3x3: kernel expects {kv.shape[1]} input channels, input has {cin}")
    if bv.shape != (cout,):
        raise ValueError(f"conv2d_3x3: bias shape {bv.shape} != ({cout},)")

    xp = np.pad(xv, ((0, 0), (1, 1), (1, 1)))
    # im2col: one (Cin*9, H*W) patch matrix, so each direction is one matmul
    cols = np.empty((cin, 9, h * w))
    for tap in range(9):
        ky, kx = divmod(tap, 3)
        cols[:, tap, :] = xp[:, ky:ky + h, kx:kx + w].reshape(cin, h * w)
    cols = cols.reshape(cin * 9, h * w)
    kmat = kv.reshape(cout, cin * 9)
    out = Tensor((kmat @ cols).reshape(cout, h, w) + bv[:, None, None])

    def backward(g):
        g2 = g.reshape(cout, h * w)
        accumulate(bias, g.sum(axis=(1, 2)))
        accumulate(kernel, (g2 @ cols.T).reshape(kv.shape))
        dcols = (kmat.T @ g2).reshape(cin, 9, h, w)
        dxp = np.zeros_like(xp)
        for tap in range(9):
            ky, kx = divmod(tap, 3)
            dxp[:, ky:ky + h, kx:kx + w] += dcols[:, tap]
        accumulate(x, dxp[:, 1:h + 1, 1:w + 1])

    tape.record("conv2d_3x3", (x, kernel, bias), out, backward)
    return out


def downsample_avg2x(tape: Tape, x: Tensor) -> Tensor:
    xv = x.values
    if xv.ndim != 3:
        raise ValueError("downsample_avg2x: expected (C,H,W)")
    c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample_avg2x: extents ({h},{w}) must be even")
    out = Tensor(xv.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)))

    def backward(g):
        accumulate(x, np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    tape.record("downsample_avg2x", (x,), out, backward)
    return out


def upsample_nearest2x(tape: Tape, x: Tensor) -> Tensor:
    xv = x.values
    if xv.ndim != 3:
        raise ValueError("upsample_nearest2x: expected (C,H,W)")
    c, h, w = xv.shape
    out = Tensor(np.repeat(np.repeat(xv, 2, axis=1), 2, axis=2))

    def backward(g):
        accumulate(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    tape.record("upsample_nearest2x", (x,), out, backward)
    return out


def channel_log_softmax(tape: Tape, logits: Tensor) -> Tensor:
    """Per-pixel log-softmax over the leading (channel) axis, max-stabilized."""
    v = logits.values
    if v.ndim != 3:
        raise ValueError("channel_log_softmax: expected (L,H,W)")
    shifted = v - v.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    outv = shifted - lse
    out = Tensor(outv)

    def backward(g):
        accumulate(logits, g - np.exp(outv) * g.sum(axis=0, keepdims=True))

    tape.record("channel_log_softmax", (logits,), out, backward)
    return out


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    """Reduce to a scalar; the reduction every gradient check bottoms out in."""
    out = Tensor(np.asarray(x.values.sum()))

    def backward(g):
        accumulate(x, np.full_like(x.values, float(g)))

    tape.record("sum_all", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# finite-difference validation


def grad_check(f, x, eps: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    ``f(tape, *tensors) -> scalar Tensor``; ``x`` is one Tensor or a sequence
    of them.  Probes every coordinate of every tensor.
    """
    xs: Sequence[Tensor] = [x] if isinstance(x, Tensor) else list(x)
    analytic = _analytic_grads(f, xs)
    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.values.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            worst = max(worst, _fd_one(f, xs, flat, i, aflat[i], eps))
    return worst


def grad_check_sampled(f, x, n_per_tensor: int, rng: np.random.Generator,
                       eps: float = 1e-5) -> float:
    """grad_check probing only a random coordinate subset of each tensor."""
    xs: Sequence[Tensor] = [x] if isinstance(x, Tensor) else list(x)
    analytic = _analytic_grads(f, xs)
    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.values.reshape(-1)
        aflat = a.reshape(-1)
        n = min(n_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for i in coords:
            worst = max(worst, _fd_one(f, xs, flat, int(i), aflat[int(i)], eps))
    return worst


def _analytic_grads(f, xs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in xs:
        t.grad = None
    tape = Tape()
    out = f(tape, *xs)
    if out.values.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    tape.backward(out)
    return [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in xs]


def _fd_one(f, xs, flat, i, analytic_i, eps) -> float:
    orig = flat[i]
    flat[i] = orig + eps
    fp = f(Tape(), *xs).item()
    flat[i] = orig - eps
    fm = f(Tape(), *xs).item()
    flat[i] = orig
    fd = (fp - fm) / (2.0 * eps)
    return abs(analytic_i - fd) / max(1e-8, abs(fd))


def min_relu_input_abs(f, xs) -> float:
    """Smallest |pre-activation| hitting a relu when evaluating f; inf if none.

    Gradient-check drivers use this to resample inputs sitting on the kink.
    """
    xs = [xs] if isinstance(xs, Tensor) else list(xs)
    tape = Tape()
    f(tape, *xs)
    lows = [np.abs(n.inputs[0].values).min() for n in tape.nodes if n.op == "relu"
            and n.inputs[0].values.size]
    return float(min(lows)) if lows else float("inf")
