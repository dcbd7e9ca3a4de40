"""Dense float64 tensors with reverse-mode autodiff, Adam, and checkpoint I/O.

The engine is deliberately small: a static set of differentiable primitives
recorded on a dynamic graph, walked once in reverse topological order per
`backward` call. Everything runs in double precision so finite-difference
tests have headroom. Single-threaded per graph; distinct graphs may live in
separate processes.
"""
from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradError(RuntimeError):
    """Backward pass or optimizer invoked on an invalid gradient state."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent with the expected model."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, metric passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer.

    `grad` exists iff `requires_grad`; it accumulates across backward calls
    until explicitly zeroed (the optimizer zeroes it after each update).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accum_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; the named functions below are the real surface.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # allocated lazily during backward
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a gradient back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accum_grad(_unbroadcast(g, a.shape))
        b._accum_grad(_unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        a._accum_grad(_unbroadcast(g, a.shape))
        b._accum_grad(_unbroadcast(-g, b.shape))

    return _result(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a._accum_grad(_unbroadcast(g * b.data, a.shape))
        b._accum_grad(_unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accum_grad(-g)

    return _result(-a.data, (a,), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (not a graph node)."""
    s = float(s)

    def backward(g):
        a._accum_grad(g * s)

    return _result(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accum_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b._accum_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(out_data, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum_grad(np.transpose(g, inverse))

    return _result(np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        a._accum_grad(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            t._accum_grad(g[tuple(index)])

    return _result(out_data, tensors, backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (inverse of concat on that axis)."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accum_grad(full)

    return _result(a.data[index].copy(), (a,), backward)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0 (duplicate indices sum their gradients)."""
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum_grad(full)

    return _result(a.data[idx], (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accum_grad(np.broadcast_to(g, a.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accum_grad(np.broadcast_to(g, a.shape).copy())

    return _result(out_data, (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def abs_(a: Tensor) -> Tensor:
    def backward(g):
        a._accum_grad(g * np.sign(a.data))

    return _result(np.abs(a.data), (a,), backward)


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows only above the floor."""
    floor = float(floor)

    def backward(g):
        a._accum_grad(g * (a.data > floor))

    return _result(np.maximum(a.data, floor), (a,), backward)


def mask_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True by a constant; grad is blocked there."""
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask

    def backward(g):
        a._accum_grad(g * keep)

    return _result(np.where(mask, float(value), a.data), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last dimension."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x._accum_grad((g - dot) * y)

    return _result(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        x._accum_grad(g * y * (1.0 - y))

    return _result(y, (x,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Smooth tanh-form gelu; smoothness keeps finite-difference checks clean."""
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    y = 0.5 * d * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d ** 2)
        x._accum_grad(g * (0.5 * (1.0 + t) + 0.5 * d * sech2 * dinner))

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean, unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gain._accum_grad((g * xhat).sum(axis=lead))
        bias._accum_grad(g.sum(axis=lead))
        dxhat = g * gain.data
        n = x.shape[-1]
        dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
              - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / n) * inv
        x._accum_grad(dx)

    return _result(out_data, (x, gain, bias), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of an embedding table selected by integer id."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding id out of range for table of {table.shape[0]} rows")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accum_grad(full)

    return _result(table.data[idx], (table,), backward)


def cross_entropy_with_logits(logits: Tensor, targets, ignore_id: int | None = None,
                              reduction: str = "mean") -> Tensor:
    """Token-level cross entropy in nats.

    logits: [T, V]; targets: length-T integer ids. Rows whose target equals
    `ignore_id` contribute nothing (and receive zero gradient).
    """
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or tgt.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy expects [T, V] logits and T targets, "
                         f"got {logits.shape} and {tgt.shape}")
    keep = np.ones_like(tgt, dtype=bool) if ignore_id is None else tgt != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise GradError("cross entropy over zero non-ignored targets")
    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[:, 0]
    safe_tgt = np.where(keep, tgt, 0)
    picked = logits.data[np.arange(tgt.shape[0]), safe_tgt]
    nll = np.where(keep, lse - picked, 0.0)
    total = nll.sum()
    out = total / count if reduction == "mean" else total

    def backward(g):
        probs = np.exp(logits.data - m - (lse - m[:, 0])[:, None])
        grad = probs
        grad[np.arange(tgt.shape[0]), safe_tgt] -= 1.0
        grad[~keep] = 0.0
        if reduction == "mean":
            grad = grad / count
        logits._accum_grad(grad * g)

    return _result(np.asarray(out), (logits,), backward)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors as a differentiable scalar."""
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine expects matching vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u.data)
    nv = np.linalg.norm(v.data)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    c = float(u.data @ v.data) / (nu * nv)

    def backward(g):
        u._accum_grad(g * (v.data / (nu * nv) - c * u.data / nu ** 2))
        v._accum_grad(g * (u.data / (nu * nv) - c * v.data / nv ** 2))

    return _result(np.asarray(c), (u, v), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip this entirely outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        x._accum_grad(g * mask)

    return _result(x.data * mask, (x,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad ancestor of a scalar loss.

    Repeated calls without zeroing accumulate, matching the additive chain
    rule for parameters reused across subgraphs.
    """
    if loss.shape != ():
        raise GradError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss._accum_grad(np.ones((), dtype=np.float64))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers and step counter for a fixed parameter list."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes grads afterwards."""
    params = list(params)
    if len(params) != len(state.params):
        raise GradError(f"adam_step got {len(params)} params for a state of "
                        f"{len(state.params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise GradError(f"parameter {i} has no gradient buffer")
        if p.data.shape != state.m[i].shape:
            raise ShapeError(f"parameter {i} shape {p.data.shape} does not match "
                             f"optimizer buffer {state.m[i].shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent deterministic stream derived from one master seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


def gaussian(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SFCK1"


def save_params(path, params: dict[str, Tensor]) -> None:
    """Write named parameters to the flat binary checkpoint container."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name in sorted(params):
            data = params[name].data
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float64 array."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        while True:
            header = fh.read(4)
            if not header:
                break
            (name_len,) = struct.unpack("<I", header)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            count = int(np.prod(dims)) if dims else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError(f"truncated values for parameter {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return out


def validate_params(loaded: dict[str, np.ndarray],
                    expected: dict[str, tuple[int, ...]]) -> None:
    """Check a loaded checkpoint against the shapes the model config implies."""
    missing = sorted(set(expected) - set(loaded))
    extra = sorted(set(loaded) - set(expected))
    bad = sorted(name for name in set(expected) & set(loaded)
                 if tuple(loaded[name].shape) != tuple(expected[name]))
    problems = []
    if missing:
        problems.append(f"missing: {', '.join(missing)}")
    if extra:
        problems.append(f"unexpected: {', '.join(extra)}")
    if bad:
        problems.append("shape mismatch: " + ", ".join(
            f"{n} {loaded[n].shape} != {tuple(expected[n])}" for n in bad))
    if problems:
        raise CheckpointError("; ".join(problems))
