"""Small dense float64 tensor engine with reverse-mode differentiation.

Every op returns a new :class:`Tensor` and, when any input requires a
gradient, records a closure mapping the output gradient to input gradients.
:func:`backward` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointError, NonFiniteValue, NotScalarLoss, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("op produced NaN or Inf")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- dense ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from exc
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from exc
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last dimension."""
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeMismatch(f"concat leading dims differ: {[t.shape for t in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=-1),
        tuple(tensors),
        lambda g: tuple(np.split(g, cuts, axis=-1)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def dropout(x: Tensor, p: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def row_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return _result(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def neg_log_likelihood(
    log_probs: Tensor, targets: Sequence[int], class_weights: Optional[Sequence[float]] = None
) -> Tensor:
    """Weighted mean of -log p[target] (weights normalised like torch's nll_loss)."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = log_probs.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"{n} rows but {targets.shape} targets")
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=DTYPE)
    wt = w[targets]
    denom = wt.sum()
    rows = np.arange(n)
    loss = -(wt * log_probs.data[rows, targets]).sum() / denom

    def back(g):
        grad = np.zeros_like(log_probs.data)
        grad[rows, targets] = -wt / denom
        return (grad * g,)

    return _result(np.asarray(loss), (log_probs,), back)


def cross_entropy(logits: Tensor, targets, class_weights=None) -> Tensor:
    return neg_log_likelihood(log_softmax(logits), targets, class_weights)


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# ------------------------------------------------------------ indexed ops


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor."""
    if matrix.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm {matrix.shape} @ {x.shape}")
    mt = matrix.T.tocsr()
    return _result(np.asarray(matrix @ x.data), (x,), lambda g: (np.asarray(mt @ g),))


def segment_matrix(segments: np.ndarray, n_segments: int, mean: bool = True) -> sp.csr_matrix:
    """(n_segments x len(segments)) matrix that sums or averages rows per segment.

    Empty segments produce zero rows.
    """
    segments = np.asarray(segments, dtype=np.int64)
    m = len(segments)
    if m and (segments.min() < 0 or segments.max() >= n_segments):
        raise ShapeMismatch("segment index out of range")
    vals = np.ones(m, dtype=DTYPE)
    if mean and m:
        counts = np.bincount(segments, minlength=n_segments).astype(DTYPE)
        vals = 1.0 / counts[segments]
    return sp.csr_matrix((vals, (segments, np.arange(m))), shape=(n_segments, m))


def mean_over_rows(x: Tensor, segments, n_segments: int) -> Tensor:
    """Row-wise mean per index group; an empty group yields a zero row."""
    if len(segments) != x.shape[0]:
        raise ShapeMismatch(f"{len(segments)} segment ids for {x.shape[0]} rows")
    return spmm(segment_matrix(segments, n_segments, mean=True), x)


def segment_sum(x: Tensor, segments, n_segments: int) -> Tensor:
    if len(segments) != x.shape[0]:
        raise ShapeMismatch(f"{len(segments)} segment ids for {x.shape[0]} rows")
    return spmm(segment_matrix(segments, n_segments, mean=False), x)


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), back)


def segment_softmax(x: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax of each column over the rows sharing a segment id."""
    seg = np.asarray(segments, dtype=np.int64)
    mx = np.full((n_segments,) + x.shape[1:], -np.inf)
    np.maximum.at(mx, seg, x.data)
    e = np.exp(x.data - mx[seg])
    tot = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(tot, seg, e)
    s = e / tot[seg]

    def back(g):
        gs = g * s
        acc = np.zeros((n_segments,) + x.shape[1:])
        np.add.at(acc, seg, gs)
        return (gs - s * acc[seg],)

    return _result(s, (x,), back)


# ---------------------------------------------------------------- autodiff


def _topo(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # free the graph as we go
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------- params


def glorot(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class AdamState:
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState) -> None:
    """One in-place Adam update with decoupled weight decay."""
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise ShapeMismatch(f"{name}: optimizer state {m.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(
    fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Worst |analytic - central difference| / (|analytic| + floor).

    ``fn`` must rebuild the scalar loss from ``params`` on every call.  Above
    ``max_coords`` total coordinates a seeded random subsample is probed.
    """
    for p in params.values():
        p.grad = None
    backward(fn())
    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        p = params[name]
        flat = p.data.reshape(-1)
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(fn().data)
        flat[i] = orig - h
        f_minus = float(fn().data)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / (abs(analytic) + floor))
    return worst


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"FLAGCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray], header: dict) -> None:
    """Magic, u32 version, u64 header length, JSON header, then raw <f8 arrays."""
    entries = []
    offset = 0
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    head = dict(header)
    head["version"] = CHECKPOINT_VERSION
    head["tensors"] = entries
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a flagforge checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    body = start + hlen
    arrays = {}
    for ent in header["tensors"]:
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=body + ent["offset"])
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(DTYPE)
    return arrays, header
