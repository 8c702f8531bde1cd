"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray. While a Tape is active, every primitive
applied to a grad-requiring tensor appends one record (op name, inputs,
output, adjoint closure, forward closure) to the tape in construction
order, which is already a topological order. backward() walks the records
in reverse and accumulates gradients additively into leaf tensors until
they are explicitly zeroed. With no tape active, ops compute values only,
which is how inference runs.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

EPS_LOG = 1e-12  # floor inside -log(p + eps), keeps zero-prob targets finite

_node_counter = itertools.count()
_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications, usable as a context manager."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def replay_verify(self):
        """Recompute every record from current input data; True when all
        recomputed outputs are bit-identical to the recorded ones."""
        for rec in self.records:
            fresh = rec.fwd()
            if fresh.tobytes() != rec.out.data.tobytes():
                return False
        return True


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    out: "Tensor"
    bwd: object  # grad_out -> tuple of input grads (None for no-grad inputs)
    fwd: object  # () -> recomputed output array from current input data


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape", "_rec")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_counter)
        self.tape = None
        self._rec = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def is_leaf(self):
        return self._rec is None

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor division is not a primitive, multiply by a reciprocal constant")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op, out_data, inputs, bwd, fwd):
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        for t in inputs:
            if t._rec is not None and t.tape is not tape:
                raise RuntimeError(f"{op}: input tensor belongs to another tape")
        rec = TapeRecord(op, tuple(inputs), out, bwd, fwd)
        tape.records.append(rec)
        out.tape = tape
        out._rec = rec
    return out


def _unbroadcast(g, shape):
    # reduce g back to `shape` after numpy broadcasting
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", out, (a, b), bwd, lambda: a.data + b.data)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", out, (a, b), bwd, lambda: a.data - b.data)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _emit("mul", out, (a, b), bwd, lambda: a.data * b.data)


def neg(a):
    a = _wrap(a)

    def bwd(g):
        return (-g,)

    return _emit("neg", -a.data, (a,), bwd, lambda: -a.data)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul supports rank 1 or 2 operands, got {a.ndim} and {b.ndim}")
    out = a.data @ b.data
    an, bn = a.ndim, b.ndim

    def bwd(g):
        ad, bd = a.data, b.data
        if an == 2 and bn == 2:
            return g @ bd.T, ad.T @ g
        if an == 1 and bn == 2:
            return g @ bd.T, np.outer(ad, g)
        if an == 2 and bn == 1:
            return np.outer(g, bd), g @ ad
        return g * bd, g * ad

    return _emit("matmul", out, (a, b), bwd, lambda: a.data @ b.data)


def tanh(a):
    a = _wrap(a)
    y = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _emit("tanh", y, (a,), bwd, lambda: np.tanh(a.data))


def sigmoid(a):
    # 0.5 * (tanh(x/2) + 1), stable for any finite x
    a = _wrap(a)
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _emit("sigmoid", y, (a,), bwd, lambda: 0.5 * (np.tanh(0.5 * a.data) + 1.0))


def log(a):
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")
    x = a.data

    def bwd(g):
        return (g / x,)

    return _emit("log", np.log(x), (a,), bwd, lambda: np.log(a.data))


def concat(tensors, axis=0):
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit("concat", out, tuple(ts), bwd,
                 lambda: np.concatenate([t.data for t in ts], axis=axis))


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _emit("reshape", a.data.reshape(shape), (a,), bwd, lambda: a.data.reshape(shape))


def take(a, key):
    """Basic slicing (ints, slices, tuples of those). Returns a copy."""
    a = _wrap(a)
    out = np.array(a.data[key])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _emit("take", out, (a,), bwd, lambda: np.array(a.data[key]))


def embedding(table, ids):
    """Row lookup table[ids]; ids is an integer ndarray, not a Tensor."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("embedding id out of range")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _emit("embedding", out, (table,), bwd, lambda: table.data[ids])


def repeat_rows(a, r):
    """(B, ...) -> (B*r, ...) with each row repeated r times consecutively."""
    a = _wrap(a)
    out = np.repeat(a.data, r, axis=0)
    b = a.data.shape[0]

    def bwd(g):
        return (g.reshape((b, r) + a.data.shape[1:]).sum(axis=1),)

    return _emit("repeat_rows", out, (a,), bwd, lambda: np.repeat(a.data, r, axis=0))


def sum_groups(a, r):
    """(B*r, ...) -> (B, ...) summing consecutive groups of r rows."""
    a = _wrap(a)
    n = a.data.shape[0]
    if n % r != 0:
        raise ValueError("sum_groups: leading size not divisible by group size")
    b = n // r
    out = a.data.reshape((b, r) + a.data.shape[1:]).sum(axis=1)

    def bwd(g):
        return (np.repeat(g, r, axis=0),)

    return _emit("sum_groups", out, (a,), bwd,
                 lambda: a.data.reshape((b, r) + a.data.shape[1:]).sum(axis=1))


def mean_pool(a, axis=0):
    """Mean over one step axis."""
    a = _wrap(a)
    n = a.data.shape[axis]
    if n == 0:
        raise ValueError("mean_pool over an empty axis")
    out = a.data.mean(axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _emit("mean_pool", out, (a,), bwd, lambda: a.data.mean(axis=axis))


def tsum(a, axis=None):
    a = _wrap(a)
    out = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.full(a.data.shape, g),)
        return (np.repeat(np.expand_dims(g, axis), a.data.shape[axis], axis=axis),)

    return _emit("sum", out, (a,), bwd, lambda: a.data.sum(axis=axis))


def softmax_rows(a):
    """Softmax over the last axis with max subtraction. No finiteness check,
    callers may pass additive -inf masks."""
    a = _wrap(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    def fwd():
        m2 = a.data.max(axis=-1, keepdims=True)
        e2 = np.exp(a.data - m2)
        return e2 / e2.sum(axis=-1, keepdims=True)

    return _emit("softmax", y, (a,), bwd, fwd)


def softmax(logits):
    """Probability vector from a rank-1 logit vector."""
    logits = _wrap(logits)
    if logits.ndim != 1:
        raise ValueError(f"softmax expects a rank-1 tensor, got rank {logits.ndim}")
    if logits.data.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("softmax input must be finite")
    return softmax_rows(logits)


def nll(pred, index):
    """-log(pred[index] + eps). pred rank-1 with scalar index gives a scalar,
    pred rank-2 with an index vector gives one loss per row."""
    pred = _wrap(pred)
    if pred.ndim == 1:
        idx = int(index)
        if not 0 <= idx < pred.data.shape[0]:
            raise ValueError("target index out of range")
        picked = pred.data[idx] + EPS_LOG
        out = -np.log(picked)

        def bwd(g):
            full = np.zeros_like(pred.data)
            full[idx] = -g / picked
            return (full,)

        return _emit("nll", out, (pred,), bwd, lambda: -np.log(pred.data[idx] + EPS_LOG))

    if pred.ndim == 2:
        idx = np.asarray(index)
        if idx.shape != (pred.data.shape[0],):
            raise ValueError("nll index vector must have one entry per row")
        if idx.size and (idx.min() < 0 or idx.max() >= pred.data.shape[1]):
            raise ValueError("target index out of range")
        rows = np.arange(pred.data.shape[0])
        picked = pred.data[rows, idx] + EPS_LOG
        out = -np.log(picked)

        def bwd(g):
            full = np.zeros_like(pred.data)
            full[rows, idx] = -g / picked
            return (full,)

        return _emit("nll", out, (pred,), bwd,
                     lambda: -np.log(pred.data[rows, idx] + EPS_LOG))

    raise ValueError("nll expects rank 1 or 2 predictions")


def cross_entropy(pred, target):
    """-log(pred[target] + eps) for one rank-1 distribution."""
    pred = _wrap(pred)
    if pred.ndim != 1:
        raise ValueError("cross_entropy expects a rank-1 distribution")
    s = pred.data.sum()
    if not np.isfinite(s) or abs(s - 1.0) > 1e-6:
        raise ValueError(f"cross_entropy input does not sum to 1 (sum={s!r})")
    if np.any(pred.data < -1e-12):
        raise ValueError("cross_entropy input has negative entries")
    return nll(pred, target)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into .grad of every grad-requiring leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if loss._rec is None or loss.tape is None:
        raise RuntimeError("backward on a tensor that is not attached to a tape")
    adjoint = {loss.node_id: np.ones_like(loss.data)}
    for rec in reversed(loss.tape.records):
        g = adjoint.pop(rec.out.node_id, None)
        if g is None:
            continue
        grads = rec.bwd(g)
        for t, gt in zip(rec.inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t._rec is None:
                t.grad = gt if t.grad is None else t.grad + gt
            else:
                prev = adjoint.get(t.node_id)
                adjoint[t.node_id] = gt if prev is None else prev + gt


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


@dataclass
class GradCheckEntry:
    name: str
    shape: tuple
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    ok: bool
    tol: float
    h: float
    max_rel_error: float
    entries: list = field(default_factory=list)

    def __str__(self):
        lines = [f"gradient check: {'pass' if self.ok else 'FAIL'} "
                 f"(max rel err {self.max_rel_error:.3e}, tol {self.tol:.1e}, h {self.h:.1e})"]
        for e in self.entries:
            mark = "ok " if e.max_rel_error < self.tol else "BAD"
            lines.append(f"  [{mark}] {e.name} {e.shape}: rel {e.max_rel_error:.3e} "
                         f"at {e.worst_index} (analytic {e.analytic:.6e}, numeric {e.numeric:.6e})")
        return "\n".join(lines)


def gradient_check(f, params, h=1e-5, tol=1e-4, names=None):
    """Compare tape gradients of the scalar f() against central differences.

    f must be deterministic and must rebuild its graph from the current
    parameter data on every call. Every coordinate of every parameter is
    perturbed by +-h. Relative error uses a floored denominator so that
    near-zero gradients compare absolutely.
    """
    params = list(params)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    for p in params:
        if not isinstance(p, Tensor) or not p.requires_grad or not p.is_leaf():
            raise ValueError("gradient_check params must be grad-requiring leaf tensors")

    with Tape():
        first = f()
    with Tape():
        second = f()
    if first.data.tobytes() != second.data.tobytes():
        raise RuntimeError("gradient_check: f is not deterministic across calls")

    zero_grads(params)
    with Tape():
        loss = f()
        backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport(ok=True, tol=tol, h=h, max_rel_error=0.0)
    for p, ana, name in zip(params, analytic, names):
        base = p.data.copy()
        num = np.zeros_like(base)
        flat = base.reshape(-1)
        numflat = num.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            p.data = flat.reshape(base.shape)
            hi = float(f().data)
            flat[i] = keep - h
            p.data = flat.reshape(base.shape)
            lo = float(f().data)
            flat[i] = keep
            p.data = flat.reshape(base.shape)
            numflat[i] = (hi - lo) / (2.0 * h)
        rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-2)
        worst = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else ()
        worst_rel = float(rel[worst]) if rel.size else 0.0
        report.entries.append(GradCheckEntry(
            name=name, shape=base.shape, max_rel_error=worst_rel, worst_index=worst,
            analytic=float(ana[worst]) if rel.size else 0.0,
            numeric=float(num[worst]) if rel.size else 0.0))
        report.max_rel_error = max(report.max_rel_error, worst_rel)
    report.ok = report.max_rel_error < tol
    return report


def first_nonfinite(tape):
    """Name of the first record whose output holds a non-finite value, or None."""
    for i, rec in enumerate(tape.records):
        if not np.all(np.isfinite(rec.out.data)):
            return f"{rec.op} (record {i})"
    return None
