"""Dense 2-D float64 tensors with tape-based reverse-mode autodiff.

Every value in this library is a 2-D matrix (scalars are 1x1).  Operations
record backward rules on the currently active :class:`Tape`; with no active
tape they just compute values, which keeps evaluation cheap.  Broadcasting is
deliberately restricted to adding a 1xC row vector to an NxC matrix (bias
addition); everything else requires exact shapes.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "concat_cols",
    "row_gather",
    "row_scatter",
    "segment_sum",
    "segment_mean",
    "segment_softmax",
    "sym_eig",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Append-only record of operations for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` exactly once.  Nesting tapes is not supported; a tape
    belongs to a single thread.
    """

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn), topological order
        self._consumed = False

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active in this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def _record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def backward(self, loss, params=None):
        """Accumulate gradients of a 1x1 ``loss`` into ``.grad`` arrays.

        Parameters listed in ``params`` that never appeared on the tape get
        an explicit zero gradient.  A tape can only be walked once.
        """
        if self._consumed:
            raise RuntimeError("backward already called on this tape")
        self._consumed = True
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        grads = {id(loss): np.ones((1, 1))}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, contrib in zip(inputs, backward_fn(g)):
                if contrib is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        touched = {}
        for out, inputs, _ in self._records:
            for t in (out, *inputs):
                if t.requires_grad and t._is_leaf:
                    touched[id(t)] = t
        for key, t in touched.items():
            t.grad = grads.get(key, np.zeros(t.shape))
        if params is not None:
            for p in params:
                if id(p) not in touched:
                    p.grad = np.zeros(p.shape)


def _as_matrix(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got {arr.ndim}-D data")
    return np.ascontiguousarray(arr)


class Tensor:
    """A 2-D float64 matrix, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_is_leaf")

    def __init__(self, data, requires_grad=False):
        self.data = _as_matrix(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._is_leaf = True

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scalar_mul(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return scalar_mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def softplus(self):
        return softplus(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def sum(self):
        return total_sum(self)

    def mean(self):
        return total_mean(self)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def _result(value, inputs, backward_fn):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("operation produced a non-finite value")
    out = Tensor(value)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        out._is_leaf = False
        tape._record(out, inputs, backward_fn)
    return out


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- arithmetic --------------------------------------------------------------


def add(a, b):
    """Elementwise sum; also accepts a 1xC bias row added to an NxC matrix."""
    a, b = _coerce(a), _coerce(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape == (1, a.cols):
        return _result(
            a.data + b.data,
            (a, b),
            lambda g: (g, g.sum(axis=0, keepdims=True)),
        )
    if a.shape == (1, b.cols):
        return _result(
            a.data + b.data,
            (a, b),
            lambda g: (g.sum(axis=0, keepdims=True), g),
        )
    raise ShapeError(f"cannot add {a.shape} and {b.shape}")


def scalar_mul(a, c):
    a = _coerce(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply {a.shape} and {b.shape} elementwise")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.cols != b.rows:
        raise ShapeError(f"cannot matmul {a.shape} @ {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    a = _coerce(a)
    return _result(a.data.T, (a,), lambda g: (g.T,))


# -- elementwise nonlinearities ----------------------------------------------


def relu(a):
    a = _coerce(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _coerce(a)
    s = np.empty_like(a.data)
    pos = a.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    s[~pos] = ez / (1.0 + ez)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a):
    a = _coerce(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a):
    a = _coerce(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def softplus(a):
    """log(1 + exp(x)) in an overflow-safe form; derivative is sigmoid(x)."""
    a = _coerce(a)
    v = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        s = np.empty_like(a.data)
        pos = a.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ez = np.exp(a.data[~pos])
        s[~pos] = ez / (1.0 + ez)
        return (g * s,)

    return _result(v, (a,), backward)


def sin(a):
    a = _coerce(a)
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = _coerce(a)
    return _result(np.cos(a.data), (a,), lambda g: (g * -np.sin(a.data),))


# -- reductions ---------------------------------------------------------------


def total_sum(a):
    a = _coerce(a)
    return _result(
        np.array([[a.data.sum()]]),
        (a,),
        lambda g: (np.full(a.shape, g[0, 0]),),
    )


def total_mean(a):
    a = _coerce(a)
    n = a.data.size
    return _result(
        np.array([[a.data.sum() / n]]),
        (a,),
        lambda g: (np.full(a.shape, g[0, 0] / n),),
    )


# -- structural ops ------------------------------------------------------------


def concat_cols(tensors):
    """Concatenate matrices with equal row counts along columns."""
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = tensors[0].rows
    if any(t.rows != rows for t in tensors):
        raise ShapeError("concat_cols requires equal row counts")
    widths = [t.cols for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return _result(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward)


def _check_index(idx, n, what):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"{what} must be a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"{what} out of range [0, {n})")
    return idx


def row_gather(a, indices):
    """Select rows by index; duplicates allowed (gradients accumulate)."""
    a = _coerce(a)
    idx = _check_index(indices, a.rows, "row_gather indices")

    def backward(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), backward)


def row_scatter(base, indices, values):
    """Copy of ``base`` with the rows at ``indices`` replaced by ``values``.

    Indices must be unique; rows absent from ``indices`` keep their value and
    their gradient path through ``base``.
    """
    base, values = _coerce(base), _coerce(values)
    idx = _check_index(indices, base.rows, "row_scatter indices")
    if len(np.unique(idx)) != idx.size:
        raise ShapeError("row_scatter indices must be unique")
    if values.shape != (idx.size, base.cols):
        raise ShapeError(
            f"row_scatter values shape {values.shape} != ({idx.size}, {base.cols})"
        )
    out = base.data.copy()
    out[idx] = values.data

    def backward(g):
        g_base = g.copy()
        g_base[idx] = 0.0
        return (g_base, g[idx])

    return _result(out, (base, values), backward)


def _check_segments(segment_ids, n_rows):
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.ndim != 1 or seg.size != n_rows:
        raise ShapeError("segment_ids must be 1-D with one id per row")
    if seg.size and np.any(np.diff(seg) < 0):
        raise ShapeError("segment_ids must be sorted ascending")
    if seg.size and seg.min() < 0:
        raise IndexError("segment ids must be non-negative")
    return seg


def segment_sum(values, segment_ids, n_segments):
    """Sum rows that share a segment id into one output row per segment."""
    values = _coerce(values)
    seg = _check_segments(segment_ids, values.rows)
    if seg.size and seg.max() >= n_segments:
        raise IndexError("segment id exceeds n_segments")
    out = np.zeros((n_segments, values.cols))
    np.add.at(out, seg, values.data)
    return _result(out, (values,), lambda g: (g[seg],))


def segment_mean(values, segment_ids, n_segments):
    """Per-segment mean of rows; empty segments yield zero rows."""
    values = _coerce(values)
    seg = _check_segments(segment_ids, values.rows)
    if seg.size and seg.max() >= n_segments:
        raise IndexError("segment id exceeds n_segments")
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    out = np.zeros((n_segments, values.cols))
    np.add.at(out, seg, values.data)
    out /= denom[:, None]
    return _result(out, (values,), lambda g: ((g / denom[:, None])[seg],))


def segment_softmax(logits, segment_ids):
    """Column-wise softmax normalized within each segment of rows."""
    logits = _coerce(logits)
    seg = _check_segments(segment_ids, logits.rows)
    n_seg = int(seg.max()) + 1 if seg.size else 0
    seg_max = np.full((n_seg, logits.cols), -np.inf)
    np.maximum.at(seg_max, seg, logits.data)
    e = np.exp(logits.data - seg_max[seg])
    denom = np.zeros((n_seg, logits.cols))
    np.add.at(denom, seg, e)
    alpha = e / denom[seg]

    def backward(g):
        weighted = np.zeros((n_seg, logits.cols))
        np.add.at(weighted, seg, alpha * g)
        return (alpha * (g - weighted[seg]),)

    return _result(alpha, (logits,), backward)


# -- symmetric eigensolver ------------------------------------------------------


def sym_eig(m, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns.  Not differentiable; inputs are
    treated as plain arrays.
    """
    a = np.array(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("sym_eig needs a square matrix")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ShapeError("sym_eig needs a symmetric matrix (within 1e-10)")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(1.0, np.abs(a.diagonal()).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    else:
        raise RuntimeError("sym_eig did not converge")
    eigenvalues = a.diagonal().copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]
