"""Dense tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients.  Nodes get a
monotonically increasing id at creation, so sorting the nodes reachable
from a loss by id gives a valid topological order of the computation
graph; :func:`backward` walks it in reverse.

Only the operators the parser needs are provided.
"""
import itertools
import math

import numpy as np

from .errors import ContractViolation

_ids = itertools.count()

DEFAULT_DTYPE = np.float64


class Tensor:
    """A value in the computation graph.

    ``data`` is a numpy array.  Leaves created with ``requires_grad=True``
    are parameters; everything produced by an op on such a leaf is tracked.
    """

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "id", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or getattr(data, "dtype", None) or DEFAULT_DTYPE)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    """Create an op output; drop the closure when nothing upstream needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def seqsum(x, axis=-1, keepdims=False):
    """Sum along ``axis`` accumulating strictly in index order.

    numpy's pairwise summation changes association with the row length,
    so trailing zeros (padding) could perturb the last bits.  Accumulating
    along a leading contiguous axis is sequential, which keeps masked-out
    entries bit-neutral.
    """
    moved = np.ascontiguousarray(np.moveaxis(x, axis, 0))
    out = np.add.reduce(moved, axis=0)
    if keepdims:
        out = np.expand_dims(out, axis)
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def sigmoid(x):
    x = as_tensor(x)
    # tanh form avoids overflow warnings for large |x|
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), backward)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return _make(np.where(pos, x.data, 0.0).astype(x.data.dtype), (x,), backward)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _make(y, (x,), backward)


def log(x):
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), backward)


def dropout(x, rate, rng, train=True):
    """Inverted dropout: zero with probability ``rate`` and rescale the rest."""
    if not train or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    return mul(x, Tensor(mask))


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def backward(g):
        return (np.where(mask, 0.0, g),)

    return _make(np.where(mask, value, x.data).astype(x.data.dtype), (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul expects operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if b.ndim == 2 and a.ndim > 2:
            ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    if b.ndim == 2 and a.ndim > 2:
        value = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        value = a.data @ b.data
    return _make(value, (a, b), backward)


def swapaxes(x, i, j):
    x = as_tensor(x)

    def backward(g):
        return (np.swapaxes(g, i, j),)

    return _make(np.swapaxes(x.data, i, j), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), backward)


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims)), (x,), backward)


def rowsum(x):
    """Sum over the last axis in index order (see :func:`seqsum`)."""
    x = as_tensor(x)

    def backward(g):
        return (np.broadcast_to(g[..., None], x.shape).copy(),)

    return _make(seqsum(x.data, axis=-1), (x,), backward)


def exact_sum(x):
    """Scalar sum with correctly rounded result (math.fsum).

    Independent of element order and of any interleaved zeros, so padded
    and unpadded batches give identical totals.
    """
    x = as_tensor(x)

    def backward(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    value = np.asarray(math.fsum(x.data.ravel().tolist()), dtype=x.data.dtype)
    return _make(value, (x,), backward)


def mean(x):
    x = as_tensor(x)
    return mul(sum(x), 1.0 / x.size)


# ---------------------------------------------------------------- structure

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def getitem(x, index):
    x = as_tensor(x)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), backward)


def scatter(x, index, shape):
    """Zero tensor of ``shape`` with ``x`` written at ``index`` (inverse of getitem)."""
    x = as_tensor(x)
    out = np.zeros(shape, dtype=x.data.dtype)
    out[index] = x.data

    def backward(g):
        return (g[index],)

    return _make(out, (x,), backward)


def embed(table, ids):
    """Row lookup ``table[ids]`` with scatter-add backward."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (out,)

    return _make(table.data[ids], (table,), backward)


def gather_last(x, index):
    """Pick ``x[..., index[...]]`` along the last axis (index has x.shape[:-1])."""
    x = as_tensor(x)
    index = np.asarray(index)
    expanded = index[..., None]

    def backward(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, expanded, g[..., None], axis=-1)
        return (out,)

    return _make(np.take_along_axis(x.data, expanded, axis=-1)[..., 0], (x,), backward)


# ---------------------------------------------------------------- softmax family

def _log_softmax_array(v, mask=None):
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    m = np.max(v, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # fully masked rows stay -inf instead of nan
    shifted = v - m
    with np.errstate(divide="ignore", invalid="ignore"):
        lse = np.log(seqsum(np.exp(shifted), axis=-1, keepdims=True))
        return np.where(np.isfinite(lse), shifted - lse, -np.inf)


def log_softmax(x, axis=-1, mask=None):
    """Log-softmax along the last axis.

    ``mask`` (broadcastable bool array) marks valid entries; invalid ones
    come out as -inf and receive no gradient.
    """
    if axis not in (-1, None) and axis != as_tensor(x).ndim - 1:
        raise ContractViolation("log_softmax only supports the last axis")
    x = as_tensor(x)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("log_softmax of an empty vector")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = _log_softmax_array(x.data, mask)
    probs = np.exp(out)

    def backward(g):
        g = np.where(np.isfinite(out), g, 0.0)
        return (g - probs * seqsum(g, axis=-1, keepdims=True),)

    return _make(out, (x,), backward)


def softmax_array(v, mask=None):
    return np.exp(_log_softmax_array(np.asarray(v), mask))


def kl_terms(p, q_log, p_log=None):
    """Elementwise ``p * (ln p - q_log)`` with 0 where p == 0; p is a constant.

    ``p_log`` may supply ``ln p`` directly, which avoids a log/exp round
    trip so identical log-distributions give exactly 0.
    """
    p = np.asarray(p)
    q_log = as_tensor(q_log)
    pos = p > 0
    if p_log is None:
        p_log = np.log(np.where(pos, p, 1.0))
    safe_p_log = np.where(pos, p_log, 0.0)
    safe_q = np.where(pos, q_log.data, 0.0)
    value = np.where(pos, p * (safe_p_log - safe_q), 0.0)

    def backward(g):
        return (np.where(pos, -g * p, 0.0),)

    return _make(value, (q_log,), backward)


# ---------------------------------------------------------------- recurrent cell

def lstm_cell(x, h, c, w, b):
    """One LSTM step.

    ``w`` has shape (input + hidden, 4 * hidden) with gate blocks ordered
    input, forget, candidate, output; ``b`` has shape (4 * hidden,).
    Works on a single vector or a batch of row vectors.
    """
    x, h, c, w, b = (as_tensor(t) for t in (x, h, c, w, b))
    hidden = h.shape[-1]
    if w.shape != (x.shape[-1] + hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ValueError(
            f"lstm_cell dimension mismatch: x {x.shape}, h {h.shape}, "
            f"w {w.shape}, b {b.shape}")
    if c.shape != h.shape:
        raise ValueError(f"lstm_cell cell shape {c.shape} != hidden shape {h.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x, h, c = (reshape(t, (1, -1)) for t in (x, h, c))
    gates = matmul(concat([x, h], axis=-1), w) + b
    i = sigmoid(gates[:, :hidden])
    f = sigmoid(gates[:, hidden:2 * hidden])
    g = tanh(gates[:, 2 * hidden:3 * hidden])
    o = sigmoid(gates[:, 3 * hidden:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    if squeeze:
        h_new, c_new = reshape(h_new, (hidden,)), reshape(c_new, (hidden,))
    return h_new, c_new


# ---------------------------------------------------------------- backward pass

def backward(loss, params=None):
    """Gradients of a scalar ``loss`` with respect to parameter leaves.

    Returns a dict mapping each leaf tensor to its gradient array.  When
    ``params`` is given, every tensor in it gets an entry, zero-filled if
    the loss does not depend on it.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")

    order = []
    seen = set()
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        order.append(node)
        stack_.extend(node.parents)
    order.sort(key=lambda n: n.id, reverse=True)

    grads = {loss.id: np.ones_like(loss.data)}
    leaves = {}
    for node in order:
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg

    if params is None:
        return leaves
    return {p: leaves.get(p, np.zeros_like(p.data)) for p in params}


def lstm_sequence(x, mask, w, b, reverse=False):
    """Run an LSTM over a padded batch as a single graph node.

    ``x`` is (batch, time, input), ``mask`` (batch, time) marks real steps.
    At masked-out steps the state is carried through unchanged, so a
    reversed pass over right-padded rows starts from a zero state at each
    row's last real token.  Backward is hand-written BPTT; it agrees with
    unrolling :func:`lstm_cell` step by step.

    With right padding, rows are visited longest first and each step only
    touches the rows still running, so padding costs no recurrent work.
    Other masks fall back to blending every row at every step.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    batch, steps, n_in = x.shape
    hidden = w.shape[1] // 4
    if w.shape != (n_in + hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ValueError(f"lstm_sequence dimension mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    dtype = x.data.dtype
    mask = np.asarray(mask)
    lengths = (mask != 0).sum(axis=1)
    prefix = bool(np.array_equal(mask != 0, np.arange(steps)[None, :] < lengths[:, None]))
    if prefix:
        perm = np.argsort(-lengths, kind="stable")
        active = (lengths[None, :] > np.arange(steps)[:, None]).sum(axis=1)
    else:
        perm = np.arange(batch)
        active = np.full(steps, batch)
    # time-major, rows in visiting order
    m = np.ascontiguousarray(np.asarray(mask, dtype=dtype)[perm].T)[:, :, None]
    w_x, w_h = w.data[:n_in], w.data[n_in:]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    track = x.requires_grad or w.requires_grad or b.requires_grad
    H = hidden

    xs = np.ascontiguousarray(x.data[perm].transpose(1, 0, 2))
    # input projection of the real steps only, packed step by step
    starts = np.concatenate([[0], np.cumsum(active)])
    if prefix:
        x_proj = xs[np.arange(batch)[None, :] < active[:, None]] @ w_x
    else:
        x_proj = xs.reshape(steps * batch, n_in) @ w_x
    x_proj += b.data
    h = np.zeros((batch, H), dtype=dtype)
    c = np.zeros((batch, H), dtype=dtype)
    out = np.empty((steps, batch, H), dtype=dtype)
    if track:
        acts = np.zeros((steps, batch, 4 * H), dtype=dtype)
        h_prev_all = np.zeros((steps, batch, H), dtype=dtype)
        c_prev_all = np.zeros((steps, batch, H), dtype=dtype)
        tanh_c = np.zeros((steps, batch, H), dtype=dtype)
    for t in order:
        k = active[t]
        if k:
            hk, ck = h[:k], c[:k]
            z = x_proj[starts[t]:starts[t + 1]] + hk @ w_h
            a = np.empty_like(z)
            a[:, :2 * H] = 0.5 * (np.tanh(0.5 * z[:, :2 * H]) + 1.0)
            a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            a[:, 3 * H:] = 0.5 * (np.tanh(0.5 * z[:, 3 * H:]) + 1.0)
            c_new = a[:, H:2 * H] * ck + a[:, :H] * a[:, 2 * H:3 * H]
            tc = np.tanh(c_new)
            h_new = a[:, 3 * H:] * tc
            if track:
                acts[t, :k] = a
                h_prev_all[t, :k] = hk
                c_prev_all[t, :k] = ck
                tanh_c[t, :k] = tc
            if prefix:
                c[:k] = c_new
                h[:k] = h_new
            else:
                mt = m[t]
                keep = 1.0 - mt
                c = mt * c_new + keep * c
                h = mt * h_new + keep * h
        out[t] = h

    def backward(grad):
        grad = np.ascontiguousarray(grad[perm].transpose(1, 0, 2))
        dz_all = np.zeros((steps, batch, 4 * H), dtype=dtype)
        dh = np.zeros((batch, H), dtype=dtype)
        dc = np.zeros((batch, H), dtype=dtype)
        for t in reversed(order):
            k = active[t]
            dh += grad[t]
            if not k:
                continue
            a = acts[t, :k]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = tanh_c[t, :k]
            dz = dz_all[t, :k]
            if prefix:
                dhn = dh[:k]
                dcn = dc[:k] + dhn * o * (1.0 - tc * tc)
            else:
                mt = m[t]
                keep = 1.0 - mt
                dhn = mt * dh
                dcn = mt * dc + dhn * o * (1.0 - tc * tc)
            dz[:, :H] = dcn * g * i * (1.0 - i)
            dz[:, H:2 * H] = dcn * c_prev_all[t, :k] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dcn * i * (1.0 - g * g)
            dz[:, 3 * H:] = dhn * tc * o * (1.0 - o)
            if prefix:
                dh[:k] = dz @ w_h.T
                dc[:k] = dcn * f
            else:
                dh = keep * dh + dz @ w_h.T
                dc = keep * dc + dcn * f
        dz2 = dz_all.reshape(steps * batch, 4 * H)
        gw_x = xs.reshape(steps * batch, n_in).T @ dz2
        gw_h = h_prev_all.reshape(steps * batch, H).T @ dz2
        gb = dz2.sum(axis=0)
        gx = np.empty_like(x.data)
        gx[perm] = (dz2 @ w_x.T).reshape(steps, batch, n_in).transpose(1, 0, 2)
        return gx, np.concatenate([gw_x, gw_h], axis=0), gb

    return _make(np.ascontiguousarray(out.transpose(1, 0, 2))[np.argsort(perm)], (x, w, b), backward)
