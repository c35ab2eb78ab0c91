"""A small reverse-mode tape.

Operations are coarse (a whole LSTM encoder pass is one node) and each
carries a hand-written backward. A ``Var`` without a tape is a constant; an
op records itself only when one of its inputs lives on a tape, so the same
forward code serves training and inference.
"""
import numpy as np

from . import _kernels
from .errors import ShapeError
from .numerics import sigmoid


class Var:
    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape=None):
        self.value = value
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={np.shape(self.value)}, taped={self.tape is not None})"


class Tape:
    """Records ops in execution order; ``backward`` replays them in reverse."""

    def __init__(self):
        self._nodes = []

    def leaf(self, value):
        return Var(np.asarray(value, dtype=np.float64), self)

    def record(self, inputs, outputs, backward):
        self._nodes.append((inputs, outputs, backward))

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        if np.size(loss.value) != 1:
            raise ShapeError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for inputs, outputs, fn in reversed(self._nodes):
            grads_out = [o.grad if o.grad is not None else np.zeros_like(o.value) for o in outputs]
            if all(o.grad is None for o in outputs):
                continue
            grads_in = fn(*grads_out)
            for var, g in zip(inputs, grads_in):
                if var.tape is None or g is None:
                    continue
                var.grad = g if var.grad is None else var.grad + g


def _tape_of(*vars_):
    for v in vars_:
        if v.tape is not None:
            return v.tape
    return None


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _emit(inputs, value, backward):
    tape = _tape_of(*inputs)
    out = Var(value, tape)
    if tape is not None:
        tape.record(inputs, (out,), backward)
    return out


# --------------------------------------------------------------------------
# elementwise / linear


def add(a, b):
    return _emit((a, b), a.value + b.value,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    return _emit((a, b), a.value - b.value,
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    return _emit((a, b), a.value * b.value,
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, w):
    """``a @ w`` with ``a`` of shape (..., k) and ``w`` of shape (k, m)."""
    if a.shape[-1] != w.shape[0] or w.value.ndim != 2:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {w.shape}")

    def backward(g):
        ga = g @ w.value.T
        a2 = a.value.reshape(-1, a.shape[-1])
        gw = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return _emit((a, w), a.value @ w.value, backward)


def reshape(a, shape):
    return _emit((a,), a.value.reshape(shape), lambda g: (g.reshape(a.shape),))


def relu(a):
    mask = a.value > 0
    return _emit((a,), np.where(mask, a.value, 0.0), lambda g: (g * mask,))


def sigmoid_op(a):
    s = sigmoid(a.value)
    return _emit((a,), s, lambda g: (g * s * (1.0 - s),))


def tanh_op(a):
    t = np.tanh(a.value)
    return _emit((a,), t, lambda g: (g * (1.0 - t * t),))


def mean_square(a, b):
    diff = a.value - b.value
    n = diff.size
    val = np.asarray(np.mean(diff * diff))
    return _emit((a, b), val,
                 lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def sum_all(a):
    return _emit((a,), np.asarray(a.value.sum()), lambda g: (np.full(a.shape, g),))


# --------------------------------------------------------------------------
# graph convolution


def graph_conv(x, vals, edges):
    """Edge-list graph convolution, see :mod:`mwtgc._kernels`.

    ``x`` is (B, N); ``vals`` is the (E,) vector of effective edge weights;
    ``edges`` is ``(rows, cols, slots, n_slots)``. Returns (B, N * n_slots).
    """
    rows, cols, slots, n_slots = edges
    xv = np.ascontiguousarray(x.value)
    out = _kernels.gc_forward(xv, rows, cols, slots, vals.value, n_slots)

    def backward(g):
        gx, gv = _kernels.gc_backward(np.ascontiguousarray(g), xv, rows, cols, slots, vals.value, n_slots)
        return gx, gv

    return _emit((x, vals), out, backward)


# --------------------------------------------------------------------------
# LSTM (fused gates, column blocks ordered input, forget, output, candidate)


def lstm_cell(z, c_prev, hidden):
    """One LSTM update from pre-activations ``z`` (B, 4H)."""
    i = sigmoid(z[:, :hidden])
    f = sigmoid(z[:, hidden:2 * hidden])
    o = sigmoid(z[:, 2 * hidden:3 * hidden])
    g = np.tanh(z[:, 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, c_prev, tc)


def _lstm_cell_backward(dh, dc, cache):
    i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        do * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ], axis=1)
    return dz, dc * f


def lstm_encode(zx, w_h, b):
    """Run the encoder over precomputed input projections.

    ``zx`` is (B, T, 4H) holding ``x_t @ W_x`` for every step; the initial
    state is zero. Returns ``(h_T, c_T)``.
    """
    B, T, H4 = zx.shape
    H = H4 // 4
    if w_h.shape != (H, H4) or b.shape != (H4,):
        raise ShapeError(f"lstm_encode: W_h {w_h.shape} / b {b.shape} do not fit hidden size {H}")
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs, caches = [], []
    for t in range(T):
        hs.append(h)
        z = zx.value[:, t, :] + h @ w_h.value + b.value
        h, c, cache = lstm_cell(z, c, H)
        caches.append(cache)

    def backward(gh, gc):
        dzx = np.zeros_like(zx.value)
        dwh = np.zeros_like(w_h.value)
        db = np.zeros_like(b.value)
        dh, dc = gh, gc
        for t in range(T - 1, -1, -1):
            dz, dc = _lstm_cell_backward(dh, dc, caches[t])
            dzx[:, t, :] = dz
            dwh += hs[t].T @ dz
            db += dz.sum(axis=0)
            dh = dz @ w_h.value.T
        return dzx, dwh, db

    tape = _tape_of(zx, w_h, b)
    h_out, c_out = Var(h, tape), Var(c, tape)
    if tape is not None:
        tape.record((zx, w_h, b), (h_out, c_out), backward)
    return h_out, c_out


def lstm_decode(h0, c0, x0, w_x, w_h, b, w_out, b_out, steps):
    """Autoregressive decoder: each prediction is the next step's input.

    Returns predictions of shape (B, steps, N).
    """
    B, H = h0.shape
    N = x0.shape[1]
    if w_x.shape != (N, 4 * H) or w_h.shape != (H, 4 * H) or w_out.shape != (H, N):
        raise ShapeError("lstm_decode: parameter shapes inconsistent with state and input sizes")
    h, c, x = h0.value, c0.value, x0.value
    xs, hs_prev, hs, caches = [], [], [], []
    preds = np.empty((B, steps, N))
    for s in range(steps):
        xs.append(x)
        hs_prev.append(h)
        z = x @ w_x.value + h @ w_h.value + b.value
        h, c, cache = lstm_cell(z, c, H)
        caches.append(cache)
        hs.append(h)
        x = h @ w_out.value + b_out.value
        preds[:, s, :] = x

    def backward(gy):
        dwx = np.zeros_like(w_x.value)
        dwh = np.zeros_like(w_h.value)
        db = np.zeros_like(b.value)
        dwo = np.zeros_like(w_out.value)
        dbo = np.zeros_like(b_out.value)
        dx = np.zeros((B, N))
        dh_next = np.zeros((B, H))
        dc = np.zeros((B, H))
        for s in range(steps - 1, -1, -1):
            dy = gy[:, s, :] + dx
            dwo += hs[s].T @ dy
            dbo += dy.sum(axis=0)
            dh = dy @ w_out.value.T + dh_next
            dz, dc = _lstm_cell_backward(dh, dc, caches[s])
            dwx += xs[s].T @ dz
            dwh += hs_prev[s].T @ dz
            db += dz.sum(axis=0)
            dx = dz @ w_x.value.T
            dh_next = dz @ w_h.value.T
        return dh_next, dc, dx, dwx, dwh, db, dwo, dbo

    inputs = (h0, c0, x0, w_x, w_h, b, w_out, b_out)
    return _emit(inputs, preds, backward)
