"""Edge-list kernels for the multi-weight graph convolution.

All weighted adjacency matrices of a layer are flattened into one edge list
``(rows, cols, slots, vals)``; slot ``m`` selects the output column, so the
forward result for a batch ``x`` of shape ``(B, N)`` is ``(B, N * M)`` with
flat index ``row * M + slot``.

Two implementations exist: numba ``@njit`` loops and a vectorised numpy
path. Set ``MWTGC_DISABLE_NUMBA=1`` before import to force the numpy path.
Both are deterministic; they agree to rounding, not bit-for-bit.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

DISABLE_NUMBA = os.environ.get("MWTGC_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")
HAS_NUMBA = numba is not None


# --------------------------------------------------------------------------
# numpy path


def _segment_sum(values, keys, n_out):
    """Sum columns of ``values`` (B, E) that share a key; returns (B, n_out)."""
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    out = np.zeros((values.shape[0], n_out))
    if skeys.size == 0:
        return out
    starts = np.flatnonzero(np.r_[True, skeys[1:] != skeys[:-1]])
    out[:, skeys[starts]] = np.add.reduceat(values[:, order], starts, axis=1)
    return out


def gc_forward_numpy(x, rows, cols, slots, vals, n_slots):
    flat = rows * n_slots + slots
    return _segment_sum(x[:, cols] * vals, flat, x.shape[1] * n_slots)


def gc_backward_numpy(gout, x, rows, cols, slots, vals, n_slots):
    flat = rows * n_slots + slots
    g_at_edge = gout[:, flat]
    gx = _segment_sum(g_at_edge * vals, cols, x.shape[1])
    gvals = np.einsum("be,be->e", g_at_edge, x[:, cols])
    return gx, gvals


# --------------------------------------------------------------------------
# numba path

if HAS_NUMBA:

    @numba.njit(cache=True)
    def gc_forward_numba(x, rows, cols, slots, vals, n_slots):
        B, N = x.shape
        out = np.zeros((B, N * n_slots))
        for e in range(rows.shape[0]):
            o = rows[e] * n_slots + slots[e]
            c = cols[e]
            v = vals[e]
            for b in range(B):
                out[b, o] += v * x[b, c]
        return out

    @numba.njit(cache=True)
    def gc_backward_numba(gout, x, rows, cols, slots, vals, n_slots):
        B, N = x.shape
        gx = np.zeros((B, N))
        gvals = np.zeros(rows.shape[0])
        for e in range(rows.shape[0]):
            o = rows[e] * n_slots + slots[e]
            c = cols[e]
            v = vals[e]
            acc = 0.0
            for b in range(B):
                g = gout[b, o]
                gx[b, c] += v * g
                acc += g * x[b, c]
            gvals[e] = acc
        return gx, gvals

else:  # pragma: no cover
    gc_forward_numba = None
    gc_backward_numba = None


if HAS_NUMBA and not DISABLE_NUMBA:
    BACKEND = "numba"
    gc_forward = gc_forward_numba
    gc_backward = gc_backward_numba
else:
    BACKEND = "numpy"
    gc_forward = gc_forward_numpy
    gc_backward = gc_backward_numpy
