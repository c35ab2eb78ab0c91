"""Dense/sparse primitives, activations, finite-difference gradient checks."""
import numpy as np

from .errors import NonFiniteError, ShapeError


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return a @ b


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise _shape_error("hadamard", a, b)
    return a * b


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def tanh(x):
    return np.tanh(x)


class SparsePatternMatrix:
    """Square or rectangular matrix with a frozen sparsity pattern.

    The pattern (``rows``, ``cols``) is fixed at construction and stored
    sorted row-major; only ``values`` may change afterwards.
    """

    def __init__(self, shape, rows, cols, values=None):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ShapeError("rows and cols must be 1-D arrays of equal length")
        n_rows, n_cols = shape
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError(f"pattern index out of range for shape {shape}")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if rows.size > 1 and np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
            raise ShapeError("duplicate (row, col) entries in pattern")
        if values is None:
            values = np.zeros(rows.size)
        else:
            values = np.asarray(values, dtype=np.float64)[order]
        if values.shape != rows.shape:
            raise ShapeError("values must match pattern length")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("sparse values must be finite")
        self.shape = (int(n_rows), int(n_cols))
        self._rows = rows
        self._cols = cols
        self._rows.setflags(write=False)
        self._cols.setflags(write=False)
        self.values = values

    @classmethod
    def from_scipy(cls, mat):
        coo = mat.tocoo()
        return cls(coo.shape, coo.row, coo.col, coo.data)

    @property
    def rows(self):
        return self._rows

    @property
    def cols(self):
        return self._cols

    @property
    def nnz(self):
        return self._rows.size

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self._rows, self._cols] = self.values
        return out

    def with_values(self, values):
        new = SparsePatternMatrix.__new__(SparsePatternMatrix)
        new.shape = self.shape
        new._rows = self._rows
        new._cols = self._cols
        new.values = np.asarray(values, dtype=np.float64).copy()
        if new.values.shape != self._rows.shape:
            raise ShapeError("values must match pattern length")
        return new

    def hadamard(self, other):
        """Elementwise product with another matrix on this pattern."""
        if isinstance(other, SparsePatternMatrix):
            other = other.to_dense()
        other = np.asarray(other, dtype=np.float64)
        if other.shape != self.shape:
            raise _shape_error("hadamard", np.empty(self.shape), other)
        return self.with_values(self.values * other[self._rows, self._cols])


def sparse_apply(s, x):
    """Compute ``dense(s) @ x`` without densifying."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != s.shape[1]:
        raise ShapeError(f"sparse_apply: incompatible shapes {s.shape} and {tuple(x.shape)}")
    out = np.zeros(s.shape[0])
    np.add.at(out, s.rows, s.values * x[s.cols])
    return out


def make_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def grad_check(loss_fn, params, epsilon=1e-5):
    """Max relative error between tape gradients and central differences.

    ``loss_fn(tape, leaves)`` must build a scalar loss on ``tape`` from the
    dict of leaf variables; it is also called with ``tape=None`` and plain
    constant leaves for the finite-difference evaluations. ``params`` is a
    dict of float arrays; it is restored before returning.
    """
    from .autodiff import Tape, Var

    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-6, 1e-4]")
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    loss = loss_fn(tape, leaves)
    if not np.isfinite(loss.value).all():
        raise NonFiniteError(f"loss is not finite: {loss.value}")
    tape.backward(loss)

    def evaluate():
        val = float(loss_fn(None, {k: Var(v) for k, v in params.items()}).value)
        if not np.isfinite(val):
            raise NonFiniteError("loss became non-finite under perturbation")
        return val

    worst = 0.0
    for name, arr in params.items():
        g_ad = leaves[name].grad
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = evaluate()
            flat[idx] = orig - epsilon
            down = evaluate()
            flat[idx] = orig
            g_fd = (up - down) / (2.0 * epsilon)
            g = g_ad.reshape(-1)[idx]
            err = abs(g - g_fd) / max(1.0, abs(g), abs(g_fd))
            worst = max(worst, err)
    return worst
