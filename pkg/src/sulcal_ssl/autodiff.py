"""Reverse-mode automatic differentiation on dense float64 arrays.

The engine records a directed acyclic graph as operations execute; calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order. Everything runs in 64-bit floats with a fixed reduction
order, so results are bitwise reproducible for fixed inputs.

Only the operations the training stack needs exist here: elementwise
arithmetic, matmul, ReLU, exp/log, reductions, reshape/transpose, strided 3D
convolution (kernel 3, zero padding 1), dropout, and L2 row normalization
with a zero-row subgradient.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable

import numpy as np

from .errors import ContractError

# Per-thread switch: a no_grad() block in one thread must not stop graph
# recording in a concurrently training thread.
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure numpy forward)."""
    prev = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS; graphs outgrow the recursion limit
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    """Wrap an op result; records the graph edge only when grads can flow."""
    out = Tensor(data)
    parents = tuple(p for p in parents)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-independent affine map: out[i] = x[i] @ w + b.

    Each row goes through its own BLAS call, so a sample's output is bitwise
    independent of its batch position and of its batch neighbors. Plain 2D
    GEMM does not guarantee that: its vectorized row packing changes
    summation order with row position.
    """
    if x.ndim != 2 or w.ndim != 2:
        raise ContractError(f"affine expects 2D operands, got {x.shape} @ {w.shape}")
    out = _per_sample_gemm(x.data[:, None, :], w.data)[:, 0, :] + b.data

    def bw(g):
        _acc(x, _per_sample_gemm(g[:, None, :], w.data.T)[:, 0, :])
        _acc(w, x.data.T @ g)
        _acc(b, g.sum(axis=0))

    return _make(out, (x, w, b), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0

    def bw(g):
        _acc(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        _acc(a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _acc(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    ax = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(ax))

    def bw(g):
        _acc(a, g.transpose(inv))

    return _make(a.data.transpose(ax), (a,), bw)


def max_detached(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max as a constant (no gradient); the logsumexp stabilizer."""
    return Tensor(a.data.max(axis=axis, keepdims=keepdims))


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) with the detached-max trick; grad is exact softmax."""
    m = max_detached(a, axis=axis, keepdims=True)
    s = log(tsum(exp(a - m), axis=axis, keepdims=True)) + m
    return s if keepdims else reshape(s, tuple(np.delete(s.data.shape, axis)))


def row_normalize(a: Tensor) -> Tensor:
    """L2-normalize each row of a 2D tensor; zero rows map to zero rows.

    The zero-row case carries a zero subgradient, so a collapsed embedding
    cannot produce NaNs in the loss.
    """
    if a.ndim != 2:
        raise ContractError(f"row_normalize expects 2D, got {a.shape}")
    n = np.linalg.norm(a.data, axis=1, keepdims=True)
    nonzero = n > 0
    safe = np.where(nonzero, n, 1.0)
    out_data = np.where(nonzero, a.data / safe, 0.0)

    def bw(g):
        inner = (g * out_data).sum(axis=1, keepdims=True)
        _acc(a, np.where(nonzero, (g - out_data * inner) / safe, 0.0))

    return _make(out_data, (a,), bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: zero with prob p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def bw(g):
        _acc(a, g * mask)

    return _make(a.data * mask, (a,), bw)


# ---------------------------------------------------------------------------
# 3D convolution, kernel 3, zero padding 1
# ---------------------------------------------------------------------------


class _ConvGeom:
    """Precomputed gather indices for one (spatial dims, stride) pair."""

    __slots__ = ("out_dims", "n_out", "idx", "padded_dims", "padded_size", "_combined")

    def __init__(self, in_dims: tuple[int, int, int], stride: int):
        X, Y, Z = in_dims
        Xp, Yp, Zp = X + 2, Y + 2, Z + 2
        out_dims = tuple((d + 2 - 3) // stride + 1 for d in in_dims)
        ox, oy, oz = out_dims
        sx = np.arange(ox) * stride
        sy = np.arange(oy) * stride
        sz = np.arange(oz) * stride
        # top-left-front corner of each 3x3x3 patch, flattened padded coords
        px, py, pz = np.meshgrid(sx, sy, sz, indexing="ij")
        pos = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)  # (O, 3)
        kx, ky, kz = np.meshgrid(np.arange(3), np.arange(3), np.arange(3), indexing="ij")
        off = np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1)  # (27, 3)
        x = pos[:, None, 0] + off[None, :, 0]
        y = pos[:, None, 1] + off[None, :, 1]
        z = pos[:, None, 2] + off[None, :, 2]
        self.out_dims = out_dims
        self.n_out = ox * oy * oz
        self.idx = (x * Yp + y) * Zp + z  # (O, 27) into the padded volume
        self.padded_dims = (Xp, Yp, Zp)
        self.padded_size = Xp * Yp * Zp
        self._combined: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def combined(self, c_in: int) -> tuple[np.ndarray, np.ndarray]:
        """(O, Cin*27) gather index into the flattened (Cin, padded) volume.

        Lets im2col land directly in GEMM layout (channel-major patch axis)
        with a single fancy index, no transpose copy. The second array is the
        same index flattened in (Cin*27, O) order, matching the layout of the
        input-gradient GEMM in the backward pass.
        """
        got = self._combined.get(c_in)
        if got is None:
            chan = np.arange(c_in)[None, :, None] * self.padded_size  # (1, Cin, 1)
            idx_c = (chan + self.idx[:, None, :]).reshape(self.n_out, c_in * 27)
            idx_t_flat = np.ascontiguousarray(idx_c.T).reshape(-1)
            got = self._combined[c_in] = (idx_c, idx_t_flat)
        return got


_GEOM_CACHE: dict[tuple[tuple[int, int, int], int], _ConvGeom] = {}


def _conv_geom(in_dims: tuple[int, int, int], stride: int) -> _ConvGeom:
    key = (in_dims, stride)
    geom = _GEOM_CACHE.get(key)
    if geom is None:
        geom = _GEOM_CACHE[key] = _ConvGeom(in_dims, stride)
    return geom


def _per_sample_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, M, K) @ (K, N) as one BLAS call per sample.

    Each sample's product is computed by an identical GEMM call, so a row's
    result cannot depend on its batch position (one flattened (B*M, K) GEMM
    does not have that property, and numpy's stacked-matmul path avoids BLAS
    entirely and is an order of magnitude slower).
    """
    B, M, _ = a.shape
    out = np.empty((B, M, b.shape[1]))
    for i in range(B):
        np.dot(a[i], b, out=out[i])
    return out


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Strided 3D convolution, kernel 3, zero padding 1.

    x: (B, Cin, X, Y, Z); w: (Cout, Cin, 3, 3, 3); b: (Cout,).
    Implemented as an im2col gather plus one matmul; the backward pass
    scatters patch gradients with bincount, so reduction order is fixed.
    """
    if x.ndim != 5:
        raise ContractError(f"conv3d input must be (B, C, X, Y, Z), got {x.shape}")
    if w.ndim != 5 or w.shape[2:] != (3, 3, 3):
        raise ContractError(f"conv3d kernel must be (Cout, Cin, 3, 3, 3), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ContractError(f"channel mismatch: input {x.shape[1]}, kernel {w.shape[1]}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    B, Cin = x.shape[:2]
    Cout = w.shape[0]
    geom = _conv_geom(x.shape[2:], stride)
    idx_c, idx_t_flat = geom.combined(Cin)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    # np.take, unlike arr[:, idx_c], returns C-contiguous memory; every GEMM
    # and reshape below depends on that
    col = np.take(xp.reshape(B, -1), idx_c, axis=1)  # (B, O, Cin*27)
    w2 = w.data.reshape(Cout, Cin * 27)
    # One GEMM per sample so a row's result cannot depend on its batch
    # position (a flattened (B*O, K) GEMM does not have that property).
    # The (Cout, CK) @ (CK, O) orientation keeps the long axis last, which
    # BLAS handles far better than a skinny Cout-wide result, and writes the
    # output directly in (B, Cout, O) layout.
    out = np.empty((B, Cout, geom.n_out))
    for bi in range(B):
        np.dot(w2, col[bi].T, out=out[bi])
    out += b.data[:, None]
    out_data = out.reshape(B, Cout, *geom.out_dims)

    def bw(g):
        G = g.reshape(B, Cout, geom.n_out)
        if w.requires_grad:
            Gt = np.ascontiguousarray(G.transpose(1, 0, 2)).reshape(Cout, -1)
            flatC = col.reshape(B * geom.n_out, Cin * 27)
            _acc(w, (Gt @ flatC).reshape(Cout, Cin, 3, 3, 3))
        if b.requires_grad:
            _acc(b, G.sum(axis=(0, 2)))
        if x.requires_grad:
            # scatter patch gradients back through the combined index;
            # bincount sums in input order, so each bin accumulates its
            # contributions in fixed (k, o) order, per sample
            gx = np.empty((B, Cin * geom.padded_size))
            gcol_t = np.empty((Cin * 27, geom.n_out))
            for bi in range(B):
                np.dot(w2.T, G[bi], out=gcol_t)
                gx[bi] = np.bincount(
                    idx_t_flat, weights=gcol_t.reshape(-1),
                    minlength=Cin * geom.padded_size,
                )
            gx = gx.reshape(B, Cin, *geom.padded_dims)[:, :, 1:-1, 1:-1, 1:-1]
            _acc(x, np.ascontiguousarray(gx))

    return _make(out_data, (x, w, b), bw)
