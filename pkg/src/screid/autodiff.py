"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is define-by-run: each operation eagerly computes its result
with numpy, links the output tensor to its parents, and stashes a
backward closure. ``Tensor.backward()`` walks the implicit graph once in
reverse topological order, accumulating gradients into every tensor that
asked for them. Only the primitives the model actually needs exist here:
affine maps, ReLU, batch normalization, axis reductions (for pooling),
concatenation, L2 normalization, dot products, log/exp and scalar
arithmetic. No broadcasting zoo beyond what a bias add requires.

``finite_difference_gradient`` is the numerical oracle used by the test
suite; it only re-runs forward evaluations and never touches the
backward machinery it is checking.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError

# Inputs whose L2 norm falls below this floor pass through l2_normalize
# unchanged (the mixture bank starts at zeros and must not produce NaN).
NORM_FLOOR = 1e-12

# Counts how often the norm floor guard fired since the last reset.
diagnostics = {"norm_floor_hits": 0}


def reset_diagnostics():
    diagnostics["norm_floor_hits"] = 0


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array plus an optional gradient slot.

    Operations on tensors record backward closures when any operand has
    ``requires_grad`` set and grad mode is on; otherwise they are plain
    numpy evaluations.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Visits every reachable node exactly once. A constant loss (no
        ``requires_grad`` ancestors, so no recorded parents) writes no
        gradients at all.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be scalar, got shape {self.data.shape}"
            )
        if not self._parents and not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, -other)
        if np.isscalar(other):
            return add(self, -float(other))
        return add(self, Tensor(-np.asarray(other, dtype=np.float64)))

    def __rsub__(self, other):
        return add(-self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __getitem__(self, idx):
        return take(self, idx)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Python sugar below is intentionally minimal; arithmetic beyond the
    # primitives raises rather than silently broadcasting.

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracking(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _attach(out: Tensor, parents: Sequence[Tensor], backward: Callable[[], None]):
    out.requires_grad = True
    out._parents = tuple(parents)
    out._backward = backward


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        out = Tensor(a.data + float(b))
        if _tracking(a):
            def backward():
                _accumulate(a, out.grad)
            _attach(out, (a,), backward)
        return out
    b = as_tensor(b)
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} + {b.shape}") from None
    out = Tensor(a.data + b.data)
    if _tracking(a, b):
        def backward():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        _attach(out, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        s = float(b)
        out = Tensor(a.data * s)
        if _tracking(a):
            def backward():
                _accumulate(a, out.grad * s)
            _attach(out, (a,), backward)
        return out
    b = as_tensor(b)
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} * {b.shape}") from None
    out = Tensor(a.data * b.data)
    if _tracking(a, b):
        def backward():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
        _attach(out, (a, b), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ValueError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if _tracking(a, b):
        def backward():
            g = out.grad
            if b.ndim == 1:
                if a.requires_grad:
                    _accumulate(a, np.outer(g, b.data))
                if b.requires_grad:
                    _accumulate(b, a.data.T @ g)
            else:
                if a.requires_grad:
                    _accumulate(a, g @ b.data.T)
                if b.requires_grad:
                    _accumulate(b, a.data.T @ g)
        _attach(out, (a, b), backward)
    return out


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: needs equal-length vectors, got {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    if _tracking(a, b):
        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, g * a.data)
        _attach(out, (a, b), backward)
    return out


# -- elementwise --------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    if _tracking(x):
        def backward():
            _accumulate(x, out.grad * (x.data > 0.0))
        _attach(out, (x,), backward)
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    if _tracking(x):
        def backward():
            _accumulate(x, out.grad * out.data)
        _attach(out, (x,), backward)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(np.log(x.data))  # non-finite results surface downstream
    if _tracking(x):
        def backward():
            _accumulate(x, out.grad / x.data)
        _attach(out, (x,), backward)
    return out


# -- reductions and shape -----------------------------------------------


def _reduced_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    axes = _reduced_axes(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes if axis is not None else None))
    if _tracking(x):
        def backward():
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axes)
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy())
        _attach(out, (x,), backward)
    return out


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    axes = _reduced_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = Tensor(x.data.mean(axis=axes if axis is not None else None))
    if _tracking(x):
        def backward():
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axes)
            _accumulate(x, np.broadcast_to(g, x.data.shape) / count)
        _attach(out, (x,), backward)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    if _tracking(x):
        def backward():
            _accumulate(x, out.grad.reshape(x.data.shape))
        _attach(out, (x,), backward)
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    if _tracking(x):
        inverse = tuple(np.argsort(axes))
        def backward():
            _accumulate(x, out.grad.transpose(inverse))
        _attach(out, (x,), backward)
    return out


def take(x, idx) -> Tensor:
    """Select rows or slices; backward scatter-adds into the source."""
    x = as_tensor(x)
    out = Tensor(np.array(x.data[idx]))
    if _tracking(x):
        def backward():
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            _accumulate(x, g)
        _attach(out, (x,), backward)
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ValueError("concat: needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if _tracking(*parts):
        sizes = [p.data.shape[axis] for p in parts]
        def backward():
            start = 0
            for p, size in zip(parts, sizes):
                sl = [slice(None)] * out.data.ndim
                sl[axis] = slice(start, start + size)
                if p.requires_grad:
                    _accumulate(p, out.grad[tuple(sl)])
                start += size
        _attach(out, parts, backward)
    return out


# -- normalization ------------------------------------------------------


def l2_normalize(x) -> Tensor:
    """Scale a vector (or each row of a matrix) to unit L2 norm.

    Rows with norm below NORM_FLOOR pass through unchanged and bump the
    ``norm_floor_hits`` diagnostic instead of dividing by ~zero.
    """
    x = as_tensor(x)
    if x.ndim == 1:
        norms = np.array([np.linalg.norm(x.data)])
        flat_in = x.data[None, :]
    elif x.ndim == 2:
        norms = np.linalg.norm(x.data, axis=1)
        flat_in = x.data
    else:
        raise ValueError(f"l2_normalize: expected vector or matrix, got {x.shape}")
    guarded = norms < NORM_FLOOR
    hits = int(guarded.sum())
    if hits:
        diagnostics["norm_floor_hits"] += hits
    safe = np.where(guarded, 1.0, norms)
    flat_out = flat_in / safe[:, None]
    flat_out[guarded] = flat_in[guarded]
    out = Tensor(flat_out.reshape(x.data.shape))
    if _tracking(x):
        def backward():
            g = out.grad if x.ndim == 2 else out.grad[None, :]
            y = flat_out
            proj = (g * y).sum(axis=1, keepdims=True)
            gx = (g - proj * y) / safe[:, None]
            gx[guarded] = g[guarded]
            _accumulate(x, gx.reshape(x.data.shape))
        _attach(out, (x,), backward)
    return out


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    decay: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize columns of (n, d) input.

    Train mode uses biased batch statistics and folds them into the
    running buffers in place (decay 0.9); eval mode reads the buffers and
    is a pure affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ValueError(f"batch_norm: expected (n, d) input, got {x.shape}")
    n, d = x.data.shape
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"batch_norm: parameter shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    if train:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= decay
        running_mean += (1.0 - decay) * mean
        running_var *= decay
        running_var += (1.0 - decay) * var
    else:
        mean = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor(gamma.data * xhat + beta.data)
    if _tracking(x, gamma, beta):
        def backward():
            g = out.grad
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=0))
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data
                if train:
                    gx = (
                        inv
                        / n
                        * (
                            n * dxhat
                            - dxhat.sum(axis=0)
                            - xhat * (dxhat * xhat).sum(axis=0)
                        )
                    )
                else:
                    gx = dxhat * inv
                _accumulate(x, gx)
        _attach(out, (x, gamma, beta), backward)
    return out


# -- numerically stable helpers ----------------------------------------


def logsumexp(logits: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """log(sum(w * exp(logits))) with the max subtracted before exp.

    The subtracted max is a detached constant, so gradients are exact.
    Weights are fixed coefficients, not graph nodes.
    """
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ValueError(f"logsumexp: expected a vector, got {logits.shape}")
    if logits.data.size == 0:
        raise ValueError("logsumexp: empty input")
    high = float(logits.data.max())
    shifted = exp(add(logits, -high))
    if weights is not None:
        shifted = mul(shifted, Tensor(weights))
    total = tsum(shifted)
    if not np.isfinite(total.data) or total.data <= 0.0:
        raise NumericalError(f"logsumexp: non-positive or non-finite sum {total.data!r}")
    return add(log(total), high)


# -- numerical oracle ---------------------------------------------------


def finite_difference_gradient(f, x, step: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``.

    Re-runs forward evaluations only; completely independent of the
    backward machinery it is used to check.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = _scalar_value(f(Tensor(base.copy())))
            flat[k] = orig - step
            lo = _scalar_value(f(Tensor(base.copy())))
            flat[k] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalError(
                    f"finite_difference_gradient: non-finite f at coordinate {k}"
                )
            gflat[k] = (hi - lo) / (2.0 * step)
    return Tensor(grad)


def _scalar_value(v) -> float:
    if isinstance(v, Tensor):
        if v.data.size != 1:
            raise ValueError("finite_difference_gradient: f must return a scalar")
        return float(v.data.item())
    return float(v)
