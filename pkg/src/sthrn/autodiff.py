"""Reverse-mode automatic differentiation over numpy float64 arrays.

Each operation returns a new ``Tensor`` whose value is computed
eagerly; when gradients are enabled the output also records its parent
tensors and a closure that accumulates vector-Jacobian products into
them.  ``backward`` walks that dynamic tape once, in reverse
topological order, from a scalar root.  Inside ``no_grad()`` the same
operations run value-only, which is what finite-difference probing
uses.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonScalarRoot(ValueError):
    """backward() was called on a tensor with more than one element."""


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus its place on the tape.

    ``grad`` is populated by ``backward``; leaves kept in a model are
    long-lived while interior nodes are rebuilt every forward pass.
    """

    __slots__ = ("data", "grad", "op", "parents", "vjp")

    def __init__(self, data, op: str = "leaf", parents: tuple = (), vjp=None):
        # float64 is the working dtype; wider floats are passed through so
        # grad_check can re-probe finite differences in extended precision.
        # Full reductions hand back numpy scalars, hence np.generic.
        if isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f":
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

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
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    t.grad += _unbroadcast(g, t.data.shape)


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        _acc(a, g)
        _acc(b, g)

    return Tensor(out_data, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        _acc(a, g)
        _acc(b, -g)

    return Tensor(out_data, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return Tensor(out_data, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        _acc(a, g / b.data)
        _acc(b, -g * out_data / b.data)

    return Tensor(out_data, "div", (a, b), vjp)


def scale(a, s: float) -> Tensor:
    """Product with a python scalar (no tape node for the scalar)."""
    a = _as_tensor(a)
    out_data = a.data * s
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad += g * s

    return Tensor(out_data, "scale", (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return Tensor(out_data, "matmul", (a, b), vjp)


# -- shape ------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad += g.reshape(a.data.shape)

    return Tensor(out_data, "reshape", (a,), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        out_data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[p.data.shape for p in parts]}") from exc
    if not _grad_enabled:
        return Tensor(out_data)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += np.moveaxis(moved[lo:hi], 0, axis)

    return Tensor(out_data, "concat", tuple(parts), vjp)


def narrow(a, key) -> Tensor:
    """Basic (non-repeating) indexing; gradient scatters into zeros."""
    a = _as_tensor(a)
    out_data = a.data[key]
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad[key] += g

    return Tensor(out_data, "narrow", (a,), vjp)


def gather_rows(a, idx) -> Tensor:
    """Rows ``a[idx]`` for an integer index array; repeats allowed."""
    a = _as_tensor(a)
    idx = np.asarray(idx)
    out_data = a.data[idx]
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        np.add.at(a.grad, idx, g)

    return Tensor(out_data, "gather", (a,), vjp)


# -- reductions -------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.data.shape)

    return Tensor(out_data, "sum", (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l2norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along one axis.

    The gradient at an exactly zero vector is NaN by construction (the
    norm has a kink there); grad_check reports such components as
    non-differentiable instead of comparing them.
    """
    a = _as_tensor(a)
    out_data = np.sqrt((a.data * a.data).sum(axis=axis))
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            a.grad += np.expand_dims(g / out_data, axis) * a.data

    return Tensor(out_data, "l2norm", (a,), vjp)


# -- nonlinearities ---------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad += g * out_data * (1.0 - out_data)

    return Tensor(out_data, "sigmoid", (a,), vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    if not _grad_enabled:
        return Tensor(out_data)

    def vjp(g):
        a.grad += g * (1.0 - out_data * out_data)

    return Tensor(out_data, "tanh", (a,), vjp)


# -- tape walk --------------------------------------------------------------


def backward(root: Tensor, leaves=()) -> None:
    """Populate ``.grad`` on every tensor reachable from ``root``.

    Gradients are freshly assigned on each call, so repeated calls from
    the same root give identical results.  Tensors in ``leaves`` that
    the root does not depend on get zero gradients instead of None.
    """
    if root.data.size != 1:
        raise NonScalarRoot(f"backward root must be scalar, got shape {root.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.vjp is not None:
            node.vjp(node.grad)
    for leaf in leaves:
        if id(leaf) not in seen:
            leaf.grad = np.zeros_like(leaf.data)


# -- gradient checking ------------------------------------------------------


class GradCheckReport:
    """Outcome of comparing tape gradients against central differences."""

    def __init__(self, max_rel_error, per_leaf, skipped):
        self.max_rel_error = max_rel_error
        self.per_leaf = per_leaf          # name -> worst relative error
        self.skipped = skipped            # (name, flat index) of NaN/inf grads

    def __repr__(self) -> str:
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error!r}, "
            f"skipped={len(self.skipped)})"
        )


# Central differences in float64 carry cancellation noise of roughly
# |f| * eps / (2 * step); at step 1e-5 that floor sits near 5e-12 and
# swamps gradient components below ~1e-7.  Components flagged by the
# float64 sweep are re-probed in extended precision when the platform
# long double is actually wider than double (x86-64 yes, arm64 no).
_REFINE_AVAILABLE = np.finfo(np.longdouble).eps < 1e-18


def _refine_fd(f, leaf: Tensor, index: int, step: float) -> float:
    """Re-evaluate one central difference with the probed leaf widened.

    Rounding error upstream of the perturbed component is identical in
    both evaluations and cancels in fp - fm; widening just this leaf
    promotes everything downstream of it, which is the only part of the
    computation where the two runs differ.
    """
    original = leaf.data
    leaf.data = original.astype(np.longdouble)
    flat = leaf.data.reshape(-1)
    base = flat[index]
    try:
        flat[index] = base + step
        fp = f().data
        flat[index] = base - step
        fm = f().data
    finally:
        leaf.data = original
    return float((fp - fm) / (2.0 * np.longdouble(step)))


def grad_check(
    f,
    leaves: dict[str, Tensor],
    step: float = 1e-5,
    refine_threshold: float | None = 2e-5,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must rebuild its tape from the current leaf values on every
    call.  Each leaf component is perturbed by +-step in place and the
    relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    Components whose analytic gradient is NaN or inf are reported in
    ``skipped`` rather than compared: the function is not differentiable
    there.

    A float64 difference quotient is noise-limited once the component is
    small, so any component whose relative error exceeds
    ``refine_threshold`` is re-measured in extended precision before it
    is scored.  Pass ``refine_threshold=None`` to keep the raw float64
    numbers.
    """
    out = f()
    backward(out, leaves=leaves.values())
    analytic = {name: t.grad.copy() for name, t in leaves.items()}
    per_leaf: dict[str, float] = {}
    skipped: list[tuple[str, int]] = []
    worst = 0.0
    refine = refine_threshold is not None and _REFINE_AVAILABLE
    with no_grad():
        for name, t in leaves.items():
            flat = t.data.reshape(-1)
            aflat = analytic[name].reshape(-1)
            leaf_worst = 0.0
            for i in range(flat.size):
                a = aflat[i]
                if not np.isfinite(a):
                    skipped.append((name, i))
                    continue
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                fd = (fp - fm) / (2.0 * step)
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if refine and err > refine_threshold:
                    fd = _refine_fd(f, t, i, step)
                    err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if err > leaf_worst:
                    leaf_worst = err
            per_leaf[name] = leaf_worst
            if leaf_worst > worst:
                worst = leaf_worst
    return GradCheckReport(worst, per_leaf, skipped)
