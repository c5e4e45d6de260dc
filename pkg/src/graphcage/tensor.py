"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything is float64, row-major, eagerly evaluated. Each operation records
its parents and a closure that scatters the output gradient back into them;
``backward`` runs a single topological sweep so every producing operation is
visited exactly once even when a tensor feeds several consumers.

Broadcasting is supported only for the pointwise binary ops (add/sub/mul/div),
which is all the model needs (bias terms, mask multiplication).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


def _as_f64(data) -> Array:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A dense n-d array node in a dynamically built computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self.grad: Array | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # pointwise arithmetic -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a: Tensor, b: Tensor, out_data: Array, da, db) -> Tensor:
    def bwd(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(da(g), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(db(g), b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data * b.data,
                   lambda g: g * b.data, lambda g: g * a.data)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data / b.data,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g: Array) -> None:
        _accumulate(x, g * c)

    return Tensor(x.data * c, _parents=(x,), _backward=bwd)


# linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=bwd)


def _contract(sa: str, sb: str, so: str, A: Array, B: Array) -> Array:
    """Evaluate the two-operand einsum ``sa,sb->so`` via batched matmul.

    Index roles: in both inputs and the output -> batch; in both inputs but
    not the output -> contracted; in one input only -> free (summed out
    first if absent from the output). Lowering to np.matmul keeps every
    contraction on the BLAS path, which plain np.einsum misses for batched
    subscripts.
    """
    # sum out indices private to one operand
    for c in [c for c in sa if c not in sb and c not in so]:
        A = A.sum(axis=sa.index(c))
        sa = sa.replace(c, "")
    for c in [c for c in sb if c not in sa and c not in so]:
        B = B.sum(axis=sb.index(c))
        sb = sb.replace(c, "")
    batch = [c for c in so if c in sa and c in sb]
    con = [c for c in sa if c in sb and c not in so]
    fx = [c for c in sa if c not in sb]
    fy = [c for c in sb if c not in sa]
    dims = {c: A.shape[sa.index(c)] for c in sa}
    dims.update({c: B.shape[sb.index(c)] for c in sb})

    def prod(chars):
        p = 1
        for c in chars:
            p *= dims[c]
        return p

    At = A.transpose([sa.index(c) for c in batch + fx + con])
    Bt = B.transpose([sb.index(c) for c in batch + con + fy])
    C = np.matmul(At.reshape(prod(batch), prod(fx), prod(con)),
                  Bt.reshape(prod(batch), prod(con), prod(fy)))
    C = C.reshape([dims[c] for c in batch + fx + fy])
    order = batch + fx + fy
    return C.transpose([order.index(c) for c in so])


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand contraction with automatic backward.

    Requires every index of each operand to appear in the output or in the
    other operand (no internal traces), which covers all contractions the
    model uses.
    """
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb + out), (sb, sa + out)):
        missing = set(s) - set(other)
        if missing:
            raise ValueError(f"einsum '{subscripts}': unrecoverable indices {missing}")

    data = _contract(sa, sb, out, a.data, b.data)

    def bwd(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, _contract(out, sb, sa, g, b.data))
        if b.requires_grad:
            _accumulate(b, _contract(sa, out, sb, a.data, g))

    return Tensor(data, _parents=(a, b), _backward=bwd)


def inner_product(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"inner_product: need equal-length vectors, "
                         f"got {a.shape} and {b.shape}")
    return einsum("i,i->", a, b)


# nonlinearities ----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # relu'(0) := 0

    def bwd(g: Array) -> None:
        _accumulate(x, g * mask)

    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(g: Array) -> None:
        _accumulate(x, g * (1.0 - y * y))

    return Tensor(y, _parents=(x,), _backward=bwd)


def tabs(x: Tensor) -> Tensor:
    s = np.sign(x.data)

    def bwd(g: Array) -> None:
        _accumulate(x, g * s)

    return Tensor(np.abs(x.data), _parents=(x,), _backward=bwd)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)

    def bwd(g: Array) -> None:
        _accumulate(x, g * 0.5 / y)

    return Tensor(y, _parents=(x,), _backward=bwd)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: Array) -> None:
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    return Tensor(y, _parents=(x,), _backward=bwd)


# reductions / structure --------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: Array) -> None:
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return Tensor(data, _parents=(x,), _backward=bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    def bwd(g: Array) -> None:
        _accumulate(x, g.reshape(x.shape))

    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=bwd)


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)

    def bwd(g: Array) -> None:
        _accumulate(x, g.transpose(inv))

    return Tensor(x.data.transpose(axes), _parents=(x,), _backward=bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    rank = tensors[0].ndim
    if not -rank <= axis < rank:
        raise ShapeError(f"concat: axis {axis} out of range for rank {rank}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if not 0 <= start and start + length <= x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of bounds "
                         f"for axis {axis} of shape {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g: Array) -> None:
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full)

    return Tensor(x.data[idx], _parents=(x,), _backward=bwd)


def conv1d(x: Tensor, kernel: Tensor, width: int) -> Tensor:
    """Same-padded 1-d convolution over the time axis.

    ``x`` is (..., T, d_in), ``kernel`` is (width, d_in, d_out).
    """
    if width < 1:
        raise ValueError(f"conv1d: non-positive kernel width {width}")
    if kernel.shape[0] != width or kernel.ndim != 3:
        raise ShapeError(f"conv1d: kernel shape {kernel.shape} does not match "
                         f"width {width}")
    if x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: input features {x.shape} vs kernel "
                         f"{kernel.shape}")
    T = x.shape[-2]
    left = (width - 1) // 2
    right = width - 1 - left
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros(x.shape[:-1] + (kernel.shape[2],))
    for tap in range(width):
        out += np.einsum("...ti,io->...to", xp[..., tap:tap + T, :],
                         kernel.data[tap])

    def bwd(g: Array) -> None:
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for tap in range(width):
                gxp[..., tap:tap + T, :] += np.einsum(
                    "...to,io->...ti", g, kernel.data[tap])
            _accumulate(x, gxp[..., left:left + T, :])
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            flat_g = g.reshape(-1, g.shape[-1])
            for tap in range(width):
                win = xp[..., tap:tap + T, :].reshape(-1, xp.shape[-1])
                gk[tap] = np.einsum("ti,to->io", win, flat_g)
            _accumulate(kernel, gk)

    return Tensor(out, _parents=(x, kernel), _backward=bwd)


def layer_norm(x: Tensor, gain: Tensor | None = None,
               bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    y = div(centered, sqrt(add(var, Tensor(eps))))
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    return y


# backward pass -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients of a scalar into every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# parameters --------------------------------------------------------------


@dataclass
class Parameter:
    """A named trainable tensor."""

    name: str
    tensor: Tensor
    trainable: bool = True


class ParameterRegistry:
    """Flat name -> Parameter map with unique names."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, data: Array, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=trainable)
        self._params[name] = Parameter(name, t, trainable)
        return t

    def adopt(self, name: str, param: Parameter) -> None:
        """Register an existing parameter under a registry-local name."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        self._params[name] = param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self._params.values()]

    def zero_grads(self) -> None:
        zero_grads(self.tensors())


def glorot(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int | None = None, fan_out: int | None = None) -> Array:
    """Uniform Glorot initialization; fans default to the trailing two dims."""
    if fan_in is None:
        fan_in = shape[-1] if len(shape) >= 1 else 1
    if fan_out is None:
        fan_out = shape[-2] if len(shape) >= 2 else shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    passed: bool
    checked: int = 0
    details: list = field(default_factory=list)


def grad_check(fn, inputs: list[Tensor], tol: float = 1e-4,
               step: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` to central differences.

    ``fn`` must return a scalar Tensor. When ``max_entries`` is given, a
    random subset of entries per input is probed instead of all of them.
    """
    for t in inputs:
        t.requires_grad = True
    zero_grads(inputs)
    out = fn(*inputs)
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    worst = 0.0
    worst_input, worst_index = -1, ()
    checked = 0
    for k, t in enumerate(inputs):
        indices = list(np.ndindex(*t.shape)) if t.ndim else [()]
        if max_entries is not None and len(indices) > max_entries:
            rng = rng or np.random.default_rng(0)
            chosen = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in chosen]
        for idx in indices:
            orig = t.data[idx]
            t.data[idx] = orig + step
            hi = fn(*inputs).item()
            t.data[idx] = orig - step
            lo = fn(*inputs).item()
            t.data[idx] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[k][idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            checked += 1
            if rel > worst:
                worst, worst_input, worst_index = rel, k, idx
    return GradCheckReport(max_rel_error=worst, worst_input=worst_input,
                           worst_index=worst_index, passed=worst < tol,
                           checked=checked)


def global_grad_norm(tensors) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))
