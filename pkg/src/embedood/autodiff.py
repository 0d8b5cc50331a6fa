"""Minimal dense reverse-mode differentiation on 64-bit numpy arrays.

Just enough machinery to train the multi-head regression model and to
take gradients with respect to inputs (needed by the perturbation-based
detectors and the sign-gradient attack). No broadcasting beyond bias-add,
no higher-order derivatives.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "matmul",
    "add",
    "scale",
    "relu",
    "tsum",
    "square",
    "tsqrt",
    "divide",
    "dot",
    "tlog",
    "texp",
    "softmax",
    "cross_entropy",
    "cosine_distance_node",
    "backward",
    "grad_wrt_input",
    "SGDMomentum",
    "Adam",
    "make_optimizer",
]


class ShapeError(ValueError):
    pass


def _check_shapes(op: str, a: np.ndarray, b: np.ndarray, ok: bool):
    if not ok:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Tensor:
    """A dense float64 array plus the tape record that produced it."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None  # callable: upstream ndarray -> tuple of parent grads
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _result(values, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    ok = av.ndim in (1, 2) and bv.ndim == 2 and av.shape[-1] == bv.shape[0]
    _check_shapes("matmul", av, bv, ok)
    out = av @ bv

    def vjp(g):
        if av.ndim == 1:
            return g @ bv.T, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _result(out, (a, b), vjp, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also supports bias-add of a vector onto matrix rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    bias = av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]
    _check_shapes("add", av, bv, av.shape == bv.shape or bias)

    def vjp(g):
        if bias:
            return g, g.sum(axis=0)
        return g, g

    return _result(av + bv, (a, b), vjp, "add")


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.values * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0.0  # subgradient at 0 is 0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,), "relu")


def tsum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.values.shape
    return _result(a.values.sum(), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _result(a.values**2, (a,), lambda g: (2.0 * a.values * g,), "square")


def tsqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.values)
    return _result(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def divide(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    _check_shapes("divide", av, bv, av.shape == bv.shape)
    out = av / bv
    return _result(out, (a, b), lambda g: (g / bv, -g * av / bv**2), "divide")


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    _check_shapes("dot", av, bv, av.ndim == 1 and av.shape == bv.shape)
    return _result(np.dot(av, bv), (a, b), lambda g: (g * bv, g * av), "dot")


def tlog(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,), "log")


def texp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _result(s, (a,), vjp, "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true labels.

    ``logits`` is (N,) or (B, N); ``labels`` a scalar int or length-B ints.
    """
    logits = _as_tensor(logits)
    lv = logits.values
    squeeze = lv.ndim == 1
    mat = lv[None, :] if squeeze else lv
    idx = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if mat.ndim != 2 or idx.shape[0] != mat.shape[0]:
        raise ShapeError(
            f"cross_entropy: logits {lv.shape} incompatible with labels {idx.shape}"
        )
    if np.any(idx < 0) or np.any(idx >= mat.shape[1]):
        raise ValueError("cross_entropy: label index out of range")
    batch = mat.shape[0]
    shifted = mat - mat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(batch), idx].mean()

    def vjp(g):
        probs = np.exp(logp)
        probs[np.arange(batch), idx] -= 1.0
        grad = probs * (float(g) / batch)
        return (grad[0] if squeeze else grad,)

    return _result(loss, (logits,), vjp, "cross_entropy")


def cosine_distance_node(u: Tensor, v: Tensor) -> Tensor:
    """Differentiable cosine distance; rowwise when inputs are matrices.

    1-D inputs give a scalar; (B, D) inputs give a length-B vector of
    per-row distances.
    """
    u, v = _as_tensor(u), _as_tensor(v)
    uv, vv = u.values, v.values
    _check_shapes("cosine_distance", uv, vv, uv.shape == vv.shape and uv.ndim in (1, 2))
    um = uv[None, :] if uv.ndim == 1 else uv
    vm = vv[None, :] if vv.ndim == 1 else vv
    nu = np.linalg.norm(um, axis=1)
    nv = np.linalg.norm(vm, axis=1)
    if np.any(nu == 0.0) or np.any(nv == 0.0):
        raise ValueError("cosine_distance: zero-norm input")
    ip = (um * vm).sum(axis=1)
    out = 0.5 * (1.0 - ip / (nu * nv))

    def vjp(g):
        gm = np.atleast_1d(g)[:, None]
        du = -0.5 * (vm / (nu * nv)[:, None] - (ip / (nu**3 * nv))[:, None] * um)
        dv = -0.5 * (um / (nu * nv)[:, None] - (ip / (nu * nv**3))[:, None] * vm)
        du, dv = gm * du, gm * dv
        if uv.ndim == 1:
            return du[0], dv[0]
        return du, dv

    return _result(out[0] if uv.ndim == 1 else out, (u, v), vjp, "cosine_distance")


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate gradients of a scalar loss into ``.grad`` of every
    requires_grad tensor on its tape. Returns {id(tensor): grad} for the
    leaves (tensors with no recorded parents)."""
    if loss.values.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.values):
        raise FloatingPointError("backward: non-finite loss value")

    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    leaf_grads: dict[int, np.ndarray] = {}

    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            leaf_grads[id(node)] = node.grad
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg
    return leaf_grads


def grad_wrt_input(forward_fn, x: Tensor) -> np.ndarray:
    """Gradient of a scalar-valued forward closure with respect to ``x``."""
    x.requires_grad = True
    x.grad = None
    loss = forward_fn(x)
    backward(loss)
    return np.zeros_like(x.values) if x.grad is None else x.grad


class SGDMomentum:
    """Classic momentum SGD with decoupled-from-nothing L2 weight decay."""

    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor]):
        for p in params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.values
            buf = self._velocity.get(id(p))
            buf = g if buf is None else self.momentum * buf + g
            self._velocity[id(p)] = buf
            p.values = p.values - self.lr * buf


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def step(self, params: list[Tensor]):
        for p in params:
            if p.grad is None:
                continue
            key = id(p)
            t = self._t.get(key, 0) + 1
            m = self.beta1 * self._m.get(key, 0.0) + (1 - self.beta1) * p.grad
            v = self.beta2 * self._v.get(key, 0.0) + (1 - self.beta2) * p.grad**2
            self._m[key], self._v[key], self._t[key] = m, v, t
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p.values = p.values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(rule: str, **kwargs):
    """Build an optimizer from a config-style rule name."""
    if rule == "sgd_momentum":
        return SGDMomentum(
            lr=kwargs.get("lr", 0.1),
            momentum=kwargs.get("momentum", 0.9),
            weight_decay=kwargs.get("weight_decay", 0.0),
        )
    if rule == "adam":
        return Adam(
            lr=kwargs.get("lr", 0.001),
            beta1=kwargs.get("beta1", 0.9),
            beta2=kwargs.get("beta2", 0.999),
            eps=kwargs.get("eps", 1e-8),
        )
    raise ValueError(f"unknown optimizer rule {rule!r}")
