"""Minimal dense-tensor math with reverse-mode automatic differentiation.

Everything runs on row-major numpy arrays in float32 (training) or float64
(used by the gradient-check tests, which need finite-difference headroom).
Each op records its inputs and a backward closure; `backward()` replays the
recorded graph in exact reverse topological order. Any non-finite value
produced by an op raises immediately instead of propagating NaN/Inf.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(RuntimeError):
    """An op produced NaN or Inf. The message names the offending op."""


class GraphError(RuntimeError):
    """Backward called on a consumed graph or a non-scalar loss."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")


def _result(data, parents, op, backward_fn):
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def constant(data, dtype=None):
    """A tensor that never requires gradients (masks, literals)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


# --- elementwise / structural ops ---

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _result(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), "mul", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    out = a.data * c

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _result(out, (a,), "scale", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dims broadcast, operands rank >= 2."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _result(out, (a, b), "matmul", backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _result(out, (a,), "reshape", backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return _result(out, (a,), "transpose", backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup `table[ids]`; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("embedding id out of range")
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))

    return _result(out, (table,), "embedding", backward)


def select_position(x: Tensor, idx) -> Tensor:
    """Pick one sequence row per batch element: (B,L,H)[b, idx[b]] -> (B,H)."""
    idx = np.asarray(idx)
    batch = np.arange(x.data.shape[0])
    out = x.data[batch, idx]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[batch, idx] = g
            x._accumulate(gx)

    return _result(out, (x,), "select_position", backward)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g))

    return _result(np.asarray(out), (a,), "sum_all", backward)


def mean_all(a: Tensor) -> Tensor:
    out = a.data.mean()

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g / a.data.size))

    return _result(np.asarray(out), (a,), "mean_all", backward)


# --- nonlinearities ---

def softmax_lastdim(x: Tensor) -> Tensor:
    """Max-stabilized softmax along the last dimension."""
    if x.data.shape[-1] < 1:
        raise ValueError("softmax needs a non-empty last dimension")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - inner) * y)

    return _result(y, (x,), "softmax_lastdim", backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    c = x.data.dtype.type(np.sqrt(2.0 / np.pi))
    a3 = x.data.dtype.type(0.044715)
    u = c * (x.data + a3 * x.data**3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            du = c * (1.0 + 3.0 * a3 * x.data**2)
            dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
            x._accumulate(g * dy.astype(x.data.dtype))

    return _result(y.astype(x.data.dtype), (x,), "gelu", backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    return _result(y.astype(x.data.dtype), (x,), "sigmoid", backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip it entirely at inference."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - rate)
    out = x.data * mask

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _result(out, (x,), "dropout", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean / unit-variance per last-dim slice, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    h = x.data.shape[-1]
    if gain.data.shape != (h,) or bias.data.shape != (h,):
        raise ValueError("layer_norm gain/bias must match last dimension")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, h).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, h).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gx - m1 - xhat * m2) * inv)

    return _result(out, (x, gain, bias), "layer_norm", backward)


# --- losses ---

def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_smoothed(logits: Tensor, target_ids, epsilon_ls: float = 0.0,
                           mask=None) -> Tensor:
    """Label-smoothed cross entropy, averaged over unmasked positions.

    The smoothed target puts 1-eps on the gold id and eps/(V-1) on every
    other id; eps=0 reduces to plain CE. `mask` (same shape as target_ids,
    nonzero = counted) excludes padding positions.
    """
    if not 0.0 <= epsilon_ls < 1.0:
        raise ValueError("epsilon_ls must be in [0, 1)")
    v = logits.data.shape[-1]
    ids = np.asarray(target_ids)
    if ids.shape != logits.data.shape[:-1]:
        raise ValueError("target_ids shape must match logits batch dims")
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise ValueError("target id out of range")
    if mask is None:
        m = np.ones(ids.shape, dtype=logits.data.dtype)
    else:
        m = np.asarray(mask).astype(logits.data.dtype)
    n = m.sum()
    if n <= 0:
        raise ValueError("cross entropy needs at least one unmasked position")

    logp = _log_softmax(logits.data)
    flat_lp = logp.reshape(-1, v)
    flat_ids = ids.reshape(-1)
    gold_lp = flat_lp[np.arange(flat_ids.size), flat_ids].reshape(ids.shape)
    if epsilon_ls == 0.0:
        per_pos = -gold_lp
    else:
        rest = logp.sum(axis=-1) - gold_lp
        per_pos = -((1.0 - epsilon_ls) * gold_lp + epsilon_ls / (v - 1) * rest)
    loss = (per_pos * m).sum() / n

    def backward(g):
        if logits.requires_grad:
            q = np.zeros_like(logp)
            if epsilon_ls > 0.0:
                q += epsilon_ls / (v - 1)
            qf = q.reshape(-1, v)
            qf[np.arange(flat_ids.size), flat_ids] = 1.0 - epsilon_ls
            grad = (np.exp(logp) - q) * m[..., None] * (g / n)
            logits._accumulate(grad.astype(logits.data.dtype))

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,),
                   "cross_entropy_smoothed", backward)


def sigmoid_bce(logits: Tensor, labels) -> Tensor:
    """Mean binary cross entropy on sigmoid(logits) against 0/1 labels."""
    y = np.asarray(labels, dtype=logits.data.dtype)
    if y.shape != logits.data.shape:
        raise ValueError("labels shape must match logits")
    z = logits.data
    # stable: max(z,0) - z*y + log(1+exp(-|z|))
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()

    def backward(g):
        if logits.requires_grad:
            p = 1.0 / (1.0 + np.exp(-z))
            logits._accumulate(((p - y) * (g / z.size)).astype(z.dtype))

    return _result(np.asarray(loss, dtype=z.dtype), (logits,), "sigmoid_bce", backward)


# --- reverse-mode accumulation ---

def backward(loss: Tensor) -> None:
    """Populate `.grad` on every reachable requires_grad tensor.

    The loss must be scalar; the graph below it is consumed, so a second
    call on the same loss raises GraphError.
    """
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad (no parameters reachable)")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent._backward is not None:
                stack.append((parent, False))
            elif id(parent) not in visited:
                visited.add(id(parent))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
        node._consumed = True
        if node is not loss:
            node._backward = None
            node._parents = ()


# --- optimizer ---

class MissingGradError(RuntimeError):
    """A parameter had no gradient when the optimizer stepped."""


class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params: dict, learning_rate=5e-5, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, reading each parameter's `.grad`."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradError(f"parameter '{name}' has no gradient")
        g = p.grad
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.data.dtype)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None
