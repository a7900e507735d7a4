"""Dense float64 tensors with reverse-mode automatic differentiation.

Small tape-based engine: every op that consumes a tensor requiring
gradients records its parents and a backward closure on the output.
Calling :func:`backward` on a scalar loss materializes the graph in
topological order and walks it in reverse, accumulating into ``.grad``.
Gradients accumulate across calls; callers zero them between steps.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / rollouts)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A float64 ndarray plus optional gradient buffer and graph record."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_vjp")

    # keep numpy from hijacking `ndarray <op> Tensor`
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, _parents=(), _vjp=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        # leaves get their buffer up front; op outputs allocate on demand
        # during backward to keep the forward pass allocation-light
        self.grad = (
            np.zeros_like(self.values) if requires_grad and _vjp is None else None
        )
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(values, parents, vjp):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(values)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.values - b.values

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.values * b.values

    def vjp(g):
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return _make(out, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.values / b.values

    def vjp(g):
        ga = g / b.values
        gb = -g * a.values / (b.values * b.values)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def pow_const(a, exponent):
    """Elementwise power with a constant (non-tensor) exponent."""
    a = as_tensor(a)
    p = float(exponent)
    out = a.values**p

    def vjp(g):
        return (g * p * a.values ** (p - 1.0),)

    return _make(out, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a):
    a = as_tensor(a)
    out = np.log(a.values)

    def vjp(g):
        return (g / a.values,)

    return _make(out, (a,), vjp)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.values)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), vjp)


def relu(a):
    a = as_tensor(a)
    keep = a.values > 0.0
    out = np.where(keep, a.values, 0.0)

    def vjp(g):
        return (g * keep,)

    return _make(out, (a,), vjp)


def clamp(a, lo=None, hi=None):
    """Clip values to [lo, hi]; gradient passes inside the closed interval."""
    a = as_tensor(a)
    out = np.clip(a.values, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.values >= lo
    if hi is not None:
        inside &= a.values <= hi

    def vjp(g):
        return (g * inside,)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and shaping


def matmul(a, b):
    """Matrix product with numpy stacking semantics (operands must be >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with at least 2 dimensions")
    out = np.matmul(a.values, b.values)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def linear(x, w, b):
    """Fused affine map x @ w + b with the bias broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out = np.matmul(x.values, w.values) + b.values

    def vjp(g):
        gx = np.matmul(g, w.values.T)
        gw = _unbroadcast(np.matmul(np.swapaxes(x.values, -1, -2), g), w.shape)
        gb = _unbroadcast(g, b.shape)
        return gx, gw, gb

    return _make(out, (x, w, b), vjp)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.values.size if axis is None else a.shape[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of no tensors")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.values.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), vjp)


def transpose(a, axes):
    a = as_tensor(a)
    out = a.values.transpose(axes)
    inverse = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return _make(out, (a,), vjp)


def take(a, indices, axis=0):
    """Gather slices along an axis by integer index; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.values, idx, axis=axis)

    def vjp(g):
        ga = np.zeros(a.shape)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return _make(out, (a,), vjp)


def getitem(a, key):
    """Basic indexing (ints/slices); use :func:`take` for integer arrays."""
    a = as_tensor(a)
    out = a.values[key]

    def vjp(g):
        ga = np.zeros(a.shape)
        ga[key] += g
        return (ga,)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# neural-network blocks


def softmax(x, mask=None, empty_rows="error"):
    """Probability distribution along the last axis, max-shifted for stability.

    ``mask`` marks attendable positions with True; masked positions get
    weight exactly 0. Rows with no attendable position raise unless
    ``empty_rows == "zero"``, in which case they come back all-zero.
    """
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ValueError("empty distribution")
    if mask is None:
        shifted = x.values - x.values.max(axis=-1, keepdims=True)
        expd = np.exp(shifted)
    else:
        allowed = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not allowed.any(axis=-1).all():
            if empty_rows != "zero":
                raise ValueError("no attendable positions")
        neg = np.where(allowed, x.values, -np.inf)
        rowmax = neg.max(axis=-1, keepdims=True)
        rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
        # exp(-inf) = 0 keeps masked positions at weight 0 without
        # evaluating exp on their raw (possibly huge) scores
        expd = np.exp(np.where(allowed, x.values - rowmax, -np.inf))
    denom = expd.sum(axis=-1, keepdims=True)
    safe = np.where(denom == 0.0, 1.0, denom)
    probs = expd / safe

    def vjp(g):
        inner = (g * probs).sum(axis=-1, keepdims=True)
        return (probs * (g - inner),)

    return _make(probs, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance, then affine.

    Variance uses the population (1/N) convention with ``eps`` added
    inside the square root.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("layer_norm requires a normalized axis of length >= 2")
    mean = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_sigma
    out = gain.values * normed + bias.values

    def vjp(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gain = _unbroadcast((g * normed).sum(axis=reduce_axes), gain.shape)
        g_bias = _unbroadcast(g.sum(axis=reduce_axes), bias.shape)
        gn = g * gain.values
        gx = inv_sigma * (
            gn
            - gn.mean(axis=-1, keepdims=True)
            - normed * (gn * normed).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _make(out, (x, gain, bias), vjp)


def cross_entropy(y, y_hat):
    """-sum(y * log y_hat) with y_hat clamped to [1e-12, 1] before the log."""
    y = as_tensor(y)
    y_hat = as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(
            f"cross_entropy shape mismatch: {y.shape} vs {y_hat.shape}"
        )
    return -tsum(mul(y.values, log(clamp(y_hat, 1e-12, 1.0))))


def scaled_dot_attention(q, k, v, mask=None):
    """Attention output and weights: softmax(q k^T / sqrt(d_k)) v.

    ``mask`` marks attendable key positions with True and must broadcast
    to the score matrix; masked positions receive weight 0. A row with
    no attendable position is an error.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.shape[-1]
    scores = div(matmul(q, transpose(k, _swap_last(k.ndim))), float(np.sqrt(d_k)))
    weights = softmax(scores, mask=mask, empty_rows="error")
    return matmul(weights, v), weights


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor):
    """Accumulate d(loss)/d(tensor) into ``.grad`` for the whole graph.

    Visits nodes in exact reverse topological order, so every node's
    output gradient is complete before its backward closure runs.
    """
    if loss.values.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad += 1.0
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, piece in zip(node._parents, grads):
            if not parent.requires_grad or piece is None:
                continue
            if parent.grad is None:
                # copy: vjps may hand back views of the consumer's grad
                parent.grad = np.array(piece, dtype=np.float64)
            else:
                parent.grad += piece


def _topo_order(root: Tensor):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def zero_grads(params):
    for p in params:
        p.zero_grad()


def grad_check(f, params, rng=None, samples_per_param=8, eps=1e-3):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` is a zero-argument closure returning a scalar loss Tensor; it
    must be deterministic across calls (fix any sampling beforehand).
    ``params`` are the leaf tensors to check. For each parameter a
    random subset of coordinates is perturbed by +/-eps.

    Returns the max over sampled coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        n_coords = p.values.size
        count = min(samples_per_param, n_coords)
        chosen = rng.choice(n_coords, size=count, replace=False)
        flat = p.values.reshape(-1)
        for idx in chosen:
            saved = flat[idx]
            flat[idx] = saved + eps
            up = float(f().values)
            flat[idx] = saved - eps
            down = float(f().values)
            flat[idx] = saved
            numeric = (up - down) / (2.0 * eps)
            a = float(ana.reshape(-1)[idx])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
