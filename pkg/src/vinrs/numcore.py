"""Small float64 tensor library with reverse-mode differentiation.

Only the layer types the value-iteration network needs are provided:
same-padding convolution, channel-wise max, dense layers, ReLU/sigmoid,
plus the handful of elementwise ops used by the losses.
"""

import contextlib
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

_local = threading.local()


def _state():
    if not hasattr(_local, "grad_enabled"):
        _local.grad_enabled = True
        _local.argmax_log = None
        _local.argmax_replay = None
        _local.kernel_grad_fault = 0.0
    return _local


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")
    # make ndarray (op) Tensor defer to the Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = any(p.requires_grad for p in self._parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __getitem__(self, idx):
        return take(self, idx)


class Parameter(Tensor):
    """Trainable leaf tensor with an accumulated gradient."""

    __slots__ = ("grad", "state")

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64, copy=True), name=name)
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.state = {}

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, name=None) -> Tensor:
    if not _state().grad_enabled:
        return Tensor(data, name=name)
    out = Tensor(data, parents, backward, name=name)
    if not out.requires_grad:
        out._parents = ()
        out._backward = None
    return out


@contextlib.contextmanager
def no_grad():
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: List[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        needs = [p.requires_grad for p in node._parents]
        parent_grads = node._backward(g, needs)
        for p, pg, need in zip(node._parents, parent_grads, needs):
            if not need or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# elementwise -----------------------------------------------------------------

def _check_same_or_scalar(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.full(like.shape, g.sum())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g, needs):
        return (_reduce_to(g, ad) if needs[0] else None,
                _reduce_to(g, bd) if needs[1] else None)

    return _make(ad + bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g, needs: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g, needs):
        return (_reduce_to(g * bd, ad) if needs[0] else None,
                _reduce_to(g * ad, bd) if needs[1] else None)

    return _make(ad * bd, (a, b), bw)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g, needs: (2.0 * ad * g,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0.0):
        raise FloatingPointError("log of a non-positive value")
    return _make(np.log(ad), (a,), lambda g, needs: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g, needs: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g, needs: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), stable for large |x|."""
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g, needs: (g * sig,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(a.data.sum(), (a,), lambda g, needs: (np.full(shape, float(g)),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g, needs: (g.reshape(old),))


def take(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; gradient scatters back with np.add.at."""
    if isinstance(idx, list):
        idx = np.asarray(idx)
    shape = a.shape

    def bw(g, needs):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, needs):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


# layers ----------------------------------------------------------------------

def _as_batch(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"conv2d expects C x H x W or N x C x H x W input, got {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-1 convolution with zero same-padding (cross-correlation form).

    out[c, i, j] = bias[c] + sum_{l,u,v} kernel[c, l, u, v] * x_pad[l, i+u, j+v]
    """
    xd, squeeze = _as_batch(x.data)
    k = kernel.data
    if k.ndim != 4:
        raise ValueError(f"kernel must be C_out x C_in x kH x kW, got {k.shape}")
    c_out, c_in, kh, kw = k.shape
    if xd.shape[1] != c_in:
        raise ValueError(f"kernel expects {c_in} input channels, input has {xd.shape[1]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel spatial size must be odd")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    ph, pw = kh // 2, kw // 2
    n, _, H, W = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # im2col with the batch folded into the columns so one 2-D matmul does the work:
    # cols[c, u, v, n, i, j] = x_pad[n, c, i + u, j + v]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c_in, kh, kw, n, H, W))
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xt[:, :, u:u + H, v:v + W]
    cols = cols.reshape(c_in * kh * kw, n * H * W)
    k2 = k.reshape(c_out, -1)
    out = (k2 @ cols).reshape(c_out, n, H, W).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    result = out[0] if squeeze else out

    def bw(g, needs):
        gb = g[None] if squeeze else g
        gt = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(c_out, n * H * W)
        gx = gk = gbias = None
        if needs[0]:
            gcols = (k2.T @ gt).reshape(c_in, kh, kw, n, H, W)
            gp = np.zeros((c_in, n, H + 2 * ph, W + 2 * pw))
            for u in range(kh):
                for v in range(kw):
                    gp[:, :, u:u + H, v:v + W] += gcols[:, u, v]
            gx = np.ascontiguousarray(gp[:, :, ph:ph + H, pw:pw + W].transpose(1, 0, 2, 3))
            if squeeze:
                gx = gx[0]
        if needs[1]:
            gk = (gt @ cols.T).reshape(k.shape)
            fault = _state().kernel_grad_fault
            if fault:
                gk = gk + fault
        if len(needs) > 2 and needs[2]:
            gbias = gt.sum(axis=1)
        return (gx, gk, gbias)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(result, parents, bw)


def _channel_argmax(xd: np.ndarray, axis: int):
    """(max, argmax) over ``axis``, honouring argmax record/replay.

    Ties go to the lowest index. A running comparison is used because
    np.argmax over a strided axis is several times slower.
    """
    st = _state()
    if st.argmax_replay is not None:
        arg = st.argmax_replay.pop(0)
        expected = xd.shape[:axis % xd.ndim] + xd.shape[axis % xd.ndim + 1:]
        if arg.shape != expected:
            raise RuntimeError("replayed argmax does not match input shape")
        values = np.take_along_axis(xd, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    else:
        x = np.moveaxis(xd, axis, 0)
        values = x[0].copy()
        arg = np.zeros(values.shape, dtype=np.intp)
        for c in range(1, x.shape[0]):
            arg[x[c] > values] = c
            np.maximum(values, x[c], out=values)
    if st.argmax_log is not None:
        st.argmax_log.append(arg.copy())
    return values, arg


def channel_max(x: Tensor):
    """Max over the channel axis (axis -3).

    Returns (values, argmax). Ties go to the lowest channel index, and the
    backward pass routes gradient only to the winning channel.
    """
    xd = x.data
    if xd.ndim not in (3, 4) or xd.shape[-3] < 1:
        raise ValueError(f"channel_max expects C x H x W or N x C x H x W, got {xd.shape}")
    values, arg = _channel_argmax(xd, -3)
    channels = np.arange(xd.shape[-3])[:, None, None]

    def bw(g, needs):
        return (np.where(channels == np.expand_dims(arg, -3), np.expand_dims(g, -3), 0.0),)

    return _make(values, (x,), bw), arg


def conv_max_recurrence(base: Tensor, kernel: Tensor, rounds: int) -> Tensor:
    """Fused loop: v = max_c(base); repeat ``rounds`` times q = base + conv(v); v = max_c(q).

    ``base`` is N x C x H x W and ``kernel`` is C x 1 x kH x kW (same padding).
    Returns the last q. Equivalent to composing conv2d and channel_max, but
    runs the whole loop as one node so long recurrences stay cheap.
    """
    bd = base.data
    k = kernel.data
    if bd.ndim != 4:
        raise ValueError(f"base must be N x C x H x W, got {bd.shape}")
    c, n, H, W = bd.shape[1], bd.shape[0], bd.shape[2], bd.shape[3]
    if k.ndim != 4 or k.shape[0] != c or k.shape[1] != 1:
        raise ValueError(f"kernel must be {c} x 1 x kH x kW, got {k.shape}")
    kh, kw = k.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel spatial size must be odd")
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    ph, pw = kh // 2, kw // 2
    k2 = k.reshape(c, kh * kw)
    # channel-first layout keeps the max and the matmul contiguous
    qr = np.ascontiguousarray(bd.transpose(1, 0, 2, 3))
    vp = np.zeros((n, H + 2 * ph, W + 2 * pw))

    def im2col(v):
        vp[:, ph:ph + H, pw:pw + W] = v
        cols = np.empty((kh, kw, n, H, W))
        for u in range(kh):
            for s in range(kw):
                cols[u, s] = vp[:, u:u + H, s:s + W]
        return cols.reshape(kh * kw, n * H * W)

    v, arg = _channel_argmax(qr, 0)
    args, colss = [arg], []
    q = qr
    for _ in range(rounds):
        cols = im2col(v)
        q = qr + (k2 @ cols).reshape(c, n, H, W)
        v, arg = _channel_argmax(q, 0)
        colss.append(cols)
        args.append(arg)
    out = np.ascontiguousarray(q.transpose(1, 0, 2, 3))
    channels = np.arange(c)[:, None, None, None]

    def bw(g, needs):
        gq = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        g_base = np.zeros_like(qr)
        g_k = np.zeros_like(k2)
        for t in range(rounds, 0, -1):
            g_base += gq
            g2 = gq.reshape(c, n * H * W)
            g_k += g2 @ colss[t - 1].T
            gcols = (k2.T @ g2).reshape(kh, kw, n, H, W)
            gvp = np.zeros_like(vp)
            for u in range(kh):
                for s in range(kw):
                    gvp[:, u:u + H, s:s + W] += gcols[u, s]
            gv = gvp[:, ph:ph + H, pw:pw + W]
            gq = np.where(channels == args[t - 1], gv, 0.0)
        g_base += gq
        gk = g_k.reshape(k.shape)
        fault = _state().kernel_grad_fault
        if fault:
            gk = gk + fault
        return (np.ascontiguousarray(g_base.transpose(1, 0, 2, 3)), gk)

    return _make(out, (base, kernel), bw)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = W x + b for x of shape (n,) or (B, n)."""
    xd, w = x.data, weights.data
    if w.ndim != 2 or xd.shape[-1] != w.shape[1]:
        raise ValueError(f"dense: weights {w.shape} do not fit input {xd.shape}")
    if bias.shape != (w.shape[0],):
        raise ValueError(f"dense: bias {bias.shape} does not fit weights {w.shape}")
    out = xd @ w.T + bias.data

    def bw(g, needs):
        gx = g @ w if needs[0] else None
        if needs[1]:
            gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        else:
            gw = None
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if needs[2] else None
        return (gx, gw, gb)

    return _make(out, (x, weights, bias), bw)


# optimisers ------------------------------------------------------------------

def _check_finite_grads(params: Iterable[Parameter]):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")


def sgd_step(params: Sequence[Parameter], learning_rate: float) -> None:
    _check_finite_grads(params)
    for p in params:
        p.data -= learning_rate * p.grad


def adam_step(params: Sequence[Parameter], learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Adam update; first/second moments live in ``param.state``."""
    _check_finite_grads(params)
    for p in params:
        st = p.state
        if "adam_m" not in st:
            st["adam_m"] = np.zeros_like(p.data)
            st["adam_v"] = np.zeros_like(p.data)
            st["adam_t"] = 0
        st["adam_t"] += 1
        t = st["adam_t"]
        m, v = st["adam_m"], st["adam_v"]
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad * p.grad
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)


class SGD:
    def __init__(self, params: Sequence[Parameter], learning_rate: float):
        self.params = list(params)
        self.learning_rate = learning_rate

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        sgd_step(self.params, self.learning_rate)


class Adam:
    def __init__(self, params: Sequence[Parameter], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        adam_step(self.params, self.learning_rate, self.beta1, self.beta2, self.eps)


# gradient checking -----------------------------------------------------------

@contextlib.contextmanager
def record_argmax():
    """Collect every channel_max argmax computed inside the block."""
    st = _state()
    prev = st.argmax_log
    st.argmax_log = []
    try:
        yield st.argmax_log
    finally:
        st.argmax_log = prev


@contextlib.contextmanager
def replay_argmax(log: List[np.ndarray]):
    """Force channel_max calls to reuse a recorded sequence of argmaxes."""
    st = _state()
    prev = st.argmax_replay
    st.argmax_replay = list(log)
    try:
        yield
    finally:
        st.argmax_replay = prev


@contextlib.contextmanager
def corrupt_conv_kernel_grad(offset: float = 1.0):
    """Test hook: add a constant to every conv kernel gradient."""
    st = _state()
    prev = st.kernel_grad_fault
    st.kernel_grad_fault = float(offset)
    try:
        yield
    finally:
        st.kernel_grad_fault = prev


class GradCheckError(FloatingPointError):
    def __init__(self, param_name: str, message: str):
        super().__init__(f"{param_name}: {message}")
        self.param_name = param_name


def grad_check_report(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                      h: float = 1e-5) -> Dict[str, float]:
    """Per-parameter max relative error between backprop and central differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Max-pool winners are frozen to those of the unperturbed evaluation so
    the finite differences see the same piecewise-linear branch.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    zero_grads(params)
    with record_argmax() as log:
        loss = loss_fn()
    base = loss.item()
    if not np.isfinite(base):
        raise GradCheckError("<loss>", "non-finite loss at the unperturbed point")
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    report = {}
    for p in params:
        flat = p.data.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad(), replay_argmax(log):
                f_plus = loss_fn().item()
            flat[i] = orig - h
            with no_grad(), replay_argmax(log):
                f_minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(p.name, f"non-finite loss when perturbing element {i}")
            fd[i] = (f_plus - f_minus) / (2.0 * h)
        g = analytic[p.name].reshape(-1)
        if not np.all(np.isfinite(g)):
            raise GradCheckError(p.name, "non-finite analytic gradient")
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
        report[p.name] = float(rel.max()) if rel.size else 0.0
    return report


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
               h: float = 1e-5) -> float:
    """Max relative gradient error over all parameters (see grad_check_report)."""
    report = grad_check_report(loss_fn, params, h)
    return max(report.values()) if report else 0.0
