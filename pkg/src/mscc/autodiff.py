"""Dense-tensor numeric core with reverse-mode differentiation.

Covers exactly the layer set the segmentation networks need: 2-d
convolution (cross-correlation convention), batch norm, 2x2 max pooling,
2x2/stride-2 transpose convolution, channel concatenation, relu/sigmoid/
softmax, binary and categorical cross-entropy, and the Adam update.
Everything is float64 and deterministic; hot loops live in
``mscc.kernels``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

LOG_CLAMP_EPS = 1e-7


class Tensor:
    """N-d float64 array with an optional gradient buffer.

    Gradients are populated by ``backward()`` on a scalar result, walking
    the recorded graph in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # copy: g may be a view or reused buffer
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution family

def _same_pad(kh, kw):
    return (kh - 1) // 2, (kw - 1) // 2


def conv2d(x, kernel, bias, stride=1, padding="same"):
    """Cross-correlation of NCHW input with an (F,C,kH,kW) kernel bank."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d needs 4-d input and kernel, got {x.shape} and {kernel.shape}")
    f, c, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, kernel expects {c}"
        )
    if bias.shape != (f,):
        raise ValueError(f"conv2d bias must have shape ({f},), got {bias.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be positive, got {stride}")
    for name, t in (("input", x), ("kernel", kernel), ("bias", bias)):
        if not np.isfinite(t.data).all():
            raise ValueError(f"conv2d rejected non-finite {name}")
    if padding == "same":
        ph, pw = _same_pad(kh, kw)
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"conv2d padding must be 'same' or 'valid', got {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = kernels.conv2d_fwd(xp, kernel.data, bias.data, stride)

    def backward(dy):
        if kernel.requires_grad:
            kernel._accumulate(kernels.conv2d_bwd_kernel(xp, dy, stride, kh, kw))
        if bias.requires_grad:
            bias._accumulate(dy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxp = kernels.conv2d_bwd_input(dy, kernel.data, stride, xp.shape[2], xp.shape[3])
            h, w = x.shape[2], x.shape[3]
            x._accumulate(dxp[:, :, ph:ph + h, pw:pw + w])

    return _make(y, (x, kernel, bias), backward)


def transpose_conv2d(x, kernel, bias, stride=2):
    """Transpose convolution with a (C,F,2,2) kernel; doubles H and W."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if stride != 2 or kernel.shape[2:] != (2, 2):
        raise ValueError(
            f"transpose_conv2d supports 2x2 kernels with stride 2 only, "
            f"got kernel {kernel.shape} stride {stride}"
        )
    if x.shape[1] != kernel.shape[0]:
        raise ValueError(
            f"transpose_conv2d channel mismatch: input has {x.shape[1]}, "
            f"kernel expects {kernel.shape[0]}"
        )
    f = kernel.shape[1]
    if bias.shape != (f,):
        raise ValueError(f"transpose_conv2d bias must have shape ({f},), got {bias.shape}")
    y = kernels.upconv2x2_fwd(x.data, kernel.data, bias.data)

    def backward(dy):
        if kernel.requires_grad:
            kernel._accumulate(kernels.upconv2x2_bwd_kernel(x.data, dy))
        if bias.requires_grad:
            bias._accumulate(dy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accumulate(kernels.upconv2x2_bwd_input(dy, kernel.data))

    return _make(y, (x, kernel, bias), backward)


def maxpool2x2(x):
    """2x2 max pooling; gradient flows to the first max in row-major order."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    y, idx = kernels.maxpool2x2_fwd(x.data)

    def backward(dy):
        x._accumulate(kernels.maxpool2x2_bwd(dy, idx))

    return _make(y, (x,), backward)


def concat_channels(*tensors):
    """Concatenate NCHW tensors along the channel axis, operand order kept."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = ts[0].shape
    for t in ts[1:]:
        if t.shape[0] != n or t.shape[2] != h or t.shape[3] != w:
            raise ValueError(
                f"concat_channels spatial mismatch: {ts[0].shape} vs {t.shape}"
            )
    y = np.concatenate([t.data for t in ts], axis=1)
    splits = np.cumsum([t.shape[1] for t in ts])[:-1]

    def backward(dy):
        pieces = np.split(dy, splits, axis=1)
        for t, g in zip(ts, pieces):
            if t.requires_grad:
                t._accumulate(g)

    return _make(y, ts, backward)


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class RunningStats:
    """Per-channel running mean/variance for inference-mode batch norm."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels):
        return cls(mean=np.zeros(channels), var=np.ones(channels))


def batch_norm(x, gamma, beta, mode, running_stats, epsilon=1e-5, momentum=0.9):
    """Channel-wise batch norm over (N,H,W); biased batch variance.

    Train mode normalizes with batch statistics and folds them into
    ``running_stats`` (momentum * old + (1-momentum) * batch); infer mode
    reads the running values.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"batch_norm gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    axes = (0, 2, 3)
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_stats.mean = momentum * running_stats.mean + (1.0 - momentum) * mu
        running_stats.var = momentum * running_stats.var + (1.0 - momentum) * var
    else:
        mu = running_stats.mean
        var = running_stats.var
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(dy):
        if beta.requires_grad:
            beta._accumulate(dy.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((dy * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        g = gamma.data[None, :, None, None]
        if mode == "infer":
            x._accumulate(dy * g * inv_std[None, :, None, None])
            return
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        dxhat = dy * g
        istd = inv_std[None, :, None, None]
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = istd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        x._accumulate(dx)

    return _make(y, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# activations, dense head, losses

def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(dy):
        x._accumulate(dy * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(dy):
        x._accumulate(dy * y * (1.0 - y))

    return _make(y, (x,), backward)


def softmax(x):
    """Row-wise softmax over the last axis."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(dy):
        dot = (dy * y).sum(axis=-1, keepdims=True)
        x._accumulate(y * (dy - dot))

    return _make(y, (x,), backward)


def dense(x, weight, bias):
    """Fully connected layer; flattens everything after the batch axis."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    out_dim, in_dim = weight.shape
    if flat.shape[1] != in_dim:
        raise ValueError(
            f"dense expects {in_dim} input features, got {flat.shape[1]} from shape {x.shape}"
        )
    if bias.shape != (out_dim,):
        raise ValueError(f"dense bias must have shape ({out_dim},), got {bias.shape}")
    y = flat @ weight.data.T + bias.data

    def backward(dy):
        if weight.requires_grad:
            weight._accumulate(dy.T @ flat)
        if bias.requires_grad:
            bias._accumulate(dy.sum(axis=0))
        if x.requires_grad:
            x._accumulate((dy @ weight.data).reshape(x.shape))

    return _make(y, (x, weight, bias), backward)


def _check_binary_targets(y):
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binary cross-entropy targets must be 0 or 1")


def bce_loss(pred, target):
    """Mean binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"bce_loss shape mismatch: {pred.shape} vs {t.shape}")
    _check_binary_targets(t)
    p = np.clip(pred.data, LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS)
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))

    def backward(dy):
        inside = (pred.data > LOG_CLAMP_EPS) & (pred.data < 1.0 - LOG_CLAMP_EPS)
        g = (p - t) / (p * (1.0 - p)) / t.size
        pred._accumulate(dy * np.where(inside, g, 0.0))

    return _make(loss, (pred,), backward)


def cce_loss(pred, target):
    """Mean categorical cross-entropy over one-hot rows."""
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"cce_loss shape mismatch: {pred.shape} vs {t.shape}")
    if not (np.isin(t, (0.0, 1.0)).all() and np.allclose(t.sum(axis=-1), 1.0)):
        raise ValueError("categorical cross-entropy targets must be one-hot rows")
    n = pred.data.shape[0]
    p = np.clip(pred.data, LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS)
    loss = -np.sum(t * np.log(p)) / n

    def backward(dy):
        inside = (pred.data > LOG_CLAMP_EPS) & (pred.data < 1.0 - LOG_CLAMP_EPS)
        pred._accumulate(dy * np.where(inside, -t / p, 0.0) / n)

    return _make(loss, (pred,), backward)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """Moment buffers and step counter for one parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update over a name -> array parameter dict.

    Mutates ``params`` and ``state`` in place and returns them. A non-finite
    gradient rejects the whole step, naming the offending parameter.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise ValueError(f"adam_step rejected non-finite gradient for parameter {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(
                f"adam_step shape mismatch for {name!r}: "
                f"param {params[name].shape} vs grad {g.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# gradient verification harness

@dataclass
class GradCheckReport:
    max_rel_error: float
    tensor_index: int
    element_index: int
    analytic: float
    numeric: float


def finite_difference_check(fn, inputs, h=1e-5):
    """Compare reverse-mode gradients of ``fn(*inputs)`` to central differences.

    ``fn`` must return a scalar Tensor. Always returns a report with the
    worst relative error and its location.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = GradCheckReport(0.0, -1, -1, 0.0, 0.0)
    for ti, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        aflat = analytic[ti].reshape(-1)
        for ei in range(flat.size):
            orig = flat[ei]
            flat[ei] = orig + h
            f_plus = float(fn(*inputs).data)
            flat[ei] = orig - h
            f_minus = float(fn(*inputs).data)
            flat[ei] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = aflat[ei]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > worst.max_rel_error:
                worst = GradCheckReport(rel, ti, ei, float(a), float(numeric))
    return worst
