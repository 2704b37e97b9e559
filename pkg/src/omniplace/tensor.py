"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed engine: each operation records its parents and a
backward closure; ``Tensor.backward`` replays the recorded graph (the
tape) once, in reverse topological order. Two precisions are supported:
float32 for training, float64 for gradient checks. Shapes are always
explicit -- the only broadcasting allowed is bias addition.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "bias_add",
    "relu",
    "exp",
    "log",
    "sqrt",
    "square",
    "reciprocal",
    "tsum",
    "mean_axis0",
    "roll",
    "concat",
    "stack_scalars",
    "dense",
    "maxpool2d",
    "conv2d_valid",
    "conv2d",
    "l2_distance",
    "logsumexp",
    "finite_diff_check",
]


class Tensor:
    """A dense float array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph machinery ----------------------------------------------------

    def backward(self):
        """Propagate d(self)/d(leaf) to every requires_grad tensor below.

        The loss must be a finite scalar; its own gradient is seeded with 1.
        """
        if self.data.ndim != 0:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if not np.isfinite(self.data):
            raise ValueError("backward on a non-finite loss")
        order = _topo_order(self)
        self.grad = np.ones((), dtype=self.dtype)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad and node.grad is not None:
                node._backward()

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _topo_order(root):
    # iterative DFS; graphs from long training traces overflow recursion
    order, visited, stack = [], set(), [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _node(data, parents):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype) if np.isscalar(g) else g.astype(t.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------


def add(a, b):
    b = _as_tensor(b, a)
    if b.shape != () and a.shape != ():
        _check_same_shape(a, b, "add")
    out = _node(a.data + b.data, (a, b))

    def backward():
        g = out.grad
        _accum(a, g if a.shape == g.shape else g.sum())
        _accum(b, g if b.shape == g.shape else g.sum())

    out._backward = backward
    return out


def sub(a, b):
    b = _as_tensor(b, a)
    if b.shape != () and a.shape != ():
        _check_same_shape(a, b, "sub")
    out = _node(a.data - b.data, (a, b))

    def backward():
        g = out.grad
        _accum(a, g if a.shape == g.shape else g.sum())
        _accum(b, -g if b.shape == g.shape else -g.sum())

    out._backward = backward
    return out


def mul(a, b):
    b = _as_tensor(b, a)
    if b.shape != () and a.shape != ():
        _check_same_shape(a, b, "mul")
    out = _node(a.data * b.data, (a, b))

    def backward():
        g = out.grad
        ga = g * b.data
        gb = g * a.data
        _accum(a, ga if a.shape == ga.shape else ga.sum())
        _accum(b, gb if b.shape == gb.shape else gb.sum())

    out._backward = backward
    return out


def scale(a, c):
    """Multiply by a constant scalar or same-shape constant array."""
    c = np.asarray(c, dtype=a.dtype)
    if c.shape not in ((), a.shape):
        raise ValueError(f"scale: constant shape {c.shape} does not match {a.shape}")
    out = _node(a.data * c, (a,))

    def backward():
        _accum(a, out.grad * c)

    out._backward = backward
    return out


def bias_add(x, b):
    """x[..., c] + b[c]; the single permitted broadcast."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"bias_add: bias {b.shape} does not match channels of {x.shape}")
    out = _node(x.data + b.data, (x, b))

    def backward():
        g = out.grad
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    out._backward = backward
    return out


def relu(x):
    mask = x.data > 0
    out = _node(np.where(mask, x.data, x.dtype.type(0)), (x,))

    def backward():
        _accum(x, out.grad * mask)

    out._backward = backward
    return out


def exp(x):
    out = _node(np.exp(x.data), (x,))

    def backward():
        _accum(x, out.grad * out.data)

    out._backward = backward
    return out


def log(x):
    out = _node(np.log(x.data), (x,))

    def backward():
        _accum(x, out.grad / x.data)

    out._backward = backward
    return out


def sqrt(x):
    root = np.sqrt(x.data)
    out = _node(root, (x,))

    def backward():
        # subgradient 0 where the input is exactly 0 (e.g. distance of a
        # tensor to itself); everywhere else the usual 1/(2 sqrt)
        safe = np.where(root > 0, root, 1.0)
        _accum(x, out.grad * np.where(root > 0, 0.5 / safe, 0.0))

    out._backward = backward
    return out


def square(x):
    out = _node(x.data * x.data, (x,))

    def backward():
        _accum(x, out.grad * 2.0 * x.data)

    out._backward = backward
    return out


def reciprocal(x):
    out = _node(1.0 / x.data, (x,))

    def backward():
        _accum(x, -out.grad * out.data * out.data)

    out._backward = backward
    return out


# -- reductions and shaping --------------------------------------------------


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    out = _node(x.data.sum(), (x,))

    def backward():
        _accum(x, np.broadcast_to(out.grad, x.shape).astype(x.dtype))

    out._backward = backward
    return out


def mean_axis0(x):
    """Mean over the leading axis (used to collapse feature-map height)."""
    n = x.shape[0]
    out = _node(x.data.mean(axis=0), (x,))

    def backward():
        _accum(x, np.broadcast_to(out.grad / n, x.shape).astype(x.dtype))

    out._backward = backward
    return out


def roll(x, shift, axis):
    """Cyclic shift: positive shift moves content left along ``axis``."""
    out = _node(np.roll(x.data, -shift, axis=axis), (x,))

    def backward():
        _accum(x, np.roll(out.grad, shift, axis=axis))

    out._backward = backward
    return out


def concat(tensors, axis=0):
    if not tensors:
        raise ValueError("concat of an empty list")
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accum(t, np.take(g, range(lo, hi), axis=axis))

    out._backward = backward
    return out


def stack_scalars(tensors):
    """Gather scalar tensors into a 1-D tensor."""
    out = _node(np.array([t.data for t in tensors], dtype=tensors[0].dtype), tuple(tensors))

    def backward():
        for i, t in enumerate(tensors):
            _accum(t, out.grad[i])

    out._backward = backward
    return out


# -- dense / pooling / convolution -------------------------------------------


def dense(x, weight, bias=None):
    """Affine map: x @ weight (+ bias). x is (n,) or (batch, n)."""
    if x.data.ndim not in (1, 2) or weight.data.ndim != 2:
        raise ValueError(f"dense: bad ranks x{x.shape} w{weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense: inner dims differ, x{x.shape} w{weight.shape}")
    y = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"dense: bias {bias.shape} does not match output {weight.shape[1]}")
        y = y + bias.data
        parents.append(bias)
    out = _node(y, parents)

    def backward():
        g = out.grad
        if x.data.ndim == 1:
            _accum(x, g @ weight.data.T)
            _accum(weight, np.outer(x.data, g))
            if bias is not None:
                _accum(bias, g)
        else:
            _accum(x, g @ weight.data.T)
            _accum(weight, x.data.T @ g)
            if bias is not None:
                _accum(bias, g.sum(axis=0))

    out._backward = backward
    return out


def maxpool2d(x, window, stride=None):
    """Windowed max over the two leading axes of an H x W x C tensor."""
    if x.data.ndim != 3:
        raise ValueError(f"maxpool2d expects H x W x C, got {x.shape}")
    ph, pw = (window, window) if np.isscalar(window) else window
    if stride is None:
        stride = (ph, pw)
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    H, W, C = x.shape
    if H < ph or W < pw:
        raise ValueError(f"maxpool2d: window {(ph, pw)} larger than input {(H, W)}")
    ho = (H - ph) // sh + 1
    wo = (W - pw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (ph, pw), axis=(0, 1))
    win = win[::sh, ::sw].reshape(ho, wo, C, ph * pw)
    arg = win.argmax(axis=3)
    out = _node(np.take_along_axis(win, arg[..., None], axis=3)[..., 0], (x,))

    def backward():
        g = out.grad
        gx = np.zeros_like(x.data)
        hh, ww, cc = np.meshgrid(
            np.arange(ho), np.arange(wo), np.arange(C), indexing="ij"
        )
        rows = hh * sh + arg // pw
        cols = ww * sw + arg % pw
        np.add.at(gx, (rows, cols, cc), g)
        _accum(x, gx)

    out._backward = backward
    return out


def conv2d_valid(xp, kernel, stride=(1, 1)):
    """Valid cross-correlation of an H x W x Cin tensor with kh x kw x Cin x Cout."""
    from . import kernels

    if xp.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d_valid: bad ranks x{xp.shape} k{kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if xp.shape[2] != cin:
        raise ValueError(f"conv2d_valid: input channels {xp.shape[2]} != kernel Cin {cin}")
    sh, sw = stride
    Hp, Wp, _ = xp.shape
    if Hp < kh or Wp < kw:
        raise ValueError(f"conv2d_valid: kernel {(kh, kw)} larger than input {(Hp, Wp)}")
    xd = np.ascontiguousarray(xp.data)
    kd = np.ascontiguousarray(kernel.data)
    y = kernels.conv2d_forward(xd, kd, sh, sw)
    out = _node(y, (xp, kernel))

    def backward():
        g = np.ascontiguousarray(out.grad)
        _accum(xp, kernels.conv2d_backward_input(g, kd, sh, sw, Hp, Wp))
        _accum(kernel, kernels.conv2d_backward_kernel(xd, g, kh, kw, sh, sw))

    out._backward = backward
    return out


def conv2d(x, kernel, stride=(1, 1), pad_mode="zero"):
    """Same-size convolution with zero or circular padding, then stride.

    ``pad_mode`` is "zero", "circular" (circular horizontally, pole wrap
    vertically) or a PadMode instance choosing the vertical treatment.
    Output is (H/sh) x (W/sw) x Cout; the strides must divide H and W.
    """
    from .omni import PadMode, pad2d

    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d: bad ranks x{x.shape} k{kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel dims must be odd, got {(kh, kw)}")
    if x.shape[2] != cin:
        raise ValueError(f"conv2d: input channels {x.shape[2]} != kernel Cin {cin}")
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    H, W, _ = x.shape
    if H % sh or W % sw:
        raise ValueError(f"conv2d: stride {(sh, sw)} does not divide input {(H, W)}")
    amounts = (kh // 2, kh // 2, kw // 2, kw // 2)
    if isinstance(pad_mode, PadMode):
        mode = PadMode(vertical=pad_mode.vertical, amounts=amounts)
    elif pad_mode == "circular":
        mode = PadMode(amounts=amounts)
    elif pad_mode == "zero":
        mode = "zero"
    else:
        raise ValueError(f"conv2d: unknown pad_mode {pad_mode!r}")
    if mode == "zero":
        t, b, l, r = amounts
        xp = _zero_pad2d(x, t, b, l, r)
    else:
        xp = pad2d(x, mode)
    return conv2d_valid(xp, kernel, (sh, sw))


def _zero_pad2d(x, top, bottom, left, right):
    out = _node(
        np.pad(x.data, ((top, bottom), (left, right), (0, 0))), (x,)
    )
    H, W, _ = x.shape

    def backward():
        _accum(x, out.grad[top : top + H, left : left + W])

    out._backward = backward
    return out


# -- composites ---------------------------------------------------------------


def l2_distance(a, b):
    """Euclidean norm of a - b over the flattened tensors, as a scalar."""
    _check_same_shape(a, b, "l2_distance")
    return sqrt(tsum(square(sub(a, b))))


def logsumexp(v):
    """log(sum(exp(v))) of a 1-D tensor, stabilised by max subtraction."""
    m = float(v.data.max())
    return add(log(tsum(exp(sub(v, m)))), m)


# -- gradient checking --------------------------------------------------------


def finite_diff_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. Error per element is
    |analytic - central| / max(1, |central|). Use float64 inputs.
    """
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=np.float64)
    loss = f(probe)
    loss.backward()
    analytic = probe.grad.reshape(-1).copy()

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(probe.data.copy(), dtype=np.float64)).data)
        flat[i] = orig - h
        lo = float(f(Tensor(probe.data.copy(), dtype=np.float64)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * h)
    denom = np.maximum(1.0, np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())
