"""N-d tensors with reverse-mode automatic differentiation.

Every primitive the reconstruction networks and the trainer need lives here:
strided/grouped 2-d convolution, pointwise (1x1) convolution, LeakyReLU,
sigmoid, softmax, global average pooling, channel concatenation, pixel
(un)shuffle, the window-attention weighted sum used by the contextual
transformer, and MSE loss. Gradients are accumulated by walking the graph in
reverse topological order, so a tensor feeding several consumers receives the
sum of all downstream contributions, and repeated backward calls accumulate
additively until grads are cleared.

Data lives in numpy arrays; float32 is the working precision for training and
float64 is used by the finite-difference checks. Broadcasting is deliberately
restricted: elementwise add requires equal shapes, and mul additionally
accepts the [N,C,1,1] x [N,C,H,W] channel-gate pattern.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A node in the autodiff graph: a numpy array plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=()):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar root; grads add across calls.

        Each call propagates a fresh unit seed: grads already present are set
        aside for the duration of the sweep and merged back in afterwards, so
        successive calls accumulate additively instead of compounding.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward() requires a scalar root, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        prior = []
        for node in topo:
            if node.grad is not None:
                prior.append((node, node.grad))
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node, g in prior:
            if node.grad is None:
                node.grad = g
            else:
                node.grad += g

    def sum(self):
        return sum_all(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return add(-self, float(other))

    def __repr__(self):
        grad = "grad" if self.requires_grad else "no-grad"
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, {grad})"


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
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


def _make(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires,
                 _parents=tuple(p for p in parents if p.requires_grad))
    if requires:
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        out_data = a.data + c

        def _bwd(g, a=a):
            a._accumulate(g)

        return _make(out_data, (a,), _bwd)
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"add: shapes {a.data.shape} and {b.data.shape} differ"
        )

    def _bwd(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), _bwd)


def _gate_compatible(sa, sb):
    # channel-attention gate: [N,C,1,1] against [N,C,H,W]
    return (
        len(sa) == 4
        and len(sb) == 4
        and sa[:2] == sb[:2]
        and sa[2:] == (1, 1)
    )


def mul(a, b):
    if not isinstance(b, Tensor):
        c = float(b)

        def _bwd(g, a=a, c=c):
            a._accumulate(g * c)

        return _make(a.data * c, (a,), _bwd)

    sa, sb = a.data.shape, b.data.shape
    if sa != sb and not _gate_compatible(sa, sb) and not _gate_compatible(sb, sa):
        raise DimensionError(
            f"mul: shapes {sa} and {sb} are neither equal nor a [N,C,1,1] gate"
        )
    out_data = a.data * b.data

    def _bwd(g, a=a, b=b):
        if a.requires_grad:
            ga = g * b.data
            if a.data.shape != ga.shape:
                ga = ga.sum(axis=(2, 3), keepdims=True)
            a._accumulate(ga)
        if b.requires_grad:
            gb = g * a.data
            if b.data.shape != gb.shape:
                gb = gb.sum(axis=(2, 3), keepdims=True)
            b._accumulate(gb)

    return _make(out_data, (a, b), _bwd)


def sum_all(x):
    def _bwd(g, x=x):
        x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), _bwd)


# ---------------------------------------------------------------------------
# activations and normalizations
# ---------------------------------------------------------------------------

def leaky_relu(x, slope=0.01):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

    def _bwd(g, x=x, scale=scale):
        x._accumulate(g * scale)

    return _make(x.data * scale, (x,), _bwd)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def _bwd(g, x=x, y=out_data):
        x._accumulate(g * y * (1.0 - y))

    return _make(out_data, (x,), _bwd)


def softmax(x, axis):
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(
            f"softmax: axis {axis} out of range for rank {x.data.ndim}"
        )
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _bwd(g, x=x, y=out_data, axis=axis):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - dot))

    return _make(out_data, (x,), _bwd)


def global_avg_pool(x):
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected rank 4, got {x.data.ndim}")
    n, c, h, w = x.data.shape
    out_data = x.data.mean(axis=(2, 3), keepdims=True)

    def _bwd(g, x=x, h=h, w=w):
        x._accumulate(np.broadcast_to(g / (h * w), x.data.shape).astype(x.data.dtype))

    return _make(out_data, (x,), _bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape):
    old = x.data.shape

    def _bwd(g, x=x, old=old):
        x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), _bwd)


def concat(xs, axis):
    xs = list(xs)
    if not xs:
        raise UsageError("concat: empty input list")
    ref = xs[0].data.shape
    for i, t in enumerate(xs[1:], start=1):
        s = t.data.shape
        if len(s) != len(ref) or any(
            s[a] != ref[a] for a in range(len(ref)) if a != axis % len(ref)
        ):
            raise DimensionError(
                f"concat: input {i} shape {s} incompatible with {ref} off axis {axis}"
            )
    sizes = [t.data.shape[axis] for t in xs]
    out_data = np.concatenate([t.data for t in xs], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def _bwd(g, xs=xs, offsets=offsets, axis=axis):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(xs), _bwd)


def pixel_shuffle(x, r):
    """Rearrange [N, C*r^2, H, W] into [N, C, H*r, W*r]; pure permutation."""
    if x.data.ndim != 4:
        raise DimensionError(f"pixel_shuffle: expected rank 4, got {x.data.ndim}")
    n, crr, h, w = x.data.shape
    if crr % (r * r) != 0:
        raise DimensionError(
            f"pixel_shuffle: channel axis (1) has {crr} channels, not divisible by r^2={r * r}"
        )
    c = crr // (r * r)
    out_data = (
        x.data.reshape(n, c, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * r, w * r)
    )

    def _bwd(g, x=x, n=n, c=c, r=r, h=h, w=w):
        gi = (
            g.reshape(n, c, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c * r * r, h, w)
        )
        x._accumulate(gi)

    return _make(out_data, (x,), _bwd)


def pixel_unshuffle(x, r):
    """Inverse of pixel_shuffle: [N, C, H*r, W*r] -> [N, C*r^2, H, W]."""
    if x.data.ndim != 4:
        raise DimensionError(f"pixel_unshuffle: expected rank 4, got {x.data.ndim}")
    n, c, hr, wr = x.data.shape
    if hr % r != 0 or wr % r != 0:
        raise DimensionError(
            f"pixel_unshuffle: spatial axes (2,3) {hr}x{wr} not divisible by r={r}"
        )
    h, w = hr // r, wr // r
    out_data = (
        x.data.reshape(n, c, h, r, w, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, h, w)
    )

    def _bwd(g, x=x, n=n, c=c, r=r, h=h, w=w):
        gi = (
            g.reshape(n, c, r, r, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, h * r, w * r)
        )
        x._accumulate(gi)

    return _make(out_data, (x,), _bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _conv_windows(xp, k, stride):
    # [N, C, Hp, Wp] -> strided view [N, C, Ho, Wo, k, k]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2-d convolution (cross-correlation), zero padding, grouped channels.

    x: [N, C, H, W]; weight: [O, C/groups, k, k]; bias: [O] or None.
    Output spatial dims follow floor((H + 2*padding - k) / stride) + 1.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 4, got {x.data.ndim}")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise DimensionError(
            f"conv2d: weight must be [O, C/g, k, k], got {weight.data.shape}"
        )
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d: invalid stride={stride} or padding={padding}")
    n, c, h, w = x.data.shape
    o, cg, k, _ = weight.data.shape
    if c % groups != 0:
        raise DimensionError(
            f"conv2d: input channel axis (1) has {c} channels, not divisible by groups={groups}"
        )
    if o % groups != 0:
        raise DimensionError(
            f"conv2d: output channel axis (0 of weight) has {o} channels, not divisible by groups={groups}"
        )
    if cg != c // groups:
        raise DimensionError(
            f"conv2d: weight channel axis (1) expects {c // groups} (=C/groups), got {cg}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise DimensionError(
            f"conv2d: bias axis (0) must have {o} entries, got {bias.data.shape}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(
            f"conv2d: padded spatial axes {hp}x{wp} smaller than kernel {k}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _conv_windows(xp, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    og = o // groups
    wing = win.reshape(n, groups, c // groups, ho, wo, k, k)
    wg = weight.data.reshape(groups, og, cg, k, k)
    out_data = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True)
    out_data = out_data.reshape(n, o, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bwd(g, x=x, weight=weight, bias=bias):
        gg = g.reshape(n, groups, og, ho, wo)
        if weight.requires_grad:
            dw = np.einsum("ngohw,ngchwij->gocij", gg, wing, optimize=True)
            weight._accumulate(dw.reshape(o, cg, k, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # scatter the per-kernel-position products back onto the padded grid
            prod = np.einsum("ngohw,gocij->ngcijhw", gg, wg, optimize=True)
            prod = prod.reshape(n, c, k, k, ho, wo)
            dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += prod[:, :, i, j]
            x._accumulate(dxp[:, :, padding:padding + h, padding:padding + w])

    return _make(out_data, parents, _bwd)


def conv1x1(x, weight, bias=None):
    """Pointwise convolution: a per-pixel linear map across channels.

    x: [N, C, H, W]; weight: [O, C]; bias: [O] or None.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv1x1: input must be rank 4, got {x.data.ndim}")
    if weight.data.ndim != 2:
        raise DimensionError(f"conv1x1: weight must be [O, C], got {weight.data.shape}")
    o, c = weight.data.shape
    if x.data.shape[1] != c:
        raise DimensionError(
            f"conv1x1: input channel axis (1) has {x.data.shape[1]} channels, weight expects {c}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise DimensionError(
            f"conv1x1: bias axis (0) must have {o} entries, got {bias.data.shape}"
        )
    out_data = np.einsum("nchw,oc->nohw", x.data, weight.data, optimize=True)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bwd(g, x=x, weight=weight, bias=bias):
        if x.requires_grad:
            x._accumulate(np.einsum("nohw,oc->nchw", g, weight.data, optimize=True))
        if weight.requires_grad:
            weight._accumulate(np.einsum("nohw,nchw->oc", g, x.data, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, _bwd)


def window_weighted_sum(values, attn, kernel):
    """Per-pixel weighted sum of values over a k x k window.

    values: [N, C, H, W]; attn: [N, heads, k^2, H, W] with C divisible by
    heads. Each head's k^2 attention maps weight the zero-padded values of
    that head's channel slice at the corresponding window offsets:

        out[n, hd, c, y, x] = sum_j attn[n, hd, j, y, x] * vpad[n, hd, c, y+j//k, x+j%k]

    where vpad is values padded by k//2 on each spatial side, so offset index
    j scans the window centered on (y, x) in row-major order.
    """
    if values.data.ndim != 4:
        raise DimensionError(f"window_weighted_sum: values must be rank 4, got {values.data.ndim}")
    if attn.data.ndim != 5:
        raise DimensionError(f"window_weighted_sum: attn must be rank 5, got {attn.data.ndim}")
    n, c, h, w = values.data.shape
    na, heads, k2, ha, wa = attn.data.shape
    if k2 != kernel * kernel:
        raise DimensionError(
            f"window_weighted_sum: attn axis (2) has {k2} offsets, expected k^2={kernel * kernel}"
        )
    if (na, ha, wa) != (n, h, w):
        raise DimensionError(
            f"window_weighted_sum: attn dims {attn.data.shape} disagree with values {values.data.shape}"
        )
    if c % heads != 0:
        raise DimensionError(
            f"window_weighted_sum: channel axis (1) has {c} channels, not divisible by heads={heads}"
        )
    pad = kernel // 2
    cg = c // heads
    vp = np.pad(values.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    vp5 = vp.reshape(n, heads, cg, h + 2 * pad, w + 2 * pad)
    a = attn.data
    out = np.zeros((n, heads, cg, h, w), dtype=values.data.dtype)
    for j in range(kernel * kernel):
        jy, jx = divmod(j, kernel)
        out += a[:, :, j:j + 1] * vp5[:, :, :, jy:jy + h, jx:jx + w]

    def _bwd(g, values=values, attn=attn):
        g5 = g.reshape(n, heads, cg, h, w)
        if attn.requires_grad:
            da = np.empty_like(a)
            for j in range(kernel * kernel):
                jy, jx = divmod(j, kernel)
                da[:, :, j] = (g5 * vp5[:, :, :, jy:jy + h, jx:jx + w]).sum(axis=2)
            attn._accumulate(da)
        if values.requires_grad:
            dvp = np.zeros_like(vp5)
            for j in range(kernel * kernel):
                jy, jx = divmod(j, kernel)
                dvp[:, :, :, jy:jy + h, jx:jx + w] += a[:, :, j:j + 1] * g5
            values._accumulate(
                dvp.reshape(n, c, h + 2 * pad, w + 2 * pad)[:, :, pad:pad + h, pad:pad + w]
            )

    return _make(out.reshape(n, c, h, w), (values, attn), _bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    """Mean of squared differences over all elements."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ"
        )
    diff = pred.data - target.data
    out_data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    scale = 2.0 / diff.size

    def _bwd(g, pred=pred, target=target, diff=diff, scale=scale):
        if pred.requires_grad:
            pred._accumulate(g * scale * diff)
        if target.requires_grad:
            target._accumulate(-g * scale * diff)

    return _make(out_data, (pred, target), _bwd)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def finite_difference_check(fn, inputs, eps=1e-5):
    """Compare analytic grads of scalar fn(*inputs) against central differences.

    inputs must be float64 tensors with requires_grad=True. Returns the worst
    relative error max|analytic - fd| / max(max|fd|, 1e-6) over all inputs.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for t in inputs:
        if t.grad is None:
            raise UsageError("finite_difference_check: input received no gradient")
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*inputs).item()
            flat[i] = orig - eps
            lo = fn(*inputs).item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
        denom = max(float(np.abs(fd).max()), 1e-6)
        err = float(np.abs(t.grad - fd).max()) / denom
        worst = max(worst, err)
    return worst
