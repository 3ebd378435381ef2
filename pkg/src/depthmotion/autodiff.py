"""Dense float64 arrays with reverse-mode differentiation on an explicit tape.

Every differentiable quantity in the pipeline (features, depths, poses,
motion fields, losses) is an `Array`.  Operations executed while a `Tape`
is active are recorded in execution order; `backward` replays the tape in
reverse and returns gradients for the requires_grad leaves.  A central
finite-difference oracle is provided as the independent check against
which the analytic gradients are verified.

All data is 64-bit and immutable after creation.  Shapes are explicit:
the only implicit broadcasting is scalar-with-array.
"""

import builtins
import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


_state = threading.local()


def _current_tape():
    return getattr(_state, "tape", None)


class Array:
    """Immutable float64 n-d value, optionally participating in differentiation."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("Array constructed with non-finite values")
        arr = arr.copy() if arr.base is not None or arr.flags.writeable else arr
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def detach(self):
        """Same values, severed from differentiation."""
        out = Array.__new__(Array)
        out.data = self.data
        out.requires_grad = False
        return out

    def __repr__(self):
        return "Array(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    # arithmetic sugar; scalars are promoted
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

    def __getitem__(self, key):
        return slice_(self, key)


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of executed primitives; confined to one thread.

    Use as a context manager; operations run inside the block are recorded
    when any input requires gradients.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if _current_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False

    def __len__(self):
        return len(self.nodes)

    def op_counts(self):
        """Histogram of recorded op kinds, for cost instrumentation."""
        counts = {}
        for node in self.nodes:
            counts[node.op] = counts.get(node.op, 0) + 1
        return counts


def array(data, requires_grad=False):
    return Array(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Array(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Array(np.ones(shape), requires_grad=requires_grad)


def constant(data):
    return Array(data, requires_grad=False)


def _coerce(x):
    if isinstance(x, Array):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Array(float(x))
    raise TypeError("expected Array or scalar, got %r" % type(x))


def _finish(op, inputs, out_data, vjp):
    """Finite-check the result and record the node when gradients are needed."""
    if not np.isfinite(out_data).all():
        raise NonFiniteError(
            "%s produced non-finite values (input shapes %s)"
            % (op, [tuple(i.shape) for i in inputs])
        )
    requires = builtins.any(i.requires_grad for i in inputs)
    out = Array.__new__(Array)
    data = np.asarray(out_data, dtype=np.float64)
    # views of immutable buffers may be shared; views of writable temporaries
    # must be detached from their base
    if data.base is not None and data.base.flags.writeable:
        data = data.copy()
    if data.flags.writeable:
        data.flags.writeable = False
    out.data = data
    out.requires_grad = requires
    tape = _current_tape()
    if tape is not None and requires:
        tape.nodes.append(_Node(op, tuple(inputs), out, vjp))
    return out


def _binary_shapes(a, b, op):
    # scalar-with-array is the only implicit broadcast
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError("%s: shapes %s and %s do not conform" % (op, a.shape, b.shape))


def _reduce_to(grad, shape):
    if grad.shape == shape:
        return grad
    # operand was the scalar side of a scalar-with-array broadcast
    return np.sum(grad).reshape(shape)


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _finish("add", (a, b), a.data + b.data, vjp)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _finish("sub", (a, b), a.data - b.data, vjp)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _finish("mul", (a, b), a.data * b.data, vjp)


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "div")

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _finish("div", (a, b), out, vjp)


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: shapes %s and %s do not conform" % (a.shape, b.shape))

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _finish("matmul", (a, b), a.data @ b.data, vjp)


def exp(x):
    x = _coerce(x)
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _finish("exp", (x,), out, vjp)


def log(x):
    x = _coerce(x)

    def vjp(g):
        return (g / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _finish("log", (x,), out, vjp)


def sqrt(x):
    x = _coerce(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _finish("sqrt", (x,), out, vjp)


def abs(x):  # noqa: A001 - mirrors the numpy name on purpose
    x = _coerce(x)

    def vjp(g):
        return (g * np.sign(x.data),)

    return _finish("abs", (x,), np.abs(x.data), vjp)


def sin(x):
    x = _coerce(x)

    def vjp(g):
        return (g * np.cos(x.data),)

    return _finish("sin", (x,), np.sin(x.data), vjp)


def cos(x):
    x = _coerce(x)

    def vjp(g):
        return (g * -np.sin(x.data),)

    return _finish("cos", (x,), np.cos(x.data), vjp)


def sigmoid(x):
    x = _coerce(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _finish("sigmoid", (x,), out, vjp)


def relu(x):
    x = _coerce(x)

    def vjp(g):
        return (g * (x.data > 0),)

    return _finish("relu", (x,), np.maximum(x.data, 0.0), vjp)


def softmax(x, axis):
    x = _coerce(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _finish("softmax", (x,), out, vjp)


def sum(x, axes=None):  # noqa: A001
    x = _coerce(x)
    out = np.sum(x.data, axis=axes)

    def vjp(g):
        if axes is None:
            return (np.full(x.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)

    return _finish("sum", (x,), out, vjp)


def mean(x, axes=None):
    x = _coerce(x)
    out = np.mean(x.data, axis=axes)
    count = x.size if axes is None else x.size // out.size

    def vjp(g):
        if axes is None:
            return (np.full(x.shape, g / count),)
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / count,)

    return _finish("mean", (x,), out, vjp)


def min(x, axis):  # noqa: A001
    """Minimum over one axis; on ties the gradient flows to the lowest index."""
    x = _coerce(x)
    idx = np.argmin(x.data, axis=axis)  # first minimizer
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _finish("min", (x,), out, vjp)


def clamp(x, lo=None, hi=None):
    x = _coerce(x)
    out = np.clip(x.data, lo, hi)
    passthrough = np.ones(x.shape, dtype=bool)
    if lo is not None:
        passthrough &= x.data > lo
    if hi is not None:
        passthrough &= x.data < hi

    def vjp(g):
        return (g * passthrough,)

    return _finish("clamp", (x,), out, vjp)


def reshape(x, shape):
    x = _coerce(x)
    old = x.shape

    def vjp(g):
        return (g.reshape(old),)

    return _finish("reshape", (x,), x.data.reshape(shape), vjp)


def permute(x, axes):
    x = _coerce(x)
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _finish("permute", (x,), np.transpose(x.data, axes), vjp)


def concat(arrays, axis=0):
    arrays = [_coerce(a) for a in arrays]
    if not arrays:
        raise ShapeError("concat: empty input list")
    sizes = [a.shape[axis] for a in arrays]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish("concat", tuple(arrays), np.concatenate([a.data for a in arrays], axis=axis), vjp)


def stack(arrays, axis=0):
    """Composite: reshape each operand and concatenate along the new axis."""
    arrays = [_coerce(a) for a in arrays]
    shape = arrays[0].shape
    new = shape[:axis] + (1,) + shape[axis:]
    return concat([reshape(a, new) for a in arrays], axis=axis)


def slice_(x, key):
    x = _coerce(x)
    out = x.data[key]
    if out.base is None:  # advanced indexing copies; keep to basic slicing
        raise ShapeError("slice: only basic slicing is supported")

    def vjp(g):
        gx = np.zeros(x.shape)
        gx[key] = g
        return (gx,)

    return _finish("slice", (x,), out, vjp)


def _pad2d(data, pad, mode):
    if pad == 0:
        return data
    return np.pad(data, ((0, 0), (pad, pad), (pad, pad)), mode=mode)


def _unpad2d_grad(gpad, pad, mode, shape):
    if pad == 0:
        return gpad
    g = gpad[:, pad:-pad, pad:-pad].copy()
    if mode == "edge":
        # fold padded-border gradients back onto the edge pixels
        g[:, 0, :] += np.sum(gpad[:, :pad, pad:-pad], axis=1)
        g[:, -1, :] += np.sum(gpad[:, -pad:, pad:-pad], axis=1)
        g[:, :, 0] += np.sum(gpad[:, pad:-pad, :pad], axis=2)
        g[:, :, -1] += np.sum(gpad[:, pad:-pad, -pad:], axis=2)
        g[:, 0, 0] += np.sum(gpad[:, :pad, :pad], axis=(1, 2))
        g[:, 0, -1] += np.sum(gpad[:, :pad, -pad:], axis=(1, 2))
        g[:, -1, 0] += np.sum(gpad[:, -pad:, :pad], axis=(1, 2))
        g[:, -1, -1] += np.sum(gpad[:, -pad:, -pad:], axis=(1, 2))
    return g


def _im2col(xpad, k, stride, ho, wo):
    c = xpad.shape[0]
    s0, s1, s2 = xpad.strides
    windows = np.lib.stride_tricks.as_strided(
        xpad,
        shape=(c, ho, wo, k, k),
        strides=(s0, s1 * stride, s2 * stride, s1, s2),
        writeable=False,
    )
    # (c*k*k, ho*wo), patch channels fastest over c then ki, kj
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)


def conv2d(x, w, b=None, stride=1, padding=1, pad_mode="zeros"):
    """3x3 convolution of a CxHxW map; stride 1 or 2, pad 0 or 1."""
    x, w = _coerce(x), _coerce(w)
    if x.ndim != 3 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError("conv2d: expected CxHxW input and Cout x Cin x 3 x 3 kernel, got %s, %s"
                         % (x.shape, w.shape))
    if w.shape[1] != x.shape[0]:
        raise ShapeError("conv2d: kernel Cin %d does not match input C %d" % (w.shape[1], x.shape[0]))
    if stride not in (1, 2) or padding not in (0, 1):
        raise ShapeError("conv2d: stride must be 1 or 2, padding 0 or 1")
    cin, h, wdt = x.shape
    cout = w.shape[0]
    mode = {"zeros": "constant", "edge": "edge"}[pad_mode]
    hp, wp = h + 2 * padding, wdt + 2 * padding
    ho, wo = (hp - 3) // stride + 1, (wp - 3) // stride + 1
    xpad = _pad2d(x.data, padding, mode)
    cols = _im2col(xpad, 3, stride, ho, wo)
    wmat = w.data.reshape(cout, cin * 9)
    out = (wmat @ cols).reshape(cout, ho, wo)
    inputs = [x, w]
    if b is not None:
        b = _coerce(b)
        if b.shape != (cout,):
            raise ShapeError("conv2d: bias shape %s does not match Cout %d" % (b.shape, cout))
        out = out + b.data[:, None, None]
        inputs.append(b)

    def vjp(g):
        gmat = g.reshape(cout, ho * wo)
        gw = (gmat @ cols.T).reshape(w.shape)
        gcols = wmat.T @ gmat  # (cin*9, ho*wo)
        gcols = gcols.reshape(cin, 3, 3, ho, wo)
        gpad = np.zeros((cin, hp, wp))
        for ki in range(3):
            for kj in range(3):
                gpad[:, ki:ki + (ho - 1) * stride + 1:stride,
                     kj:kj + (wo - 1) * stride + 1:stride] += gcols[:, ki, kj]
        gx = _unpad2d_grad(gpad, padding, mode, x.shape)
        if b is not None:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    return _finish("conv2d", tuple(inputs), out, vjp)


def avg_pool2d(x):
    """2x2 average pooling with stride 2."""
    x = _coerce(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("avg_pool2d: spatial dims must be even, got %s" % (x.shape,))
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0
        return (gx,)

    return _finish("avg_pool2d", (x,), out, vjp)


def bilinear_gather(src, coords):
    """Sample src (C x H x W) at continuous pixel positions.

    coords has shape (2, ...) with coords[0] = x (column) and coords[1] = y
    (row); integer coordinates address pixel centers.  Out-of-bounds corners
    contribute zeros.  At exact integer coordinates the gradient w.r.t. the
    coordinate is the limit from the cell whose lower corner is the point.
    """
    src, coords = _coerce(src), _coerce(coords)
    if src.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError("bilinear_gather: expected CxHxW source and (2,...) coords, got %s, %s"
                         % (src.shape, coords.shape))
    c, h, w = src.shape
    out_spatial = coords.shape[1:]
    x = coords.data[0].ravel()
    y = coords.data[1].ravel()
    n = x.size

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    corner_vals = []
    corner_ok = []
    corner_idx = []
    for dy in (0, 1):
        for dx in (0, 1):
            cx = x0 + dx
            cy = y0 + dy
            ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            cxc = np.clip(cx, 0, w - 1)
            cyc = np.clip(cy, 0, h - 1)
            vals = src.data[:, cyc, cxc] * ok  # (c, n)
            corner_vals.append(vals)
            corner_ok.append(ok)
            corner_idx.append((cyc, cxc))
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    weights = (w00, w01, w10, w11)
    out = np.zeros((c, n))
    for vals, wt in zip(corner_vals, weights):
        out += vals * wt
    out = out.reshape((c,) + out_spatial)

    def vjp(g):
        gflat = g.reshape(c, n)
        gsrc = np.zeros((c, h * w))
        for (cyc, cxc), ok, wt in zip(corner_idx, corner_ok, weights):
            contrib = gflat * (wt * ok)
            flat_idx = cyc * w + cxc
            for ci in range(c):
                gsrc[ci] += np.bincount(flat_idx, weights=contrib[ci], minlength=h * w)
        gsrc = gsrc.reshape(src.shape)
        # d out / d x and d out / d y from the corner values
        v00, v01, v10, v11 = corner_vals
        dox = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
        doy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
        gx = np.sum(gflat * dox, axis=0)
        gy = np.sum(gflat * doy, axis=0)
        gcoords = np.stack([gx, gy]).reshape(coords.shape)
        return gsrc, gcoords

    return _finish("bilinear_gather", (src, coords), out, vjp)


def box3_mean(x):
    """3x3 mean filter with edge padding, per channel (shape-preserving)."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError("box3_mean: expected CxHxW, got %s" % (x.shape,))
    c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros((c, h, w))
    for a in range(3):
        for b in range(3):
            out += xp[:, a:a + h, b:b + w]
    out /= 9.0

    def vjp(g):
        gpad = np.zeros((c, h + 2, w + 2))
        g9 = g / 9.0
        for a in range(3):
            for b in range(3):
                gpad[:, a:a + h, b:b + w] += g9
        return (_unpad2d_grad(gpad, 1, "edge", x.shape),)

    return _finish("box3_mean", (x,), out, vjp)


def _up1d(data, axis):
    """Double one spatial axis with the (0.25, 0.75) half-pixel stencil."""
    x = np.moveaxis(data, axis, 0)
    n = x.shape[0]
    prev = x[np.maximum(np.arange(n) - 1, 0)]
    nxt = x[np.minimum(np.arange(n) + 1, n - 1)]
    out = np.empty((2 * n,) + x.shape[1:])
    out[0::2] = 0.25 * prev + 0.75 * x
    out[1::2] = 0.75 * x + 0.25 * nxt
    return np.moveaxis(out, 0, axis)


def _up1d_adjoint(gdata, axis):
    g = np.moveaxis(gdata, axis, 0)
    n = g.shape[0] // 2
    ge = g[0::2]
    go = g[1::2]
    dx = 0.75 * (ge + go)
    dx[:-1] += 0.25 * ge[1:]
    dx[0] += 0.25 * ge[0]
    dx[1:] += 0.25 * go[:-1]
    dx[-1] += 0.25 * go[-1]
    return np.moveaxis(dx, 0, axis)


def upsample2x(x):
    """Bilinear 2x upsampling of a CxHxW map (half-pixel centers, edges
    replicated); equivalent to gathering at the doubled pixel grid."""
    x = _coerce(x)
    if x.ndim != 3:
        raise ShapeError("upsample2x: expected CxHxW, got %s" % (x.shape,))
    out = _up1d(_up1d(x.data, 1), 2)

    def vjp(g):
        return (_up1d_adjoint(_up1d_adjoint(g, 2), 1),)

    return _finish("upsample2x", (x,), out, vjp)


def upsample_bilinear(x, factor):
    """Composite: repeated 2x bilinear upsampling (factor a power of two)."""
    x = _coerce(x)
    if factor < 1 or factor & (factor - 1):
        raise ShapeError("upsample_bilinear: factor must be a power of two, got %d" % factor)
    while factor > 1:
        x = upsample2x(x)
        factor //= 2
    return x


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "abs": abs,
    "sin": sin,
    "cos": cos,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "sum": sum,
    "mean": mean,
    "min": min,
    "clamp": clamp,
    "reshape": reshape,
    "permute": permute,
    "concat": concat,
    "slice": slice_,
    "conv2d": conv2d,
    "avg_pool2d": avg_pool2d,
    "bilinear_gather": bilinear_gather,
    "box3_mean": box3_mean,
    "upsample2x": upsample2x,
}


def primitive_forward(op_kind, *inputs, **kwargs):
    """Dispatch a primitive by name; the op is recorded on the active tape."""
    if op_kind not in _OPS:
        raise KeyError("unknown primitive %r" % op_kind)
    return _OPS[op_kind](*inputs, **kwargs)


def backward(tape, loss):
    """Gradients of a scalar loss w.r.t. every requires_grad leaf on the tape."""
    if not isinstance(loss, Array) or loss.size != 1:
        raise ShapeError("backward: loss must be a scalar Array")
    grads = {id(loss): np.ones(loss.shape)}
    produced = {id(node.output) for node in tape.nodes}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    result = {}
    for key, leaf in leaves.items():
        result[leaf] = Array(grads[key])
    if loss.requires_grad and id(loss) not in produced:
        result[loss] = Array(np.ones(loss.shape))
    return result


def finite_difference_oracle(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x, same shape as x."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = x.data
    grad = np.zeros(base.shape)
    flat = grad.reshape(-1)
    for i in range(base.size):
        grad_i = _central_diff(f, base, i, step)
        flat[i] = grad_i
    return Array(grad)


def finite_difference_at(f, x, indices, step=1e-5):
    """Central differences at selected flat indices only (for large inputs)."""
    base = x.data
    return np.array([_central_diff(f, base, int(i), step) for i in indices])


def _central_diff(f, base, flat_index, step):
    bumped = base.copy()
    flat = bumped.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    hi = f(Array(bumped)).data.item()
    flat[flat_index] = orig - step
    lo = f(Array(bumped)).data.item()
    return (hi - lo) / (2.0 * step)
