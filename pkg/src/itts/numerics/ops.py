"""Forward primitives with hand-written backward closures.

Primitive set: elementwise arithmetic, matmul, conv2d, gru_step, softmax,
tanh, sigmoid, concat, mean_pool, cosine, plus the fused losses and small
gather/repeat helpers the models need. Every op is deterministic; gradients
are recorded only while `autograd()` is active (see tensor.py).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record

# ---------------------------------------------------------------------------
# elementwise arithmetic


def _binary_elementwise(op_name, a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op_name, a.shape, b.shape)
    out = Tensor(fwd(a.data, b.data))

    def backward(g):
        if a.requires_grad:
            ga = da(g, a.data, b.data)
            a.accumulate_grad(ga if a.shape == out.shape else np.sum(ga).reshape(a.shape))
        if b.requires_grad:
            gb = db(g, a.data, b.data)
            b.accumulate_grad(gb if b.shape == out.shape else np.sum(gb).reshape(b.shape))

    return record(out, (a, b), backward)


def add(a, b):
    return _binary_elementwise("add", a, b, lambda x, y: x + y,
                               lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary_elementwise("sub", a, b, lambda x, y: x - y,
                               lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary_elementwise("mul", a, b, lambda x, y: x * y,
                               lambda g, x, y: g * y, lambda g, x, y: g * x)


def add_rowwise(x, bias):
    """(n, d) + (d,): explicit row-wise bias add (no general broadcasting)."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError("add_rowwise", x.shape, bias.shape)
    out = Tensor(x.data + bias.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return record(out, (x, bias), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product for 1-D / 2-D operands (vectors treated as rows/columns)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape)
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out2 = a2 @ b2
    if a.ndim == 1 and b.ndim == 1:
        out = Tensor(out2.reshape(()))
    elif a.ndim == 1:
        out = Tensor(out2[0])
    elif b.ndim == 1:
        out = Tensor(out2[:, 0])
    else:
        out = Tensor(out2)

    def backward(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        if a.requires_grad:
            a.accumulate_grad((g2 @ b2.T).reshape(a.shape))
        if b.requires_grad:
            b.accumulate_grad((a2.T @ g2).reshape(b.shape))

    return record(out, (a, b), backward)


def linear(x, weight, bias=None):
    """x @ weight.T (+ bias). weight is (out_dim, in_dim), torch layout."""
    weight = as_tensor(weight)
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = add_rowwise(out, bias) if out.ndim == 2 else add(out, bias)
    return out


def affine(weight, x, bias):
    """Fused weight @ x + bias for a vector x; weight is (out, in)."""
    weight, x, bias = as_tensor(weight), as_tensor(x), as_tensor(bias)
    if (weight.ndim != 2 or x.ndim != 1 or bias.ndim != 1
            or weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]):
        raise ShapeError("affine", weight.shape, x.shape, bias.shape)
    out = Tensor(weight.data @ x.data + bias.data)

    def backward(g):
        if weight.requires_grad:
            weight.accumulate_grad(np.outer(g, x.data))
        if x.requires_grad:
            x.accumulate_grad(weight.data.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g)

    return record(out, (weight, x, bias), backward)


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    out = Tensor(x.data.T)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.T)

    return record(out, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return record(out, (x,), backward)


def permute(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    out = Tensor(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.transpose(g, inverse))

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad((1.0 - y * y) * g)

    return record(out, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    out = Tensor(y)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(y * (1.0 - y) * g)

    return record(out, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # clipping keeps exp in range; saturation beyond |60| is exact in f64
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def softmax(x):
    """Stable softmax over the last axis (1-D or 2-D input)."""
    x = as_tensor(x)
    if x.ndim not in (1, 2):
        raise ShapeError("softmax", x.shape)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def backward(g):
        if x.requires_grad:
            dot = np.sum(g * s, axis=-1, keepdims=True)
            x.accumulate_grad(s * (g - dot))

    return record(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape combinators


def concat(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", ())
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t.accumulate_grad(g[tuple(index)])

    return record(out, tuple(tensors), backward)


def mean_pool(x, axis: int = 0):
    x = as_tensor(x)
    if x.ndim == 0 or axis >= x.ndim:
        raise ShapeError("mean_pool", x.shape)
    out = Tensor(x.data.mean(axis=axis))
    n = x.shape[axis]

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return record(out, (x,), backward)


def take_rows(table, ids):
    """Gather rows of a 2-D table; gradient scatter-adds back."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError("take_rows", table.shape)
    ids = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[ids])

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            table.accumulate_grad(acc)

    return record(out, (table,), backward)


def slice_cols(x, start: int, stop: int):
    """Contiguous column slice of a 2-D tensor."""
    x = as_tensor(x)
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError("slice_cols", x.shape, (start, stop))
    out = Tensor(x.data[:, start:stop].copy())

    def backward(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            acc[:, start:stop] = g
            x.accumulate_grad(acc)

    return record(out, (x,), backward)


def tile_rows(v, n: int):
    """(d,) -> (n, d) by repetition; gradient sums over rows."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError("tile_rows", v.shape)
    out = Tensor(np.tile(v.data, (n, 1)))

    def backward(g):
        if v.requires_grad:
            v.accumulate_grad(g.sum(axis=0))

    return record(out, (v,), backward)


# ---------------------------------------------------------------------------
# reductions and similarity


def tensor_sum(x):
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.sum()))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g)))

    return record(out, (x,), backward)


def mean(x):
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.mean()))
    n = x.size

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g) / n))

    return record(out, (x,), backward)


def cosine(u, v):
    """Cosine similarity of two equal-length vectors; rejects zero norms."""
    u, v = as_tensor(u), as_tensor(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError("cosine", u.shape, v.shape)
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine: zero-norm vector")
    c = float(u.data @ v.data) / (nu * nv)
    out = Tensor(np.asarray(c))

    def backward(g):
        if u.requires_grad:
            u.accumulate_grad(float(g) * (v.data / (nu * nv) - c * u.data / (nu * nu)))
        if v.requires_grad:
            v.accumulate_grad(float(g) * (u.data / (nu * nv) - c * v.data / (nv * nv)))

    return record(out, (u, v), backward)


# ---------------------------------------------------------------------------
# convolution


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D convolution (cross-correlation) on a single image.

    x: (C_in, H, W); kernel: (C_out, C_in, kh, kw); bias: (C_out,) optional.
    Explicit stride and zero padding, each an int or (h, w) pair.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4 or x.shape[0] != kernel.shape[1]:
        raise ShapeError("conv2d", x.shape, kernel.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    c_out, c_in, kh, kw = kernel.shape
    if ph or pw:
        xp = np.zeros((c_in, x.shape[1] + 2 * ph, x.shape[2] + 2 * pw))
        xp[:, ph:ph + x.shape[1], pw:pw + x.shape[2]] = x.data
    else:
        xp = x.data
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", x.shape, kernel.shape)
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (c_in, ho, wo, kh, kw), (s0, s1 * sh, s2 * sw, s1, s2))
    cols = np.ascontiguousarray(windows.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, -1)
    kmat = kernel.data.reshape(c_out, -1)
    out_mat = cols @ kmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv2d", bias.shape, (c_out,))
        out_mat = out_mat + bias.data
    out = Tensor(out_mat.T.reshape(c_out, ho, wo))
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gmat = g.reshape(c_out, ho * wo).T
        if kernel.requires_grad:
            kernel.accumulate_grad((gmat.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = gmat @ kmat
            dwin = dcols.reshape(ho, wo, c_in, kh, kw).transpose(2, 3, 4, 0, 1)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + ho * sh:sh, j:j + wo * sw:sw] += dwin[:, i, j]
            x.accumulate_grad(dxp[:, ph:hp - ph, pw:wp - pw])

    return record(out, parents, backward)


def conv1d_seq(x, kernel, bias=None, padding: int = 0):
    """1-D convolution over a (length, d_in) sequence.

    kernel: (d_out, k, d_in). Returns (length - k + 1 + 2*padding, d_out).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 2 or kernel.ndim != 3 or x.shape[1] != kernel.shape[2]:
        raise ShapeError("conv1d_seq", x.shape, kernel.shape)
    d_out, k, d_in = kernel.shape
    length = x.shape[0]
    if padding:
        xp = np.zeros((length + 2 * padding, d_in))
        xp[padding:padding + length] = x.data
    else:
        xp = x.data
    l_out = xp.shape[0] - k + 1
    if l_out <= 0:
        raise ShapeError("conv1d_seq", x.shape, kernel.shape)
    s0, s1 = xp.strides
    windows = np.lib.stride_tricks.as_strided(xp, (l_out, k, d_in), (s0, s0, s1))
    cols = windows.reshape(l_out, k * d_in)
    kmat = kernel.data.reshape(d_out, k * d_in)
    out_mat = cols @ kmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (d_out,):
            raise ShapeError("conv1d_seq", bias.shape, (d_out,))
        out_mat = out_mat + bias.data
    out = Tensor(out_mat)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        if kernel.requires_grad:
            kernel.accumulate_grad((g.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            dcols = (g @ kmat).reshape(l_out, k, d_in)
            dxp = np.zeros((xp.shape[0], d_in))
            for j in range(k):
                dxp[j:j + l_out] += dcols[:, j]
            x.accumulate_grad(dxp[padding:padding + length])

    return record(out, parents, backward)


# ---------------------------------------------------------------------------
# recurrence


def gru_step(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU cell update for vector input and state.

    Gate layout follows the (reset, update, new) convention: weights are
    (3H, in) / (3H, H) and biases (3H,). Returns the next hidden state (H,).
    """
    x, h = as_tensor(x), as_tensor(h)
    w_ih, w_hh = as_tensor(w_ih), as_tensor(w_hh)
    b_ih, b_hh = as_tensor(b_ih), as_tensor(b_hh)
    hidden = h.shape[0]
    if (x.ndim != 1 or h.ndim != 1 or w_ih.shape != (3 * hidden, x.shape[0])
            or w_hh.shape != (3 * hidden, hidden)
            or b_ih.shape != (3 * hidden,) or b_hh.shape != (3 * hidden,)):
        raise ShapeError("gru_step", x.shape, h.shape, w_ih.shape, w_hh.shape)

    gi = w_ih.data @ x.data + b_ih.data
    gh = w_hh.data @ h.data + b_hh.data
    i_r, i_z, i_n = gi[:hidden], gi[hidden:2 * hidden], gi[2 * hidden:]
    h_r, h_z, h_n = gh[:hidden], gh[hidden:2 * hidden], gh[2 * hidden:]
    r = _sigmoid(i_r + h_r)
    z = _sigmoid(i_z + h_z)
    n = np.tanh(i_n + r * h_n)
    new_h = (1.0 - z) * n + z * h.data
    out = Tensor(new_h)

    def backward(g):
        dn = g * (1.0 - z) * (1.0 - n * n)
        dz = g * (h.data - n) * z * (1.0 - z)
        dr = dn * h_n * r * (1.0 - r)
        da_i = np.concatenate([dr, dz, dn])
        da_h = np.concatenate([dr, dz, dn * r])
        if w_ih.requires_grad:
            w_ih.accumulate_grad(np.outer(da_i, x.data))
        if b_ih.requires_grad:
            b_ih.accumulate_grad(da_i)
        if w_hh.requires_grad:
            w_hh.accumulate_grad(np.outer(da_h, h.data))
        if b_hh.requires_grad:
            b_hh.accumulate_grad(da_h)
        if x.requires_grad:
            x.accumulate_grad(w_ih.data.T @ da_i)
        if h.requires_grad:
            h.accumulate_grad(g * z + w_hh.data.T @ da_h)

    return record(out, (x, h, w_ih, w_hh, b_ih, b_hh), backward)


def gru_sequence(xs, h0, w_ih, w_hh, b_ih, b_hh):
    """Run a GRU over a (T, in) sequence; returns all hidden states (T, H).

    Same cell as `gru_step`, fused over time: input projections are one
    matrix product and the backward pass is hand-written truncated BPTT over
    the stored gate activations.
    """
    xs, h0 = as_tensor(xs), as_tensor(h0)
    w_ih, w_hh = as_tensor(w_ih), as_tensor(w_hh)
    b_ih, b_hh = as_tensor(b_ih), as_tensor(b_hh)
    hidden = h0.shape[0]
    if (xs.ndim != 2 or h0.ndim != 1 or w_ih.shape != (3 * hidden, xs.shape[1])
            or w_hh.shape != (3 * hidden, hidden)
            or b_ih.shape != (3 * hidden,) or b_hh.shape != (3 * hidden,)):
        raise ShapeError("gru_sequence", xs.shape, h0.shape, w_ih.shape, w_hh.shape)
    steps = xs.shape[0]
    gi = xs.data @ w_ih.data.T + b_ih.data
    rs = np.empty((steps, hidden))
    zs = np.empty((steps, hidden))
    ns = np.empty((steps, hidden))
    gh3 = np.empty((steps, hidden))
    hs = np.empty((steps + 1, hidden))
    hs[0] = h0.data
    whd, bhd = w_hh.data, b_hh.data
    for t in range(steps):
        gh = whd @ hs[t] + bhd
        r = _sigmoid(gi[t, :hidden] + gh[:hidden])
        z = _sigmoid(gi[t, hidden:2 * hidden] + gh[hidden:2 * hidden])
        n = np.tanh(gi[t, 2 * hidden:] + r * gh[2 * hidden:])
        rs[t], zs[t], ns[t], gh3[t] = r, z, n, gh[2 * hidden:]
        hs[t + 1] = (1.0 - z) * n + z * hs[t]
    out = Tensor(hs[1:].copy())

    def backward(g):
        da_i = np.empty((steps, 3 * hidden))
        dw_hh = np.zeros_like(whd)
        db_hh = np.zeros_like(bhd)
        dh = np.zeros(hidden)
        for t in range(steps - 1, -1, -1):
            gt = g[t] + dh
            dn = gt * (1.0 - zs[t]) * (1.0 - ns[t] * ns[t])
            dz = gt * (hs[t] - ns[t]) * zs[t] * (1.0 - zs[t])
            dr = dn * gh3[t] * rs[t] * (1.0 - rs[t])
            da_i[t, :hidden] = dr
            da_i[t, hidden:2 * hidden] = dz
            da_i[t, 2 * hidden:] = dn * rs[t]
            dw_hh += np.outer(da_i[t], hs[t])
            db_hh += da_i[t]
            dh = gt * zs[t] + whd.T @ da_i[t]
            da_i[t, 2 * hidden:] = dn  # input side sees dn without the reset gate
        if w_ih.requires_grad:
            w_ih.accumulate_grad(da_i.T @ xs.data)
        if b_ih.requires_grad:
            b_ih.accumulate_grad(da_i.sum(axis=0))
        if w_hh.requires_grad:
            w_hh.accumulate_grad(dw_hh)
        if b_hh.requires_grad:
            b_hh.accumulate_grad(db_hh)
        if xs.requires_grad:
            xs.accumulate_grad(da_i @ w_ih.data)
        if h0.requires_grad:
            h0.accumulate_grad(dh)

    return record(out, (xs, h0, w_ih, w_hh, b_ih, b_hh), backward)


# ---------------------------------------------------------------------------
# fused losses


def mse(pred, target):
    """Mean squared error against a constant target array."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target
    out = Tensor(np.asarray(np.mean(diff * diff)))

    def backward(g):
        if pred.requires_grad:
            pred.accumulate_grad(float(g) * 2.0 * diff / diff.size)

    return record(out, (pred,), backward)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy from logits against constant 0/1 targets."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ShapeError("bce_with_logits", logits.shape, targets.shape)
    z = logits.data
    loss = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(loss.mean()))

    def backward(g):
        if logits.requires_grad:
            logits.accumulate_grad(float(g) * (_sigmoid(z) - targets) / z.size)

    return record(out, (logits,), backward)


def cross_entropy_logits(logits, target_index: int):
    """Negative log-softmax probability of one class (1-D logits)."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError("cross_entropy_logits", logits.shape)
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = Tensor(np.asarray(lse - z[target_index]))

    def backward(g):
        if logits.requires_grad:
            p = np.exp(z - lse)
            p[target_index] -= 1.0
            logits.accumulate_grad(float(g) * p)

    return record(out, (logits,), backward)
