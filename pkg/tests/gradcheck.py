"""Finite-difference gradient oracle and a random-graph builder.

The oracle is independent of the reverse-mode path it checks: it re-evaluates
the forward function at perturbed parameter values and forms central
differences.
"""

from __future__ import annotations

import numpy as np

from itts import numerics as N


def finite_difference_grad(fn, tensors, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar fn() w.r.t. each tensor's data."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Vector-norm relative error, robust to near-zero gradients."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(build_loss, leaves, h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of build_loss() with the FD oracle.

    `build_loss` must return a scalar Tensor computed from `leaves` (tensors
    with requires_grad=True). Returns the max relative error over leaves.
    """
    for leaf in leaves:
        leaf.zero_grad()
    with N.autograd():
        loss = build_loss()
    loss.backward()
    analytic = [leaf.grad.copy() for leaf in leaves]
    numeric = finite_difference_grad(lambda: build_loss().item(), leaves, h=h)
    return max(relative_grad_error(a, n) for a, n in zip(analytic, numeric))


def random_graph(rng: np.random.Generator):
    """A random scalar-valued graph over the primitive op set (dims <= 8).

    Returns (build_loss, leaves). Rebuilding the loss re-reads the leaves'
    current data, which is what the finite-difference oracle perturbs.
    """
    d = int(rng.integers(2, 9))
    kind = rng.choice([
        "chain", "matmul", "concat_pool", "conv", "gru", "cosine", "softmax",
    ])
    if kind == "chain":
        x = N.Tensor(rng.normal(size=d), requires_grad=True)
        y = N.Tensor(rng.normal(size=d), requires_grad=True)
        w = rng.normal(size=d)

        def build():
            z = N.tanh(N.add(N.mul(x, y), x))
            return N.tensor_sum(N.mul(N.sigmoid(z), w))

        return build, [x, y]
    if kind == "matmul":
        m, k, n = (int(v) for v in rng.integers(2, 9, size=3))
        a = N.Tensor(rng.normal(size=(m, k)), requires_grad=True)
        b = N.Tensor(rng.normal(size=(k, n)), requires_grad=True)
        w = rng.normal(size=(m, n))

        def build():
            return N.tensor_sum(N.mul(N.tanh(N.matmul(a, b)), w))

        return build, [a, b]
    if kind == "concat_pool":
        a = N.Tensor(rng.normal(size=(3, d)), requires_grad=True)
        b = N.Tensor(rng.normal(size=(2, d)), requires_grad=True)
        w = rng.normal(size=d)

        def build():
            pooled = N.mean_pool(N.concat([a, b], axis=0), axis=0)
            return N.tensor_sum(N.mul(pooled, w))

        return build, [a, b]
    if kind == "conv":
        c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h_img, w_img = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        stride = int(rng.integers(1, 3))
        x = N.Tensor(rng.normal(size=(c_in, h_img, w_img)), requires_grad=True)
        k = N.Tensor(rng.normal(size=(c_out, c_in, 3, 3)), requires_grad=True)
        bias = N.Tensor(rng.normal(size=c_out), requires_grad=True)

        def build():
            return N.mean(N.tanh(N.conv2d(x, k, bias=bias, stride=stride, padding=1)))

        return build, [x, k, bias]
    if kind == "gru":
        d_in, hidden = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        x = N.Tensor(rng.normal(size=d_in), requires_grad=True)
        h0 = N.Tensor(rng.normal(size=hidden), requires_grad=True)
        w_ih = N.Tensor(rng.normal(size=(3 * hidden, d_in)), requires_grad=True)
        w_hh = N.Tensor(rng.normal(size=(3 * hidden, hidden)), requires_grad=True)
        b_ih = N.Tensor(rng.normal(size=3 * hidden), requires_grad=True)
        b_hh = N.Tensor(rng.normal(size=3 * hidden), requires_grad=True)
        w = rng.normal(size=hidden)

        def build():
            h1 = N.gru_step(x, h0, w_ih, w_hh, b_ih, b_hh)
            h2 = N.gru_step(x, h1, w_ih, w_hh, b_ih, b_hh)
            return N.tensor_sum(N.mul(h2, w))

        return build, [x, h0, w_ih, w_hh, b_ih, b_hh]
    if kind == "cosine":
        u = N.Tensor(rng.normal(size=d) + 0.5, requires_grad=True)
        v = N.Tensor(rng.normal(size=d) + 0.5, requires_grad=True)

        def build():
            return N.cosine(N.tanh(u), N.sigmoid(v))

        return build, [u, v]
    # softmax attention over a small memory
    q = N.Tensor(rng.normal(size=d), requires_grad=True)
    mem = N.Tensor(rng.normal(size=(4, d)), requires_grad=True)
    w = rng.normal(size=d)

    def build():
        scores = N.matmul(mem, q)
        weights = N.softmax(scores)
        mix = N.matmul(weights, mem)
        return N.tensor_sum(N.mul(mix, w))

    return build, [q, mem]
