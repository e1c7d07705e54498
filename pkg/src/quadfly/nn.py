"""Dense feed-forward networks with hand-written backprop and Adam.

All parameters of a network live in one flat array; the per-layer weight
matrices and bias vectors are views into it. That keeps optimizer steps,
Polyak averaging and checkpointing to single vector operations.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, y, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1 - y * y)
    return g


class Mlp:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]``."""

    def __init__(self, sizes, hidden="relu", output="identity", rng=None, dtype=np.float32):
        if hidden not in ACTIVATIONS or output not in ACTIVATIONS:
            raise ValueError(f"activations must be one of {ACTIVATIONS}")
        self.sizes = tuple(int(s) for s in sizes)
        self.hidden = hidden
        self.output = output
        self.dtype = np.dtype(dtype)
        n = sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        self.params = np.zeros(n, dtype=self.dtype)
        self.weights, self.biases = self._views(self.params)
        if rng is not None:
            self.init(rng)

    def _views(self, flat):
        ws, bs = [], []
        off = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            ws.append(flat[off:off + i * o].reshape(i, o))
            off += i * o
            bs.append(flat[off:off + o])
            off += o
        return ws, bs

    def init(self, rng) -> None:
        for W, b in zip(self.weights, self.biases):
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    @property
    def n_params(self) -> int:
        return self.params.size

    def descriptor(self) -> dict:
        return {"sizes": list(self.sizes), "hidden": self.hidden, "output": self.output}

    def copy(self) -> Mlp:
        other = Mlp(self.sizes, self.hidden, self.output, dtype=self.dtype)
        other.params[...] = self.params
        return other

    def _check(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input of shape (B, {self.sizes[0]}), got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check(x)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = _act(self.output if k == last else self.hidden, h @ W + b)
        return h

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass that also returns what ``backward`` needs."""
        h = self._check(x)
        cache = [h]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = _act(self.output if k == last else self.hidden, z)
            cache.append((z, h))
        return h, cache

    def backward(self, cache, grad_out, need_input_grad=False):
        """Reverse-mode gradients for upstream gradient ``grad_out``.

        Returns ``(grad_params, grad_input)``; ``grad_params`` is flat and
        aligned with ``self.params``. ``grad_input`` is ``None`` unless
        requested.
        """
        grad_out = np.asarray(grad_out, dtype=self.dtype)
        out = cache[-1][1]
        if grad_out.shape != out.shape:
            raise ValueError(f"upstream gradient shape {grad_out.shape} != output shape {out.shape}")
        grads = np.empty_like(self.params)
        gws, gbs = self._views(grads)
        g = grad_out
        last = len(self.weights) - 1
        for k in range(last, -1, -1):
            z, y = cache[k + 1]
            g = _act_grad(self.output if k == last else self.hidden, z, y, g)
            a = cache[k] if k == 0 else cache[k][1]
            np.matmul(a.T, g, out=gws[k])
            np.sum(g, axis=0, out=gbs[k])
            if k > 0 or need_input_grad:
                g = g @ self.weights[k].T
        return grads, (g if need_input_grad else None)


class Adam:
    """Bias-corrected adaptive-moment optimizer over a flat parameter array."""

    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape does not match optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grads
        self.v *= b2
        self.v += (1 - b2) * grads * grads
        step = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        params -= (step * self.m / (np.sqrt(self.v) + self.eps * np.sqrt(1 - b2**self.t))).astype(params.dtype)
