"""A small tanh multilayer perceptron with exact reverse-mode gradients.

Weights are stored as ``(out, in)`` matrices.  ``forward`` and ``backward``
accept a single input vector or a batch (rows are samples); parameter
gradients are summed over the batch.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "resdob.mlp"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(ValueError):
    """Raised when an update would write NaN/inf into the parameters."""


@dataclass
class Gradients:
    weights: list
    biases: list
    input_grad: np.ndarray

    def global_norm(self):
        total = 0.0
        for g in self.weights:
            total += float(np.sum(g * g))
        for g in self.biases:
            total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def scale(self, factor):
        self.weights = [g * factor for g in self.weights]
        self.biases = [g * factor for g in self.biases]
        return self

    def is_finite(self):
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)

    def flat(self):
        return np.concatenate([g.ravel() for g in self.weights] + [g.ravel() for g in self.biases])


class Mlp:
    """Fully connected network: tanh on hidden layers, identity on the output."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ValueError(f"layer_sizes must hold >= 2 positive ints, got {layer_sizes!r}")
        if len(weights) != len(self.layer_sizes) - 1 or len(biases) != len(weights):
            raise ValueError("one weight matrix and bias vector per layer transition expected")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match {expected}")

    @classmethod
    def init(cls, layer_sizes, rng, zero_output=False):
        """Glorot-uniform weights, zero biases; optionally a zero output layer."""
        sizes = tuple(int(n) for n in layer_sizes)
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            if zero_output and i == len(sizes) - 2:
                w = np.zeros_like(w)
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def copy(self):
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        return self.weights + self.biases

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_in:
            raise ValueError(f"input of shape {x.shape} does not match input width {self.n_in}")
        return x

    def forward(self, x):
        x = self._check_input(x)
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
        return a

    def forward_cached(self, x):
        """Forward pass that also returns the activations needed by ``backward``."""
        x = self._check_input(x)
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
            acts.append(a)
        return a, acts

    def backward(self, x, output_grad, cache=None):
        """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input."""
        if cache is None:
            _, cache = self.forward_cached(x)
        out_shape = cache[-1].shape
        delta = np.asarray(output_grad, dtype=float)
        if delta.shape != out_shape:
            raise ValueError(f"output_grad shape {delta.shape} does not match output {out_shape}")
        batched = delta.ndim == 2
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        for i in range(n_layers - 1, -1, -1):
            a_prev = cache[i]
            if batched:
                gw[i] = delta.T @ a_prev
                gb[i] = delta.sum(axis=0)
            else:
                gw[i] = np.outer(delta, a_prev)
                gb[i] = delta.copy()
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (1.0 - a_prev * a_prev)
        return Gradients(gw, gb, delta)

    def input_jacobian(self, x, rows=None):
        """Jacobian d output / d input at a single input (optionally only some output rows)."""
        x = self._check_input(x)
        if x.ndim != 1:
            raise ValueError("input_jacobian expects a single input vector")
        rows = range(self.n_out) if rows is None else list(rows)
        eye = np.zeros((len(rows), self.n_out))
        for k, r in enumerate(rows):
            eye[k, r] = 1.0
        xb = np.broadcast_to(x, (len(rows), self.n_in))
        return self.backward(xb, eye).input_grad

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    # checkpoint helpers -------------------------------------------------
    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": "tanh",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not an MLP checkpoint (format={data.get('format')!r})")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported MLP checkpoint version {data.get('version')!r}")
        return cls(data["layer_sizes"], data["weights"], data["biases"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(net, x):
    return net.forward(x)


def backward(net, x, output_grad):
    return net.backward(x, output_grad)


def sgd_step(net, grads, learning_rate):
    """Plain gradient descent, ``theta <- theta - lr * grad``; mutates and returns ``net``."""
    if not learning_rate > 0.0:
        raise ValueError("learning_rate must be positive")
    if not grads.is_finite():
        raise NonFiniteGradientError("non-finite gradient; step rejected")
    for w, g in zip(net.weights, grads.weights):
        w -= learning_rate * g
    for b, g in zip(net.biases, grads.biases):
        b -= learning_rate * g
    return net


class Adam:
    """Adam moments over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient; Adam step rejected")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference_check(net, x, output_grad, h=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    Covers every weight, bias and input entry of ``net`` for the scalar
    ``sum(net(x) * output_grad)``.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(output_grad, dtype=float)
    analytic = net.backward(x, g)

    def loss():
        return float(np.sum(net.forward(x) * g))

    worst = 0.0
    for params, grads in ((net.weights, analytic.weights), (net.biases, analytic.biases)):
        for p, gp in zip(params, grads):
            flat = p.reshape(-1)
            num = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss()
                flat[i] = orig - h
                down = loss()
                flat[i] = orig
                num[i] = (up - down) / (2.0 * h)
            worst = max(worst, float(relative_error(gp.reshape(-1), num).max()))
    xf = x.reshape(-1).copy()
    num = np.empty(xf.size)
    for i in range(xf.size):
        xp = xf.copy()
        xp[i] += h
        xm = xf.copy()
        xm[i] -= h
        up = float(np.sum(net.forward(xp.reshape(x.shape)) * g))
        down = float(np.sum(net.forward(xm.reshape(x.shape)) * g))
        num[i] = (up - down) / (2.0 * h)
    worst = max(worst, float(relative_error(analytic.input_grad.reshape(-1), num).max()))
    return worst


def gradcheck(n_nets=50, seed=0, h=1e-5, max_hidden_layers=3, max_width=32):
    """Finite-difference check over ``n_nets`` randomly shaped nets.

    Returns the list of per-net worst relative errors.
    """
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_nets):
        depth = int(rng.integers(0, max_hidden_layers + 1))
        sizes = [int(rng.integers(1, 9))]
        sizes += [int(rng.integers(1, max_width + 1)) for _ in range(depth)]
        sizes.append(int(rng.integers(1, 9)))
        net = Mlp.init(sizes, rng)
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=sizes[0])
        g = rng.normal(size=sizes[-1])
        errors.append(finite_difference_check(net, x, g, h=h))
    return errors
