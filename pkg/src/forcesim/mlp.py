"""Small fully-connected networks on numpy, with the training bits we need.

Nothing clever: tanh hidden layers, linear output, mean-squared-error loss,
plain SGD with momentum. Gradients are hand-derived and verified against
central finite differences (see :func:`gradient_check`), which is the reason
this is hand-rolled rather than pulled from a framework.

Model files
-----------
``NormalizedMLP.save`` writes a single self-describing binary:

    offset  size  content
    0       8     magic ``b"FSMLP01\\0"``
    8       4     uint32 little-endian header length N
    12      N     UTF-8 JSON header: {"sizes", "activation",
                  "in_norm": {"lo", "hi"} | null,
                  "out_norm": {"lo", "hi"} | null, "meta": {...}}
    12+N    ...   parameters as little-endian float32, layer by layer:
                  W1 row-major (fan_out x fan_in), b1, W2, b2, ...

Parameters are float64 in memory and cast to float32 on save, so a
save/load round trip quantizes; loads are exact thereafter.
"""

from __future__ import annotations

import json
import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

MAGIC = b"FSMLP01\x00"
assert len(MAGIC) == 8


class ModelFormatError(Exception):
    """Model file is not in the documented container format."""


class Normalizer:
    """Per-feature affine map of [lo, hi] onto [-1, 1]."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64).ravel()
        self.hi = np.asarray(hi, dtype=np.float64).ravel()
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi shape mismatch")
        span = self.hi - self.lo
        # Constant features map to 0 instead of dividing by zero.
        self._scale = np.where(span > 0.0, 2.0 / np.where(span > 0.0, span, 1.0), 0.0)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(self._scale > 0.0, (x - self.lo) * self._scale - 1.0,
                        0.0)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        out = np.where(self._scale > 0.0,
                       (y + 1.0) / np.where(self._scale > 0.0, self._scale, 1.0) + self.lo,
                       self.lo)
        return out

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @staticmethod
    def from_json(d: Optional[dict]) -> Optional["Normalizer"]:
        if d is None:
            return None
        return Normalizer(d["lo"], d["hi"])

    @staticmethod
    def from_data(x: np.ndarray, pad: float = 1e-9) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        return Normalizer(x.min(axis=0) - pad, x.max(axis=0) + pad)


class MLP:
    """Tanh hidden layers, linear output. Batched forward/backward."""

    def __init__(self, sizes: Sequence[int], seed: int = 0):
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = [int(s) for s in sizes]
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            # Xavier-uniform suits tanh.
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound,
                                            size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cache(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return y if np.asarray(x).ndim > 1 else y[0]

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping activations for backprop. x: (B, in)."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.weights[i].T + self.biases[i]
            h = np.tanh(z) if i < self.n_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out: np.ndarray):
        """Backprop ``d_out = dL/dy`` through the cached activations.

        Returns (grads_w, grads_b, dL/dx).
        """
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        delta = d_out
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                # act[i+1] = tanh(z); d tanh = 1 - tanh^2.
                delta = delta * (1.0 - acts[i + 1] ** 2)
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return grads_w, grads_b, delta


def mse_loss_and_grads(model: MLP, x: np.ndarray, y: np.ndarray):
    """Mean over batch and channels of squared error, plus param grads."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    pred, acts = model.forward_cache(x)
    err = pred - y
    loss = float(np.mean(err ** 2))
    d_out = 2.0 * err / err.size
    grads_w, grads_b, _ = model.backward(acts, d_out)
    return loss, grads_w, grads_b


class SGDMomentum:
    """Classic momentum: v <- mu v - lr g; p <- p + v."""

    def __init__(self, model: MLP, lr: float = 1e-3, momentum: float = 0.9):
        if lr <= 0.0 or not (0.0 <= momentum < 1.0):
            raise ValueError("need lr > 0 and momentum in [0, 1)")
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self._vel_w = [np.zeros_like(w) for w in model.weights]
        self._vel_b = [np.zeros_like(b) for b in model.biases]

    def step(self, grads_w, grads_b) -> None:
        for i in range(self.model.n_layers):
            self._vel_w[i] = self.momentum * self._vel_w[i] - self.lr * grads_w[i]
            self._vel_b[i] = self.momentum * self._vel_b[i] - self.lr * grads_b[i]
            self.model.weights[i] += self._vel_w[i]
            self.model.biases[i] += self._vel_b[i]


class Adam:
    """Adam (Kingma & Ba): per-parameter adaptive steps with bias
    correction. Useful when the inputs are strongly correlated and plain
    momentum stalls on the ill-conditioned directions."""

    def __init__(self, model: MLP, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0 or not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0):
            raise ValueError("need lr > 0 and betas in [0, 1)")
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._t = 0
        self._m_w = [np.zeros_like(w) for w in model.weights]
        self._v_w = [np.zeros_like(w) for w in model.weights]
        self._m_b = [np.zeros_like(b) for b in model.biases]
        self._v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, grads_w, grads_b) -> None:
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for i in range(self.model.n_layers):
            for m, v, g, p in (
                    (self._m_w[i], self._v_w[i], grads_w[i],
                     self.model.weights[i]),
                    (self._m_b[i], self._v_b[i], grads_b[i],
                     self.model.biases[i])):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def gradient_check(model: MLP, x: np.ndarray, y: np.ndarray,
                   n_samples: int = 60, eps: float = 1e-6,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter of small models; for larger ones, a random
    sample of ``n_samples`` coordinates per layer tensor.
    """
    _, grads_w, grads_b = mse_loss_and_grads(model, x, y)
    rng = np.random.default_rng(seed)

    def loss_only():
        l, _, _ = mse_loss_and_grads(model, x, y)
        return l

    worst = 0.0
    for tensor, grad in list(zip(model.weights, grads_w)) + \
            list(zip(model.biases, grads_b)):
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        if flat.size <= n_samples:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_only()
            flat[j] = orig - eps
            lm = loss_only()
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(numeric), abs(gflat[j]), 1e-8)
            worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst


class NormalizedMLP:
    """MLP plus input/output normalizers, saved as one container file."""

    def __init__(self, mlp: MLP, in_norm: Optional[Normalizer] = None,
                 out_norm: Optional[Normalizer] = None, meta: Optional[dict] = None):
        self.mlp = mlp
        self.in_norm = in_norm
        self.out_norm = out_norm
        self.meta = dict(meta or {})

    def predict(self, x: np.ndarray) -> np.ndarray:
        xn = self.in_norm.transform(x) if self.in_norm else np.asarray(x, dtype=np.float64)
        yn = self.mlp.forward(xn)
        return self.out_norm.inverse(yn) if self.out_norm else yn

    def save(self, path) -> None:
        header = {
            "sizes": self.mlp.sizes,
            "activation": "tanh",
            "in_norm": self.in_norm.to_json() if self.in_norm else None,
            "out_norm": self.out_norm.to_json() if self.out_norm else None,
            "meta": self.meta,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        chunks = [MAGIC, struct.pack("<I", len(blob)), blob]
        for w, b in zip(self.mlp.weights, self.mlp.biases):
            chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))

    @staticmethod
    def load(path) -> "NormalizedMLP":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != MAGIC:
            raise ModelFormatError(f"{path}: bad magic")
        (hlen,) = struct.unpack("<I", raw[8:12])
        try:
            header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"{path}: corrupt header: {e}") from e
        sizes = header["sizes"]
        model = MLP(sizes, seed=0)
        offset = 12 + hlen
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            n_w, n_b = fan_out * fan_in, fan_out
            end = offset + 4 * (n_w + n_b)
            if end > len(raw):
                raise ModelFormatError(f"{path}: truncated parameter blob")
            w = np.frombuffer(raw, dtype="<f4", count=n_w, offset=offset)
            b = np.frombuffer(raw, dtype="<f4", count=n_b,
                              offset=offset + 4 * n_w)
            model.weights[i] = w.astype(np.float64).reshape(fan_out, fan_in)
            model.biases[i] = b.astype(np.float64)
            offset = end
        if offset != len(raw):
            raise ModelFormatError(f"{path}: trailing bytes in parameter blob")
        return NormalizedMLP(model,
                             Normalizer.from_json(header.get("in_norm")),
                             Normalizer.from_json(header.get("out_norm")),
                             header.get("meta"))
