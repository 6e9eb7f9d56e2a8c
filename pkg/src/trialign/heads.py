"""Two-layer projection head: LayerNorm -> exact-erf GELU -> dropout -> linear.

The head maps frozen-encoder outputs into the shared alignment space:

    h = LayerNorm_affine(x @ W1.T + b1)     (eps inside the sqrt, biased var)
    u = Dropout_p(GELU(h))                  (inverted dropout, kept units / (1-p))
    z = u @ W2.T + b2

The hidden width is tied to the output dim: m = max(3*d_out, 768). All
gradients are exact analytic derivatives, including the LayerNorm Jacobian's
mean/variance terms and the erf-form GELU derivative; the dropout mask is
replayed from the forward cache.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy.special import erf

from .exceptions import ConfigError, ShapeError, StateError

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / sqrt(2.0)
_INV_SQRT2PI = 1.0 / sqrt(2.0 * np.pi)

PARAM_NAMES = ("W1", "b1", "ln_gain", "ln_bias", "W2", "b2")


def hidden_dim(d_out: int) -> int:
    """Hidden width rule for the projection head."""
    return max(3 * d_out, 768)


@dataclass
class ProjectionHead:
    W1: np.ndarray
    b1: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    dropout_rate: float
    d_in: int
    m: int
    d_out: int
    version: int = 0

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        """Replace parameter tensors; invalidates outstanding forward caches."""
        for name in PARAM_NAMES:
            current = getattr(self, name)
            new = params[name]
            if new.shape != current.shape:
                raise ShapeError(f"{name}: expected shape {current.shape}, got {new.shape}")
            setattr(self, name, np.asarray(new, dtype=current.dtype))
        self.version += 1

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(
            self.W1.copy(), self.b1.copy(), self.ln_gain.copy(), self.ln_bias.copy(),
            self.W2.copy(), self.b2.copy(), self.dropout_rate, self.d_in, self.m,
            self.d_out, self.version,
        )


@dataclass
class HeadGradients:
    W1: np.ndarray
    b1: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass
class ForwardCache:
    x: np.ndarray
    x_hat: np.ndarray
    inv_std: np.ndarray
    h: np.ndarray
    gelu_h: np.ndarray
    u: np.ndarray
    mask: np.ndarray | None
    mode: str
    version: int


def init_head(d_in: int, d_out: int, dropout_rate: float = 0.1, seed: int = 0,
              dtype=np.float32) -> ProjectionHead:
    """Scaled-uniform fan-in init (bound 1/sqrt(fan_in)); biases zero, gain one."""
    if d_in < 1 or d_out < 1:
        raise ConfigError(f"dims must be >= 1, got d_in={d_in}, d_out={d_out}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    m = hidden_dim(d_out)
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-1.0 / sqrt(d_in), 1.0 / sqrt(d_in), size=(m, d_in))
    w2 = rng.uniform(-1.0 / sqrt(m), 1.0 / sqrt(m), size=(d_out, m))
    return ProjectionHead(
        W1=w1.astype(dtype),
        b1=np.zeros(m, dtype=dtype),
        ln_gain=np.ones(m, dtype=dtype),
        ln_bias=np.zeros(m, dtype=dtype),
        W2=w2.astype(dtype),
        b2=np.zeros(d_out, dtype=dtype),
        dropout_rate=float(dropout_rate),
        d_in=d_in,
        m=m,
        d_out=d_out,
    )


def gelu(h: np.ndarray) -> np.ndarray:
    return 0.5 * h * (1.0 + erf(h * _INV_SQRT2))


def gelu_grad(h: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(h * _INV_SQRT2)) + h * _INV_SQRT2PI * np.exp(-0.5 * h * h)


def forward(head: ProjectionHead, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Project a batch; returns (z, cache). Train mode applies inverted dropout."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=head.W1.dtype)
    if x.ndim != 2 or x.shape[1] != head.d_in:
        raise ShapeError(f"expected input of shape (N, {head.d_in}), got {x.shape}")

    a = x @ head.W1.T + head.b1
    mu = a.mean(axis=1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=a.dtype))
    x_hat = (a - mu) * inv_std
    h = head.ln_gain * x_hat + head.ln_bias
    g = gelu(h)

    mask = None
    if mode == "train" and head.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("train-mode forward with dropout requires an rng")
        keep = 1.0 - head.dropout_rate
        mask = (rng.random(g.shape) < keep).astype(g.dtype) / np.asarray(keep, dtype=g.dtype)
        u = g * mask
    else:
        u = g

    z = u @ head.W2.T + head.b2
    cache = ForwardCache(x=x, x_hat=x_hat, inv_std=inv_std, h=h, gelu_h=g, u=u,
                         mask=mask, mode=mode, version=head.version)
    return z, cache


def backward(head: ProjectionHead, cache: ForwardCache,
             d_z: np.ndarray) -> tuple[HeadGradients, np.ndarray]:
    """Exact gradients of the forward composition w.r.t. parameters and input."""
    if cache.version != head.version:
        raise StateError("stale cache: head parameters changed since forward")
    d_z = np.asarray(d_z, dtype=head.W1.dtype)
    if d_z.shape != (cache.x.shape[0], head.d_out):
        raise ShapeError(
            f"expected upstream gradient of shape ({cache.x.shape[0]}, {head.d_out}), "
            f"got {d_z.shape}"
        )

    d_w2 = d_z.T @ cache.u
    d_b2 = d_z.sum(axis=0)
    d_u = d_z @ head.W2

    d_gelu = d_u * cache.mask if cache.mask is not None else d_u
    d_h = d_gelu * gelu_grad(cache.h)

    d_gain = (d_h * cache.x_hat).sum(axis=0)
    d_bias = d_h.sum(axis=0)

    # LayerNorm Jacobian: d_a = inv_std * (d_xhat - mean(d_xhat) - x_hat * mean(d_xhat * x_hat))
    d_xhat = d_h * head.ln_gain
    mean_dxhat = d_xhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (d_xhat * cache.x_hat).mean(axis=1, keepdims=True)
    d_a = cache.inv_std * (d_xhat - mean_dxhat - cache.x_hat * mean_dxhat_xhat)

    d_w1 = d_a.T @ cache.x
    d_b1 = d_a.sum(axis=0)
    d_x = d_a @ head.W1

    grads = HeadGradients(W1=d_w1, b1=d_b1, ln_gain=d_gain, ln_bias=d_bias,
                          W2=d_w2, b2=d_b2)
    return grads, d_x
