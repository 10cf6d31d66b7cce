"""Dense kernels shared by the layer, the verifier and the trainer."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError

LN2 = float(np.log(2.0))


class Activation(enum.Enum):
    TANH = "tanh"
    IDENTITY = "identity"

    @property
    def lipschitz(self) -> float:
        return 1.0

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def apply_activation(act: Activation, u: np.ndarray) -> np.ndarray:
    if act is Activation.IDENTITY:
        return np.array(u, dtype=np.float64, copy=True)
    return np.tanh(u)


def activation_slope(act: Activation, u: np.ndarray) -> np.ndarray:
    if act is Activation.IDENTITY:
        return np.ones_like(u, dtype=np.float64)
    t = np.tanh(u)
    return 1.0 - t * t


def activation_integral(act: Activation, a: np.ndarray) -> np.ndarray:
    """Elementwise antiderivative of the activation that vanishes at 0.

    For tanh this is ``log cosh(a)``, evaluated without overflow.
    """
    a = np.asarray(a, dtype=np.float64)
    if act is Activation.IDENTITY:
        return 0.5 * a * a
    x = np.abs(a)
    return x + np.log1p(np.exp(-2.0 * x)) - LN2


@dataclass(frozen=True)
class VarNorm:
    """Mean-free variance normalization applied row-wise to edge features.

    ``norm(v) = v / sqrt(Var(v) + eps) * gamma`` where the variance is taken
    over the channels of each row and the mean is *not* subtracted from ``v``.
    """

    gamma: np.ndarray
    epsilon: float = 1e-5
    enabled: bool = True

    @classmethod
    def disabled(cls, h: int) -> "VarNorm":
        return cls(np.ones(h), enabled=False)

    def with_gamma(self, gamma: np.ndarray) -> "VarNorm":
        return replace(self, gamma=gamma)


def _row_scale(vn: VarNorm, u: np.ndarray) -> np.ndarray:
    h = u.shape[1]
    mean = u.mean(axis=1)
    var = np.einsum("ij,ij->i", u, u) / h - mean * mean
    # the one-pass formula can dip below zero by rounding
    return (1.0 / np.sqrt(np.maximum(var, 0.0) + vn.epsilon))[:, None]


def var_normalize(vn: VarNorm, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if not vn.enabled:
        return u.copy()
    if u.shape[1] != vn.gamma.shape[0]:
        raise ShapeError(f"gamma has {vn.gamma.shape[0]} channels, input has {u.shape[1]}")
    if u.shape[0] == 0:
        return u.copy()
    return u * _row_scale(vn, u) * vn.gamma


def var_normalize_backward(vn: VarNorm, u: np.ndarray, grad_out: np.ndarray):
    """Vector-Jacobian product of :func:`var_normalize`.

    Returns ``(grad_u, grad_gamma)``; ``grad_gamma`` is zero when disabled.
    """
    if not vn.enabled:
        return grad_out.copy(), np.zeros_like(vn.gamma)
    if u.shape[0] == 0:
        return np.zeros_like(u), np.zeros_like(vn.gamma)
    h = u.shape[1]
    s = _row_scale(vn, u)
    grad_gamma = np.sum(grad_out * u * s, axis=0)
    gg = grad_out * vn.gamma
    centered = u - u.mean(axis=1, keepdims=True)
    dot = np.sum(gg * u, axis=1, keepdims=True)
    grad_u = gg * s - (s ** 3) * dot * centered / h
    return grad_u, grad_gamma


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def init_diffusion_matrix(rng: np.random.Generator, h: int, target_norm: float = 0.5) -> np.ndarray:
    """Uniform square matrix rescaled so its spectral norm equals ``target_norm``."""
    k = rng.uniform(-1.0, 1.0, size=(h, h))
    norm = np.linalg.norm(k, 2)
    if norm == 0.0:
        return k
    return k * (target_norm / norm)
