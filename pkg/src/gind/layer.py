"""Implicit nonlinear diffusion layer.

The layer output is the equilibrium ``Z`` of

    Z = -Ĝᵀ σ(N(Ĝ (Z + B) Kᵀ)) K

where ``Ĝ`` is the normalized incidence operator, ``N`` an optional variance
normalization and ``σ`` an odd, monotone, 1-Lipschitz activation.  The
equilibrium is found by damped fixed-point iteration, optionally composed
with one gradient step on a feature regularizer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError, ShapeError
from .graph import OrientedIncidence, apply_div, apply_grad, matrix_norm
from .linalg import (
    Activation,
    VarNorm,
    activation_slope,
    apply_activation,
    var_normalize,
    var_normalize_backward,
)


class Regularizer(enum.Enum):
    NONE = "none"
    LAPLACIAN = "laplacian"
    DECORRELATION = "decorrelation"

    @classmethod
    def parse(cls, value) -> "Regularizer":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class LayerParams:
    K: np.ndarray
    var_norm: VarNorm
    activation: Activation = Activation.TANH
    spectral_cap: float = 0.95

    def __post_init__(self):
        k = np.asarray(self.K, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ShapeError(f"K must be square, got shape {k.shape}")
        if not 0.0 < self.spectral_cap < 1.0:
            raise ConfigError(f"spectral_cap must lie in (0, 1), got {self.spectral_cap}")
        object.__setattr__(self, "K", k)

    @property
    def hidden(self) -> int:
        return self.K.shape[0]

    @classmethod
    def plain(cls, K, activation=Activation.TANH, spectral_cap: float = 0.95) -> "LayerParams":
        """Layer without variance normalization."""
        K = np.asarray(K, dtype=np.float64)
        return cls(K, VarNorm.disabled(K.shape[0]), Activation.parse(activation), spectral_cap)


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.8
    tol: float = 1e-6
    max_iter: int = 50
    reg: Regularizer = Regularizer.NONE
    eta: float = 0.0
    phantom_steps: int = 4
    warm_start: bool = False
    divergence_threshold: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "reg", Regularizer.parse(self.reg))
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.tol > 0.0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.eta < 0.0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.phantom_steps < 1:
            raise ConfigError(f"phantom_steps must be >= 1, got {self.phantom_steps}")


@dataclass
class EquilibriumState:
    z_star: np.ndarray
    residuals: list[float] = field(default_factory=list)
    # absolute step sizes ||z_{k+1} - z_k||_F, used for contraction diagnostics
    step_norms: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def contraction_ratios(self) -> np.ndarray:
        s = np.asarray(self.step_norms)
        if len(s) < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = s[1:] / s[:-1]
        return r[np.isfinite(r)]


class FluxCache(NamedTuple):
    w: np.ndarray  # Ĝ(Z + B), m x h
    u: np.ndarray  # W Kᵀ, pre-normalization
    n: np.ndarray  # normalized pre-activation
    s: np.ndarray  # σ(n)


def _check_finite(x: np.ndarray, what: str, **context):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}", **context)


def flux_forward(inc: OrientedIncidence, params: LayerParams, z: np.ndarray, b: np.ndarray):
    """Evaluate the flux map and keep the intermediates needed for its adjoint."""
    if z.shape != b.shape or z.shape[0] != inc.num_nodes or z.shape[1] != params.hidden:
        raise ShapeError(
            f"flux map expects z and b of shape ({inc.num_nodes}, {params.hidden}), "
            f"got {z.shape} and {b.shape}"
        )
    w = apply_grad(inc, z + b)
    u = w @ params.K.T
    n = var_normalize(params.var_norm, u) if params.var_norm.enabled else u
    s = apply_activation(params.activation, n) if params.activation is Activation.TANH else n
    out = apply_div(inc, s @ params.K)
    np.negative(out, out=out)
    return out, FluxCache(w, u, n, s)


def flux_map(inc: OrientedIncidence, params: LayerParams, z: np.ndarray, b: np.ndarray,
             iteration: int | None = None) -> np.ndarray:
    out, _ = flux_forward(inc, params, z, b)
    _check_finite(out, "flux map output", iteration=iteration)
    return out


def flux_vjp(inc: OrientedIncidence, params: LayerParams, cache: FluxCache, grad_out: np.ndarray):
    """Pull ``grad_out`` back through the flux map.

    Returns ``(grad_zb, grad_K, grad_gamma)``, where ``grad_zb`` is the
    gradient with respect to ``Z + B`` (identical for ``Z`` and ``B``).
    """
    K = params.K
    p = apply_grad(inc, grad_out)  # m x h
    grad_K = -cache.s.T @ p
    grad_s = -p @ K.T
    grad_n = grad_s * activation_slope(params.activation, cache.n)
    grad_u, grad_gamma = var_normalize_backward(params.var_norm, cache.u, grad_n)
    grad_K += grad_u.T @ cache.w
    grad_zb = apply_div(inc, grad_u @ K)
    return grad_zb, grad_K, grad_gamma


def damped_step(inc: OrientedIncidence, params: LayerParams, cfg: SolverConfig,
                z: np.ndarray, b: np.ndarray, iteration: int | None = None) -> np.ndarray:
    """One skip-connected step ``(1 - alpha) z + alpha f(z)``."""
    fz = flux_map(inc, params, z, b, iteration=iteration)
    if cfg.alpha == 1.0:
        return fz
    return (1.0 - cfg.alpha) * z + cfg.alpha * fz


def decorrelation_grad(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``0.5 ||Ẑᵀ Ẑ - I||_F^2`` with the column norms held fixed.

    Returns the gradient and the indices of zero columns, which are left out
    of the normalization and receive zero gradient.
    """
    norms = np.linalg.norm(z, axis=0)
    skipped = np.flatnonzero(norms == 0.0)
    inv = np.zeros_like(norms)
    live = norms > 0.0
    inv[live] = 1.0 / norms[live]
    zh = z * inv
    c = zh.T @ zh
    eye = np.diag(live.astype(np.float64))
    return 2.0 * (zh @ (c - eye)) * inv, skipped


def regularizer_grad(kind: Regularizer, inc: OrientedIncidence, z: np.ndarray) -> np.ndarray:
    kind = Regularizer.parse(kind)
    if kind is Regularizer.NONE:
        return np.zeros_like(z)
    if kind is Regularizer.LAPLACIAN:
        return 2.0 * apply_div(inc, apply_grad(inc, z))
    grad, _ = decorrelation_grad(z)
    return grad


def regularizer_value(kind: Regularizer, inc: OrientedIncidence, z: np.ndarray,
                      frozen_norms: np.ndarray | None = None) -> float:
    """Value of the regularizer; ``frozen_norms`` fixes the decorrelation normalizer."""
    kind = Regularizer.parse(kind)
    if kind is Regularizer.NONE:
        return 0.0
    if kind is Regularizer.LAPLACIAN:
        return float(np.sum(apply_grad(inc, z) ** 2))
    norms = np.linalg.norm(z, axis=0) if frozen_norms is None else frozen_norms
    live = norms > 0.0
    inv = np.where(live, 1.0 / np.where(live, norms, 1.0), 0.0)
    zh = z * inv
    c = zh.T @ zh - np.diag(live.astype(np.float64))
    return 0.5 * float(np.sum(c * c))


def apply_regularizer_step(cfg: SolverConfig, inc: OrientedIncidence, z: np.ndarray) -> np.ndarray:
    if cfg.reg is Regularizer.NONE or cfg.eta == 0.0:
        return z
    return z - cfg.eta * regularizer_grad(cfg.reg, inc, z)


def layer_step(inc, params, cfg, z, b, iteration=None):
    """The composite layer map: regularizer step followed by the damped step."""
    return damped_step(inc, params, cfg, apply_regularizer_step(cfg, inc, z), b, iteration)


def solve_equilibrium(inc: OrientedIncidence, params: LayerParams, cfg: SolverConfig,
                      b: np.ndarray, z0: np.ndarray | None = None) -> EquilibriumState:
    """Damped fixed-point iteration from ``z0`` (zeros by default)."""
    b = np.asarray(b, dtype=np.float64)
    z = np.zeros_like(b) if z0 is None else np.array(z0, dtype=np.float64, copy=True)
    state = EquilibriumState(z)
    for it in range(1, cfg.max_iter + 1):
        z_new = layer_step(inc, params, cfg, z, b, iteration=it)
        step = float(np.linalg.norm(z_new - z))
        res = step / max(1.0, float(np.linalg.norm(z)))
        state.step_norms.append(step)
        state.residuals.append(res)
        state.iterations = it
        if not math.isfinite(res) or res > cfg.divergence_threshold:
            raise DivergenceError(f"fixed-point iteration diverged at iteration {it} (residual {res:.3g})",
                                  iteration=it, residuals=list(state.residuals))
        z = z_new
        if res <= cfg.tol:
            state.converged = True
            break
    state.z_star = z
    return state


def solve_row_normalized(inc: OrientedIncidence, params: LayerParams, cfg: SolverConfig,
                         b: np.ndarray, z0: np.ndarray | None = None) -> EquilibriumState:
    """Row-normalized variant ``Z = -(2D̃)^{-1} Gᵀ σ(G (Z + B) Kᵀ) K``.

    Solved through the equivalent symmetric system in the rescaled variable
    ``Z̄ = (2D̃)^{1/2} Z`` and mapped back.
    """
    s = inc.inv_sqrt_scale[:, None]  # (2 d̃)^{-1/2}
    z0_bar = None if z0 is None else np.asarray(z0) / s
    state = solve_equilibrium(inc, params, cfg, np.asarray(b) / s, z0_bar)
    state.z_star = state.z_star * s
    return state


def project_spectral(params: LayerParams, tol: float = 1e-6) -> LayerParams:
    """Rescale ``K`` so that its spectral norm does not exceed the cap."""
    if not np.all(np.isfinite(params.K)):
        raise NumericalError("K contains non-finite entries")
    est = matrix_norm(params.K, iters=2000, tol=tol).value
    if est <= params.spectral_cap:
        return params
    return replace(params, K=params.K * (params.spectral_cap / est))


def contraction_bound(alpha: float, lipschitz_f: float) -> float:
    """Lipschitz bound of the damped step when f has a symmetric negative semidefinite
    Jacobian with spectrum in ``[-lipschitz_f, 0]``."""
    return max(1.0 - alpha, abs(1.0 - alpha - alpha * lipschitz_f))
