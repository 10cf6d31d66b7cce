"""End-to-end model: affine embedding, implicit diffusion layer, linear readout.

Gradients come from a phantom-gradient estimate: starting at the detached
equilibrium, ``L`` damped layer steps are unrolled and differentiated exactly
by hand-written reverse-mode adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import NodeDataset
from .errors import (
    ConfigError,
    DivergenceError,
    InputError,
    MissingFileError,
    NumericalError,
    ParseError,
    RaggedRowsError,
    ShapeError,
)
from .graph import OrientedIncidence, matrix_norm
from .layer import (
    EquilibriumState,
    LayerParams,
    SolverConfig,
    flux_forward,
    flux_vjp,
    project_spectral,
    solve_equilibrium,
)
from .linalg import Activation, VarNorm, init_diffusion_matrix, uniform_init

# Tensors that receive weight decay; biases and gamma are exempt.
DECAYED = ("omega_w", "input_proj", "theta_w", "K")


@dataclass(frozen=True)
class ModelParams:
    omega_w: np.ndarray  # p x h
    omega_b: np.ndarray  # h
    theta_w: np.ndarray  # h x C
    theta_b: np.ndarray  # C
    layer: LayerParams
    input_proj: np.ndarray | None = None  # p x h, only when p != h

    def __post_init__(self):
        p, h = self.omega_w.shape
        if self.layer.hidden != h or self.omega_b.shape != (h,) or self.theta_w.shape[0] != h:
            raise ShapeError("inconsistent hidden dimension across model tensors")
        if self.theta_b.shape != (self.theta_w.shape[1],):
            raise ShapeError("readout bias does not match the number of classes")
        if p != h and (self.input_proj is None or self.input_proj.shape != (p, h)):
            raise ShapeError(f"input_proj of shape ({p}, {h}) is required when p != h")

    @property
    def dims(self) -> tuple[int, int, int]:
        p, h = self.omega_w.shape
        return p, h, self.theta_w.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {
            "omega_w": self.omega_w,
            "omega_b": self.omega_b,
            "theta_w": self.theta_w,
            "theta_b": self.theta_b,
            "K": self.layer.K,
        }
        if self.input_proj is not None:
            out["input_proj"] = self.input_proj
        if self.layer.var_norm.enabled:
            out["gamma"] = self.layer.var_norm.gamma
        return out

    def with_tensors(self, t: dict[str, np.ndarray]) -> "ModelParams":
        layer = self.layer
        if "K" in t:
            layer = replace(layer, K=t["K"])
        if "gamma" in t:
            layer = replace(layer, var_norm=layer.var_norm.with_gamma(t["gamma"]))
        return replace(
            self,
            omega_w=t.get("omega_w", self.omega_w),
            omega_b=t.get("omega_b", self.omega_b),
            theta_w=t.get("theta_w", self.theta_w),
            theta_b=t.get("theta_b", self.theta_b),
            input_proj=t.get("input_proj", self.input_proj),
            layer=layer,
        )


def init_model(p: int, h: int, num_classes: int, seed: int = 0, var_norm: bool = True,
               activation=Activation.TANH, spectral_cap: float = 0.95, k_norm: float = 0.5,
               epsilon: float = 1e-5) -> ModelParams:
    rng = np.random.default_rng(seed)
    K = init_diffusion_matrix(rng, h, k_norm)
    vn = VarNorm(np.ones(h), epsilon=epsilon, enabled=var_norm)
    layer = LayerParams(K, vn, Activation.parse(activation), spectral_cap)
    return ModelParams(
        omega_w=uniform_init(rng, (p, h), p),
        omega_b=np.zeros(h),
        theta_w=uniform_init(rng, (h, num_classes), h),
        theta_b=np.zeros(num_classes),
        layer=layer,
        input_proj=None if p == h else uniform_init(rng, (p, h), p),
    )


def embed(model: ModelParams, X: np.ndarray) -> np.ndarray:
    return X @ model.omega_w + model.omega_b


def readout_base(model: ModelParams, X: np.ndarray) -> np.ndarray:
    """Input features in the readout space: ``X`` itself or ``X @ input_proj``."""
    return X if model.input_proj is None else X @ model.input_proj


def readout(model: ModelParams, h: np.ndarray) -> np.ndarray:
    return h @ model.theta_w + model.theta_b


def forward(model: ModelParams, inc: OrientedIncidence, cfg: SolverConfig, X: np.ndarray,
            z0: np.ndarray | None = None) -> tuple[np.ndarray, EquilibriumState]:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (inc.num_nodes, model.dims[0]):
        raise ShapeError(f"X has shape {X.shape}, expected ({inc.num_nodes}, {model.dims[0]})")
    b = embed(model, X)
    eq = solve_equilibrium(inc, model.layer, cfg, b, z0)
    return readout(model, readout_base(model, X) + eq.z_star), eq


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean softmax cross-entropy over masked rows and its gradient w.r.t. logits."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InputError("cross-entropy over an empty mask")
    sub = logits[idx]
    shifted = sub - sub.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    y = labels[idx]
    loss = float(np.mean(logz - shifted[np.arange(idx.size), y]))
    probs = np.exp(shifted - logz[:, None])
    probs[np.arange(idx.size), y] -= 1.0
    grad = np.zeros_like(logits)
    grad[idx] = probs / idx.size
    return loss, grad


def unrolled_loss(model: ModelParams, inc: OrientedIncidence, cfg: SolverConfig, X: np.ndarray,
                  labels: np.ndarray, mask: np.ndarray, z0: np.ndarray) -> float:
    """Loss of the ``L``-step program differentiated by :func:`phantom_gradient`."""
    b = embed(model, X)
    z = z0
    for _ in range(cfg.phantom_steps):
        fz, _ = flux_forward(inc, model.layer, z, b)
        z = (1.0 - cfg.alpha) * z + cfg.alpha * fz
    loss, _ = cross_entropy(readout(model, readout_base(model, X) + z), labels, mask)
    return loss


def phantom_gradient(model: ModelParams, inc: OrientedIncidence, cfg: SolverConfig, X: np.ndarray,
                     labels: np.ndarray, mask: np.ndarray, eq: EquilibriumState | None = None):
    """Loss and gradients of the unrolled objective started at the equilibrium.

    Returns ``(loss, grads, eq)`` where ``grads`` maps tensor names of
    :meth:`ModelParams.tensors` to arrays of the same shape.
    """
    X = np.asarray(X, dtype=np.float64)
    if eq is None:
        _, eq = forward(model, inc, cfg, X)
    alpha = cfg.alpha
    layer = model.layer
    b = embed(model, X)
    z = eq.z_star.copy()
    caches = []
    for _ in range(cfg.phantom_steps):
        fz, cache = flux_forward(inc, layer, z, b)
        caches.append(cache)
        z = (1.0 - alpha) * z + alpha * fz
    base = readout_base(model, X)
    hid = base + z
    loss, g_logits = cross_entropy(readout(model, hid), labels, mask)
    if not np.isfinite(loss):
        raise NumericalError("non-finite training loss", residuals=list(eq.residuals))

    grads = {name: np.zeros_like(t) for name, t in model.tensors().items()}
    grads["theta_w"] = hid.T @ g_logits
    grads["theta_b"] = g_logits.sum(axis=0)
    g_z = g_logits @ model.theta_w.T
    if model.input_proj is not None:
        grads["input_proj"] = X.T @ g_z
    g_b = np.zeros_like(b)
    for cache in reversed(caches):
        g_zb, g_K, g_gamma = flux_vjp(inc, layer, cache, alpha * g_z)
        grads["K"] += g_K
        if "gamma" in grads:
            grads["gamma"] += g_gamma
        g_b += g_zb
        g_z = (1.0 - alpha) * g_z + g_zb
    grads["omega_w"] = X.T @ g_b
    grads["omega_b"] = g_b.sum(axis=0)
    return loss, grads, eq


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 500
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma_min: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass
class Adam:
    """Adam with L2-coupled weight decay on the tensors listed in ``DECAYED``."""

    cfg: TrainConfig
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        c = self.cfg
        self.step_count += 1
        t = self.step_count
        out = {}
        for name, p in params.items():
            g = grads[name]
            if name in DECAYED and c.weight_decay:
                g = g + c.weight_decay * p
            m = self.m.get(name, np.zeros_like(p)) * c.beta1 + (1 - c.beta1) * g
            v = self.v.get(name, np.zeros_like(p)) * c.beta2 + (1 - c.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - c.beta1 ** t)
            vhat = v / (1 - c.beta2 ** t)
            out[name] = p - c.lr * mhat / (np.sqrt(vhat) + c.adam_eps)
        return out


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InputError("accuracy over an empty mask")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


def evaluate(model: ModelParams, inc: OrientedIncidence, cfg: SolverConfig, dataset: NodeDataset,
             split: str, logits: np.ndarray | None = None) -> dict[str, float]:
    mask = dataset.mask(split)
    if not mask.any():
        raise InputError(f"split {split!r} is empty")
    if logits is None:
        logits, _ = forward(model, inc, cfg, dataset.X)
    loss, _ = cross_entropy(logits, dataset.labels, mask)
    return {"accuracy": accuracy(logits, dataset.labels, mask), "loss": loss}


def train(model: ModelParams, inc: OrientedIncidence, cfg: SolverConfig, train_cfg: TrainConfig,
          dataset: NodeDataset, on_epoch=None):
    """Full-batch training with early stopping on validation accuracy.

    Returns ``(best_model, history)``; ``history`` holds one record per epoch.
    ``best_model`` is the parameter snapshot that achieved the best validation
    accuracy (ties broken by lower validation loss).
    """
    X, y = dataset.X, dataset.labels
    opt = Adam(train_cfg)
    best, best_key, stale = model, None, 0
    history: list[dict] = []
    z_prev = None
    for epoch in range(train_cfg.epochs):
        try:
            logits, eq = forward(model, inc, cfg, X, z_prev if cfg.warm_start else None)
        except DivergenceError as exc:
            raise NumericalError(f"solver diverged at epoch {epoch}", epoch=epoch,
                                 k_norm=matrix_norm(model.layer.K).value, **exc.context) from exc
        val = evaluate(model, inc, cfg, dataset, "val", logits) if dataset.val_mask.any() else None
        test = evaluate(model, inc, cfg, dataset, "test", logits) if dataset.test_mask.any() else None
        key = (val["accuracy"], -val["loss"]) if val else (0.0, 0.0)
        if best_key is None or key > best_key:
            best, best_key, stale = model, key, 0
        else:
            stale += 1

        loss, grads, _ = phantom_gradient(model, inc, cfg, X, y, dataset.train_mask, eq)
        new = opt.step(model.tensors(), grads)
        if "gamma" in new:
            new["gamma"] = np.maximum(new["gamma"], train_cfg.gamma_min)
        model = model.with_tensors(new)
        model = replace(model, layer=project_spectral(model.layer))
        z_prev = eq.z_star

        rec = {
            "epoch": epoch,
            "train_loss": loss,
            "train_acc": accuracy(logits, y, dataset.train_mask),
            "val_loss": val["loss"] if val else None,
            "val_acc": val["accuracy"] if val else None,
            "test_loss": test["loss"] if test else None,
            "test_acc": test["accuracy"] if test else None,
            "iterations": eq.iterations,
            "residual": eq.residuals[-1] if eq.residuals else 0.0,
            "converged": eq.converged,
            "k_norm": matrix_norm(model.layer.K).value,
        }
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if stale >= train_cfg.patience:
            break
    return best, history


# -- plain-text parameter dump -------------------------------------------------

PARAM_ORDER = ("omega_w", "omega_b", "input_proj", "theta_w", "theta_b", "K", "gamma")


def save_params(model: ModelParams, path) -> Path:
    """Write every tensor as a ``tensor <name> <rows> <cols>`` header followed by its rows.

    Values are written with ``repr`` so that loading reproduces them bit for bit.
    """
    path = Path(path)
    layer = model.layer
    lines = [
        "# gind parameters",
        f"activation {layer.activation.value}",
        f"var_norm {int(layer.var_norm.enabled)}",
        f"epsilon {layer.var_norm.epsilon!r}",
        f"spectral_cap {layer.spectral_cap!r}",
    ]
    tensors = model.tensors()
    for name in PARAM_ORDER:
        if name not in tensors:
            continue
        t = tensors[name].reshape(1, -1) if tensors[name].ndim == 1 else tensors[name]
        lines.append(f"tensor {name} {t.shape[0]} {t.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in t)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_params(path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"parameter file not found: {path}")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] != "tensor":
            meta[tok[0]] = tok[1] if len(tok) > 1 else ""
            continue
        if len(tok) != 4:
            raise ParseError(path, i, "expected 'tensor <name> <rows> <cols>'")
        name, rows, cols = tok[1], int(tok[2]), int(tok[3])
        if i + rows > len(lines):
            raise ParseError(path, i, f"tensor {name} is truncated")
        try:
            data = np.array([[float(v) for v in lines[i + r].split()] for r in range(rows)])
        except ValueError:
            raise ParseError(path, i, f"non-numeric entry in tensor {name}") from None
        if data.shape != (rows, cols):
            raise RaggedRowsError(path, i, f"tensor {name} does not have shape ({rows}, {cols})")
        tensors[name] = data
        i += rows
    missing = [n for n in ("omega_w", "omega_b", "theta_w", "theta_b", "K") if n not in tensors]
    if missing:
        raise ParseError(path, len(lines), f"missing tensors: {', '.join(missing)}")
    enabled = meta.get("var_norm", "0") == "1"
    h = tensors["K"].shape[0]
    gamma = tensors["gamma"].ravel() if "gamma" in tensors else np.ones(h)
    vn = VarNorm(gamma, epsilon=float(meta.get("epsilon", 1e-5)), enabled=enabled)
    layer = LayerParams(tensors["K"], vn, Activation.parse(meta.get("activation", "tanh")),
                        float(meta.get("spectral_cap", 0.95)))
    return ModelParams(tensors["omega_w"], tensors["omega_b"].ravel(), tensors["theta_w"],
                       tensors["theta_b"].ravel(), layer, tensors.get("input_proj"))
