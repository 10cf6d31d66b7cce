"""Numerical certificates for the convex-objective structure of the layer.

With ``L_σ = 1`` the averaged map ``g(z) = (z + f(z)) / 2`` is claimed to be the
proximal operator of a convex function.  That is equivalent to ``g`` being
(a) the gradient of a convex potential ``ψ`` and (b) nonexpansive, so those
two premises are what gets checked, together with agreement of the fixed
points of ``g`` and ``f``.  Everything here assumes variance normalization is
off.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .graph import OrientedIncidence, build_graph, incidence_norm, matrix_norm, orient
from .layer import LayerParams, SolverConfig, flux_map, solve_equilibrium
from .linalg import Activation, activation_integral, apply_activation

FD_STEP = 1e-6
KRON_MAX_SIZE = 400


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for a random verification instance."""

    n: int = 8
    h: int = 3
    edge_prob: float = 0.4
    k_norm: float = 0.9
    activation: Activation = Activation.TANH
    b_scale: float = 1.0
    seed: int = 0

    def with_seed(self, seed: int) -> "InstanceSpec":
        return InstanceSpec(self.n, self.h, self.edge_prob, self.k_norm, self.activation,
                            self.b_scale, seed)


@dataclass
class Instance:
    spec: InstanceSpec
    inc: OrientedIncidence
    params: LayerParams
    b: np.ndarray

    @property
    def descriptor(self) -> dict:
        return {"n": self.spec.n, "m": self.inc.num_edges, "h": self.spec.h, "seed": self.spec.seed}


def random_edges(rng: np.random.Generator, n: int, edge_prob: float) -> list[tuple[int, int]]:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    return list(zip(iu[keep].tolist(), ju[keep].tolist()))


def random_matrix_with_norm(rng: np.random.Generator, h: int, norm: float) -> np.ndarray:
    k = rng.standard_normal((h, h))
    return k * (norm / np.linalg.norm(k, 2))


def make_instance(spec: InstanceSpec) -> Instance:
    rng = np.random.default_rng(spec.seed)
    graph = build_graph(spec.n, random_edges(rng, spec.n, spec.edge_prob))
    inc = orient(graph, seed=spec.seed)
    K = random_matrix_with_norm(rng, spec.h, spec.k_norm) if spec.k_norm > 0 else np.zeros((spec.h, spec.h))
    params = LayerParams.plain(K, spec.activation, spectral_cap=0.99)
    b = spec.b_scale * rng.standard_normal((spec.n, spec.h))
    return Instance(spec, inc, params, b)


def _require_plain(params: LayerParams):
    if params.var_norm.enabled:
        raise ConfigError("objective checks require variance normalization to be disabled")


def g_map(inc: OrientedIncidence, params: LayerParams, z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Averaged map ``(z + f(z)) / 2``, the candidate proximal operator."""
    _require_plain(params)
    lip = params.activation.lipschitz
    return (lip * z + flux_map(inc, params, z, b)) / (lip + 1.0)


def psi_value(inc: OrientedIncidence, params: LayerParams, z: np.ndarray, b: np.ndarray) -> float:
    """Potential whose gradient is :func:`g_map`."""
    _require_plain(params)
    a = inc.grad(z + b) @ params.K.T
    return 0.25 * float(np.sum(z * z)) - 0.5 * float(np.sum(activation_integral(params.activation, a)))


# -- dense oracles (small instances only) ------------------------------------

def dense_incidence(inc: OrientedIncidence) -> np.ndarray:
    """Materialize the normalized incidence matrix from the oriented edge list."""
    g = np.zeros((inc.num_edges, inc.num_nodes))
    rows = np.arange(inc.num_edges)
    g[rows, inc.oriented_edges[:, 1]] = 1.0
    g[rows, inc.oriented_edges[:, 0]] = -1.0
    return g * inc.inv_sqrt_scale[None, :]


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(v).reshape(shape, order="F")


def kron_operator(inc: OrientedIncidence, K: np.ndarray) -> np.ndarray:
    n, h = inc.num_nodes, K.shape[0]
    if n * h > KRON_MAX_SIZE:
        raise ConfigError(f"Kronecker materialization limited to n*h <= {KRON_MAX_SIZE}, got {n * h}")
    return np.kron(K, dense_incidence(inc))


def kron_g_map(inc: OrientedIncidence, params: LayerParams, z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``g`` evaluated on ``vec(z)`` through the materialized ``K ⊗ Ĝ``."""
    op = kron_operator(inc, params.K)
    lip = params.activation.lipschitz
    fz = -op.T @ apply_activation(params.activation, op @ (vec(z) + vec(b)))
    return unvec((lip * vec(z) + fz) / (lip + 1.0), z.shape)


def fd_gradient(fun, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fun(x)
        flat[i] = orig - step
        fm = fun(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def fd_jacobian(fun, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of an array-valued map, in column-stacked coordinates."""
    x = np.array(x, dtype=np.float64, copy=True)
    size = x.size
    jac = np.zeros((size, size))
    for j in range(size):
        e = np.zeros(size)
        e[j] = step
        ep = unvec(e, x.shape)
        jac[:, j] = (vec(fun(x + ep)) - vec(fun(x - ep))) / (2.0 * step)
    return jac


# -- reports -----------------------------------------------------------------

@dataclass
class VerifyReport:
    check: str
    n: int
    m: int
    h: int
    seed: int
    violation: float
    threshold: float
    passed: bool
    status: str = ""
    trials: int = 1
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.violation <= self.threshold) and self.status != "hypothesis-failed"
        if not self.status:
            self.status = "pass" if self.passed else "fail"

    def to_record(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=False, default=float)


def _report(check, worst: Instance, violation, threshold, trials, status="", **detail):
    d = worst.descriptor
    return VerifyReport(check, d["n"], d["m"], d["h"], d["seed"], float(violation), float(threshold),
                        False, status, trials, detail)


def _random_z(inst: Instance, salt: int) -> np.ndarray:
    rng = np.random.default_rng([inst.spec.seed, salt])
    return rng.standard_normal((inst.spec.n, inst.spec.h))


def theorem_constant(inst: Instance) -> float:
    """``L_σ ||K||² ||Ĝ||²`` from power iteration."""
    kn = matrix_norm(inst.params.K, iters=5000, tol=1e-13).value
    gn = incidence_norm(inst.inc, iters=5000, tol=1e-13).value
    return inst.params.activation.lipschitz * kn * kn * gn * gn


def check_gradient_field(spec: InstanceSpec, trials: int = 20, threshold: float = 1e-6,
                         max_jacobian_size: int = 60) -> VerifyReport:
    """``g`` equals the finite-difference gradient of ``ψ`` and has a symmetric Jacobian."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    worst, worst_inst = -1.0, None
    max_grad_err = max_asym = 0.0
    for t in range(trials):
        inst = make_instance(spec.with_seed(spec.seed + t))
        z = _random_z(inst, 1)
        g = g_map(inst.inc, inst.params, z, inst.b)
        fd = fd_gradient(lambda x: psi_value(inst.inc, inst.params, x, inst.b), z)
        grad_err = float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))
        asym = 0.0
        if z.size <= max_jacobian_size:
            jac = fd_jacobian(lambda x: g_map(inst.inc, inst.params, x, inst.b), z)
            asym = float(np.max(np.abs(jac - jac.T)))
        max_grad_err = max(max_grad_err, grad_err)
        max_asym = max(max_asym, asym)
        v = max(grad_err, asym)
        if v > worst:
            worst, worst_inst = v, inst
    return _report("gradient_field", worst_inst, worst, threshold, trials,
                   max_gradient_error=max_grad_err, max_jacobian_asymmetry=max_asym)


def check_nonexpansive(spec: InstanceSpec, trials: int = 20, threshold: float = 1e-9,
                       pairs: int = 10) -> VerifyReport:
    """``||g(y) - g(y')|| <= ||y - y'||`` on random pairs, gated on the theorem hypothesis."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    worst, worst_inst, max_ratio, max_const = -np.inf, None, 0.0, 0.0
    for t in range(trials):
        inst = make_instance(spec.with_seed(spec.seed + t))
        const = theorem_constant(inst)
        max_const = max(max_const, const)
        if const > 1.0 + 1e-9:
            return _report("nonexpansive", inst, np.inf, threshold, trials, status="hypothesis-failed",
                           theorem_constant=const)
        for p in range(pairs):
            y = _random_z(inst, 10 + 2 * p)
            y2 = _random_z(inst, 11 + 2 * p)
            if p % 2:
                # nearby pairs probe the local Lipschitz constant
                y2 = y + 1e-3 * (y2 - y)
            num = np.linalg.norm(g_map(inst.inc, inst.params, y, inst.b)
                                 - g_map(inst.inc, inst.params, y2, inst.b))
            ratio = float(num / np.linalg.norm(y - y2))
            max_ratio = max(max_ratio, ratio)
            if ratio - 1.0 > worst:
                worst, worst_inst = ratio - 1.0, inst
    return _report("nonexpansive", worst_inst, max(worst, 0.0), threshold, trials,
                   max_ratio=max_ratio, max_theorem_constant=max_const)


def iterate_g(inst: Instance, tol: float, max_iter: int = 5000):
    """Plain iteration of ``g`` from zero; returns the limit and the step sizes."""
    z = np.zeros_like(inst.b)
    steps = []
    for _ in range(max_iter):
        z_new = g_map(inst.inc, inst.params, z, inst.b)
        step = float(np.linalg.norm(z_new - z))
        steps.append(step)
        z = z_new
        if step <= tol * max(1.0, float(np.linalg.norm(z))):
            break
    return z, np.asarray(steps)


def check_prox_consistency(spec: InstanceSpec, trials: int = 20, tol: float = 1e-6) -> VerifyReport:
    """Fixed points of ``g`` and ``f`` coincide and ``g``-iteration steps never grow."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    threshold = 10.0 * tol
    solve_tol = tol * 1e-3
    worst, worst_inst = -1.0, None
    max_dist = max_damped = 0.0
    monotone = True
    for t in range(trials):
        inst = make_instance(spec.with_seed(spec.seed + t))
        z_g, steps = iterate_g(inst, solve_tol)
        z_f = solve_equilibrium(inst.inc, inst.params,
                                SolverConfig(alpha=1.0, tol=solve_tol, max_iter=5000), inst.b).z_star
        z_d = solve_equilibrium(inst.inc, inst.params,
                                SolverConfig(alpha=0.8, tol=solve_tol, max_iter=5000), inst.b).z_star
        dist = float(np.linalg.norm(z_g - z_f))
        damped = float(np.linalg.norm(z_g - z_d))
        scale = steps[0] if len(steps) else 0.0
        live = steps[:-1] > 1e-12 * max(scale, 1.0)
        grows = np.diff(steps)[live] > 1e-12 * max(scale, 1.0)
        if grows.any():
            monotone = False
        max_dist, max_damped = max(max_dist, dist), max(max_damped, damped)
        v = max(dist, damped) if not grows.any() else np.inf
        if v > worst:
            worst, worst_inst = v, inst
    return _report("prox_consistency", worst_inst, worst, threshold, trials,
                   max_fixed_point_gap=max_dist, max_damped_gap=max_damped, monotone_steps=monotone)


def check_kron_norm(spec: InstanceSpec, trials: int = 5, threshold: float = 1e-8) -> VerifyReport:
    """``||K ⊗ Ĝ||₂ = ||K||₂ ||Ĝ||₂`` on the materialized operator."""
    worst, worst_inst = -1.0, None
    for t in range(trials):
        inst = make_instance(spec.with_seed(spec.seed + t))
        op = kron_operator(inst.inc, inst.params.K)
        lhs = np.linalg.norm(op, 2) if op.size else 0.0
        rhs = np.linalg.norm(inst.params.K, 2) * (np.linalg.norm(dense_incidence(inst.inc), 2)
                                                  if inst.inc.num_edges else 0.0)
        v = abs(lhs - rhs)
        if v > worst:
            worst, worst_inst = v, inst
    return _report("kron_norm", worst_inst, worst, threshold, trials)


def check_matrix(activations: Iterable[Activation], sizes: Iterable[tuple[int, int]],
                 k_norms: Iterable[float], trials: int = 20, seed: int = 0,
                 tol: float = 1e-6) -> list[VerifyReport]:
    """Run every check over activations x (n, h) sizes x K norms."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    reports = []
    for act in activations:
        for n, h in sizes:
            for kn in k_norms:
                spec = InstanceSpec(n=n, h=h, k_norm=kn, activation=Activation.parse(act), seed=seed)
                cell = [check_nonexpansive(spec, trials)]
                if cell[0].status != "hypothesis-failed":
                    cell.append(check_gradient_field(spec, trials))
                    cell.append(check_prox_consistency(spec, trials, tol))
                    if n * h <= KRON_MAX_SIZE:
                        cell.append(check_kron_norm(spec, min(trials, 5)))
                for r in cell:
                    r.detail["activation"] = spec.activation.value
                    r.detail["k_norm"] = kn
                reports.extend(cell)
    return reports
