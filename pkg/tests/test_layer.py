import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gind.errors import ConfigError, NumericalError, ShapeError
from gind.graph import build_graph, orient
from gind.layer import (
    LayerParams,
    Regularizer,
    SolverConfig,
    contraction_bound,
    damped_step,
    decorrelation_grad,
    flux_forward,
    flux_map,
    flux_vjp,
    layer_step,
    project_spectral,
    regularizer_grad,
    regularizer_value,
    solve_equilibrium,
)
from gind.linalg import Activation, VarNorm

from conftest import random_graph
from oracles import central_diff, dense_flux, dense_normalized_incidence


def _params(h, norm, seed, vn=False, act=Activation.TANH):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((h, h))
    K *= norm / np.linalg.norm(K, 2)
    if vn:
        return LayerParams(K, VarNorm(rng.uniform(0.5, 1.5, h), epsilon=1e-3), act)
    return LayerParams.plain(K, act)


@pytest.mark.parametrize("vn", [False, True])
@pytest.mark.parametrize("act", list(Activation))
def test_flux_matches_dense_oracle(small_inc, vn, act):
    p = _params(3, 0.9, 0, vn, act)
    G = dense_normalized_incidence(small_inc.num_nodes, small_inc.oriented_edges.tolist())
    rng = np.random.default_rng(1)
    z, b = rng.standard_normal((2, small_inc.num_nodes, 3))
    vn_args = (p.var_norm.gamma, p.var_norm.epsilon) if vn else None
    expected = dense_flux(G, p.K, z, b, act.value, vn_args)
    np.testing.assert_allclose(flux_map(small_inc, p, z, b), expected, atol=1e-13)


def test_zero_diffusion_gives_zero_flux_and_equilibrium(small_inc):
    p = LayerParams.plain(np.zeros((2, 2)))
    b = np.ones((small_inc.num_nodes, 2))
    assert not flux_map(small_inc, p, b, b).any()
    st_ = solve_equilibrium(small_inc, p, SolverConfig(), b)
    assert st_.converged and st_.iterations == 1 and not st_.z_star.any()


@pytest.mark.parametrize("vn", [False, True])
def test_flux_vjp_matches_fd(small_inc, vn):
    p = _params(3, 0.8, 2, vn)
    rng = np.random.default_rng(3)
    zb = rng.standard_normal((small_inc.num_nodes, 3))
    w = rng.standard_normal((small_inc.num_nodes, 3))
    zero = np.zeros_like(zb)
    _, cache = flux_forward(small_inc, p, zb, zero)
    g_zb, g_K, g_gamma = flux_vjp(small_inc, p, cache, w)

    def obj():
        return float(np.sum(w * flux_forward(small_inc, p, zb, zero)[0]))

    np.testing.assert_allclose(g_zb, central_diff(obj, zb), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(g_K, central_diff(obj, p.K), rtol=1e-6, atol=1e-8)
    if vn:
        np.testing.assert_allclose(g_gamma, central_diff(obj, p.var_norm.gamma), rtol=1e-6, atol=1e-8)


def test_flux_shape_errors(small_inc):
    p = _params(3, 0.5, 0)
    with pytest.raises(ShapeError):
        flux_map(small_inc, p, np.zeros((small_inc.num_nodes, 2)), np.zeros((small_inc.num_nodes, 2)))
    with pytest.raises(ShapeError):
        LayerParams.plain(np.zeros((2, 3)))


def test_non_finite_input_is_numerical_error(small_inc):
    p = _params(3, 0.5, 0)
    b = np.zeros((small_inc.num_nodes, 3))
    b[0, 0] = np.nan
    with pytest.raises(NumericalError) as exc:
        solve_equilibrium(small_inc, p, SolverConfig(), b)
    assert exc.value.context["iteration"] == 1


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(alpha=1.5), dict(tol=0.0), dict(max_iter=0),
                                    dict(eta=-1.0), dict(phantom_steps=0)])
def test_solver_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(**kwargs)


def test_spectral_cap_validation():
    with pytest.raises(ConfigError):
        LayerParams.plain(np.eye(2), spectral_cap=1.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 1000), norm=st.floats(0.05, 0.95))
def test_equilibrium_is_fixed_point_and_within_contraction_bound(n, seed, norm):
    inc = orient(random_graph(n, 0.4, seed), seed)
    p = _params(3, norm, seed)
    b = np.random.default_rng(seed).standard_normal((n, 3))
    cfg = SolverConfig(alpha=1.0, tol=1e-10, max_iter=500)
    state = solve_equilibrium(inc, p, cfg, b)
    assert state.converged
    np.testing.assert_allclose(flux_map(inc, p, state.z_star, b), state.z_star, atol=1e-8)
    ratios = state.contraction_ratios()
    assert np.all(ratios <= contraction_bound(1.0, norm ** 2) + 1e-6)


def test_warm_start_from_equilibrium_converges_immediately(small_inc):
    p = _params(3, 0.9, 1)
    b = np.random.default_rng(0).standard_normal((small_inc.num_nodes, 3))
    cfg = SolverConfig(tol=1e-9, max_iter=200)
    z = solve_equilibrium(small_inc, p, cfg, b).z_star
    assert solve_equilibrium(small_inc, p, cfg, b, z0=z).iterations == 1


def test_project_spectral():
    big = LayerParams.plain(np.diag([2.0, 0.1]))
    out = project_spectral(big)
    assert np.linalg.norm(out.K, 2) == pytest.approx(0.95, rel=1e-6)
    small = LayerParams.plain(np.diag([0.3, 0.1]))
    assert project_spectral(small) is small
    with pytest.raises(NumericalError):
        project_spectral(LayerParams.plain(np.array([[np.inf, 0], [0, 1.0]])))


def test_contraction_bound_values():
    assert contraction_bound(1.0, 0.5) == 0.5
    assert contraction_bound(0.5, 0.2) == 0.5


def test_laplacian_regularizer_gradient(small_inc):
    z = np.random.default_rng(5).standard_normal((small_inc.num_nodes, 3))
    fd = central_diff(lambda: regularizer_value(Regularizer.LAPLACIAN, small_inc, z), z)
    np.testing.assert_allclose(regularizer_grad("laplacian", small_inc, z), fd, atol=1e-6)


def test_decorrelation_gradient_with_frozen_norms(small_inc):
    z = np.random.default_rng(6).standard_normal((small_inc.num_nodes, 3))
    frozen = np.linalg.norm(z, axis=0)
    fd = central_diff(lambda: regularizer_value(Regularizer.DECORRELATION, small_inc, z, frozen), z)
    np.testing.assert_allclose(regularizer_grad("decorrelation", small_inc, z), fd, atol=1e-6)


def test_decorrelation_skips_zero_columns():
    z = np.zeros((4, 3))
    z[:, 0] = [1.0, 2.0, 0.0, 1.0]
    z[:, 2] = [0.0, 1.0, 1.0, 3.0]
    grad, skipped = decorrelation_grad(z)
    assert skipped.tolist() == [1]
    assert not grad[:, 1].any()
    assert np.all(np.isfinite(grad))


def test_regularizer_step_composes_before_damped_step(small_inc):
    p = _params(3, 0.5, 0)
    z, b = np.random.default_rng(0).standard_normal((2, small_inc.num_nodes, 3))
    cfg = SolverConfig(reg="laplacian", eta=0.1)
    expected = damped_step(small_inc, p, cfg, z - 0.1 * regularizer_grad("laplacian", small_inc, z), b)
    np.testing.assert_allclose(layer_step(small_inc, p, cfg, z, b), expected)
    none = SolverConfig(reg="none", eta=0.1)
    np.testing.assert_array_equal(layer_step(small_inc, p, none, z, b), damped_step(small_inc, p, none, z, b))


def test_single_node_graph():
    inc = orient(build_graph(1, []))
    p = _params(2, 0.9, 0)
    state = solve_equilibrium(inc, p, SolverConfig(), np.ones((1, 2)))
    assert state.converged and not state.z_star.any()
