import json

import numpy as np
import pytest

from gind.errors import ConfigError
from gind.graph import incidence_norm
from gind.layer import LayerParams
from gind.linalg import Activation, VarNorm
from gind.verify import (
    InstanceSpec,
    check_gradient_field,
    check_kron_norm,
    check_matrix,
    check_nonexpansive,
    check_prox_consistency,
    dense_incidence,
    g_map,
    kron_g_map,
    make_instance,
    psi_value,
    unvec,
    vec,
)

from oracles import dense_normalized_incidence


def test_dense_incidence_matches_independent_oracle():
    inst = make_instance(InstanceSpec(n=9, seed=4))
    G = dense_normalized_incidence(9, inst.inc.oriented_edges.tolist())
    np.testing.assert_allclose(dense_incidence(inst.inc), G, atol=1e-15)


def test_vec_is_column_stacking():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert vec(a).tolist() == [1.0, 3.0, 2.0, 4.0]
    np.testing.assert_array_equal(unvec(vec(a), a.shape), a)


@pytest.mark.parametrize("act", list(Activation))
def test_kronecker_form_matches_matrix_form(act):
    inst = make_instance(InstanceSpec(n=6, h=3, activation=act, seed=2))
    z = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_allclose(kron_g_map(inst.inc, inst.params, z, inst.b),
                               g_map(inst.inc, inst.params, z, inst.b), atol=1e-13)


def test_zero_diffusion_halves_inputs():
    inst = make_instance(InstanceSpec(k_norm=0.0, seed=1))
    y = np.random.default_rng(0).standard_normal((inst.spec.n, inst.spec.h))
    y2 = np.random.default_rng(1).standard_normal((inst.spec.n, inst.spec.h))
    d = g_map(inst.inc, inst.params, y, inst.b) - g_map(inst.inc, inst.params, y2, inst.b)
    assert np.linalg.norm(d) / np.linalg.norm(y - y2) == pytest.approx(0.5, abs=1e-15)
    r = check_prox_consistency(InstanceSpec(k_norm=0.0), trials=2)
    assert r.passed and r.violation == 0.0


def test_identity_potential_is_quadratic():
    inst = make_instance(InstanceSpec(n=5, h=2, activation=Activation.IDENTITY, seed=3))
    z = np.random.default_rng(1).standard_normal((5, 2))
    G = dense_incidence(inst.inc)
    a = G @ (z + inst.b) @ inst.params.K.T
    assert psi_value(inst.inc, inst.params, z, inst.b) == pytest.approx(0.25 * np.sum(z * z) - 0.25 * np.sum(a * a))


def test_objective_checks_reject_normalized_layer():
    inst = make_instance(InstanceSpec(seed=0))
    p = LayerParams(inst.params.K, VarNorm(np.ones(inst.spec.h)))
    with pytest.raises(ConfigError):
        g_map(inst.inc, p, inst.b, inst.b)


@pytest.mark.parametrize("act", list(Activation))
def test_checks_pass_on_capped_instances(act):
    spec = InstanceSpec(n=7, h=3, k_norm=0.95, activation=act)
    assert check_gradient_field(spec, trials=5).passed
    assert check_nonexpansive(spec, trials=5).passed
    assert check_prox_consistency(spec, trials=5).passed
    assert check_kron_norm(spec, trials=3).passed


def test_violated_cap_is_a_hypothesis_failure():
    spec = InstanceSpec(n=8, h=3, edge_prob=0.6, k_norm=1.5)
    r = check_nonexpansive(spec, trials=3)
    assert incidence_norm(make_instance(spec).inc).value ** 2 * 1.5 ** 2 > 1.0
    assert r.status == "hypothesis-failed" and not r.passed


def test_reports_are_deterministic_and_serializable():
    a = check_matrix(["tanh"], [(5, 2)], [0.9], trials=3, seed=7)
    b = check_matrix(["tanh"], [(5, 2)], [0.9], trials=3, seed=7)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]
    rec = json.loads(a[0].to_json())
    assert {"check", "n", "m", "h", "seed", "violation", "threshold", "passed", "status"} <= rec.keys()
    with pytest.raises(ConfigError):
        check_matrix(["tanh"], [(5, 2)], [0.9], trials=0)
