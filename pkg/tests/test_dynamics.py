import math
import warnings

import numpy as np
import pytest
from scipy.optimize import root

from stochbasin.dynamics import (AnderiesParams, ChainParams, FlowMapSpec, PendulumParams,
                                 StateOutsideSimplex, advance, anderies_field, anderies_flow,
                                 box_model_matrix, chain_field, chain_flow, chain_sync_state,
                                 integrate_deterministic, integrate_euler, integrate_stochastic,
                                 make_flow, pendulum_field, pendulum_flow)
from stochbasin.errors import InvalidDelta, NonFiniteState, ValidationError

from oracles import rk4_scalar


def decay(tau=1.0, dt=0.01, sigma=0.0):
    return FlowMapSpec(field=lambda x: -x, dim=1, tau=tau, dt=dt, noise_sigma=sigma)


def test_pendulum_fixed_point_preserved():
    p = PendulumParams()
    x = integrate_deterministic(pendulum_flow(p, tau=100.0), p.fixed_point())
    assert np.abs(x - p.fixed_point()).max() <= 1e-8


def test_linear_decay_and_oracle():
    x = integrate_deterministic(decay(), [1.0])
    assert abs(x[0] - math.exp(-1)) <= 1e-8
    assert abs(x[0] - rk4_scalar(lambda y: -y, 1.0, 1.0, 0.01)) <= 1e-15


def test_rk4_fourth_order():
    errs = [abs(integrate_deterministic(decay(dt=h), [1.0])[0] - math.exp(-1))
            for h in (0.1, 0.05, 0.025)]
    for a, b in zip(errs, errs[1:]):
        assert 14 < a / b < 18


def test_single_step_when_tau_equals_dt():
    x = integrate_deterministic(decay(tau=0.1, dt=0.1), [1.0])
    h = 0.1
    one = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    assert x[0] == pytest.approx(one, abs=2e-16)


def test_shortened_last_step_lands_on_tau():
    # 0.25 = 2 * 0.1 + 0.05
    x = advance(decay(dt=0.1), np.array([[1.0]]), 0.25, method="euler")
    assert x[0, 0] == pytest.approx(0.9 * 0.9 * 0.95, abs=1e-15)


def test_zero_noise_reduces_to_euler_bitwise():
    spec = pendulum_flow(sigma=0.0)
    x0 = np.array([[0.3, 1.2], [-2.0, 4.0]])
    em = integrate_stochastic(spec, x0, np.random.default_rng(0))
    assert np.array_equal(em, integrate_euler(spec, x0))


def test_brownian_variance():
    spec = FlowMapSpec(field=np.zeros_like, dim=1, tau=2.0, dt=0.1, noise_sigma=0.5)
    x = integrate_stochastic(spec, np.zeros((100_000, 1)), np.random.default_rng(1))
    assert abs(x.var() / (0.25 * 2.0) - 1) < 0.03
    assert abs(x.mean()) < 4 * math.sqrt(0.5 / 100_000)


def test_stochastic_seed_determinism():
    spec = pendulum_flow(sigma=0.3)
    x0 = np.zeros((50, 2))
    a = integrate_stochastic(spec, x0, np.random.default_rng(7))
    b = integrate_stochastic(spec, x0, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_stochastic_needs_rng():
    with pytest.raises(ValidationError):
        advance(pendulum_flow(sigma=0.3), np.zeros((1, 2)), 1.0)


def test_spec_validation():
    with pytest.raises(ValidationError):
        decay(dt=0.0)
    with pytest.raises(ValidationError):
        decay(tau=0.001, dt=0.01)
    with pytest.raises(ValidationError):
        decay(sigma=-1.0)


def test_nonfinite_raises():
    blowup = FlowMapSpec(field=lambda x: x * x, dim=1, tau=5.0, dt=0.1)
    with pytest.raises(NonFiniteState):
        integrate_deterministic(blowup, [10.0])


def test_pendulum_field_examples():
    p = PendulumParams()
    f = pendulum_field(p, [[0.0, 0.0], [math.pi / 2, 1.0]])
    np.testing.assert_allclose(f, [[0.0, 0.5], [1.0, -0.1 + 0.5 - 1.0]], atol=1e-15)


def test_pendulum_wrap_invariance():
    spec = pendulum_flow(tau=10.0)
    x = np.array([[1.0, 2.0]])
    shifted = x + [[2 * math.pi, 0.0]]
    a = integrate_deterministic(spec, x)
    b = integrate_deterministic(spec, shifted)
    assert np.abs(a - b).max() <= 1e-9
    assert -math.pi <= a[0, 0] < math.pi


def test_pendulum_step_convergence():
    x0 = np.array([[1.0, 2.0]])
    a = integrate_deterministic(pendulum_flow(dt=0.01), x0)
    b = integrate_deterministic(pendulum_flow(dt=0.001), x0)
    assert np.abs(a - b).max() / np.abs(b).max() < 1e-9


def test_chain_sync_state_is_equilibrium():
    p = ChainParams()
    s = chain_sync_state(p)
    assert np.abs(chain_field(p, s)).max() < 1e-10

    def residual(phi_rest):
        phi = np.r_[0.0, phi_rest]
        return chain_field(p, np.r_[phi, np.zeros(p.n)])[p.n + 1:]
    sol = root(residual, np.zeros(p.n - 1), method="lm", tol=1e-14)
    assert sol.success
    np.testing.assert_allclose(s[1:p.n], sol.x, atol=1e-10)


def test_chain_two_oscillators_closed_form():
    p = ChainParams(n=2, K=2.0, P=1.0)
    s = chain_sync_state(p)
    assert s[0] - s[1] == pytest.approx(math.asin(0.5), abs=1e-15)


def test_chain_translation_invariance():
    p = ChainParams(n=5)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 10))
    y = x.copy()
    y[:, :5] += 1.234
    assert np.abs(chain_field(p, x) - chain_field(p, y)).max() <= 1e-14


def test_chain_equal_phases_accelerate_by_power():
    p = ChainParams(n=4)
    x = np.r_[np.full(4, 0.7), np.zeros(4)]
    np.testing.assert_allclose(chain_field(p, x)[4:], p.power, atol=1e-15)


def test_chain_rejects_unbalanced():
    with pytest.raises(ValidationError):
        chain_sync_state(ChainParams(n=3))
    with pytest.raises(ValidationError):
        chain_sync_state(ChainParams(n=4, K=0.5))


def test_chain_flow_noise_only_on_frequencies():
    spec = chain_flow(ChainParams(n=3 + 1), sigma=0.2)
    assert np.all(spec.noise_sigma[:4] == 0) and np.all(spec.noise_sigma[4:] == 0.2)


def test_anderies_zero_nep_fixed_point():
    p = AnderiesParams(nep=lambda c_a, c_t: np.zeros_like(c_a))
    f = anderies_field(p, [0.5, 0.0])
    np.testing.assert_allclose(f, [0.0, 0.0], atol=1e-16)


def test_anderies_field_signs():
    p = AnderiesParams()
    f = anderies_field(p, [0.0, 0.0])
    assert f[0] > 0 and f[1] > 0  # all carbon atmospheric: both stocks grow
    f = anderies_field(p, [0.0, 1.0])
    assert f[1] < 0  # no atmospheric carbon: terrestrial stock decays


def test_anderies_warns_outside_simplex():
    with pytest.warns(StateOutsideSimplex):
        anderies_field(AnderiesParams(), [0.8, 0.8])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        anderies_field(AnderiesParams(), [0.2, 0.3])


def test_anderies_stays_in_simplex():
    rng = np.random.default_rng(3)
    x0 = rng.dirichlet(np.ones(3), size=200)[:, :2]
    x = integrate_deterministic(anderies_flow(tau=20.0), x0)
    assert np.all(x >= -1e-12) and np.all(x.sum(axis=1) <= 1 + 1e-12)


def test_box_models():
    M = box_model_matrix("metastable", 0.01)
    np.testing.assert_allclose(M.toarray(), [[0.9999, 0.0001], [0.01, 0.99]], atol=1e-16)
    T = box_model_matrix("transient", 0.1).toarray()
    np.testing.assert_allclose(T, [[0.99, 0, 0.01], [0, 0.9, 0.1], [0, 0, 1]], atol=1e-16)
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(InvalidDelta):
            box_model_matrix("transient", bad)
    with pytest.raises(ValidationError):
        box_model_matrix("other", 0.1)


def test_make_flow():
    assert make_flow("pendulum").name == "pendulum"
    assert make_flow("pendulum-chain", n=4).dim == 8
    assert make_flow("identity", dim=3).dim == 3
    with pytest.raises(ValidationError):
        make_flow("lorenz")
