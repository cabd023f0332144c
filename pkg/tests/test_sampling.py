import csv
import math

import numpy as np
import pytest

from stochbasin.committor import eps_absorption_stability, eps_committor
from stochbasin.dynamics import FlowMapSpec, PendulumParams, box_model_matrix, pendulum_flow
from stochbasin.errors import IntegrationFailure, ValidationError
from stochbasin.markov import SparseStochasticMatrix
from stochbasin.regions import Region, parse_region
from stochbasin.sampling import (FailedTrialsWarning, MarkovChainSystem, TimeRule,
                                 distribution_sampler, gbs_estimate, gbs_sweep,
                                 membership_estimate, point_sampler, standard_error,
                                 uniform_box_sampler, write_gbs_csv)

from oracles import leak_chain

EVERYWHERE = Region.from_predicate(lambda x: np.ones(len(x), dtype=bool))


def state_region(*states):
    return Region.from_predicate(lambda x: np.isin(x[:, 0].astype(int), states))


def test_entire_space_gives_one():
    est = gbs_estimate(pendulum_flow(), uniform_box_sampler([-3, -5], [3, 5]), EVERYWHERE,
                       TimeRule.fixed(2.0), 300)
    assert est.b_hat == 1.0 and est.stderr == 0.0 and est.n_failed == 0


def test_standard_error_example():
    assert standard_error(0.5, 100) == pytest.approx(0.05)
    assert standard_error(0.0, 10) == 0.0


def test_time_rules():
    assert TimeRule.parse("exp:0.01") == TimeRule.exponential(0.01)
    assert TimeRule.parse("uniform:50").mean == 25.0
    assert TimeRule.from_horizon("exponential", 100).value == 0.02
    assert TimeRule.from_horizon("exponential", 100, "reciprocal").value == 0.01
    assert TimeRule.for_chain_steps(0.5).value == pytest.approx(math.log(2))
    for bad in ("exp:-1", "exp:x", "gamma:2", "fixed:0"):
        with pytest.raises(ValidationError):
            TimeRule.parse(bad)
    t = TimeRule.exponential(0.1).draw(np.random.default_rng(0), 100_000)
    assert abs(t.mean() - 10.0) < 3 * 10.0 / math.sqrt(t.size)


def test_chain_steps_are_geometric():
    rule = TimeRule.for_chain_steps(0.2)
    k = np.floor(rule.draw(np.random.default_rng(1), 200_000))
    for j in range(4):
        assert abs((k >= j).mean() - 0.8 ** j) < 0.005


def test_markov_chain_system_steps():
    sys_ = MarkovChainSystem(leak_chain(1.0))
    out = sys_.evolve(np.zeros((5, 1)), np.array([0.0, 0.5, 1.0, 2.7, 9.0]),
                      np.random.default_rng(0))
    np.testing.assert_array_equal(out.ravel(), [0, 0, 1, 1, 1])
    P = np.array([[0.2, 0.3, 0.5], [0, 1, 0], [0.5, 0, 0.5]])
    nxt = MarkovChainSystem(P).step(np.zeros(100_000, dtype=np.int64), np.random.default_rng(2))
    np.testing.assert_allclose(np.bincount(nxt, minlength=3) / 1e5, P[0], atol=0.005)


@pytest.mark.parametrize("eps", [0.25, 0.05])
def test_matches_eps_absorption_stability(eps):
    M = box_model_matrix("transient", 0.3)
    rho = np.full(3, 1 / 3)
    exact = eps_absorption_stability(M, [0], rho, eps)
    est = gbs_estimate(MarkovChainSystem(M), distribution_sampler(rho), state_region(0),
                       TimeRule.for_chain_steps(eps), 20_000, seed=11)
    assert abs(est.b_hat - exact) <= 3 * est.stderr


def test_membership_matches_eps_committor():
    M = leak_chain(0.1)
    q = eps_committor(SparseStochasticMatrix.from_dense(M), [0], 0.1).q[0]
    est = membership_estimate(MarkovChainSystem(M), [0.0], state_region(0),
                              TimeRule.for_chain_steps(0.1), 20_000, seed=5)
    assert abs(est.b_hat - q) <= 3 * est.stderr


def test_limit_cycle_start_never_returns():
    p = PendulumParams()
    region = parse_region(f"ball:{float(p.fixed_point()[0])!r},0:0.5", ("phi", "omega"))
    # the rotating solution has omega near P/alpha = 5
    est = membership_estimate(pendulum_flow(p), [0.0, 5.0], region, TimeRule.fixed(100.0), 20)
    assert est.b_hat == 0.0


def test_seed_determinism():
    args = (pendulum_flow(sigma=0.1), uniform_box_sampler([-3, -5], [3, 5]),
            parse_region("ball:0.5236,0:1", ("phi", "omega")), TimeRule.uniform(20.0), 600)
    a = gbs_estimate(*args, seed=3, threads=1)
    b = gbs_estimate(*args, seed=3, threads=3)
    assert a == b


def test_failed_trials_counted():
    blow = FlowMapSpec(field=lambda x: x * x, dim=1, tau=1.0, dt=0.1)
    start = lambda rng, m: np.where(np.arange(m)[:, None] % 2 == 0, 20.0, -0.5)
    with pytest.warns(FailedTrialsWarning):
        est = gbs_estimate(blow, start, EVERYWHERE, TimeRule.fixed(5.0), 10)
    assert est.n_failed == 5 and est.n_samples == 5 and est.b_hat == 1.0
    with pytest.raises(IntegrationFailure):
        gbs_estimate(blow, point_sampler([20.0]), EVERYWHERE, TimeRule.fixed(5.0), 4)


def test_n_samples_validated():
    with pytest.raises(ValidationError):
        gbs_estimate(pendulum_flow(), point_sampler([0, 0]), EVERYWHERE, TimeRule.fixed(1), 0)


def test_sweep_and_csv(tmp_path):
    out = tmp_path / "gbs.csv"
    table = gbs_sweep(pendulum_flow(), uniform_box_sampler([-3, -5], [3, 5]), EVERYWHERE,
                      [TimeRule.fixed(1.0)], [0.0], 50, out=out)
    assert len(table) == 1 and table[0].b_hat == 1.0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["time_rule", "param", "sigma", "b_hat", "stderr", "n_samples",
                       "n_failed"]
    assert rows[1][0] == "fixed" and float(rows[1][3]) == 1.0
    big = gbs_sweep(pendulum_flow(), point_sampler([0, 0]), EVERYWHERE,
                    [TimeRule.fixed(1.0), TimeRule.uniform(1.0)], [0.0, 0.1], 5)
    assert len(big) == 4 and len({e.seed for e in big}) == 4
    write_gbs_csv(big, out)
    assert len(list(csv.reader(open(out)))) == 5
