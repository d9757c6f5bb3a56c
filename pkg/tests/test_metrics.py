import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeops.env import (
    LossSchedule,
    diamond_instance,
    diamond_safe_policy,
    lower_bound_instances,
)
from safeops.metrics import (
    OccupancyCache,
    baseline,
    compute_regret,
    compute_violation,
    exact_episode_occupancy,
    expected_costs,
    fit_growth_exponent,
    safety_flags,
    safety_from_costs,
    violation_from_costs,
)
from safeops.model import CmdpInstance, MixturePolicy, Policy, occupancy_from_policy

# -- regret ------------------------------------------------------------------------

def test_regret_of_best_policy_is_zero():
    i2 = lower_bound_instances(50, 0.1)[1]
    base = baseline(i2)
    inst, cum, _ = compute_regret(i2.loss_schedule, [base.q] * 50, i2, base)
    assert abs(cum[-1]) <= 1e-6


def test_regret_playing_a2():
    T = 40
    i2 = lower_bound_instances(T, 0.1)[1]
    q = occupancy_from_policy(i2.kernel, Policy.deterministic(i2.space, [1]))
    inst, cum, _ = compute_regret(i2.loss_schedule, [q] * T, i2)
    np.testing.assert_allclose(inst, 0.5, atol=1e-12)
    assert cum[-1] == pytest.approx(0.5 * T)


def test_baseline_shift():
    inst = diamond_instance(5, loss_kind="constant")
    c = 0.3
    loss = inst.loss_schedule.at(1) * 0.5
    a = CmdpInstance(inst.space, inst.kernel, LossSchedule.constant(loss, 5), inst.cost_dist,
                     inst.alpha, 5)
    b = CmdpInstance(inst.space, inst.kernel, LossSchedule.constant(loss + c, 5), inst.cost_dist,
                     inst.alpha, 5)
    ba, bb = baseline(a), baseline(b)
    assert bb.value == pytest.approx(ba.value + c * inst.L, abs=1e-9)
    # the old minimiser attains the shifted optimum
    assert float(np.sum((loss + c) * ba.q.state_action())) == pytest.approx(bb.value, abs=1e-9)


def test_baseline_rejects_infeasible_instance():
    inst = diamond_instance(5)
    bad = CmdpInstance(inst.space, inst.kernel, inst.loss_schedule, inst.cost_dist,
                       np.array([0.0]), 5)
    with pytest.raises(ValueError):
        baseline(bad)


@pytest.mark.parametrize("seed", range(3))
def test_baseline_beats_random_feasible(seed):
    inst = diamond_instance(200, seed=seed)
    base = baseline(inst)
    lbar = inst.loss_schedule.mean()
    rng = np.random.default_rng(seed)
    s = inst.space
    n_checked = 0
    while n_checked < 10_000:
        pi = rng.dirichlet(np.full(s.n_actions, 0.3), size=s.n_states)
        q = occupancy_from_policy(inst.kernel, Policy(s, pi)).state_action()
        if np.any(np.einsum("xa,xai->i", q, inst.G_bar) > inst.alpha):
            continue
        assert base.value <= float(np.sum(lbar * q)) + 1e-9
        n_checked += 1


# -- violation ---------------------------------------------------------------------

def test_violation_examples():
    assert violation_from_costs([[0.3], [0.5], [0.1]], [0.5])[-1] == 0.0
    v = violation_from_costs([[0.7], [0.7], [0.7]], [0.5])
    np.testing.assert_allclose(v, [0.2, 0.4, 0.6])
    v2 = violation_from_costs([[1.1, 1.4]], [0.5, 0.5])
    assert v2[-1] == pytest.approx(0.9)


def test_violation_max_outside_sum():
    # constraint 1 leads early, constraint 2 late
    costs = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.5], [0.0, 1.5]])
    v = violation_from_costs(costs, [0.5, 0.5])
    assert v[-1] == pytest.approx(max(1.0, 2.0))
    pointwise = np.maximum(costs - 0.5, 0).max(axis=1).sum()
    assert pointwise == pytest.approx(3.0) and v[-1] != pointwise


@given(st.lists(st.lists(st.floats(0, 2), min_size=2, max_size=2), min_size=1, max_size=20))
def test_violation_nondecreasing(rows):
    v = violation_from_costs(rows, [0.5, 1.0])
    assert np.all(np.diff(v) >= -1e-12) and v[0] >= 0


def test_compute_violation_from_occupancies():
    i1 = lower_bound_instances(128, 0.1)[0]
    q = occupancy_from_policy(i1.kernel, Policy.deterministic(i1.space, [0]))
    v = compute_violation([q] * 4, i1.G_bar, i1.alpha)
    assert v[-1] == pytest.approx(4 / 32)


# -- safety ------------------------------------------------------------------------

def test_safety_examples():
    inst = diamond_instance(5)
    mix = MixturePolicy((diamond_safe_policy(), Policy.uniform(inst.space)), np.array([1.0, 0.0]))
    q = exact_episode_occupancy(inst.kernel, mix)
    assert safety_flags([q], inst.G_bar, inst.alpha).tolist() == [True]
    assert safety_from_costs([[0.5]], [0.5]).tolist() == [True]
    assert safety_from_costs([[0.5 + 1e-6]], [0.5]).tolist() == [False]
    assert safety_from_costs([[0.5 * (0.29 + 0.69)]], [0.5]).tolist() == [True]


def test_safety_of_mixture_expectation():
    i1 = lower_bound_instances(128, 0.1)[0]
    s = i1.space
    a1, a2 = Policy.deterministic(s, [0]), Policy.deterministic(s, [1])
    assert not safety_flags([occupancy_from_policy(i1.kernel, a1)], i1.G_bar, i1.alpha)[0]
    mix = MixturePolicy((a1, a2), np.array([0.5, 0.5]))
    q = exact_episode_occupancy(i1.kernel, mix)
    c = expected_costs([q], i1.G_bar, s)[0, 0]
    assert c == pytest.approx(0.5 * (0.5 + 1 / 32) + 0.5 * 0.4)
    assert safety_flags([q], i1.G_bar, i1.alpha, s)[0]


def test_occupancy_cache_matches_direct(diamond, rng):
    cache = OccupancyCache(diamond.kernel, maxsize=2)
    pols = [Policy(diamond.space, rng.dirichlet([1, 1], size=4)) for _ in range(5)]
    mix = MixturePolicy(tuple(pols), np.full(5, 0.2))
    for _ in range(2):
        a = exact_episode_occupancy(diamond.kernel, mix, cache).q
        b = exact_episode_occupancy(diamond.kernel, mix).q
        np.testing.assert_allclose(a, b, atol=1e-14)
    assert len(cache._store) == 2


# -- growth fit ----------------------------------------------------------------------

@pytest.mark.parametrize("f, p", [(lambda t: t, 1.0), (np.sqrt, 0.5), (lambda t: 5 + 0 * t, 0.0)])
def test_growth_fit_examples(f, p):
    t = np.arange(1, 10_001, dtype=float)
    fit = fit_growth_exponent(f(t))
    assert fit.p_hat == pytest.approx(p, abs=0.01)


def test_growth_fit_degenerate():
    fit = fit_growth_exponent(np.zeros(100))
    assert fit.degenerate and fit.p_hat == 0.0
