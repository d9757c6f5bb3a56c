import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeops.env import (
    Trajectory,
    bandit_space,
    diamond_instance,
    diamond_safe_policy,
    lower_bound_instances,
    random_instance,
    run_episode,
)
from safeops.learners import (
    CVOPS,
    SOPS,
    SVOPS,
    AnytimePrimal,
    DegenerateEstimate,
    Oracle,
    build_mixture_policy,
    cvops_step,
    cvops_stopping_condition,
    estimate_slater,
    initial_mixing,
    loss_estimator,
    sops_mixing_probability,
    sops_step,
    svops_step,
)
from safeops.learners.cvops import epoch_of, epoch_rate, stopping_threshold
from safeops.metrics import exact_episode_occupancy
from safeops.model import CmdpInstance, Policy, occupancy_from_policy
from safeops.opt.kl import ProjectionResult, kl_project_unconstrained
from safeops.opt.offline import slater_margin
from safeops.opt.polytope import OccupancyPolytope


def zero_cost_diamond(T):
    inst = diamond_instance(T)
    return CmdpInstance(inst.space, inst.kernel, inst.loss_schedule,
                        type(inst.cost_dist)(np.zeros_like(inst.G_bar)), np.array([0.5]), T)


# -- loss estimator -----------------------------------------------------------------

def _bandit_traj(a, loss=1.0):
    return Trajectory(np.array([0, 1]), np.array([a]), np.array([loss]), np.zeros((1, 1)))


def test_loss_estimator_examples():
    s = bandit_space()
    u = np.array([[0.5, 0.5], [0.0, 0.0]])
    tr = _bandit_traj(0)
    assert loss_estimator(tr, tr.losses, u, 0.0, s)[0, 1] == 0.0
    assert loss_estimator(tr, tr.losses, u, 0.0, s)[0, 0] == 2.0
    assert loss_estimator(tr, tr.losses, u, 0.5, s)[0, 0] == 1.0


# -- SV-OPS ----------------------------------------------------------------------------

def test_svops_initial_is_uniform(diamond):
    lr = SVOPS(diamond.space, diamond.alpha, 100, 0.05)
    np.testing.assert_allclose(lr.omd.q_hat, diamond.space.uniform_occupancy().q)


def test_svops_zero_loss_fixed_point():
    # the first iterate is the projection of the uniform measure; a zero-loss
    # step leaves the multiplicative update unchanged and re-projects it
    inst = diamond_instance(10, loss_kind="constant")
    lr = SVOPS(inst.space, inst.alpha, 10, 0.05, oracle=Oracle(inst.kernel, inst.G_bar))
    poly = OccupancyPolytope.from_kernel(inst.kernel)
    ref = kl_project_unconstrained(inst.space.uniform_occupancy().q, poly).q.q
    np.testing.assert_allclose(lr.omd.q_hat, ref, atol=1e-10)
    tr = run_episode(inst, 1, lr.policy, np.random.default_rng(0))
    lr.step(Trajectory(tr.states, tr.actions, np.zeros_like(tr.losses), tr.costs))
    np.testing.assert_allclose(lr.omd.q_hat, ref, atol=1e-8)


def test_svops_oracle_first_policy_is_feasible():
    # uniform play violates this instance; the oracle start must not
    inst = diamond_instance(10)
    tight = CmdpInstance(inst.space, inst.kernel, inst.loss_schedule, inst.cost_dist,
                         np.array([0.5]), 10)
    q_unif = occupancy_from_policy(inst.kernel, Policy.uniform(inst.space)).state_action()
    assert np.einsum("xa,xai->i", q_unif, inst.G_bar)[0] > 0.5
    lr = SVOPS(tight.space, tight.alpha, 10, 0.05, oracle=Oracle(tight.kernel, tight.G_bar))
    q = occupancy_from_policy(tight.kernel, lr.policy).state_action()
    assert np.einsum("xa,xai->i", q, tight.G_bar)[0] <= 0.5 + 1e-8


def test_svops_i2_oracle_moves_to_a1():
    T = 2000
    i2 = lower_bound_instances(T, 0.1)[1]
    lr = SVOPS(i2.space, i2.alpha, T, 0.05, oracle=Oracle(i2.kernel, i2.G_bar))
    rng = np.random.default_rng(0)
    for t in range(1, T + 1):
        lr, _, diag = svops_step(lr, run_episode(i2, t, lr.policy, rng))
        assert diag["proj_feasible"]
    assert lr.omd.q_hat[0] > 0.9


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_svops_oracle_feasible_every_episode(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance((1, 2, 2, 1), 2, 2, 0.2, rng, rho_min=0.05, T=30)
    lr = SVOPS(inst.space, inst.alpha, 30, 0.05, oracle=Oracle(inst.kernel, inst.G_bar))
    for t in range(1, 31):
        diag = lr.step(run_episode(inst, t, lr.policy, rng))
        assert diag["proj_feasible"]
        q = inst.space.triples_to_sa(lr.omd.q_hat)
        assert np.all(np.einsum("xa,xai->i", q, inst.G_bar) <= inst.alpha + 1e-8)


def test_svops_estimated_iterate_stays_in_brackets(diamond, rng):
    lr = SVOPS(diamond.space, diamond.alpha, 200, 0.05)
    for t in range(1, 41):
        lr.step(run_episode(diamond, t, lr.policy, rng))
        poly = OccupancyPolytope.from_confidence(lr.omd.conf)
        assert poly.max_violation(lr.omd.q_hat) <= 1e-8


# -- mixing probability ------------------------------------------------------------

def test_mixing_zero_when_all_feasible():
    u = np.array([[0.5, 0.5], [0.0, 0.0]])
    G = np.full((2, 2, 1), 0.2)
    assert sops_mixing_probability(G, np.zeros((2, 2)), u, [1.0], [0.5], 2) == 0.0


def test_mixing_clipped_example():
    # (g + xi)^T u = 3 clipped to L = 2
    u = np.array([[1.0, 0.0], [0.0, 0.0]])
    G = np.zeros((2, 2, 1))
    G[0, 0, 0] = 2.0
    Xi = np.zeros((2, 2))
    Xi[0, 0] = 1.0
    lam = sops_mixing_probability(G, Xi, u, [1.0], [0.5], 2)
    assert lam == pytest.approx(2 / 3, abs=1e-15)
    assert lam == pytest.approx(initial_mixing([1.0], [0.5], 2), abs=1e-15)


def test_mixing_max_over_constraints():
    u = np.array([[1.0, 0.0], [0.0, 0.0]])
    G = np.zeros((2, 2, 2))
    # constraint 1: c = 2, alpha 1, beta 0.5 -> 2/3; constraint 2: c = 1.5, alpha 1.25, beta 0.5 -> 1/4
    G[0, 0] = [2.0, 1.5]
    lam = sops_mixing_probability(G, np.zeros((2, 2)), u, [1.0, 1.25], [0.5, 0.5], 2)
    assert lam == pytest.approx(2 / 3)


def test_mixing_rejects_bad_beta():
    with pytest.raises(ValueError):
        sops_mixing_probability(np.zeros((2, 2, 1)), np.zeros((2, 2)), np.zeros((2, 2)), [0.5], [0.5], 1)


@given(st.floats(0.01, 1.99), st.floats(0.0, 0.99), st.floats(0, 5))
def test_mixing_below_one_and_lambda0(alpha, frac, raw):
    beta = alpha * frac
    lam = sops_mixing_probability(np.full((2, 2, 1), raw), np.zeros((2, 2)),
                                  np.array([[1.0, 0.0], [0.0, 0.0]]), [alpha], [beta], 2)
    assert 0.0 <= lam < 1.0
    assert lam <= initial_mixing([alpha], [beta], 2) + 1e-12


# -- S-OPS ------------------------------------------------------------------------------

def test_sops_initial_lambda(dspace):
    lr = SOPS(dspace, [1.0], 100, 0.05, Policy.uniform(dspace), [0.5])
    assert lr.lam == pytest.approx(2 / 3)
    assert lr.policy.weights.tolist() == pytest.approx([2 / 3, 1 / 3])


def test_sops_oracle_feasible_hat_gives_zero_lambda():
    inst = diamond_instance(50, loss_kind="constant")
    lr = SOPS(inst.space, inst.alpha, 50, 0.05, diamond_safe_policy(), [0.2],
              oracle=Oracle(inst.kernel, inst.G_bar))
    rng = np.random.default_rng(0)
    lr, pol, diag = sops_step(lr, run_episode(inst, 1, lr.policy, rng))
    # uniform-ish hat policy costs well under alpha = 1 with exact costs
    assert diag["lam"] == 0.0
    assert pol.weights[0] == 0.0


def test_sops_infeasible_projection_plays_safe_policy(monkeypatch):
    inst = diamond_instance(10)
    lr = SOPS(inst.space, inst.alpha, 10, 0.05, diamond_safe_policy(), [0.2])
    monkeypatch.setattr("safeops.learners.core.kl_project",
                        lambda *a, **k: ProjectionResult("infeasible"))
    diag = lr.step(run_episode(inst, 1, lr.policy, np.random.default_rng(0)))
    assert diag["lam"] == 1.0 and not diag["proj_feasible"]
    assert lr.policy.weights.tolist() == [1.0, 0.0]


def test_sops_pessimism_and_lambda_bound(diamond, rng):
    lr = SOPS(diamond.space, diamond.alpha, 200, 0.05, diamond_safe_policy(), [0.2])
    for t in range(1, 201):
        diag = lr.step(run_episode(diamond, t, lr.policy, rng))
        if diag["proj_feasible"]:
            assert diag["pessimism_ok"]
        if diag["lam"] != 1.0:
            assert diag["lam"] <= lr.lam0 + 1e-12


def test_sops_pessimism_identity_recomputed(diamond, rng):
    lr = SOPS(diamond.space, diamond.alpha, 100, 0.05, diamond_safe_policy(), [0.2])
    for t in range(1, 51):
        diag = lr.step(run_episode(diamond, t, lr.policy, rng))
        if not diag["proj_feasible"]:
            continue
        cost = lr.omd.cost
        c = np.minimum(np.einsum("xai,xa->i", cost.g_hat + cost.xi[..., None], lr.u_hat), lr.L)
        assert np.all(lr.lam * lr.beta + (1 - lr.lam) * c <= lr.alpha + 1e-9)


# -- anytime primal -----------------------------------------------------------------

def test_epoch_of():
    assert [epoch_of(t) for t in (1, 2, 3, 4, 7, 8)] == [0, 1, 1, 2, 2, 3]


def test_epoch_boundaries_reset(rng):
    i2 = lower_bound_instances(64, 0.1)[1]
    ap = AnytimePrimal(i2.space, 1, 64, 0.05, 0.5)
    starts = []
    for t in range(1, 40):
        before = ap.epoch
        ap.step(run_episode(i2, t, ap.policy, rng), np.array([0.3]))
        if ap.epoch != before:
            starts.append(t + 1)
            np.testing.assert_allclose(ap.omd.q_hat, i2.space.uniform_occupancy().q)
            assert ap.omd.eta == ap.omd.gamma == epoch_rate(i2.space, ap.epoch, 0.05)
    assert starts == [2, 4, 8, 16, 32]


def test_rescale_map():
    ap = AnytimePrimal(bandit_space(), 1, 10, 0.05, alpha_max=1.0)   # L = 1
    np.testing.assert_allclose(ap.rescale([-1.0, 1.0, 0.0]), [0.0, 1.0, 0.5])
    assert ap.scale == 2.0
    # a constant fed loss stays constant after rescaling
    out = ap.rescale(np.full(5, 0.25))
    assert np.all(out == out[0])


def test_fed_loss_single_constraint(monkeypatch):
    inst = diamond_instance(20)
    lr = CVOPS(inst.space, inst.alpha, 20, 0.05)
    seen = []
    orig = lr.primal.step
    monkeypatch.setattr(lr.primal, "step", lambda traj, fed: seen.append(fed) or orig(traj, fed))
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        tr = run_episode(inst, t, lr.policy, rng)
        lr.step(tr)
        assert lr.phi.tolist() == [1.0]
        assert seen[-1].sum() == pytest.approx(float(np.sum(tr.costs[:, 0] - 1.0 / inst.L)))


# -- stopping and Slater estimate -----------------------------------------------------

def test_stopping_first_episode_false():
    cp, cd = 1.0, 1.0
    for s in (-2.0, 0.0, 2.0):
        assert not cvops_stopping_condition([s], 1, cp, cd, 2, 0.05)
    assert stopping_threshold(1, cp, cd, 2, 0.05) == pytest.approx(16 * math.sqrt(2 * math.log(20)) + 2)


def test_stopping_zero_cost_example():
    thr = stopping_threshold(10_000, 1.0, 1.0, 2, 0.05)
    expect = 2 * math.sqrt(1e4 * math.log(1e4)) + 16 * math.sqrt(2e4 * math.log(20)) + 200
    assert thr == pytest.approx(expect, rel=1e-12)
    assert thr == pytest.approx(4723, abs=1.0)
    assert cvops_stopping_condition([-5000.0], 10_000, 1.0, 1.0, 2, 0.05)
    assert not cvops_stopping_condition([0.0], 10_000, 1.0, 1.0, 2, 0.05)


def test_estimate_slater_examples():
    rho = estimate_slater([-500.0], 1000, 2, 0.05)
    assert rho == pytest.approx(0.5 - 0.004 * math.sqrt(2000 * math.log(20)), rel=1e-12)
    assert rho == pytest.approx(0.1904, abs=1e-4)
    assert estimate_slater([-0.5e12], 1e12, 2, 0.05) == pytest.approx(0.5, abs=1e-4)
    assert estimate_slater([-100.0, -50.0], 1000, 2, 0.05) == estimate_slater([-50.0], 1000, 2, 0.05)


def test_build_mixture_policy():
    s = bandit_space()
    i2 = lower_bound_instances(64, 0.1)[1]
    a1, a2 = Policy.deterministic(s, [0]), Policy.deterministic(s, [1])
    mix = build_mixture_policy([a1, a2])
    assert exact_episode_occupancy(i2.kernel, mix).q[0] == pytest.approx(0.5)
    same = build_mixture_policy([a1, a1, a1])
    np.testing.assert_allclose(same.weights, 1 / 3)
    assert exact_episode_occupancy(i2.kernel, same).q[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_mixture_policy([])


# -- CV-OPS ----------------------------------------------------------------------------

def _first_stop(cp, cd, L, delta, slope):
    t = 1
    while not -slope * t >= stopping_threshold(t, cp, cd, L, delta):
        t += 1
    return t


def test_cvops_zero_cost_replay():
    T = 12_000
    inst = zero_cost_diamond(T)
    t_bar = _first_stop(1.0, 1.0, 2, 0.05, -0.5)
    lr = CVOPS(inst.space, inst.alpha, T, 0.05, cp=1.0, cd=1.0,
               oracle=Oracle(inst.kernel, inst.G_bar))
    rng = np.random.default_rng(0)
    phases = []
    for t in range(1, t_bar + 3):
        lr, _, diag = cvops_step(lr, run_episode(inst, t, lr.policy, rng))
        phases.append(lr.phase)
    assert lr.t_bar == t_bar
    assert lr.rho_hat == pytest.approx(0.5 - 4 / t_bar * math.sqrt(2 * t_bar * math.log(20)))
    assert lr.rho_hat > 0
    assert phases.index("running") == t_bar - 1
    assert phases[t_bar - 1:] == ["running"] * 3
    # delegation: S-OPS with the uniform mixture of played policies
    assert isinstance(lr.policy.components[0], type(lr.pi_diamond_hat))
    assert lr.nested.pi_diamond is lr.pi_diamond_hat
    np.testing.assert_allclose(lr.pi_diamond_hat.weights, 1 / t_bar)
    np.testing.assert_allclose(lr.nested.beta, inst.alpha - lr.rho_hat)
    assert diag["phase"] == "running"


def test_cvops_no_stop_when_cost_equals_threshold():
    inst = diamond_instance(10)
    lr = CVOPS(inst.space, inst.alpha, 10, 0.05, cp=1.0, cd=1.0)
    for t in range(1, 11):
        # g = alpha / L exactly at every step
        tr = Trajectory(np.array([0, 1, 3]), np.array([0, 0]), np.zeros(2), np.full((2, 1), 0.5))
        lr.step(tr)
        assert lr.S.tolist() == [0.0]
    assert lr.phase == "estimating" and lr.t_bar is None


def test_cvops_degenerate_estimate():
    inst = diamond_instance(10)
    lr = CVOPS(inst.space, inst.alpha, 10, 0.05)
    lr.t = 5
    lr.R = np.array([1.0])
    lr.played = [Policy.uniform(inst.space)] * 5
    with pytest.raises(DegenerateEstimate):
        lr._transition()


@pytest.mark.slow
def test_cvops_sandwich():
    """rho/2 <= rho_hat <= rho and the mixture keeps a margin of rho_hat."""
    T = 20_000
    inst = lower_bound_instances(T, 0.4)[1]
    rho, _ = slater_margin(inst.kernel, inst.G_bar, inst.alpha)
    good = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        lr = CVOPS(inst.space, inst.alpha, T, 0.05, cp=1.0)
        t = 0
        while lr.phase == "estimating" and t < T:
            t += 1
            lr.step(run_episode(inst, t, lr.policy, rng))
        if lr.t_bar is None:
            continue
        q = exact_episode_occupancy(inst.kernel, lr.pi_diamond_hat).state_action()
        margin = float(np.min(inst.alpha - np.einsum("xa,xai->i", q, inst.G_bar)))
        good += rho / 2 <= lr.rho_hat <= rho and margin >= lr.rho_hat
    assert good >= 90


# -- checkpoint round trip ----------------------------------------------------------

def _make(kind, inst):
    if kind == "svops":
        return SVOPS(inst.space, inst.alpha, 200, 0.05)
    if kind == "sops":
        return SOPS(inst.space, inst.alpha, 200, 0.05, diamond_safe_policy(), [0.2])
    return CVOPS(inst.space, inst.alpha, 200, 0.05, cp=0.0, cd=0.0)


@pytest.mark.parametrize("kind", ["svops", "sops", "cvops"])
def test_state_dict_round_trip(kind):
    inst = diamond_instance(200)
    a = _make(kind, inst)
    rng = np.random.default_rng(3)
    t = 0
    for t in range(1, 31):
        a.step(run_episode(inst, t, a.policy, rng))
    b = _make(kind, inst)
    b.load_state_dict(json.loads(json.dumps(a.state_dict())))
    state = rng.bit_generator.state
    rng_b = np.random.default_rng()
    rng_b.bit_generator.state = state
    for t in range(31, 61):
        ta = run_episode(inst, t, a.policy, rng)
        tb = run_episode(inst, t, b.policy, rng_b)
        np.testing.assert_array_equal(ta.actions, tb.actions)
        a.step(ta)
        b.step(tb)
    assert json.dumps(a.state_dict()) == json.dumps(b.state_dict())
