import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffarb.environments import (
    END,
    ExplorationObjective,
    PpConfig,
    RwsConfig,
    build_pp,
    build_rws,
    exploration_objective,
    pp_lite_config,
    rws_lite_config,
    rws_payoff,
)
from diffarb.errors import DomainError, StateSpaceError
from diffarb.game import SoftmaxPolicyPair, reward_tensor
from diffarb.mg_solvers import SolveConfig, nash_solve
from tests import oracles

inventories = st.tuples(*[st.integers(0, 4)] * 3).filter(lambda v: sum(v) > 0)

STAY, UP, DOWN, LEFT, RIGHT = range(5)


@pytest.fixture(scope="module")
def rws_lite():
    return build_rws(rws_lite_config())


def _deterministic(world, action_1, action_2, strength=60.0):
    """Near-deterministic policies that always play the given actions."""
    g = world.game

    def logits(n_actions, a):
        z = np.zeros((g.n_states, n_actions))
        z[:, a] = strength
        return z[:, :-1] - z[:, -1:]

    return SoftmaxPolicyPair(logits(g.n_actions_1, action_1), logits(g.n_actions_2, action_2))


def _transition_checks(world):
    g = world.game
    P = g.transition
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    end = world.labels.index(END)
    rows = P[end * g.n_actions_1 * g.n_actions_2 : (end + 1) * g.n_actions_1 * g.n_actions_2]
    assert np.all(rows[:, end].toarray() == 1.0)
    assert np.all(g.base_reward[end] == 0) and np.all(world.scheme.features[:, end] == 0)


# ---------------------------------------------------------------------------
# confrontation payoff


def test_rock_against_paper_loses():
    assert rws_payoff((1, 0, 0), (0, 1, 0)) == -1.0
    assert rws_payoff((0, 1, 0), (1, 0, 0)) == 1.0
    assert rws_payoff((0, 0, 1), (0, 1, 0)) == 1.0


def test_mixed_inventories_match_direct_computation():
    assert rws_payoff((2, 1, 1), (1, 1, 2)) == pytest.approx(oracles.rps_payoff_direct((2, 1, 1), (1, 1, 2)), abs=1e-15)
    assert rws_payoff((1, 1, 2), (2, 1, 1)) == -rws_payoff((2, 1, 1), (1, 1, 2))


@given(inventories, inventories)
@settings(max_examples=200, deadline=None)
def test_payoff_is_antisymmetric(v0, v1):
    assert rws_payoff(v0, v1) == -rws_payoff(v1, v0)
    assert rws_payoff(v0, v0) == 0.0
    assert rws_payoff(v0, v1) == pytest.approx(oracles.rps_payoff_direct(v0, v1), abs=1e-14)


def test_bad_inventories_are_rejected():
    for bad in [(0, 0, 0), (-1, 1, 1), (1, 1)]:
        with pytest.raises(DomainError):
            rws_payoff(bad, (1, 1, 1))


# ---------------------------------------------------------------------------
# Running with Scissors


@pytest.mark.parametrize("make", [rws_lite_config, RwsConfig], ids=["lite", "3x3"])
def test_rws_state_count_matches_forward_simulation(make):
    cfg = make()
    world = build_rws(cfg)
    occupied = [c for c, _ in cfg.pools] + list(cfg.theta_coins)
    spawn = cfg.spawn or [(r, c) for r in range(cfg.side) for c in range(cfg.side) if (r, c) not in occupied]
    expected = oracles.rws_reachable_count(cfg.side, cfg.horizon, cfg.inventory_cap, cfg.pools, cfg.theta_coins, spawn)
    assert world.n_states == expected
    _transition_checks(world)


def test_rws_without_coins_pays_only_at_the_confrontation(rws_lite):
    r = reward_tensor(rws_lite.game, rws_lite.scheme, [0.0])
    for s, label in enumerate(rws_lite.labels):
        if label[0] == "conf":
            _, _, _, inv1, inv2 = label
            assert np.all(r[s] == rws_payoff(inv1, inv2))
        else:
            assert np.all(r[s] == 0.0)


def test_rws_coin_features_are_signed_by_collector(rws_lite):
    feats = rws_lite.scheme.features[0]
    coin = 3  # cell (1, 1)
    nxt1, nxt2 = rws_lite.next_pos
    seen = set()
    for s, label in enumerate(rws_lite.labels):
        if label[0] != "move":
            continue
        flag = label[7][0]
        for a1, a2 in itertools.product(range(5), repeat=2):
            hit1, hit2 = nxt1[s, a1, a2] == coin, nxt2[s, a1, a2] == coin
            expected = flag * (float(hit1) - float(hit2))
            assert feats[s, a1, a2] == expected
            seen.add(expected)
    assert seen == {-1.0, 0.0, 1.0}


def test_rws_inventory_cap_is_respected(rws_lite):
    cap = rws_lite.config.inventory_cap
    for label in rws_lite.labels:
        if label[0] in ("move", "conf"):
            invs = label[4:6] if label[0] == "move" else label[3:5]
            assert max(max(v) for v in invs) <= cap


def test_rws_rejects_overlaps_and_overflow():
    with pytest.raises(DomainError):
        build_rws(rws_lite_config(theta_coins=((0, 0),)))
    with pytest.raises(StateSpaceError):
        build_rws(rws_lite_config(max_states=50))
    with pytest.raises(DomainError):
        RwsConfig(theta_bounds=())


def test_single_cell_grid_always_has_full_exploration():
    world = build_rws(RwsConfig(side=1, horizon=2, pools=(), theta_coins=(), theta_bounds=()))
    assert world.n_cells == 1
    policy = SoftmaxPolicyPair.uniform(world.game)
    f, g_phi, g_theta, _ = exploration_objective(world, policy)
    assert f == 0.0 and np.all(g_phi == 0) and g_theta.shape == (0,)


# ---------------------------------------------------------------------------
# Predator-prey


def _pp_state(world, pred, prey, t=0):
    side = world.side
    for s, label in enumerate(world.labels):
        if label[0] == "move" and label[1] == t and label[2] == pred[0] * side + pred[1] and label[3] == prey[0] * side + prey[1]:
            return s
    raise LookupError


def test_pp_catch_pays_the_predator_and_ends():
    world = build_pp(pp_lite_config(predator_spawn=((0, 0),), prey_spawn=((0, 1),)))
    s = _pp_state(world, (0, 0), (0, 1))
    end = world.labels.index(END)
    P = world.game.transition
    for a2 in (STAY, DOWN, RIGHT):  # the prey either stays put, moves away, or swaps
        row = (s * 9 + RIGHT) * 5 + a2
        if a2 == RIGHT:
            continue
        assert world.game.base_reward[s, RIGHT, a2] == 1.0 and P[row, end] == 1.0
    # predator steps right while the prey steps left: the two swap cells, which is a catch
    assert world.game.base_reward[s, RIGHT, LEFT] == 1.0
    # prey escapes right before the predator arrives: no catch
    assert world.game.base_reward[s, RIGHT, RIGHT] == 0.0


def test_pp_prey_reaching_nest_wins():
    world = build_pp(pp_lite_config(predator_spawn=((0, 0),), prey_spawn=((2, 1),)))
    s = _pp_state(world, (0, 0), (2, 1))
    end = world.labels.index(END)
    for a1 in range(9):
        assert world.game.base_reward[s, a1, RIGHT] == -1.0
        assert world.game.transition[(s * 9 + a1) * 5 + RIGHT, end] == 1.0


def test_pp_two_cell_moves_and_shelters():
    world = build_pp(pp_lite_config())
    shelter = 1 * 3 + 1
    for p in world.pos:
        assert shelter not in set(p.tolist())
    s = _pp_state(world, (0, 0), (1, 2))
    nxt = world.next_pos[0]
    assert nxt[s, 8, STAY] == 2  # two cells right
    assert nxt[s, 6, STAY] == 6  # two cells down
    assert nxt[s, 1, STAY] == 0  # off-grid move is a stay


def test_pp_pool_features_are_zero_sum():
    # the prey spawns next to the pool so that either player can collect it
    world = build_pp(pp_lite_config(prey_spawn=((1, 0), (1, 2))))
    feats = world.scheme.features[0]
    pool = 2 * 3 + 0
    nxt1, nxt2 = world.next_pos
    values = set()
    for s, label in enumerate(world.labels):
        if label[0] != "move":
            continue
        for a1, a2 in itertools.product(range(9), range(5)):
            if world.game.base_reward[s, a1, a2] != 0:  # terminal steps pay nothing else
                assert feats[s, a1, a2] == 0
                continue
            expected = label[4][0] * (float(nxt1[s, a1, a2] == pool) - float(nxt2[s, a1, a2] == pool))
            assert feats[s, a1, a2] == expected
            values.add(expected)
    assert values == {-1.0, 0.0, 1.0}
    _transition_checks(world)


def test_pp_config_validation():
    with pytest.raises(DomainError):
        PpConfig(nest=(1, 2))
    with pytest.raises(DomainError):
        build_pp(pp_lite_config(prey_spawn=((2, 2),)))
    with pytest.raises(DomainError):
        build_pp(pp_lite_config(theta_pools=((1, 1),)))


def _pursuit_check(cfg, lam):
    world = build_pp(cfg)
    res = nash_solve(world.game, world.scheme, np.zeros(0), SolveConfig(lam=lam, tol=1e-9))
    value = float(world.game.rho0 @ res.V)
    expected = oracles.pursuit_value(
        cfg.side, cfg.horizon, cfg.nest, cfg.shelters, cfg.predator_spawn, cfg.prey_spawn, cfg.gamma, lam
    )
    return value, expected


def test_pursuit_value_matches_backward_induction_small():
    cfg = pp_lite_config(theta_pools=(), theta_bounds=(), horizon=4)
    value, expected = _pursuit_check(cfg, 0.1)
    assert value == pytest.approx(expected, abs=1e-7)


@pytest.mark.slow
def test_pursuit_value_matches_backward_induction_4x4():
    cfg = PpConfig(fixed_pools=(), theta_pools=(), theta_bounds=())
    value, expected = _pursuit_check(cfg, 0.1)
    assert value == pytest.approx(expected, abs=1e-7)


# ---------------------------------------------------------------------------
# exploration objective


def test_full_coverage_gives_zero_loss(rws_lite):
    # both players step down from the top row, covering all four cells at once
    policy = _deterministic(rws_lite, DOWN, DOWN)
    f, _, _, _ = exploration_objective(rws_lite, policy, budget=200, rng=np.random.default_rng(0))
    assert f == 0.0


def test_standing_still_explores_only_spawn_cells(rws_lite):
    policy = _deterministic(rws_lite, STAY, STAY)
    for union in (True, False):
        f, _, _, _ = exploration_objective(rws_lite, policy, budget=200, rng=np.random.default_rng(0), union=union)
        assert f == pytest.approx(1.0 - 2 / 4, abs=1e-15)


def test_exploration_rate_stays_in_unit_interval(rws_lite):
    rng = np.random.default_rng(2)
    policy = SoftmaxPolicyPair.random(rws_lite.game, rng, scale=2.0)
    f, *_ = exploration_objective(rws_lite, policy, budget=500, rng=rng)
    assert 0.0 <= f <= 1.0
    f_sum, *_ = exploration_objective(rws_lite, policy, budget=500, rng=np.random.default_rng(2), union=False)
    assert f_sum <= f + 1e-12  # the per-player sum counts shared cells twice


def _start_coordinates(world, n=6):
    """Policy coordinates at the initial states, where the exploration gradient is largest."""
    starts = np.flatnonzero(world.game.rho0 > 0)
    width = world.game.n_actions_1 - 1
    return [int(s * width + j) for s in starts for j in range(width)][:n]


def test_exact_gradient_matches_finite_differences(rws_lite):
    policy = SoftmaxPolicyPair.random(rws_lite.game, np.random.default_rng(4), scale=0.5)
    _, g, g_theta, se = exploration_objective(rws_lite, policy)
    assert se is None and np.all(g_theta == 0)
    phi = policy.vector()
    coords = _start_coordinates(rws_lite)

    def f_along(i):
        return lambda x: exploration_objective(rws_lite, policy.with_vector(np.where(np.arange(phi.size) == i, x[0], phi)))[0]

    for i in coords:
        fd = oracles.central_gradient(f_along(i), np.array([phi[i]]), h=1e-4)[0]
        assert g[i] == pytest.approx(fd, abs=1e-7)


def test_sampled_gradient_is_within_four_standard_errors(rws_lite):
    policy = SoftmaxPolicyPair.random(rws_lite.game, np.random.default_rng(4), scale=0.5)
    _, exact, _, _ = exploration_objective(rws_lite, policy)
    f, g, _, se = exploration_objective(rws_lite, policy, budget=20_000, rng=np.random.default_rng(9))
    coords = _start_coordinates(rws_lite)
    assert np.all(np.abs(g[coords] - exact[coords]) <= 4 * se[coords])
    with pytest.raises(ValueError):
        exploration_objective(rws_lite, policy, budget=0)


def test_objective_wrapper_caches_and_matches(rws_lite):
    obj = ExplorationObjective(rws_lite)
    policy = SoftmaxPolicyPair.uniform(rws_lite.game)
    f, g, _, _ = exploration_objective(rws_lite, policy)
    assert obj.value([0.0], policy) == f
    assert np.array_equal(obj.grad_phi([0.0], policy), g)
    assert np.all(obj.grad_theta([0.0], policy) == 0)
