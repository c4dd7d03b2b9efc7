"""Desk-scale tabular grid worlds: Running-with-Scissors and Predator-Prey.

Both builders enumerate the reachable joint states breadth-first from the
initial distribution.  Every state carries an explicit time counter, and
episodes end in a single absorbing state, so the finite-horizon and
infinite-horizon versions of each game have the same equilibrium.

Cells are ``(row, col)`` pairs and are numbered ``row * side + col``.
Move actions are ``0 stay, 1 up, 2 down, 3 left, 4 right``; the predator's
actions ``5..8`` repeat the four directions with a two-cell stride.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, StateSpaceError
from .game import IncentiveScheme, TabularMarkovGame, enumerate_trajectories, sample_trajectories
from .implicit import DesignerObjective

RPS_MATRIX = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
ROCK, PAPER, SCISSORS = 0, 1, 2
DIRECTIONS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
END = ("end",)


def rws_payoff(inv0, inv1) -> float:
    """Confrontation payoff ``(v0/|v0|) M (v1/|v1|)`` for player 1; player 2 gets the negation."""
    v0, v1 = np.asarray(inv0, dtype=float), np.asarray(inv1, dtype=float)
    if v0.shape != (3,) or v1.shape != (3,):
        raise DomainError("inventories are 3-vectors (rock, paper, scissors)")
    if v0.min() < 0 or v1.min() < 0 or v0.sum() == 0 or v1.sum() == 0:
        raise DomainError("inventories must be non-negative and not all zero")
    x, y = v0 / np.linalg.norm(v0), v1 / np.linalg.norm(v1)
    # x'My written as a sum of antisymmetric pairs, so swapping the players
    # negates the result bit for bit and equal inventories give exactly zero
    return float((x[1] * y[0] - x[0] * y[1]) + (x[0] * y[2] - x[2] * y[0]) + (x[2] * y[1] - x[1] * y[2]))


def _cell(rc, side):
    r, c = rc
    if not (0 <= r < side and 0 <= c < side):
        raise DomainError(f"cell {rc} outside a {side}x{side} grid")
    return r * side + c


def _move(pos, action, side, stride=1):
    if pos < 0:
        return pos
    dr, dc = DIRECTIONS[action]
    r, c = divmod(pos, side)
    r, c = r + stride * dr, c + stride * dc
    if 0 <= r < side and 0 <= c < side:
        return r * side + c
    return pos


@dataclass
class GridWorld:
    """A built environment: the game, its incentive scheme and position bookkeeping.

    ``pos[i][s]`` is player ``i``'s cell in state ``s`` (``-1`` off-grid) and
    ``next_pos[i][s, a1, a2]`` the cell it occupies right after acting.
    """

    kind: str
    game: TabularMarkovGame
    scheme: IncentiveScheme
    side: int
    labels: list
    pos: tuple
    next_pos: tuple
    n_move_steps: int
    n_cells: int
    config: object = field(repr=False, default=None)

    @property
    def n_states(self):
        return self.game.n_states


def _bfs(initial, step, n1, n2, max_states):
    """Enumerate reachable states.

    ``step(state, a1, a2)`` must return ``(next_state, reward, features,
    (cell1, cell2))`` for the deterministic transition.
    """
    index = {}
    labels = []
    queue = deque()

    def add(s):
        if s not in index:
            if len(labels) >= max_states:
                raise StateSpaceError(f"more than {max_states} reachable states")
            index[s] = len(labels)
            labels.append(s)
            queue.append(s)

    for s in initial:
        add(s)
    rows = []
    while queue:
        s = queue.popleft()
        for a1 in range(n1):
            for a2 in range(n2):
                nxt, rew, feat, cells = step(s, a1, a2)
                add(nxt)
                rows.append((index[s], a1, a2, index[nxt], rew, feat, cells))
    return index, labels, rows


def _assemble(kind, labels, index, rows, initial, n1, n2, m, gamma, horizon, side, n_moves, n_cells, bounds, pos_of, cfg):
    n = len(labels)
    src = np.array([r[0] for r in rows])
    a1 = np.array([r[1] for r in rows])
    a2 = np.array([r[2] for r in rows])
    dst = np.array([r[3] for r in rows])
    flat = (src * n1 + a1) * n2 + a2
    P = sp.csr_matrix((np.ones(len(rows)), (flat, dst)), shape=(n * n1 * n2, n))
    reward = np.zeros((n, n1, n2))
    reward[src, a1, a2] = [r[4] for r in rows]
    feats = np.zeros((m, n, n1, n2))
    if m:
        feats[:, src, a1, a2] = np.array([r[5] for r in rows]).T
    nxt1 = np.full((n, n1, n2), -1, dtype=np.int64)
    nxt2 = np.full((n, n1, n2), -1, dtype=np.int64)
    nxt1[src, a1, a2] = [r[6][0] for r in rows]
    nxt2[src, a1, a2] = [r[6][1] for r in rows]
    rho0 = np.zeros(n)
    for s, p in initial.items():
        rho0[index[s]] += p
    game = TabularMarkovGame(P, reward, gamma, horizon, rho0)
    scheme = IncentiveScheme(feats, np.asarray(bounds, dtype=float).reshape(-1, 2), reward_bound=1.0)
    scheme.validate_against(game)
    pos1 = np.array([pos_of(s)[0] for s in labels])
    pos2 = np.array([pos_of(s)[1] for s in labels])
    return GridWorld(kind, game, scheme, side, labels, (pos1, pos2), (nxt1, nxt2), n_moves, n_cells, cfg)


# ---------------------------------------------------------------------------
# Running with scissors


@dataclass(frozen=True)
class RwsConfig:
    """Running-with-Scissors layout.

    Attributes:
        side: grid side length.
        horizon: number of move steps before the confrontation.
        inventory_cap: per-resource cap; pickups beyond it are no-ops.
        pools: deterministic resource pools as ``((row, col), kind)``.
        random_pools: cells whose resource kind is drawn uniformly at the
            start of an episode (folded into the initial distribution).
        fixed_coins: cells holding a fixed bonus of ``fixed_bonus``.
        theta_coins: one cell per incentive parameter.
        spawn: cells where players may spawn (default: every free cell).
        theta_bounds: box for the incentive parameters.
    """

    side: int = 3
    horizon: int = 8
    inventory_cap: int = 2
    pools: tuple = (((0, 0), ROCK), ((0, 2), PAPER), ((2, 1), SCISSORS))
    random_pools: tuple = ()
    fixed_coins: tuple = ()
    theta_coins: tuple = ((1, 0), (1, 2))
    fixed_bonus: float = 0.5
    spawn: tuple | None = None
    gamma: float = 0.9
    theta_bounds: tuple = ((0.0, 0.5), (0.0, 0.5))
    max_states: int = 500_000

    def __post_init__(self):
        if self.inventory_cap < 1 or self.horizon < 1 or self.side < 1:
            raise DomainError("side, horizon and inventory_cap must be positive")
        if len(self.theta_bounds) != len(self.theta_coins):
            raise DomainError("need one theta interval per theta coin")


def rws_lite_config(**overrides) -> RwsConfig:
    """2x2 grid, three move steps, one incentive coin: small enough for exact enumeration.

    The coin sits in the corner away from both pools and spawn cells, so the
    bonus has to pull a player off its resource to be collected.
    """
    base = dict(
        side=2,
        horizon=3,
        inventory_cap=2,
        pools=(((0, 0), ROCK), ((0, 1), PAPER)),
        theta_coins=((1, 1),),
        theta_bounds=((0.0, 0.5),),
        spawn=((0, 0), (0, 1)),
        gamma=0.9,
    )
    base.update(overrides)
    return RwsConfig(**base)


def _free_cells(side, occupied):
    return [c for c in range(side * side) if c not in occupied]


def build_rws(config: RwsConfig = RwsConfig()) -> GridWorld:
    """Tabular RWS with a time counter, a confrontation step and an absorbing end.

    State labels are ``("move", t, p1, p2, inv1, inv2, pools, coins)``,
    ``("conf", p1, p2, inv1, inv2)`` and ``("end",)``.  ``pools`` holds the
    kinds still lying on each pool cell (``-1`` once collected) and ``coins``
    a tuple of flags.
    """
    side, L, cap = config.side, config.horizon, config.inventory_cap
    pool_cells = [_cell(c, side) for c, _ in config.pools] + [_cell(c, side) for c in config.random_pools]
    fixed_kinds = [k for _, k in config.pools]
    coin_cells = [_cell(c, side) for c in config.fixed_coins] + [_cell(c, side) for c in config.theta_coins]
    n_fixed = len(config.fixed_coins)
    m = len(config.theta_coins)
    occupied = set(pool_cells) | set(coin_cells)
    if len(occupied) != len(pool_cells) + len(coin_cells):
        raise DomainError("pools and coins must sit on distinct cells")
    spawn = [_cell(c, side) for c in config.spawn] if config.spawn is not None else _free_cells(side, occupied)
    if not spawn:
        raise DomainError("no free cell to spawn on")
    pairs = [(a, b) for a in spawn for b in spawn if a != b] or [(spawn[0], spawn[0])]
    random_kinds = list(itertools.product(range(3), repeat=len(config.random_pools)))
    start_inv = (1, 1, 1)
    initial = {}
    for (p1, p2), kinds in itertools.product(pairs, random_kinds):
        s = ("move", 0, p1, p2, start_inv, start_inv, tuple(fixed_kinds) + kinds, (1,) * len(coin_cells))
        initial[s] = initial.get(s, 0.0) + 1.0 / (len(pairs) * len(random_kinds))
    cell_to_pool = {c: i for i, c in enumerate(pool_cells)}
    cell_to_coin = {c: i for i, c in enumerate(coin_cells)}
    zero = np.zeros(m)

    def pickup(inv, kind):
        inv = list(inv)
        inv[kind] = min(cap, inv[kind] + 1)
        return tuple(inv)

    def step(s, a1, a2):
        if s[0] == "end":
            return END, 0.0, zero, (-1, -1)
        if s[0] == "conf":
            _, p1, p2, inv1, inv2 = s
            return END, rws_payoff(inv1, inv2), zero, (-1, -1)
        _, t, p1, p2, inv1, inv2, pools, coins = s
        q1, q2 = _move(p1, a1, side), _move(p2, a2, side)
        pools, coins = list(pools), list(coins)
        reward, feat = 0.0, np.zeros(m)
        for q, who in ((q1, 1), (q2, 2)):
            i = cell_to_pool.get(q)
            if i is not None and pools[i] >= 0:
                if who == 1:
                    inv1 = pickup(inv1, pools[i])
                else:
                    inv2 = pickup(inv2, pools[i])
        for q in (q1, q2):
            i = cell_to_pool.get(q)
            if i is not None:
                pools[i] = -1
        for q, sign in ((q1, 1.0), (q2, -1.0)):
            j = cell_to_coin.get(q)
            if j is not None and coins[j]:
                if j < n_fixed:
                    reward += sign * config.fixed_bonus
                else:
                    feat[j - n_fixed] += sign
        for q in (q1, q2):
            j = cell_to_coin.get(q)
            if j is not None:
                coins[j] = 0
        if t + 1 == L:
            nxt = ("conf", q1, q2, inv1, inv2)
        else:
            nxt = ("move", t + 1, q1, q2, inv1, inv2, tuple(pools), tuple(coins))
        return nxt, reward, feat, (q1, q2)

    def pos_of(s):
        return (s[2], s[3]) if s[0] == "move" else (s[1], s[2]) if s[0] == "conf" else (-1, -1)

    index, labels, rows = _bfs(initial, step, 5, 5, config.max_states)
    return _assemble(
        "rws", labels, index, rows, initial, 5, 5, m, config.gamma, L + 2, side, L, side * side,
        config.theta_bounds, pos_of, config,
    )


# ---------------------------------------------------------------------------
# Predator-prey


@dataclass(frozen=True)
class PpConfig:
    """Predator-Prey layout.

    The predator (player 1, maximizer) has nine actions: stay and one- or
    two-cell moves in four directions.  The prey (player 2) has five.  A
    move that would leave the grid or end on a shelter becomes a stay;
    two-cell moves may pass over a shelter.
    """

    side: int = 4
    horizon: int = 25
    nest: tuple = (3, 3)
    shelters: tuple = ((1, 2), (2, 1))
    fixed_pools: tuple = ((0, 3),)
    theta_pools: tuple = ((3, 0), (0, 0))
    fixed_bonus: float = 0.1
    predator_spawn: tuple = ((0, 1),)
    prey_spawn: tuple = ((2, 3), (3, 2))
    gamma: float = 0.9
    theta_bounds: tuple = ((0.0, 0.5), (0.0, 0.5))
    max_states: int = 500_000

    def __post_init__(self):
        if tuple(self.nest) in {tuple(c) for c in self.shelters}:
            raise DomainError("the nest cannot be a shelter")
        if len(self.theta_bounds) != len(self.theta_pools):
            raise DomainError("need one theta interval per theta pool")


def pp_lite_config(**overrides) -> PpConfig:
    base = dict(
        side=3,
        horizon=3,
        nest=(2, 2),
        shelters=((1, 1),),
        fixed_pools=(),
        theta_pools=((2, 0),),
        theta_bounds=((0.0, 0.5),),
        predator_spawn=((0, 0),),
        prey_spawn=((1, 2),),
    )
    base.update(overrides)
    return PpConfig(**base)


def build_pp(config: PpConfig = PpConfig()) -> GridWorld:
    """Tabular predator-prey.

    Catch (same cell, or the two players swapping cells) pays the predator +1,
    and the prey reaching the nest pays it -1.  Both end the episode at once
    (catch wins ties), and pools collected on that final step pay nothing.
    Otherwise, pools pay the finder and charge the opponent.  State labels
    are ``("move", t, pred, prey, pools)`` plus ``("end",)``.
    """
    side, L = config.side, config.horizon
    shelters = {_cell(c, side) for c in config.shelters}
    nest = _cell(config.nest, side)
    pool_cells = [_cell(c, side) for c in config.fixed_pools] + [_cell(c, side) for c in config.theta_pools]
    n_fixed, m = len(config.fixed_pools), len(config.theta_pools)
    if shelters & (set(pool_cells) | {nest}):
        raise DomainError("shelters must not hold pools or the nest")
    cell_to_pool = {c: i for i, c in enumerate(pool_cells)}
    pairs = [
        (a, b)
        for a in (_cell(c, side) for c in config.predator_spawn)
        for b in (_cell(c, side) for c in config.prey_spawn)
        if a != b
    ]
    if not pairs or any(a in shelters or b in shelters or b == nest for a, b in pairs):
        raise DomainError("spawn cells must be free, distinct, and the prey may not start on the nest")
    initial = {("move", 0, a, b, (1,) * len(pool_cells)): 1.0 / len(pairs) for a, b in pairs}
    zero = np.zeros(m)

    def pred_move(p, a):
        q = _move(p, a, side) if a < 5 else _move(p, a - 4, side, stride=2)
        return p if q in shelters else q

    def prey_move(p, a):
        q = _move(p, a, side)
        return p if q in shelters else q

    def step(s, a1, a2):
        if s[0] == "end":
            return END, 0.0, zero, (-1, -1)
        _, t, p1, p2, pools = s
        q1, q2 = pred_move(p1, a1), prey_move(p2, a2)
        if q1 == q2 or (q1 == p2 and q2 == p1):
            return END, 1.0, zero, (q1, q2)
        if q2 == nest:
            return END, -1.0, zero, (q1, q2)
        pools = list(pools)
        reward, feat = 0.0, np.zeros(m)
        for q, sign in ((q1, 1.0), (q2, -1.0)):
            i = cell_to_pool.get(q)
            if i is not None and pools[i]:
                pools[i] = 0
                if i < n_fixed:
                    reward += sign * config.fixed_bonus
                else:
                    feat[i - n_fixed] += sign
        nxt = END if t + 1 == L else ("move", t + 1, q1, q2, tuple(pools))
        return nxt, reward, feat, (q1, q2)

    def pos_of(s):
        return (s[2], s[3]) if s[0] == "move" else (-1, -1)

    index, labels, rows = _bfs(initial, step, 9, 5, config.max_states)
    n_cells = side * side - len(shelters)
    return _assemble(
        "pp", labels, index, rows, initial, 9, 5, m, config.gamma, L + 1, side, L, n_cells,
        config.theta_bounds, pos_of, config,
    )


# ---------------------------------------------------------------------------
# exploration objective


def _visited_counts(world: GridWorld, batch, union=True):
    """Distinct cells visited per trajectory (spawn cell included)."""
    st, a1, a2 = batch.states, batch.actions_1, batch.actions_2
    cells = []
    for i in (0, 1):
        seq = [world.pos[i][st[:, 0]][:, None], world.next_pos[i][st[:, :-1], a1, a2]]
        cells.append(np.concatenate(seq, axis=1))

    def distinct(x):
        x = np.sort(x, axis=1)
        fresh = np.concatenate([np.ones((len(x), 1), bool), x[:, 1:] != x[:, :-1]], axis=1)
        return np.sum(fresh & (x >= 0), axis=1)

    if union:
        return distinct(np.concatenate(cells, axis=1))
    return distinct(cells[0]) + distinct(cells[1])


def exploration_rates(world: GridWorld, batch, union=True) -> np.ndarray:
    counts = _visited_counts(world, batch, union)
    er = counts / world.n_cells
    return np.minimum(er, 1.0) if union else er


def _score_matrix(policy, batch):
    from .grad_engine import _score_sums

    st = batch.states[:, :-1]
    ones = np.ones(batch.horizon)
    return np.hstack(
        [_score_sums(st, batch.actions_1, policy.probs_1, ones), _score_sums(st, batch.actions_2, policy.probs_2, ones)]
    )


def exploration_objective(world: GridWorld, policy, theta=None, budget=None, rng=None, union=True, baseline=True):
    """Designer loss ``1 - E[ER]`` with its policy gradient.

    ``budget=None`` enumerates every trajectory over the move steps, which
    gives the exact loss and gradient.  Otherwise ``budget`` trajectories are
    sampled from ``rng``, and the score-function estimate subtracts the sample
    mean of ``1 - ER`` as a baseline.  ``grad_theta`` is always zero.
    Returns ``(f, grad_phi, grad_theta, stderr_phi)``; ``stderr_phi`` is
    ``None`` when exact.
    """
    T = world.n_move_steps
    m = world.scheme.n_params
    if budget is None:
        batch = enumerate_trajectories(world.game, policy, horizon=T)
    else:
        if budget < 1:
            raise ValueError("budget must be at least 1")
        rng = np.random.default_rng(0) if rng is None else rng
        batch = sample_trajectories(world.game, policy, budget, rng, horizon=T)
    loss = 1.0 - exploration_rates(world, batch, union)
    w = batch.weights
    f = float(w @ loss)
    G = _score_matrix(policy, batch)
    centered = loss - f if (baseline and budget is not None) else loss
    grad_phi = (w * centered) @ G
    stderr = None
    if budget is not None and budget > 1:
        stderr = np.std(centered[:, None] * G, axis=0, ddof=1) / math.sqrt(budget)
    return f, grad_phi, np.zeros(m), stderr


@dataclass
class ExplorationObjective(DesignerObjective):
    """``f(theta, phi) = 1 - ER`` for a grid world, exact when ``budget`` is ``None``."""

    world: GridWorld = None
    budget: int | None = None
    seed: int = 0
    union: bool = True

    def _eval(self, policy):
        # value and grad_phi are requested back to back for the same policy
        cached = getattr(self, "_cache", None)
        if cached is not None and cached[0] is policy:
            return cached[1]
        rng = np.random.default_rng(self.seed)
        out = exploration_objective(self.world, policy, None, self.budget, rng, self.union)
        self._cache = (policy, out)
        return out

    def value(self, theta, policy):
        return self._eval(policy)[0]

    def grad_theta(self, theta, policy):
        return np.zeros(self.world.scheme.n_params)

    def grad_phi(self, theta, policy):
        return self._eval(policy)[1]
