"""
Continuing environments and policy constructors.

Gridworld layout: state index = row * width + col with row 0 at the top,
actions ordered (up, down, left, right).
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DomainError, ShapeError
from .mdp import InducedChain, Policy, TabularMDP

logger = logging.getLogger(__name__)

ACTIONS = ("up", "down", "left", "right")
MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
DEFAULT_FLOOR = 1e-3


@dataclass(frozen=True)
class GridworldSpec:
    width: int = 5
    height: int = 5
    goal: Optional[int] = None
    start_state: int = 0
    goal_reward: float = 1.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise DomainError(f"gridworld must be at least 2x2, got {self.width}x{self.height}")
        if self.goal is None:
            object.__setattr__(self, "goal", self.num_states - 1)
        for name in ("goal", "start_state"):
            index = getattr(self, name)
            if not 0 <= index < self.num_states:
                raise DomainError(f"{name} {index} is outside the {self.num_states}-cell grid")
        if self.goal == self.start_state:
            raise DomainError("goal and start_state must differ")

    @property
    def num_states(self):
        return self.width * self.height

    def coords(self, state):
        return divmod(state, self.width)

    def index(self, row, col):
        return row * self.width + col


def _move(spec: GridworldSpec, state, action):
    row, col = spec.coords(state)
    d_row, d_col = MOVES[ACTIONS[action]]
    new_row, new_col = row + d_row, col + d_col
    if not (0 <= new_row < spec.height and 0 <= new_col < spec.width):
        return state
    return spec.index(new_row, new_col)


def build_gridworld(spec: GridworldSpec) -> TabularMDP:
    """
    Deterministic 4-action gridworld. Moves into a wall are self-loops, the
    goal resets to start_state whatever the action, and the reward is paid on
    landing on the goal.
    """
    num_states, num_actions = spec.num_states, len(ACTIONS)
    transition = np.zeros((num_states, num_actions, num_states))
    reward = np.zeros((num_states, num_actions))
    for state in range(num_states):
        for action in range(num_actions):
            if state == spec.goal:
                transition[state, action, spec.start_state] = 1.0
                continue
            successor = _move(spec, state, action)
            transition[state, action, successor] = 1.0
            if successor == spec.goal:
                reward[state, action] = spec.goal_reward
    start = np.zeros(num_states)
    start[spec.start_state] = 1.0
    return TabularMDP(transition=transition, reward=reward, start=start)


def greedy_actions(spec: GridworldSpec) -> np.ndarray:
    """First action, in ACTIONS order, that reduces Manhattan distance to the goal."""
    goal_row, goal_col = spec.coords(spec.goal)

    def distance(state):
        row, col = spec.coords(state)
        return abs(row - goal_row) + abs(col - goal_col)

    table = np.zeros(spec.num_states, dtype=np.int64)
    for state in range(spec.num_states):
        if state == spec.goal:
            continue
        for action in range(len(ACTIONS)):
            if distance(_move(spec, state, action)) < distance(state):
                table[state] = action
                break
    return table


def uniform_random_policy(mdp: TabularMDP) -> Policy:
    probs = np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
    return Policy(probs=probs)


def epsilon_greedy_policy(mdp: TabularMDP, greedy_action, epsilon: float) -> Policy:
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon!r}")
    greedy_action = np.asarray(greedy_action, dtype=np.int64)
    if greedy_action.shape != (mdp.num_states,):
        raise ShapeError(
            f"greedy_action must have one entry per state ({mdp.num_states}), "
            f"got shape {greedy_action.shape}"
        )
    if np.any((greedy_action < 0) | (greedy_action >= mdp.num_actions)):
        raise DomainError("greedy_action contains an invalid action index")
    explore = epsilon / mdp.num_actions
    probs = np.full((mdp.num_states, mdp.num_actions), explore)
    probs[np.arange(mdp.num_states), greedy_action] = 1.0 - epsilon + explore
    return Policy(probs=probs)


def gridworld_target_policy(spec: GridworldSpec, epsilon: float, mdp: TabularMDP = None) -> Policy:
    mdp = mdp if mdp is not None else build_gridworld(spec)
    return epsilon_greedy_policy(mdp, greedy_actions(spec), epsilon)


def _floored_simplex(rng, shape, floor):
    size = shape[-1]
    if floor * size >= 1.0:
        raise DomainError(f"floor {floor!r} is too large for {size} outcomes")
    draws = rng.dirichlet(np.ones(size), size=shape[:-1])
    return floor + (1.0 - floor * size) * draws


def random_ergodic_mdp(num_states, num_actions, seed, floor=DEFAULT_FLOOR) -> TabularMDP:
    """Every transition entry >= floor, so every induced chain is irreducible and aperiodic."""
    if num_states < 2:
        raise DomainError(f"num_states must be at least 2, got {num_states}")
    rng = np.random.default_rng(seed)
    transition = _floored_simplex(rng, (num_states, num_actions, num_states), floor)
    reward = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    start = rng.dirichlet(np.ones(num_states))
    return TabularMDP(transition=transition, reward=reward, start=start)


def random_policy(mdp: TabularMDP, seed, floor=DEFAULT_FLOOR) -> Policy:
    rng = np.random.default_rng(seed)
    return Policy(probs=_floored_simplex(rng, (mdp.num_states, mdp.num_actions), floor))


def lazy_cycle_chain(size: int) -> InducedChain:
    """Lazy random walk on a cycle: P = 0.5 I + 0.25 (shift(+1) + shift(-1))."""
    if size < 3:
        raise DomainError(f"cycle needs at least 3 states, got {size}")
    identity = np.eye(size)
    P = 0.5 * identity + 0.25 * (np.roll(identity, 1, axis=1) + np.roll(identity, -1, axis=1))
    return InducedChain(P=P, r=np.zeros(size))
