"""
n-step differential TD, in the full (v, J) form and in the compact form that
folds J into the running sum of v.

Both recursions apply one update per environment step once the window holds
a full n-step segment; the learning rate is indexed by the update counter,
which starts at 0 on the first update.
"""
import logging
import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, NamedTuple, Optional

import numpy as np

from .exceptions import ConfigError, DomainError, InputError, ShapeError
from .mdp import Policy, TabularMDP, coverage_violations, importance_ratios
from .metrics import WeightedNorm, rmsve_tvr

logger = logging.getLogger(__name__)

DEFAULT_PROBE_EVERY = 100


@dataclass(frozen=True)
class LearningRateSchedule:
    kind: str = "constant"
    c1: float = 0.01
    c2: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not self.c1 > 0:
            raise ConfigError(f"c1 must be positive, got {self.c1!r}")
        if self.kind == "polynomial":
            if not 0.5 < self.beta <= 1.0:
                raise ConfigError(f"beta must lie in (0.5, 1], got {self.beta!r}")
            if self.c2 < 0:
                raise ConfigError(f"c2 must be non-negative, got {self.c2!r}")
            if self.c2 == 0:
                # alpha_0 would divide by zero
                raise ConfigError("polynomial schedules need c2 > 0")

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def to_dict(self):
        return {"kind": self.kind, "c1": self.c1, "c2": self.c2, "beta": self.beta}


def learning_rate(schedule: LearningRateSchedule, t: int) -> float:
    if t < 0:
        raise DomainError(f"step index must be non-negative, got {t}")
    if schedule.kind == "constant":
        return schedule.c1
    return schedule.c1 / (t + schedule.c2) ** schedule.beta


@dataclass(frozen=True)
class LearnerConfig:
    n: int
    eta: float
    schedule: LearningRateSchedule
    num_states: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta!r}")
        if self.num_states < 1:
            raise ConfigError(f"num_states must be positive, got {self.num_states!r}")


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    rho: float = 1.0


class WindowEntry(NamedTuple):
    state: int
    action: int
    reward: float
    rho: float


@dataclass
class LearnerState:
    """
    Mutable learner iterate. `sigma` is the running sum of v used by the
    compact recursion; `shift` is the per-step reward shift it applies for
    non-zero initialization.
    """
    v: np.ndarray
    J: float = 0.0
    t: int = 0
    updates: int = 0
    sigma: float = 0.0
    shift: float = 0.0
    window: Deque[WindowEntry] = field(default_factory=deque)
    latest_state: Optional[int] = None

    @classmethod
    def zeros(cls, num_states):
        return cls(v=np.zeros(num_states))

    @classmethod
    def initial(cls, v0, J0=0.0, eta=None, n=None):
        v0 = np.array(v0, dtype=np.float64)
        state = cls(v=v0, J=float(J0), sigma=float(np.sum(v0)))
        if eta is not None and n is not None:
            state.shift = -float(J0) + eta / n * state.sigma
        return state

    @property
    def num_states(self):
        return self.v.shape[0]


def _validate(state: LearnerState, config: LearnerConfig, tr: Transition):
    num_states = state.num_states
    if num_states != config.num_states:
        raise ShapeError(f"state has {num_states} entries, config expects {config.num_states}")
    for name in ("state", "next_state"):
        index = getattr(tr, name)
        if not 0 <= index < num_states:
            raise ShapeError(f"{name} {index} out of range for {num_states} states")
    if not (math.isfinite(tr.reward) and math.isfinite(tr.rho)):
        raise InputError(f"non-finite reward or rho in {tr}")
    if tr.rho < 0:
        raise InputError(f"rho must be non-negative, got {tr.rho!r}")


def _push(state: LearnerState, config: LearnerConfig, tr: Transition):
    """Append tr to the window; return the full n-step segment, if any."""
    window = state.window
    if len(window) == config.n:
        window.popleft()
    window.append(WindowEntry(tr.state, tr.action, float(tr.reward), float(tr.rho)))
    state.latest_state = tr.next_state
    state.t += 1
    if len(window) < config.n:
        return None
    reward_sum = 0.0
    ratio = 1.0
    for entry in window:
        reward_sum += entry.reward
        ratio *= entry.rho
    return window[0].state, reward_sum, ratio


def step(state: LearnerState, config: LearnerConfig, tr: Transition) -> LearnerState:
    """Full recursion: delta = R - n J + v(S_{t+n}) - v(S_t)."""
    _validate(state, config, tr)
    segment = _push(state, config, tr)
    if segment is None:
        return state
    origin, reward_sum, ratio = segment
    v = state.v
    delta = reward_sum - config.n * state.J + v[tr.next_state] - v[origin]
    increment = learning_rate(config.schedule, state.updates) * ratio * delta
    v[origin] += increment
    state.J += config.eta / config.n * increment
    state.sigma += increment
    state.updates += 1
    return state


def step_compact(state: LearnerState, config: LearnerConfig, tr: Transition) -> LearnerState:
    """
    Compact recursion: delta = R~ - eta * Sigma + v(S_{t+n}) - v(S_t).

    Matches `step` bit for bit only when eta / n is a power of two; otherwise
    the two value sequences drift apart in the last bits (about 1e-14).
    """
    _validate(state, config, tr)
    segment = _push(state, config, tr)
    if segment is None:
        return state
    origin, reward_sum, ratio = segment
    if state.shift:
        reward_sum += config.n * state.shift
    v = state.v
    delta = reward_sum - config.eta * state.sigma + v[tr.next_state] - v[origin]
    increment = learning_rate(config.schedule, state.updates) * ratio * delta
    v[origin] += increment
    state.sigma += increment
    state.updates += 1
    return state


def compact_average_reward(state: LearnerState, config: LearnerConfig) -> float:
    """J reconstructed from the running sum: (eta / n) * Sigma, less the initialization shift."""
    return config.eta / config.n * state.sigma - state.shift


# Trajectories

def sample_trajectory(mdp: TabularMDP, behavior: Policy, steps: int, rng):
    """
    S_0 ~ p0, A_t ~ mu(.|S_t), S_{t+1} ~ p(.|S_t, A_t), R_{t+1} = r(S_t, A_t).

    Returns (states, actions, rewards) with lengths steps+1, steps, steps.
    """
    action_cdf = np.cumsum(behavior.probs, axis=1).tolist()
    successor_cdf = np.cumsum(mdp.transition, axis=2).tolist()
    num_actions, num_states = mdp.num_actions, mdp.num_states
    uniforms = rng.random((steps, 2)).tolist()
    states = np.empty(steps + 1, dtype=np.int64)
    actions = np.empty(steps, dtype=np.int64)
    s = int(rng.choice(num_states, p=mdp.start))
    states[0] = s
    for t, (u_action, u_state) in enumerate(uniforms):
        a = min(bisect_right(action_cdf[s], u_action), num_actions - 1)
        s = min(bisect_right(successor_cdf[s][a], u_state), num_states - 1)
        actions[t] = a
        states[t + 1] = s
    rewards = mdp.reward[states[:-1], actions]
    return states, actions, rewards


def check_coverage(target: Policy, behavior: Policy):
    violations = coverage_violations(target, behavior)
    if violations:
        raise ConfigError(
            f"behavior policy does not cover target at (state, action) pairs {violations[:10]}"
        )


class Probe(NamedTuple):
    step: int
    v: np.ndarray
    J: float


@dataclass
class RunRecord:
    """Probed learner snapshots of one seeded trajectory."""
    seed: int
    probes: List[Probe] = field(default_factory=list)

    def rmsve_series(self, v_ref, weights: WeightedNorm):
        return [rmsve_tvr(probe.v, v_ref, weights) for probe in self.probes]

    def rows(self, v_ref, weights: WeightedNorm):
        """(seed, step, rmsve_tvr, J_estimate) rows."""
        return [
            (self.seed, probe.step, rmsve_tvr(probe.v, v_ref, weights), probe.J)
            for probe in self.probes
        ]


def run_trajectory(
    mdp: TabularMDP,
    behavior: Policy,
    target: Policy,
    config: LearnerConfig,
    steps: int,
    seed,
    probe: int = DEFAULT_PROBE_EVERY,
    compact: bool = False,
    record_seed: Optional[int] = None,
) -> RunRecord:
    """
    Follow `behavior` for `steps` environment steps, feeding the learner with
    importance ratios toward `target`; snapshot (v, J) at step 0 and every
    `probe` steps.
    """
    check_coverage(target, behavior)
    if config.num_states != mdp.num_states:
        raise ShapeError(f"config has {config.num_states} states, MDP has {mdp.num_states}")
    if steps < 1 or probe < 1:
        raise ConfigError(f"steps and probe must be positive, got {steps}, {probe}")
    rng = np.random.default_rng(seed)
    states, actions, rewards = sample_trajectory(mdp, behavior, steps, rng)
    ratios = importance_ratios(target, behavior)[states[:-1], actions].tolist()
    states, actions, rewards = states.tolist(), actions.tolist(), rewards.tolist()
    update = step_compact if compact else step
    learner = LearnerState.zeros(mdp.num_states)
    record = RunRecord(seed=seed if record_seed is None else record_seed)
    record.probes.append(Probe(0, learner.v.copy(), 0.0))
    for t in range(steps):
        tr = Transition(states[t], actions[t], rewards[t], states[t + 1], ratios[t])
        update(learner, config, tr)
        if (t + 1) % probe == 0:
            J = compact_average_reward(learner, config) if compact else learner.J
            record.probes.append(Probe(t + 1, learner.v.copy(), J))
    logger.debug("trajectory seed=%s n=%s eta=%s finished after %d updates",
                 seed, config.n, config.eta, learner.updates)
    return record


# Sampled operator H(v, y)

def sampled_operator(v, segment, eta, num_states=None):
    """
    H(v, y) for y = (s_0, a_0, ..., s_n): a vector that is zero except at s_0,
    where it equals rho_{0:n-1} (sum_k r_k - eta * sum(v) + v(s_n) - v(s_0)).

    `segment` is (states, rewards, rhos) with len(states) == len(rewards) + 1.
    """
    v = np.asarray(v, dtype=np.float64)
    seg_states, seg_rewards, seg_rhos = segment
    if len(seg_states) != len(seg_rewards) + 1 or len(seg_rewards) != len(seg_rhos):
        raise ShapeError("segment must hold n+1 states and n rewards and ratios")
    out = np.zeros(num_states or v.shape[0])
    s0, sn = seg_states[0], seg_states[-1]
    out[s0] = np.prod(seg_rhos) * (np.sum(seg_rewards) - eta * v.sum() + v[sn] - v[s0])
    return out


def monte_carlo_operator(
    mdp: TabularMDP,
    behavior: Policy,
    target: Policy,
    v,
    n: int,
    eta: float,
    steps: int,
    seed,
    batches: int = 100,
):
    """
    Time-average of H(v, Y_t) over overlapping n-step windows of one behavior
    trajectory. Standard errors come from batch means, which absorbs the
    serial correlation of the windows.
    """
    check_coverage(target, behavior)
    v = np.asarray(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    states, actions, rewards = sample_trajectory(mdp, behavior, steps + n - 1, rng)
    rhos = importance_ratios(target, behavior)[states[:-1], actions]
    reward_sums = np.zeros(steps)
    ratio_prods = np.ones(steps)
    for k in range(n):
        reward_sums += rewards[k:k + steps]
        ratio_prods *= rhos[k:k + steps]
    origins = states[:steps]
    ends = states[n:n + steps]
    values = ratio_prods * (reward_sums - eta * v.sum() + v[ends] - v[origins])
    samples = np.zeros((steps, mdp.num_states))
    samples[np.arange(steps), origins] = values
    usable = steps - steps % batches
    batch_means = samples[:usable].reshape(batches, -1, mdp.num_states).mean(axis=1)
    mean = samples.mean(axis=0)
    stderr = batch_means.std(axis=0, ddof=1) / np.sqrt(batches)
    return mean, stderr
