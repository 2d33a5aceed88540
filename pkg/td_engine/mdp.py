"""
Exact tabular MDP machinery: induced dynamics, stationary distributions,
gain, centered bias and n-step kernels.

Everything here is ground truth for the learner, the stability analyzer and
the metrics, so all solves are direct linear solves rather than iterations.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .exceptions import DomainError, InputError, NonErgodicError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
PROBABILITY_TOL = 1e-12
POSITIVITY_FLOOR = 1e-12


def _frozen(values, name, ndim):
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} contains non-finite entries")
    array.flags.writeable = False
    return array


def check_stochastic_rows(matrix, name, tol=PROBABILITY_TOL):
    """Raise InputError unless every row of `matrix` is a probability vector."""
    if np.any(matrix < -tol):
        raise InputError(f"{name} has negative entries (min {matrix.min()!r})")
    sums = matrix.sum(axis=-1)
    worst = np.max(np.abs(sums - 1.0)) if sums.size else 0.0
    if worst > tol:
        raise InputError(f"{name} rows must sum to 1 (worst deviation {worst!r})")


@dataclass(frozen=True)
class TabularMDP:
    """
    Finite MDP with transition tensor p(s'|s,a), reward table r(s,a) and
    start distribution p0.
    """
    transition: np.ndarray
    reward: np.ndarray
    start: np.ndarray

    def __post_init__(self):
        transition = _frozen(self.transition, "transition", 3)
        reward = _frozen(self.reward, "reward", 2)
        start = _frozen(self.start, "start", 1)
        num_states, num_actions, successors = transition.shape
        if num_states < 1 or num_actions < 1:
            raise ShapeError("an MDP needs at least one state and one action")
        if successors != num_states:
            raise ShapeError(f"transition must be |S|x|A|x|S|, got {transition.shape}")
        if reward.shape != (num_states, num_actions):
            raise ShapeError(f"reward must be {(num_states, num_actions)}, got {reward.shape}")
        if start.shape != (num_states,):
            raise ShapeError(f"start must have length {num_states}, got {start.shape}")
        check_stochastic_rows(transition, "transition")
        check_stochastic_rows(start, "start")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "start", start)

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]


@dataclass(frozen=True)
class Policy:
    """Row-stochastic table pi(a|s)."""
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, "policy", 2)
        check_stochastic_rows(probs, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self):
        return self.probs.shape[0]

    @property
    def num_actions(self):
        return self.probs.shape[1]


@dataclass(frozen=True)
class InducedChain:
    """Markov reward process (P_pi, r_pi) induced by a policy."""
    P: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        P = _frozen(self.P, "P", 2)
        r = _frozen(self.r, "r", 1)
        if P.shape[0] != P.shape[1]:
            raise ShapeError(f"P must be square, got {P.shape}")
        if r.shape != (P.shape[0],):
            raise ShapeError(f"r must have length {P.shape[0]}, got {r.shape}")
        check_stochastic_rows(P, "P")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)

    @property
    def num_states(self):
        return self.P.shape[0]


@dataclass(frozen=True)
class ExactSolution:
    gain: float
    bias: np.ndarray
    stationary: np.ndarray = field(repr=False)


def induced_dynamics(mdp: TabularMDP, policy: Policy) -> InducedChain:
    """P(s,s') = sum_a pi(a|s) p(s'|s,a) and r(s) = sum_a pi(a|s) r(s,a)."""
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ShapeError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.num_states}, {mdp.num_actions})"
        )
    P = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return InducedChain(P=P, r=r)


def _square(P, name="P"):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeError(f"{name} must be a square matrix, got shape {P.shape}")
    return P


def stationary_distribution(P, tol=DEFAULT_TOL) -> np.ndarray:
    """
    Solve [P^T - I; e^T] d = [0; 1] directly.

    Raises NonErgodicError when the kernel of P^T - I has more than one
    dimension or when the solution is not strictly positive.
    """
    P = _square(P)
    num_states = P.shape[0]
    generator = P.T - np.eye(num_states)
    rank = np.linalg.matrix_rank(generator)
    if rank < num_states - 1:
        raise NonErgodicError(
            f"chain is reducible: invariant subspace has dimension {num_states - rank}"
        )
    system = np.vstack([generator, np.ones((1, num_states))])
    rhs = np.zeros(num_states + 1)
    rhs[-1] = 1.0
    d, *_ = scipy.linalg.lstsq(system, rhs)
    if np.any(d <= POSITIVITY_FLOOR):
        raise NonErgodicError(
            f"stationary distribution is not strictly positive (min entry {d.min()!r})"
        )
    d = d / d.sum()
    residual = np.max(np.abs(d @ P - d))
    if residual > tol:
        logger.warning("stationary residual %.3e exceeds tolerance %.1e", residual, tol)
    return d


def _pattern_power(pattern, power):
    result = np.eye(pattern.shape[0], dtype=np.int64)
    base = pattern.astype(np.int64)
    while power:
        if power & 1:
            result = ((result @ base) > 0).astype(np.int64)
        base = ((base @ base) > 0).astype(np.int64)
        power >>= 1
    return result.astype(bool)


def is_ergodic(P) -> bool:
    """Irreducible and aperiodic, i.e. P^k > 0 for k = (|S|-1)^2 + 1."""
    P = _square(P)
    num_states = P.shape[0]
    horizon = (num_states - 1) ** 2 + 1
    return bool(np.all(_pattern_power(P > 0, horizon)))


def exact_solve(chain: InducedChain, tol=DEFAULT_TOL) -> ExactSolution:
    """
    Gain d^T r and the centered bias solving v = r - gain*e + P v, d^T v = 0.
    """
    d = stationary_distribution(chain.P, tol=tol)
    if not is_ergodic(chain.P):
        raise NonErgodicError("chain is periodic: no power of P is strictly positive")
    num_states = chain.num_states
    gain = float(d @ chain.r)
    system = np.vstack([np.eye(num_states) - chain.P, d[np.newaxis, :]])
    rhs = np.concatenate([chain.r - gain, [0.0]])
    bias, *_ = scipy.linalg.lstsq(system, rhs)
    return ExactSolution(gain=gain, bias=bias, stationary=d)


def n_step_kernel(chain: InducedChain, n: int):
    """Return (P^n, r^(n)) with r^(n) = sum_{k<n} P^k r, summed in ascending k."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    P_n = np.linalg.matrix_power(chain.P, n)
    r_n = np.zeros(chain.num_states)
    term = chain.r.copy()
    for _ in range(n):
        r_n = r_n + term
        term = chain.P @ term
    return P_n, r_n


def poisson_residual(chain: InducedChain, gain: float, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return chain.r - gain + chain.P @ v - v


def n_step_bellman_residual(chain: InducedChain, n: int, solution: ExactSolution) -> np.ndarray:
    """Residual of the unrolled equation v = r^(n) - n*gain*e + P^n v."""
    P_n, r_n = n_step_kernel(chain, n)
    v = solution.bias
    return r_n - n * solution.gain + P_n @ v - v


def coverage_violations(target: Policy, behavior: Policy):
    """(s, a) pairs with pi(a|s) > 0 but mu(a|s) = 0."""
    if target.probs.shape != behavior.probs.shape:
        raise ShapeError(
            f"target {target.probs.shape} and behavior {behavior.probs.shape} shapes differ"
        )
    states, actions = np.nonzero((target.probs > 0) & (behavior.probs <= 0))
    return [(int(s), int(a)) for s, a in zip(states, actions)]


def importance_ratios(target: Policy, behavior: Policy) -> np.ndarray:
    """rho(s,a) = pi(a|s) / mu(a|s), zero wherever mu(a|s) = 0."""
    if target.probs.shape != behavior.probs.shape:
        raise ShapeError(
            f"target {target.probs.shape} and behavior {behavior.probs.shape} shapes differ"
        )
    ratios = np.zeros_like(target.probs)
    np.divide(target.probs, behavior.probs, out=ratios, where=behavior.probs > 0)
    return ratios


# MDP / policy files

def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "start": mdp.start.tolist(),
    }


def mdp_from_dict(data: dict) -> TabularMDP:
    try:
        mdp = TabularMDP(
            transition=data["transition"], reward=data["reward"], start=data["start"]
        )
    except KeyError as exc:
        raise InputError(f"MDP specification is missing field {exc}") from exc
    declared = (data.get("num_states", mdp.num_states), data.get("num_actions", mdp.num_actions))
    if declared != (mdp.num_states, mdp.num_actions):
        raise ShapeError(
            f"declared shape {declared} does not match arrays "
            f"({mdp.num_states}, {mdp.num_actions})"
        )
    return mdp


def save_mdp(mdp: TabularMDP, path):
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=2))


def load_mdp(path) -> TabularMDP:
    return mdp_from_dict(json.loads(Path(path).read_text()))


def save_policy(policy: Policy, path):
    data = {
        "num_states": policy.num_states,
        "num_actions": policy.num_actions,
        "probs": policy.probs.tolist(),
    }
    Path(path).write_text(json.dumps(data, indent=2))


def load_policy(path) -> Policy:
    data = json.loads(Path(path).read_text())
    if "probs" not in data:
        raise InputError(f"policy file {path} has no 'probs' field")
    return Policy(probs=data["probs"])
