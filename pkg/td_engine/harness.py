"""
Seeded parameter sweeps over (n, eta): configuration, per-run seeding, the
worker pool, and aggregation of probe rows to mean and standard error.
"""
import dataclasses
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from .environments import GridworldSpec, build_gridworld, gridworld_target_policy, uniform_random_policy
from .exceptions import ConfigError, InputError, NonErgodicError
from .learner import DEFAULT_PROBE_EVERY, LearnerConfig, LearningRateSchedule, run_trajectory
from .mdp import (
    ExactSolution,
    Policy,
    TabularMDP,
    coverage_violations,
    exact_solve,
    induced_dynamics,
    load_mdp,
    load_policy,
    n_step_kernel,
)
from .metrics import WeightedNorm
from .stability import analyze
from .store import SweepStore

logger = logging.getLogger(__name__)

RAW_CSV = "raw.csv"
AGGREGATE_CSV = "aggregate.csv"
PLOT_FILE = "rmsve.svg"

TARGET_KINDS = ("epsilon_greedy", "file")
BEHAVIOR_KINDS = ("uniform", "file", "same-as-target")


@dataclass(frozen=True)
class ExperimentConfig:
    env: Union[GridworldSpec, str]
    n_values: Tuple[int, ...]
    eta_values: Tuple[float, ...]
    target_policy: dict = field(default_factory=lambda: {"kind": "epsilon_greedy", "epsilon": 0.1})
    behavior_policy: dict = field(default_factory=lambda: {"kind": "uniform"})
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    steps: int = 100_000
    seeds: int = 30
    probe_every: int = DEFAULT_PROBE_EVERY
    base_seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(self.n_values))
        object.__setattr__(self, "eta_values", tuple(float(eta) for eta in self.eta_values))
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be at least 1, got {self.seeds}")
        if self.probe_every < 1:
            raise ConfigError(f"probe_every must be at least 1, got {self.probe_every}")
        if not self.n_values or not self.eta_values:
            raise ConfigError("n_values and eta_values must be non-empty")
        bad_n = [n for n in self.n_values if int(n) != n or n < 1]
        if bad_n:
            raise ConfigError(f"every n must be a positive integer, got {bad_n}")
        bad_eta = [eta for eta in self.eta_values if not eta > 0]
        if bad_eta:
            raise ConfigError(f"every eta must be positive, got {bad_eta}")
        if self.target_policy.get("kind") not in TARGET_KINDS:
            raise ConfigError(f"target_policy kind must be one of {TARGET_KINDS}")
        if self.behavior_policy.get("kind") not in BEHAVIOR_KINDS:
            raise ConfigError(f"behavior_policy kind must be one of {BEHAVIOR_KINDS}")
        for role, policy in (("target_policy", self.target_policy), ("behavior_policy", self.behavior_policy)):
            if policy["kind"] == "file" and not policy.get("path"):
                raise ConfigError(f"{role} of kind 'file' needs a 'path'")
        if self.target_policy["kind"] == "epsilon_greedy" and not isinstance(self.env, GridworldSpec):
            raise ConfigError("an epsilon_greedy target needs a gridworld environment")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        env = data.pop("env", {"gridworld": {}})
        if "gridworld" in env:
            try:
                env = GridworldSpec(**env["gridworld"])
            except TypeError as e:
                raise ConfigError(f"bad gridworld fields: {e}") from e
        elif "mdp" in env:
            env = str(env["mdp"])
        else:
            raise ConfigError("env must name either 'gridworld' or 'mdp'")
        if "schedule" in data:
            data["schedule"] = LearningRateSchedule.from_dict(data["schedule"])
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment fields {sorted(unknown)}")
        try:
            return cls(env=env, **data)
        except TypeError as e:
            raise ConfigError(f"incomplete experiment config: {e}") from e

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file {path} does not exist") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def preset(cls, name, presets_dir):
        path = Path(presets_dir) / f"{name}.json"
        if not path.exists():
            available = sorted(p.stem for p in Path(presets_dir).glob("*.json"))
            raise ConfigError(f"unknown preset {name!r}; available: {available}")
        logger.info("Loading preset %s from %s", name, path)
        return cls.load(path)

    def with_overrides(self, **overrides):
        overrides = {key: value for key, value in overrides.items() if value is not None}
        return dataclasses.replace(self, **overrides) if overrides else self

    def to_dict(self):
        if isinstance(self.env, GridworldSpec):
            env = {"gridworld": dataclasses.asdict(self.env)}
        else:
            env = {"mdp": self.env}
        return {
            "name": self.name,
            "env": env,
            "target_policy": dict(self.target_policy),
            "behavior_policy": dict(self.behavior_policy),
            "n_values": list(self.n_values),
            "eta_values": list(self.eta_values),
            "schedule": self.schedule.to_dict(),
            "steps": self.steps,
            "seeds": self.seeds,
            "probe_every": self.probe_every,
            "base_seed": self.base_seed,
        }


@dataclass(frozen=True)
class Experiment:
    """A validated configuration with everything the runs need."""
    config: ExperimentConfig
    mdp: TabularMDP
    target: Policy
    behavior: Policy
    solution: ExactSolution


def build_policies(config: ExperimentConfig, mdp: TabularMDP):
    spec = config.target_policy
    if spec["kind"] == "epsilon_greedy":
        target = gridworld_target_policy(config.env, spec.get("epsilon", 0.1), mdp=mdp)
    else:
        target = load_policy(spec["path"])
    spec = config.behavior_policy
    if spec["kind"] == "uniform":
        behavior = uniform_random_policy(mdp)
    elif spec["kind"] == "same-as-target":
        behavior = target
    else:
        behavior = load_policy(spec["path"])
    return target, behavior


def prepare(config: ExperimentConfig) -> Experiment:
    """Build the environment and policies, check coverage, and solve for v_pi."""
    if isinstance(config.env, GridworldSpec):
        mdp = build_gridworld(config.env)
    else:
        mdp = load_mdp(config.env)
    target, behavior = build_policies(config, mdp)
    violations = coverage_violations(target, behavior)
    if violations:
        raise ConfigError(
            f"{config.name}: behavior policy does not cover target at (state, action) "
            f"pairs {violations[:10]}"
        )
    try:
        solution = exact_solve(induced_dynamics(mdp, target))
    except NonErgodicError as e:
        raise ConfigError(f"{config.name}: target chain cannot be solved: {e}") from e
    log_diagnostics(config, mdp, target, behavior, solution)
    return Experiment(config=config, mdp=mdp, target=target, behavior=behavior, solution=solution)


def log_diagnostics(config, mdp, target, behavior, solution):
    """Log eta0 of each n-step target kernel and whether each (n, eta) is certified."""
    chain = induced_dynamics(mdp, target)
    try:
        d_mu = exact_solve(induced_dynamics(mdp, behavior)).stationary
    except NonErgodicError:
        logger.warning("%s: behavior chain is not ergodic, skipping stability diagnostics", config.name)
        return
    for n in config.n_values:
        P_n, _ = n_step_kernel(chain, n)
        for eta in config.eta_values:
            report = analyze(P_n, d_mu, solution.stationary, eta, n=n)
            if report.certified_stable:
                verdict = "certified by " + ", ".join(report.certificates)
            elif report.empirically_stable:
                verdict = "empirically stable only"
            else:
                verdict = "NOT stable"
            logger.info(
                "%s: n=%d eta=%g eta0=%g min Re(lambda)=%.3e %s",
                config.name, n, eta, report.eta0, report.min_real_part, verdict,
            )


def run_seed(base_seed, replicate, n, eta):
    """
    Entropy for one run. Hashing (n, eta) in keeps every run's stream fixed
    when sweep points are added or removed.
    """
    return [int(base_seed) + replicate, int(n), zlib.crc32(repr(float(eta)).encode())]


class RunTask(NamedTuple):
    n: int
    eta: float
    replicate: int
    experiment: Experiment


def _execute(task: RunTask):
    experiment, config = task.experiment, task.experiment.config
    learner_config = LearnerConfig(
        n=task.n, eta=task.eta, schedule=config.schedule, num_states=experiment.mdp.num_states
    )
    seed = config.base_seed + task.replicate
    record = run_trajectory(
        experiment.mdp,
        experiment.behavior,
        experiment.target,
        learner_config,
        config.steps,
        seed=run_seed(config.base_seed, task.replicate, task.n, task.eta),
        probe=config.probe_every,
        record_seed=seed,
    )
    weights = WeightedNorm(experiment.solution.stationary)
    rows = [(task.n, task.eta) + row for row in record.rows(experiment.solution.bias, weights)]
    return (task.n, task.eta, seed), rows


def simulate(experiment: Experiment, workers: int = 1):
    """All (n, eta, seed) runs, merged by sorted key."""
    config = experiment.config
    tasks = [
        RunTask(n, eta, k, experiment)
        for n in config.n_values
        for eta in config.eta_values
        for k in range(config.seeds)
    ]
    logger.info(
        "%s: %d runs of %d steps on %d worker(s)", config.name, len(tasks), config.steps, workers
    )
    if workers <= 1:
        results = [_execute(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute, tasks))
    rows = []
    for _, run_rows in sorted(results, key=lambda item: item[0]):
        rows.extend(run_rows)
    return rows


class SeriesPoint(NamedTuple):
    step: int
    mean: float
    stderr: Optional[float]


@dataclass
class SweepSummary:
    series: Dict[Tuple[int, float], List[SeriesPoint]] = field(default_factory=dict)
    seeds: Optional[int] = None

    @property
    def has_stderr(self):
        return any(point.stderr is not None for points in self.series.values() for point in points)

    def __len__(self):
        return len(self.series)

    def keys(self):
        return sorted(self.series)

    def final_means(self):
        return {key: points[-1].mean for key, points in self.series.items()}

    @classmethod
    def from_rows(cls, rows, seeds=None):
        summary = cls(seeds=seeds)
        for n, eta, step, mean, stderr in rows:
            summary.series.setdefault((int(n), float(eta)), []).append(
                SeriesPoint(int(step), float(mean), None if stderr is None else float(stderr))
            )
        return summary

    @classmethod
    def from_csv(cls, path):
        with SweepStore() as store:
            return cls.from_rows(store.read_aggregate(path))


def summarize(store: SweepStore) -> SweepSummary:
    if store.count() == 0:
        raise InputError("no probe rows to aggregate")
    store.check_probe_grid()
    seeds = store.seed_count()
    rows = store.aggregate_rows()
    if seeds < 2:
        rows = [(n, eta, step, mean, None) for n, eta, step, mean, _ in rows]
    return SweepSummary.from_rows(rows, seeds=seeds)


def aggregate(raw_csv, out_csv=None, db_path=":memory:") -> SweepSummary:
    """Mean and standard error per (n, eta, step) from a raw CSV."""
    with SweepStore(db_path) as store:
        store.reset()
        store.load_csv(raw_csv)
        summary = summarize(store)
        if out_csv is not None:
            store.export_aggregate(out_csv, with_stderr=summary.seeds >= 2)
    return summary


@dataclass
class ExperimentResult:
    summary: SweepSummary
    raw_csv: Path
    aggregate_csv: Path


def write_outputs(rows, out_dir, db_path=":memory:"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw_csv, aggregate_csv = out_dir / RAW_CSV, out_dir / AGGREGATE_CSV
    with SweepStore(db_path) as store:
        store.reset()
        store.add_probes(rows)
        summary = summarize(store)
        store.export_raw(raw_csv)
        store.export_aggregate(aggregate_csv, with_stderr=summary.seeds >= 2)
    logger.info("Wrote %s and %s", raw_csv, aggregate_csv)
    return ExperimentResult(summary=summary, raw_csv=raw_csv, aggregate_csv=aggregate_csv)


def load_experiment(config: ExperimentConfig) -> Experiment:
    """prepare() with missing files and fields reported as ConfigError."""
    try:
        return prepare(config)
    except (OSError, KeyError) as e:
        raise ConfigError(f"{config.name}: {e}") from e


def run_experiment(config: ExperimentConfig, out_dir, workers: int = 1, db_path=":memory:"):
    experiment = load_experiment(config)
    rows = simulate(experiment, workers=workers)
    return write_outputs(rows, out_dir, db_path=db_path)


def decreasing(points, window=10, fraction=0.25, slack=0.02):
    """
    True when the last mean is at most `fraction` of the first and the curve,
    averaged over consecutive `window`-probe blocks, never rises by more than
    `slack` times the first mean (the constant-step-size noise floor).
    """
    means = np.array([point.mean for point in points])
    if means.size < window or means[-1] > fraction * means[0]:
        return False
    usable = means.size - means.size % window
    blocks = means[:usable].reshape(-1, window).mean(axis=1)
    return bool(np.all(np.diff(blocks) <= slack * means[0]))
