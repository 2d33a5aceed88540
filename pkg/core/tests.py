import json
import os
import random
import shutil
import tempfile
import unittest
from io import StringIO
from pathlib import Path

import matplotlib.pyplot as plt
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from core.models import SweepRecord
from td_engine.environments import GridworldSpec
from td_engine.exceptions import ConfigError, InputError
from td_engine.harness import (
    ExperimentConfig,
    SeriesPoint,
    SweepSummary,
    aggregate,
    decreasing,
    run_experiment,
    run_seed,
)
from td_engine.learner import LearningRateSchedule
from td_engine.plotting import draw_figure, emit_plot

RAW_HEADER = "n,eta,seed,step,rmsve_tvr,J_estimate\n"

SLOW_TESTS = os.environ.get("LAB_SLOW_TESTS") == "1"


def small_config(**overrides):
    data = {
        "name": "small",
        "env": GridworldSpec(width=3, height=3),
        "n_values": [1, 2],
        "eta_values": [0.5, 1.0],
        "schedule": LearningRateSchedule(kind="constant", c1=0.05),
        "steps": 500,
        "seeds": 2,
        "probe_every": 100,
        "base_seed": 3,
    }
    data.update(overrides)
    return ExperimentConfig(**data)


def write_raw(path, rows):
    with open(path, "w") as f:
        f.write(RAW_HEADER)
        for row in rows:
            f.write(",".join(str(value) for value in row) + "\n")


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)
        super().tearDown()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


class ExperimentConfigTests(TempDirMixin, SimpleTestCase):
    def test_shipped_presets(self):
        fig1 = ExperimentConfig.preset("fig1", settings.LAB_CONFIG["PRESETS_DIR"])
        self.assertEqual(fig1.n_values, (3,))
        self.assertEqual(fig1.eta_values, (0.1, 0.5, 1.0, 2.0))
        self.assertEqual(fig1.schedule, LearningRateSchedule(kind="constant", c1=0.01))
        self.assertEqual((fig1.steps, fig1.seeds), (100_000, 30))
        self.assertEqual(fig1.env, GridworldSpec(width=5, height=5))

        fig2 = ExperimentConfig.preset("fig2", settings.LAB_CONFIG["PRESETS_DIR"])
        self.assertEqual(fig2.n_values, (1, 2, 3, 4))
        self.assertEqual(fig2.eta_values, (0.1,))

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.preset("fig9", settings.LAB_CONFIG["PRESETS_DIR"])

    def test_round_trip_through_dict(self):
        config = small_config()
        self.assertEqual(ExperimentConfig.from_dict(config.to_dict()), config)

    def test_overrides(self):
        config = small_config().with_overrides(seeds=5, steps=None)
        self.assertEqual(config.seeds, 5)
        self.assertEqual(config.steps, 500)

    def test_invalid_values(self):
        for overrides in ({"steps": 0}, {"seeds": 0}, {"eta_values": [0.0]}, {"n_values": [0]}):
            with self.assertRaises(ConfigError):
                small_config(**overrides)

    def test_epsilon_greedy_needs_gridworld(self):
        with self.assertRaises(ConfigError):
            small_config(env="some/mdp.json")

    def test_unknown_field(self):
        data = small_config().to_dict()
        data["gamma"] = 0.9
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_file_policy_needs_path(self):
        with self.assertRaises(ConfigError):
            small_config(behavior_policy={"kind": "file"})
        data = small_config().to_dict()
        data["env"] = {"mdp": "grid.json"}
        data["target_policy"] = {"kind": "file"}
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_bad_json(self):
        path = self.path("bad.json")
        Path(path).write_text("{not json")
        with self.assertRaises(ConfigError):
            ExperimentConfig.load(path)


class RunSeedTests(SimpleTestCase):
    def test_seed_depends_only_on_its_own_point(self):
        self.assertEqual(run_seed(0, 2, 3, 0.5), run_seed(0, 2, 3, 0.5))
        self.assertNotEqual(run_seed(0, 2, 3, 0.5), run_seed(0, 2, 3, 1.0))
        self.assertNotEqual(run_seed(0, 2, 3, 0.5), run_seed(0, 2, 2, 0.5))
        self.assertEqual(run_seed(10, 2, 3, 0.5)[0], 12)


class RunExperimentTests(TempDirMixin, SimpleTestCase):
    def test_outputs(self):
        result = run_experiment(small_config(), self.path("out"))
        lines = Path(result.raw_csv).read_text().splitlines()
        self.assertEqual(lines[0], RAW_HEADER.strip())
        # 2 n values x 2 etas x 2 seeds x 6 probes
        self.assertEqual(len(lines) - 1, 48)
        self.assertEqual({line.split(",")[2] for line in lines[1:]}, {"3", "4"})
        header = Path(result.aggregate_csv).read_text().splitlines()[0]
        self.assertEqual(header, "n,eta,step,mean,stderr")
        self.assertEqual(result.summary.keys(), [(1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0)])
        self.assertEqual(result.summary.seeds, 2)

    def test_deterministic_raw_csv(self):
        first = run_experiment(small_config(), self.path("a"))
        second = run_experiment(small_config(), self.path("b"))
        self.assertEqual(Path(first.raw_csv).read_bytes(), Path(second.raw_csv).read_bytes())

    def test_worker_pool_matches_inline(self):
        inline = run_experiment(small_config(), self.path("inline"), workers=1)
        pooled = run_experiment(small_config(), self.path("pooled"), workers=2)
        self.assertEqual(Path(inline.raw_csv).read_bytes(), Path(pooled.raw_csv).read_bytes())

    def test_adding_eta_keeps_existing_runs(self):
        narrow = run_experiment(small_config(eta_values=[0.5]), self.path("narrow"))
        wide = run_experiment(small_config(eta_values=[0.5, 2.0]), self.path("wide"))
        narrow_rows = Path(narrow.raw_csv).read_text().splitlines()[1:]
        wide_rows = set(Path(wide.raw_csv).read_text().splitlines()[1:])
        self.assertTrue(set(narrow_rows) <= wide_rows)

    def test_single_seed_has_no_stderr(self):
        result = run_experiment(small_config(seeds=1), self.path("one"))
        header = Path(result.aggregate_csv).read_text().splitlines()[0]
        self.assertEqual(header, "n,eta,step,mean")
        self.assertFalse(result.summary.has_stderr)

    def test_shared_database_file(self):
        db_path = self.path("sweeps.duckdb")
        first = run_experiment(small_config(), self.path("first"), db_path=db_path)
        again = run_experiment(small_config(), self.path("again"), db_path=db_path)
        self.assertEqual(Path(first.raw_csv).read_bytes(), Path(again.raw_csv).read_bytes())
        other = run_experiment(small_config(eta_values=[2.0]), self.path("other"), db_path=db_path)
        self.assertEqual(other.summary.keys(), [(1, 2.0), (2, 2.0)])
        etas = {line.split(",")[1] for line in Path(other.raw_csv).read_text().splitlines()[1:]}
        self.assertEqual(etas, {"2.0"})

    def test_coverage_violation(self):
        policy_path = self.path("greedy_only.json")
        Path(policy_path).write_text(json.dumps({"probs": [[1.0, 0.0, 0.0, 0.0]] * 9}))
        config = small_config(behavior_policy={"kind": "file", "path": policy_path})
        with self.assertRaises(ConfigError):
            run_experiment(config, self.path("out"))


class AggregateTests(TempDirMixin, SimpleTestCase):
    def test_mean_and_stderr(self):
        raw = self.path("raw.csv")
        write_raw(raw, [
            (1, 0.5, 0, 0, 0.0, 0.0),
            (1, 0.5, 1, 0, 2.0, 0.0),
            (1, 0.5, 0, 100, 1.0, 0.1),
            (1, 0.5, 1, 100, 1.0, 0.1),
        ])
        summary = aggregate(raw, out_csv=self.path("agg.csv"))
        first, second = summary.series[(1, 0.5)]
        self.assertEqual(first.step, 0)
        self.assertAlmostEqual(first.mean, 1.0)
        self.assertAlmostEqual(first.stderr, 1.0)
        self.assertAlmostEqual(second.stderr, 0.0)
        self.assertTrue(Path(self.path("agg.csv")).exists())

    def test_permutation_invariant(self):
        rows = [(2, 0.1, seed, step, 0.25 * seed + step / 100, 0.0)
                for seed in range(4) for step in (0, 100, 200)]
        write_raw(self.path("ordered.csv"), rows)
        shuffled = list(rows)
        random.Random(1).shuffle(shuffled)
        write_raw(self.path("shuffled.csv"), shuffled)
        ordered = aggregate(self.path("ordered.csv")).series[(2, 0.1)]
        shuffled = aggregate(self.path("shuffled.csv")).series[(2, 0.1)]
        self.assertEqual([point.step for point in shuffled], [0, 100, 200])
        for left, right in zip(ordered, shuffled):
            self.assertEqual(left.mean, right.mean)
            self.assertAlmostEqual(left.stderr, right.stderr, places=12)

    def test_single_seed_equals_raw(self):
        write_raw(self.path("raw.csv"), [(1, 1.0, 0, 0, 0.5, 0.0), (1, 1.0, 0, 100, 0.25, 0.0)])
        summary = aggregate(self.path("raw.csv"))
        self.assertEqual(
            summary.series[(1, 1.0)], [SeriesPoint(0, 0.5, None), SeriesPoint(100, 0.25, None)]
        )

    def test_ragged_grid(self):
        write_raw(self.path("raw.csv"), [
            (1, 1.0, 0, 0, 0.5, 0.0),
            (1, 1.0, 0, 100, 0.4, 0.0),
            (1, 1.0, 1, 0, 0.5, 0.0),
        ])
        with self.assertRaises(InputError):
            aggregate(self.path("raw.csv"))

    def test_shared_database_file(self):
        db_path = self.path("sweeps.duckdb")
        write_raw(self.path("raw.csv"), [(1, 1.0, 0, 0, 0.5, 0.0), (1, 1.0, 1, 0, 1.5, 0.0)])
        first = aggregate(self.path("raw.csv"), db_path=db_path)
        second = aggregate(self.path("raw.csv"), db_path=db_path)
        self.assertEqual(first.series, second.series)
        self.assertEqual(second.seeds, 2)

    def test_missing_file(self):
        with self.assertRaises(InputError):
            aggregate(self.path("absent.csv"))


class PlotTests(TempDirMixin, SimpleTestCase):
    def summary(self, keys=((3, 0.1), (3, 0.5))):
        return SweepSummary(series={
            key: [SeriesPoint(step, 1.0 / (1 + step), 0.01) for step in range(0, 500, 100)]
            for key in keys
        }, seeds=2)

    def test_byte_identical(self):
        emit_plot(self.summary(), self.path("a.svg"))
        emit_plot(self.summary(), self.path("b.svg"))
        content = Path(self.path("a.svg")).read_bytes()
        self.assertTrue(content.lstrip().startswith(b"<?xml"))
        self.assertEqual(content, Path(self.path("b.svg")).read_bytes())

    def test_single_series(self):
        out = emit_plot(self.summary(keys=((1, 0.1),)), self.path("single.svg"))
        self.assertTrue(out.exists())

    def test_empty_summary(self):
        with self.assertRaises(InputError):
            emit_plot(SweepSummary(), self.path("empty.svg"))

    def test_one_curve_and_band_per_series(self):
        keys = [(3, 0.1), (3, 0.5), (3, 1.0), (3, 2.0)]
        fig = draw_figure(self.summary(keys=keys))
        try:
            (ax,) = fig.axes
            self.assertEqual(len(ax.lines), 4)
            self.assertEqual(len(ax.collections), 4)
            labels = [text.get_text() for text in ax.get_legend().get_texts()]
            self.assertEqual(labels, ["η = 0.1", "η = 0.5", "η = 1", "η = 2"])
        finally:
            plt.close(fig)

    def test_single_seed_has_no_bands(self):
        summary = SweepSummary(series={
            (n, 0.1): [SeriesPoint(step, 1.0, None) for step in (0, 100)] for n in (1, 2)
        }, seeds=1)
        fig = draw_figure(summary)
        try:
            (ax,) = fig.axes
            self.assertEqual(len(ax.lines), 2)
            self.assertEqual(len(ax.collections), 0)
        finally:
            plt.close(fig)

    def test_failed_save_closes_figure(self):
        open_before = plt.get_fignums()
        target = self.path("taken")
        os.mkdir(target)
        with self.assertRaises(OSError):
            emit_plot(self.summary(), target)
        self.assertEqual(plt.get_fignums(), open_before)

    def test_decreasing(self):
        falling = [SeriesPoint(step, 1.0 / (1 + step), None) for step in range(40)]
        self.assertTrue(decreasing(falling))
        flat = [SeriesPoint(step, 1.0, None) for step in range(40)]
        self.assertFalse(decreasing(flat))


class SolveCommandTests(TempDirMixin, SimpleTestCase):
    def write_two_state(self):
        mdp = self.path("mdp.json")
        Path(mdp).write_text(json.dumps({
            "num_states": 2,
            "num_actions": 1,
            "transition": [[[0.9, 0.1]], [[0.2, 0.8]]],
            "reward": [[1.0], [0.0]],
            "start": [1.0, 0.0],
        }))
        policy = self.path("policy.json")
        Path(policy).write_text(json.dumps({"probs": [[1.0], [1.0]]}))
        return mdp, policy

    def test_two_state_example(self):
        mdp, policy = self.write_two_state()
        out = StringIO()
        call_command("solve", "--mdp", mdp, "--policy", policy, stdout=out)
        result = json.loads(out.getvalue())
        self.assertAlmostEqual(result["gain"], 2 / 3, places=12)
        self.assertAlmostEqual(result["bias"][0], 10 / 9, places=10)
        self.assertAlmostEqual(result["bias"][1], -20 / 9, places=10)

    def test_gridworld_gain(self):
        out = StringIO()
        call_command("solve", "--gridworld", "5x5", "--epsilon", "0.1", stdout=out)
        gain = json.loads(out.getvalue())["gain"]
        self.assertGreater(gain, 0.0)
        self.assertLess(gain, 1.0)

    def test_source_must_be_unique(self):
        mdp, policy = self.write_two_state()
        with self.assertRaises(CommandError):
            call_command("solve", "--mdp", mdp, "--policy", policy, "--gridworld", "3x3", stdout=StringIO())


class AnalyzeCommandTests(TempDirMixin, SimpleTestCase):
    def test_gridworld_report(self):
        report_path = self.path("report.json")
        spectrum_path = self.path("spectrum.csv")
        out = StringIO()
        call_command(
            "analyze", "--gridworld", "5x5", "--n", "3", "--eta", "0.1",
            "--out", report_path, "--spectrum-csv", spectrum_path, stdout=out,
        )
        data = json.loads(Path(report_path).read_text())
        report = data["report"]
        self.assertEqual(report["eta0"], 0.0)
        self.assertNotIn("eta0-bound", report["certificates"])
        self.assertEqual(len(report["spectrum"]), 25)
        self.assertGreater(data["lipschitz_bound"], 1.0)
        self.assertEqual(len(Path(spectrum_path).read_text().splitlines()), 26)

    def test_eta_sweep(self):
        report_path = self.path("sweep.json")
        call_command(
            "analyze", "--gridworld", "3x3", "--n", "2", "--eta-sweep", "0.1", "1", "10",
            "--out", report_path, stdout=StringIO(),
        )
        sweep = json.loads(Path(report_path).read_text())["eta_sweep"]
        self.assertEqual([point["eta"] for point in sweep], [0.1, 1.0, 10.0])

    def test_needs_eta(self):
        with self.assertRaises(CommandError):
            call_command("analyze", "--gridworld", "3x3", stdout=StringIO())


class EnvCommandTests(TempDirMixin, SimpleTestCase):
    def test_dump_and_solve(self):
        mdp, policy = self.path("grid.json"), self.path("target.json")
        call_command("env", "dump", "--gridworld", "5x5", "--out", mdp, "--policy-out", policy, stdout=StringIO())
        from_files, from_grid = StringIO(), StringIO()
        call_command("solve", "--mdp", mdp, "--policy", policy, stdout=from_files)
        call_command("solve", "--gridworld", "5x5", stdout=from_grid)
        self.assertEqual(json.loads(from_files.getvalue()), json.loads(from_grid.getvalue()))

    def test_dump_random(self):
        path = self.path("random.json")
        call_command("env", "dump", "--random", "3", "2", "--seed", "4", "--out", path, stdout=StringIO())
        data = json.loads(Path(path).read_text())
        self.assertEqual((data["num_states"], data["num_actions"]), (3, 2))


class RunCommandTests(TempDirMixin, TestCase):
    def write_config(self, **overrides):
        path = self.path("config.json")
        Path(path).write_text(json.dumps(small_config(**overrides).to_dict()))
        return path

    def test_run_records_sweep(self):
        out_dir = self.path("results")
        out = StringIO()
        call_command("run", "--config", self.write_config(), "--out", out_dir, "--seeds", "2", stdout=out)
        record = SweepRecord.objects.get()
        self.assertEqual(record.status, "finished")
        self.assertEqual(record.seeds, 2)
        for name in ("raw.csv", "aggregate.csv", "rmsve.svg"):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))
        self.assertEqual(record.plot_path, os.path.join(out_dir, "rmsve.svg"))
        self.assertIn("Sweep small written to", out.getvalue())

        call_command("aggregate", os.path.join(out_dir, "raw.csv"), "--out", self.path("again.csv"), stdout=StringIO())
        again = SweepSummary.from_csv(self.path("again.csv"))
        original = SweepSummary.from_csv(os.path.join(out_dir, "aggregate.csv"))
        self.assertEqual(again.keys(), original.keys())
        for key in original.keys():
            for left, right in zip(again.series[key], original.series[key]):
                self.assertEqual(left.step, right.step)
                self.assertAlmostEqual(left.mean, right.mean, places=12)
        call_command("plot", self.path("again.csv"), "--out", self.path("again.svg"), stdout=StringIO())
        self.assertTrue(os.path.exists(self.path("again.svg")))

    def test_failed_run_is_recorded(self):
        policy_path = self.path("greedy_only.json")
        Path(policy_path).write_text(json.dumps({"probs": [[1.0, 0.0, 0.0, 0.0]] * 9}))
        config = self.write_config(behavior_policy={"kind": "file", "path": policy_path})
        with self.assertRaises(CommandError):
            call_command("run", "--config", config, "--out", self.path("results"), stdout=StringIO())
        record = SweepRecord.objects.get()
        self.assertEqual(record.status, "failed")
        self.assertIn("does not cover", record.error)

    def test_file_policy_without_path(self):
        data = small_config().to_dict()
        data["behavior_policy"] = {"kind": "file"}
        config = self.path("config.json")
        Path(config).write_text(json.dumps(data))
        with self.assertRaises(CommandError):
            call_command("run", "--config", config, "--out", self.path("results"), stdout=StringIO())
        self.assertFalse(SweepRecord.objects.exists())

    def test_unknown_preset(self):
        with self.assertRaises(CommandError):
            call_command("run", "--preset", "nope", stdout=StringIO())
        self.assertFalse(SweepRecord.objects.exists())


@unittest.skipUnless(SLOW_TESTS, "set LAB_SLOW_TESTS=1 to run the preset reproductions")
class PresetReproductionTests(TempDirMixin, SimpleTestCase):
    def reproduce(self, preset):
        config = ExperimentConfig.preset(preset, settings.LAB_CONFIG["PRESETS_DIR"])
        config = config.with_overrides(seeds=10)
        result = run_experiment(config, self.path(preset), workers=settings.LAB_CONFIG["WORKERS"])
        for key, points in result.summary.series.items():
            self.assertTrue(decreasing(points), (key, points[0].mean, points[-1].mean))

    def test_eta_sweep_is_stable(self):
        self.reproduce("fig1")

    def test_n_sweep_is_stable(self):
        self.reproduce("fig2")
