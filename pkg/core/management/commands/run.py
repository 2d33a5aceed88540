import logging
from pathlib import Path

from core.cli import LabCommand, lab_config
from core.models import SweepRecord
from td_engine.exceptions import ConfigError
from td_engine.harness import ExperimentConfig, decreasing
from td_engine.pipeline import ExperimentPipeline

logger = logging.getLogger(__name__)


class Command(LabCommand):
    help = 'Run a seeded (n, eta) sweep from a config file or a shipped preset'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--config", help="Experiment config file (JSON)")
        source.add_argument("--preset", help="Shipped preset name, e.g. fig1 or fig2")
        parser.add_argument("--seeds", type=int, help="Override the number of seeds")
        parser.add_argument("--steps", type=int, help="Override the steps per run")
        parser.add_argument("--base-seed", type=int, help="Override the base seed")
        parser.add_argument("--probe-every", type=int, help="Override the probe cadence")
        parser.add_argument("--out", help="Output directory (default: OUTPUT_DIR/<name>)")
        parser.add_argument("--workers", type=int, help="Worker processes (default: WORKERS)")
        parser.add_argument("--no-plot", action="store_true", help="Skip the SVG plot")

    def load_config(self, options):
        lab = lab_config()
        if options["preset"]:
            config = ExperimentConfig.preset(options["preset"], lab["PRESETS_DIR"])
        else:
            config = ExperimentConfig.load(options["config"])
        return config.with_overrides(
            seeds=options["seeds"],
            steps=options["steps"],
            base_seed=options["base_seed"],
            probe_every=options["probe_every"],
        )

    def run(self, *args, **options):
        lab = lab_config()
        config = self.load_config(options)
        out_dir = Path(options["out"] or Path(lab["OUTPUT_DIR"]) / config.name)
        workers = options["workers"] or lab["WORKERS"]
        if workers < 1:
            raise ConfigError(f"workers must be at least 1, got {workers}")

        record = SweepRecord.objects.create(
            name=config.name,
            config=config.to_dict(),
            base_seed=config.base_seed,
            seeds=config.seeds,
            steps=config.steps,
            out_dir=str(out_dir),
        )
        logger.info("Recorded sweep %s as %s", config.name, record.id)
        try:
            result, plot_path = ExperimentPipeline().run(
                config, out_dir,
                workers=workers,
                db_path=lab["SWEEP_DB_PATH"],
                make_plot=not options["no_plot"],
            )
        except Exception as e:
            record.mark_failed(e)
            raise
        record.mark_finished(result.raw_csv, result.aggregate_csv, plot_path)

        for (n, eta), points in sorted(result.summary.series.items()):
            first, last = points[0].mean, points[-1].mean
            line = f"n={n} eta={eta:g}: RMSVE {first:.4f} -> {last:.4f}"
            if decreasing(points):
                self.stdout.write(line)
            else:
                self.stdout.write(self.style.WARNING(line + " (not clearly decreasing)"))
        self.stdout.write(self.style.SUCCESS(f"Sweep {config.name} written to {out_dir}"))
