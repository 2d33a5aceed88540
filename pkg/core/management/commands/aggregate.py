from pathlib import Path

from core.cli import LabCommand, lab_config
from td_engine.harness import AGGREGATE_CSV, aggregate


class Command(LabCommand):
    help = 'Mean and standard error per (n, eta, step) from a raw sweep CSV'

    def add_arguments(self, parser):
        parser.add_argument("raw_csv", help="Raw CSV written by `run`")
        parser.add_argument("--out", help=f"Aggregate CSV path (default: {AGGREGATE_CSV} next to the raw CSV)")

    def run(self, *args, **options):
        raw_csv = Path(options["raw_csv"])
        out = Path(options["out"]) if options["out"] else raw_csv.with_name(AGGREGATE_CSV)
        summary = aggregate(raw_csv, out_csv=out, db_path=lab_config()["SWEEP_DB_PATH"])
        self.stdout.write(self.style.SUCCESS(
            f"Aggregated {len(summary)} series over {summary.seeds} seed(s) into {out}"
        ))
