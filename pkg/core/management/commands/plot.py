from pathlib import Path

from core.cli import LabCommand
from td_engine.harness import PLOT_FILE, SweepSummary
from td_engine.plotting import emit_plot


class Command(LabCommand):
    help = 'Render an aggregate CSV as RMSVE curves with standard-error bands (SVG)'

    def add_arguments(self, parser):
        parser.add_argument("aggregate_csv", help="Aggregate CSV written by `run` or `aggregate`")
        parser.add_argument("--out", help=f"SVG path (default: {PLOT_FILE} next to the CSV)")
        parser.add_argument("--title", help="Plot title")

    def run(self, *args, **options):
        source = Path(options["aggregate_csv"])
        out = Path(options["out"]) if options["out"] else source.with_name(PLOT_FILE)
        summary = SweepSummary.from_csv(source)
        emit_plot(summary, out, title=options["title"])
        self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
