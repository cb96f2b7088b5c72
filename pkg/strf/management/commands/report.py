"""
Effect sizes and figures for a directory of training runs.

Usage:
    strf report --runs runs/ --out report/ [--resolution 64]
"""
from strf.management.base import StrfCommand, positive_int
from strf.stats_reporting import write_report


class Command(StrfCommand):
    help = "Compute RF-vs-uniform effect sizes and draw the report figures"
    default_out = "report"

    def add_arguments(self, parser):
        parser.add_argument("--runs", required=True, help="Directory holding the run summaries.")
        parser.add_argument("--out", default=None, help="Report directory (default: STRF_OUTPUT_ROOT/report).")
        parser.add_argument(
            "--resolution", type=positive_int, default=None, help="Image side for the random baselines."
        )

    def handle(self, *args, **options):
        rows, outputs = write_report(
            options["runs"], options["out"], resolution=options["resolution"], seed=options["seed"]
        )
        self.write_config(options["out"], options, outputs=outputs)
        for row in rows:
            effect = "undefined" if row["cohens_d"] is None else f"{row['cohens_d']:.2f}"
            self.stdout.write(f"{row['family']}/{row['activation']}: d = {effect}")
        self.success(f"Report written to {options['out']}")
