"""
Run the numerical covariance checks and write report.csv.

Usage:
    strf covariance --suite all|spatial|temporal|joint --out reports/

Exits with status 1 when any check fails.
"""
import os

from django.core.management.base import CommandError

from strf.covariance_harness import SUITES, run_suite, write_reports_csv
from strf.management.base import StrfCommand, non_negative_int


class Command(StrfCommand):
    help = "Check covariance of the receptive fields under affine, temporal and Galilean transformations"
    default_out = "covariance"

    def add_arguments(self, parser):
        parser.add_argument("--suite", choices=SUITES, default="all")
        parser.add_argument(
            "--refine", type=non_negative_int, default=3, help="Refinement-ladder levels (below 2: none)."
        )
        parser.add_argument(
            "--out", default=None, help="Directory for report.csv (default: STRF_OUTPUT_ROOT/covariance)."
        )

    def handle(self, *args, **options):
        reports = run_suite(options["suite"], refine=options["refine"], seed=options["seed"])
        os.makedirs(options["out"], exist_ok=True)
        path = os.path.join(options["out"], "report.csv")
        write_reports_csv(reports, path)
        self.write_config(options["out"], options, report=path)
        for report in reports:
            style = self.style.SUCCESS if report.passed else self.style.ERROR
            self.stdout.write(style(f"{report.name}: {report.rel_l2_error:.3g} (tolerance {report.tolerance:g})"))
        failed = [report.name for report in reports if not report.passed]
        if failed:
            raise CommandError(f"{len(failed)} covariance checks failed: {', '.join(failed)}", returncode=1)
        self.success(f"All {len(reports)} covariance checks passed")
