"""
Build the affine Gaussian derivative kernel bank and write it to disk.

Usage:
    strf kernels --out bank.bin [--plot bank.svg]
"""
from strf.management.base import StrfCommand, float_list, positive_int
from strf.spatial_kernels import DEFAULT_SCALES, DEFAULT_SKEWS, build_bank


class Command(StrfCommand):
    help = "Build the spatial receptive-field kernel bank"
    default_out = "kernels.rfb"

    def add_arguments(self, parser):
        parser.add_argument(
            "--out", default=None, help="Kernel bank file to write (default: STRF_OUTPUT_ROOT/kernels.rfb)."
        )
        parser.add_argument("--orientations", "--n-orient", dest="n_orient", type=positive_int, default=4)
        parser.add_argument(
            "--scales", type=float_list, default=list(DEFAULT_SCALES), help="Comma-separated σ values."
        )
        parser.add_argument(
            "--skews", type=float_list, default=list(DEFAULT_SKEWS), help="Comma-separated σ_minor/σ_major ratios."
        )
        parser.add_argument("--size", "--grid", dest="grid", type=positive_int, default=9, help="Odd kernel grid side.")
        parser.add_argument("--supersample", type=positive_int, default=4)
        parser.add_argument("--include-mixed", action="store_true", help="Add the mixed (1, 1) derivative family.")
        parser.add_argument("--svg", "--plot", dest="plot", default=None, help="Optional SVG with every kernel.")

    def handle(self, *args, **options):
        bank = build_bank(
            n_orient=options["n_orient"],
            scales=options["scales"],
            skews=options["skews"],
            grid_size=(options["grid"], options["grid"]),
            supersample=options["supersample"],
            include_mixed=options["include_mixed"],
        )
        bank.save(options["out"])
        if options["plot"]:
            from strf.stats_reporting import plot_bank

            plot_bank(bank, options["plot"])
        self.write_config(options["out"], options, n_kernels=len(bank), layout=list(bank.layout))
        self.success(f"Wrote {len(bank)} kernels to {options['out']}")
