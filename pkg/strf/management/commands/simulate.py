"""
Generate a synthetic event-camera dataset.

Usage:
    strf simulate --family spatial|velocity --n 200 --out data/
"""
from django.conf import settings

from strf.event_simulator import DatasetSpec, make_dataset
from strf.management.base import StrfCommand, non_negative_int, positive_int, probability, positive_float

PRESETS = ("desk", "full")
FAMILY_CHOICES = ("spatial", "velocity", "spatial_scale", "temporal_velocity")


class Command(StrfCommand):
    help = "Render moving shape contours and convert them to polarity events"
    default_out = "data"

    def add_arguments(self, parser):
        parser.add_argument("--family", required=True, choices=FAMILY_CHOICES)
        parser.add_argument("--out", default=None, help="Dataset directory (default: STRF_OUTPUT_ROOT/data).")
        parser.add_argument("--n", type=non_negative_int, default=None, help="Number of sequences.")
        parser.add_argument("--preset", choices=PRESETS, default="desk")
        parser.add_argument(
            "--res",
            "--resolution",
            dest="resolution",
            type=positive_int,
            default=64,
            help="Output side for the desk preset.",
        )
        parser.add_argument("--frames", type=positive_int, default=None)
        parser.add_argument("--supersample", type=positive_int, default=None)
        parser.add_argument("--threshold", type=positive_float, default=None)
        parser.add_argument("--noise", "--noise-rate", dest="noise_rate", type=probability, default=None)
        parser.add_argument("--csv", action="store_true", help="Also write a CSV mirror of every event file.")

    def handle(self, *args, **options):
        overrides = {
            "seed": options["seed"],
            "threshold": options["threshold"] if options["threshold"] is not None else settings.STRF_EVENT_THRESHOLD,
            "noise_rate": options["noise_rate"] if options["noise_rate"] is not None else settings.STRF_NOISE_RATE,
        }
        for option, key in (("n", "n_sequences"), ("frames", "n_frames"), ("supersample", "supersample")):
            if options[option] is not None:
                overrides[key] = options[option]
        if options["preset"] == "full":
            spec = DatasetSpec.full(options["family"], **overrides)
        else:
            spec = DatasetSpec.desk(options["family"], resolution=options["resolution"], **overrides)
        manifest = make_dataset(spec, options["out"], csv_mirror=options["csv"], workers=options["threads"])
        self.write_config(options["out"], options, spec=spec.to_dict())
        self.success(f"Wrote {len(manifest['sequences'])} {spec.family} sequences to {options['out']}")
