"""
Per-bin validation losses of a checkpoint, or of the uniform random baseline.

Usage:
    strf eval --ckpt runs/li_rf_seed1/best.ckpt --data data/ --out eval.json
    strf eval --random --data data/ --out baseline.json
"""
import json

from strf.exceptions import ConfigurationError
from strf.management.base import StrfCommand, non_negative_int, positive_int
from strf.trainer import SequenceDataset, evaluate_per_scale, random_predictor


class Command(StrfCommand):
    help = "Evaluate a trained network per scale or velocity bin"

    def add_arguments(self, parser):
        parser.add_argument("--data", required=True, help="Dataset directory.")
        parser.add_argument("--ckpt", default=None, help="Checkpoint to evaluate.")
        parser.add_argument("--random", action="store_true", help="Evaluate the uniform random predictor instead.")
        parser.add_argument("--all", action="store_true", help="Use every sequence, not only the validation split.")
        parser.add_argument("--burn-in", type=non_negative_int, default=10)
        parser.add_argument("--batch-size", type=positive_int, default=8)
        parser.add_argument("--out", default=None, help="JSON file for the per-bin losses.")

    def handle(self, *args, **options):
        if bool(options["ckpt"]) == bool(options["random"]):
            raise ConfigurationError("eval needs exactly one of --ckpt and --random")
        dataset = SequenceDataset(options["data"], workers=options["threads"])
        predictor = None
        if options["random"]:
            height, width = dataset.resolution
            predictor = random_predictor(height, width, len(dataset.manifest["shapes"]), seed=options["seed"])
        per_bin = evaluate_per_scale(
            options["ckpt"],
            options["data"],
            burn_in=options["burn_in"],
            batch_size=options["batch_size"],
            all_sequences=options["all"],
            predictor=predictor,
            dataset=dataset,
        )
        if options["out"]:
            with open(options["out"], "w") as stream:
                json.dump({"family": dataset.family, "per_bin_loss": per_bin}, stream, sort_keys=True, indent=2)
            self.write_config(options["out"], options)
        for key, value in per_bin.items():
            self.stdout.write(f"bin {key}: {value:.3f} px")
