"""
Run the desk-scale initialisation experiment end to end:
simulate both dataset families, train every activation with RF and uniform
initialisation for each seed, then write the report.

Usage:
    strf repro --out experiment/

The full default grid (2 families × 4 activations × 2 inits × 3 seeds, 15
epochs on 64×64 frames) takes a few CPU-hours.
"""
import os

from strf.event_simulator import DatasetSpec, make_dataset
from strf.management.base import StrfCommand, int_list, name_list, non_negative_int, positive_int
from strf.management.commands.net import load_network_config
from strf.scale_channel_net import ACTIVATIONS, INITS
from strf.stats_reporting import write_report
from strf.trainer import SequenceDataset, TrainConfig, train

FAMILIES = ("spatial", "velocity")


class Command(StrfCommand):
    help = "Simulate, train and report the RF-vs-uniform initialisation experiment"
    default_out = "repro"

    def add_arguments(self, parser):
        parser.add_argument("--out", default=None, help="Experiment directory (default: STRF_OUTPUT_ROOT/repro).")
        parser.add_argument("--families", type=name_list(FAMILIES), default=list(FAMILIES))
        parser.add_argument("--activations", type=name_list(ACTIVATIONS), default=list(ACTIVATIONS))
        parser.add_argument("--inits", type=name_list(INITS), default=list(INITS))
        parser.add_argument("--seeds", type=int_list, default=[1, 2, 3])
        parser.add_argument("--n", type=non_negative_int, default=200, help="Sequences per dataset family.")
        parser.add_argument("--resolution", type=positive_int, default=64)
        parser.add_argument("--epochs", type=non_negative_int, default=15)
        parser.add_argument("--net", default=None, help="NetworkConfig JSON shared by every run.")

    def handle(self, *args, **options):
        out = options["out"]
        runs_dir = os.path.join(out, "runs")
        self.write_config(out, options)
        for family in options["families"]:
            data_dir = os.path.join(out, "data", family)
            spec = DatasetSpec.desk(
                family, resolution=options["resolution"], n_sequences=options["n"], seed=options["seed"]
            )
            make_dataset(spec, data_dir, workers=options["threads"])
            dataset = SequenceDataset(data_dir, workers=options["threads"])
            for activation in options["activations"]:
                for init in options["inits"]:
                    net_config = load_network_config(
                        options["net"],
                        activation=activation,
                        init=init,
                        height=options["resolution"],
                        width=options["resolution"],
                    )
                    for seed in options["seeds"]:
                        config = TrainConfig(epochs=options["epochs"], seed=seed, threads=options["threads"])
                        stats = train(config, net_config, data_dir, out_dir=runs_dir, dataset=dataset)
                        self.stdout.write(f"{stats.name}: best validation loss {stats.best_val_loss:.3f} px")
        rows, _ = write_report(
            runs_dir, os.path.join(out, "report"), resolution=options["resolution"], seed=options["seed"]
        )
        for row in rows:
            effect = "undefined" if row["cohens_d"] is None else f"{row['cohens_d']:.2f}"
            self.stdout.write(f"{row['family']}/{row['activation']}: d = {effect}")
        self.success(f"Experiment written to {out}")
