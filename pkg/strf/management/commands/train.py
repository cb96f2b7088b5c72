"""
Train scale-channel networks on a simulated dataset, one run per seed.

Usage:
    strf train --data data/ --init rf --activation li --seeds 1,2,3 --epochs 15 --out runs/
"""
from strf.management.base import (
    StrfCommand,
    int_list,
    non_negative_float,
    non_negative_int,
    positive_float,
    positive_int,
    unit_interval,
)
from strf.management.commands.net import _choice, load_network_config
from strf.scale_channel_net import ACTIVATIONS, INITS
from strf.trainer import SequenceDataset, TrainConfig, train


class Command(StrfCommand):
    help = "Train the scale-channel network with backpropagation through time"
    default_out = "runs"

    def add_arguments(self, parser):
        parser.add_argument("--data", required=True, help="Dataset directory written by simulate.")
        parser.add_argument("--out", default=None, help="Run directory (default: STRF_OUTPUT_ROOT/runs).")
        parser.add_argument("--net", default=None, help="NetworkConfig JSON.")
        parser.add_argument("--init", type=_choice, choices=INITS, default="rf")
        parser.add_argument("--activation", type=_choice, choices=ACTIVATIONS, default="li")
        parser.add_argument("--seeds", type=int_list, default=None, help="Comma-separated seeds (default: --seed).")
        parser.add_argument("--epochs", type=non_negative_int, default=15)
        parser.add_argument("--lr", type=non_negative_float, default=5e-4)
        parser.add_argument("--batch-size", type=positive_int, default=8)
        parser.add_argument("--val-fraction", type=unit_interval, default=0.2)
        parser.add_argument("--burn-in", type=non_negative_int, default=10)
        parser.add_argument("--clip-norm", type=positive_float, default=10.0)
        parser.add_argument("--surrogate-beta", type=positive_float, default=10.0)

    def handle(self, *args, **options):
        dataset = SequenceDataset(options["data"], workers=options["threads"])
        height, width = dataset.resolution
        net_config = load_network_config(
            options["net"], activation=options["activation"], init=options["init"], height=height, width=width
        )
        seeds = options["seeds"] or [options["seed"]]
        self.write_config(options["out"], options, network=net_config.to_dict(), seeds=seeds)
        for seed in seeds:
            config = TrainConfig(
                lr=options["lr"],
                epochs=options["epochs"],
                batch_size=options["batch_size"],
                val_fraction=options["val_fraction"],
                burn_in=options["burn_in"],
                clip_norm=options["clip_norm"],
                surrogate_beta=options["surrogate_beta"],
                seed=seed,
                threads=options["threads"],
            )
            stats = train(config, net_config, options["data"], out_dir=options["out"], dataset=dataset)
            self.success(f"{stats.name}: best validation loss {stats.best_val_loss:.3f} px")
