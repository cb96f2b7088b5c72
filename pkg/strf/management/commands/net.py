"""
Initialise a scale-channel network or run it on one sequence.

Usage:
    strf net init --config net.json --ckpt w.bin
    strf net forward --ckpt w.bin --input seq_00000.evs --out pred.csv
"""
import csv
import json

import numpy as np
import torch

from strf.event_simulator import EventStream
from strf.exceptions import ConfigurationError
from strf.management.base import StrfCommand
from strf.scale_channel_net import (
    ACTIVATIONS,
    INITS,
    NetworkConfig,
    forward,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)


def load_network_config(path, **overrides):
    data = {}
    if path:
        try:
            with open(path) as stream:
                data = json.load(stream)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    data.update({key: value for key, value in overrides.items() if value is not None})
    return NetworkConfig.from_dict(data)


def _choice(value):
    return value.lower().replace("-", "_")


class Command(StrfCommand):
    help = "Initialise a scale-channel network checkpoint or run a forward pass"

    def add_arguments(self, parser):
        parser.add_argument("action", choices=("init", "forward"))
        parser.add_argument("--ckpt", required=True, help="Checkpoint file (written by init, read by forward).")
        parser.add_argument("--config", default=None, help="NetworkConfig JSON for init.")
        parser.add_argument("--activation", type=_choice, choices=ACTIVATIONS, default=None)
        parser.add_argument("--init", type=_choice, choices=INITS, default=None)
        parser.add_argument(
            "--input", default=None, help="Event stream (.evs) or [T, C, H, W] array (.npy) for forward."
        )
        parser.add_argument("--out", default=None, help="Prediction CSV for forward.")

    def handle(self, *args, **options):
        torch.set_num_threads(options["threads"])
        if options["action"] == "init":
            config = load_network_config(
                options["config"], activation=options["activation"], init=options["init"], seed=options["seed"]
            )
            net = init_parameters(config)
            save_checkpoint(net, options["ckpt"])
            self.write_config(options["ckpt"], options, network=config.to_dict())
            self.success(f"Wrote {config.activation}/{config.init} checkpoint to {options['ckpt']}")
            return

        if not options["input"] or not options["out"]:
            raise ConfigurationError("net forward needs --input and --out")
        net, _ = load_checkpoint(options["ckpt"])
        net.eval()
        if options["input"].endswith(".npy"):
            inputs = np.load(options["input"])
        else:
            inputs = EventStream.load(options["input"])
        with torch.no_grad():
            coords = forward(net, inputs).numpy()[0]
        with open(options["out"], "w", newline="") as stream:
            writer = csv.writer(stream)
            writer.writerow(["step", "class", "x", "y"])
            for step, row in enumerate(coords):
                for index, (x, y) in enumerate(row):
                    writer.writerow([step, index, repr(float(x)), repr(float(y))])
        self.write_config(options["out"], options, network=net.config.to_dict())
        self.success(f"Wrote {len(coords)} predicted steps to {options['out']}")
