import csv
import json
import os

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import override_settings
from path import Path as path

from strf.cli import commands, main, setup
from strf.event_simulator import load_manifest
from strf.scale_channel_net import load_checkpoint
from strf.spatial_kernels import KernelBank

NET_CONFIG = {"n_temporal_channels": 2, "widths": [2, 2, 2], "kernel_size": 3}


def test_every_subcommand_is_found():
    assert commands() == ["covariance", "eval", "kernels", "net", "report", "repro", "simulate", "train"]


class TestEntryPoint:
    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "simulate" in capsys.readouterr().out

    def test_no_arguments(self):
        assert main([]) == 2

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "event_stream=EVS1" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "unknown subcommand" in capsys.readouterr().err

    def test_invalid_option_value(self, tmp_path):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path), "--lr", "-1"]) == 2

    def test_package_error_exits_with_one(self, tmp_path, capsys):
        assert main(["eval", "--data", str(tmp_path / "missing"), "--random"]) == 1
        assert "CommandError" in capsys.readouterr().err


class TestCovariance:
    def test_temporal_suite(self, tmp_path, capsys):
        assert main(["covariance", "--suite", "temporal", "--refine", "1", "--out", str(tmp_path)]) == 0
        assert "temporal_identity" in capsys.readouterr().out
        with open(tmp_path / "report.csv") as stream:
            rows = list(csv.DictReader(stream))
        assert all(row["passed"] == "True" for row in rows)
        with open(tmp_path / "config.json") as stream:
            config = json.load(stream)
        assert config["command"] == "covariance"
        assert config["options"]["suite"] == "temporal"


class TestSimulate:
    def test_empty_dataset(self, tmp_path):
        out = str(tmp_path / "data")
        assert main(["simulate", "--family", "velocity", "--n", "0", "--out", out]) == 0
        manifest = load_manifest(out)
        assert manifest["sequences"] == []
        assert manifest["spec"]["family"] == "temporal_velocity"

    def test_small_dataset(self, tmp_path):
        out = str(tmp_path / "data")
        args = ["--family", "spatial", "--n", "2", "--res", "16", "--frames", "4", "--supersample", "2", "--csv"]
        assert main(["simulate", *args, "--out", out]) == 0
        assert sorted(name for name in os.listdir(out) if name.startswith("seq_")) == [
            "seq_00000.csv",
            "seq_00000.evs",
            "seq_00001.csv",
            "seq_00001.evs",
        ]

    def test_noise_rate_out_of_range(self, tmp_path):
        assert main(["simulate", "--family", "spatial", "--noise", "1.5", "--out", str(tmp_path)]) == 2

    def test_default_output_under_output_root(self, tmp_path):
        setup()
        with override_settings(STRF_OUTPUT_ROOT=path(tmp_path / "root")):
            assert main(["simulate", "--family", "velocity", "--n", "0"]) == 0
        manifest = load_manifest(str(tmp_path / "root" / "data"))
        assert manifest["sequences"] == []
        with open(tmp_path / "root" / "data" / "config.json") as stream:
            assert json.load(stream)["options"]["out"] == str(tmp_path / "root" / "data")



class TestKernels:
    def test_call_command(self, tmp_path):
        path = str(tmp_path / "bank.rfb")
        call_command("kernels", out=path, n_orient=2, scales=[1.0], skews=[1.0], plot=str(tmp_path / "bank.svg"))
        bank = KernelBank.load(path)
        assert bank.layout == (2, 1, 1, 3)
        assert (tmp_path / "bank.svg").exists()
        assert (tmp_path / "bank.config.json").exists()

    def test_even_grid(self, tmp_path):
        with pytest.raises(CommandError):
            call_command("kernels", out=str(tmp_path / "bank.rfb"), grid=8)


class TestNetwork:
    def test_init_and_forward(self, tmp_path):
        config = tmp_path / "net.json"
        config.write_text(json.dumps(dict(NET_CONFIG, height=8, width=8)))
        ckpt = str(tmp_path / "net.ckpt")
        call_command("net", "init", ckpt=ckpt, config=str(config), activation="LIF", seed=4)
        net, _ = load_checkpoint(ckpt)
        assert (net.config.activation, net.config.seed) == ("lif", 4)

        inputs = str(tmp_path / "frames.npy")
        np.save(inputs, np.zeros((5, 2, 8, 8), dtype=np.float32))
        out = str(tmp_path / "pred.csv")
        call_command("net", "forward", ckpt=ckpt, input=inputs, out=out)
        with open(out) as stream:
            rows = list(csv.DictReader(stream))
        assert len(rows) == 15
        assert float(rows[0]["x"]) == pytest.approx(3.5)

    def test_forward_needs_input(self, tmp_path):
        with pytest.raises(CommandError):
            call_command("net", "forward", ckpt=str(tmp_path / "missing.ckpt"))


class TestTraining:
    def test_train_eval_report(self, tiny_dataset, tmp_path):
        config = tmp_path / "net.json"
        config.write_text(json.dumps(NET_CONFIG))
        runs = str(tmp_path / "runs")
        for init in ("rf", "uniform"):
            args = ["--data", tiny_dataset, "--out", runs, "--net", str(config), "--init", init]
            args += ["--seeds", "1,2", "--epochs", "1", "--burn-in", "2", "--batch-size", "4"]
            assert main(["train", *args]) == 0
        names = sorted(name for name in os.listdir(runs) if name.endswith(".json") and name != "config.json")
        assert len(names) == 4

        ckpt = os.path.join(runs, "temporal_velocity_li_rf_seed1", "best.ckpt")
        per_bin = str(tmp_path / "per_bin.json")
        assert main(["eval", "--data", tiny_dataset, "--ckpt", ckpt, "--burn-in", "2", "--out", per_bin]) == 0
        with open(per_bin) as stream:
            assert json.load(stream)["family"] == "temporal_velocity"

        report = str(tmp_path / "report")
        assert main(["report", "--runs", runs, "--out", report, "--resolution", "16"]) == 0
        assert {"effect_sizes.csv", "baseline.json", "per_bin.svg"} <= set(os.listdir(report))

    def test_eval_needs_one_source(self, tiny_dataset):
        with pytest.raises(CommandError):
            call_command("eval", data=tiny_dataset)
