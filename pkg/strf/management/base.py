"""
Shared base class and argument types for strf management commands.
"""
import argparse
import json
import logging
import math
import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from path import Path as path

from strf.exceptions import StrfError
from strf.formats import FORMAT_VERSIONS

log = logging.getLogger(__name__)

# Options every django command carries; they are not part of a run's config.
DJANGO_OPTIONS = {
    "verbosity",
    "settings",
    "pythonpath",
    "traceback",
    "no_color",
    "force_color",
    "skip_checks",
    "stdout",
    "stderr",
}


def _typed(convert, check, message):
    def parse(value):
        try:
            parsed = convert(value)
        except (TypeError, ValueError):
            raise argparse.ArgumentTypeError(f"invalid value {value!r}")
        if not check(parsed):
            raise argparse.ArgumentTypeError(f"{value!r} {message}")
        return parsed

    return parse


positive_float = _typed(float, lambda value: math.isfinite(value) and value > 0, "must be a positive number")
non_negative_float = _typed(float, lambda value: math.isfinite(value) and value >= 0, "must not be negative")
positive_int = _typed(int, lambda value: value > 0, "must be a positive integer")
non_negative_int = _typed(int, lambda value: value >= 0, "must not be negative")
probability = _typed(float, lambda value: 0 <= value <= 1, "must lie in [0, 1]")
unit_interval = _typed(float, lambda value: 0 < value < 1, "must lie strictly between 0 and 1")


def int_list(value):
    """
    ``"1,2,3"`` → ``[1, 2, 3]``
    """
    try:
        items = [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")
    if not items:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return items


def float_list(value):
    try:
        items = [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")
    if not items:
        raise argparse.ArgumentTypeError("expected at least one number")
    return items


def name_list(choices):
    def parse(value):
        items = [item.strip().lower().replace("-", "_") for item in value.split(",") if item.strip()]
        unknown = [item for item in items if item not in choices]
        if unknown or not items:
            raise argparse.ArgumentTypeError(
                f"expected a comma-separated subset of {', '.join(choices)}, got {value!r}"
            )
        return items

    return parse


class StrfCommand(BaseCommand):
    """
    Adds ``--seed``, ``--threads`` and ``--verbose`` to every command, turns
    package errors into ``CommandError`` (exit code 1) and records the resolved
    options of each run next to its outputs.
    """

    # ``--out`` falls back to this name under the STRF_OUTPUT_ROOT setting
    default_out = None

    requires_system_checks = []

    def get_version(self):
        return " ".join(f"{name}={version}" for name, version in FORMAT_VERSIONS.items())

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.add_argument(
            "--seed", type=non_negative_int, default=None, help="Root seed (default: STRF_SEED setting)."
        )
        parser.add_argument(
            "--threads", type=positive_int, default=None, help="Worker threads (default: STRF_THREADS setting)."
        )
        parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")
        return parser

    def execute(self, *args, **options):
        options.setdefault("seed", None)
        options.setdefault("threads", None)
        options.setdefault("verbose", False)
        if options["seed"] is None:
            options["seed"] = getattr(settings, "STRF_SEED", 0)
        if options["threads"] is None:
            options["threads"] = getattr(settings, "STRF_THREADS", 1)
        if self.default_out and options.get("out") is None:
            options["out"] = self.default_output()
        if options["verbose"]:
            logging.getLogger("strf").setLevel(logging.DEBUG)
        try:
            return super().execute(*args, **options)
        except StrfError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except OSError as exc:
            raise CommandError(f"{exc.filename or ''}: {exc.strerror or exc}", returncode=1) from exc

    def default_output(self):
        """
        Resolve ``default_out`` under STRF_OUTPUT_ROOT and create the directory it lives in.
        """
        target = path(getattr(settings, "STRF_OUTPUT_ROOT", "runs")) / self.default_out
        directory = target.parent if os.path.splitext(target)[1] else target
        directory.makedirs_p()
        log.info("Writing to %s", target)
        return str(target)

    def write_config(self, out, options, **resolved):
        """
        Write ``config.json`` into the output directory ``out``, or ``<stem>.config.json`` next to an output file.
        """
        if os.path.splitext(str(out))[1]:
            directory = os.path.dirname(os.path.abspath(str(out)))
            target = os.path.splitext(str(out))[0] + ".config.json"
        else:
            directory = str(out)
            target = os.path.join(directory, "config.json")
        os.makedirs(directory, exist_ok=True)
        config = {
            "command": self.__module__.rsplit(".", 1)[-1],
            "options": {key: value for key, value in options.items() if key not in DJANGO_OPTIONS},
            "resolved": resolved,
            "formats": FORMAT_VERSIONS,
        }
        with open(target, "w") as stream:
            json.dump(config, stream, sort_keys=True, indent=2, default=str)
        log.debug("Wrote run config %s", target)
        return target

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
