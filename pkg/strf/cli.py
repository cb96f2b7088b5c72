"""
``strf`` console entry point.

Subcommands are the management commands under ``strf/management/commands``;
they run without a Django project, against settings configured here.
"""
import os
import sys

import django
from django.conf import settings
from django.core.management import find_commands, load_command_class

from strf.formats import FORMAT_VERSIONS
from strf.settings.common import plugin_settings

USAGE = "usage: strf <subcommand> [options]\n\nsubcommands: {commands}\n"


def commands():
    return sorted(find_commands(os.path.join(os.path.dirname(__file__), "management")))


def setup():
    """
    Configure django settings for strf once per process.
    """
    if not settings.configured:
        settings.configure(INSTALLED_APPS=["strf"], USE_TZ=True)
        plugin_settings(settings)
        django.setup()


def main(argv=None):
    """
    Run ``strf <subcommand> ...`` and return its exit code.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    available = commands()
    if not argv or argv[0] in ("-h", "--help", "help"):
        sys.stdout.write(USAGE.format(commands=", ".join(available)))
        return 0 if argv else 2
    if argv[0] == "--version":
        sys.stdout.write(" ".join(f"{name}={version}" for name, version in FORMAT_VERSIONS.items()) + "\n")
        return 0
    name, rest = argv[0], argv[1:]
    if name not in available:
        sys.stderr.write(f"CommandError: unknown subcommand {name!r}\n" + USAGE.format(commands=", ".join(available)))
        return 2
    setup()
    command = load_command_class("strf", name)
    try:
        command.run_from_argv(["strf", name, *rest])
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
