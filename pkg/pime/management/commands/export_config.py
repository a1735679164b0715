from __future__ import annotations

from argparse import ArgumentParser

from pime.config import config_to_text, default_config
from pime.envsim import PlantKind
from pime.management.base import PimeCommand


class Command(PimeCommand):
    help = "Print the default experiment file for a plant"

    def add_arguments(self: "Command", parser: ArgumentParser) -> None:
        parser.add_argument("--plant", choices=PlantKind.values, default=PlantKind.TANKS)

    def run(self: "Command", **options: object) -> None:
        self.stdout.write(config_to_text(default_config(options["plant"])), ending="")
