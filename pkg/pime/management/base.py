from __future__ import annotations

import logging
from argparse import ArgumentParser

from django.core.management.base import BaseCommand, CommandError

from pime.exceptions import ConfigError, NumericError, PimeError, SimulationFault

logger = logging.getLogger(__name__)

CONFIG_ERROR_EXIT = 1
NUMERIC_FAULT_EXIT = 2


class PimeCommand(BaseCommand):
    """
    Base for the experiment commands. Subclasses implement `run`; library
    errors become CommandError with exit status 1 (configuration and I/O)
    or 2 (numeric faults).
    """

    def handle(self: "PimeCommand", *args: str, **options: object) -> None:
        try:
            self.run(**options)
        except ConfigError as exc:
            raise CommandError(
                f"Configuration error: {exc}", returncode=CONFIG_ERROR_EXIT
            ) from exc
        except (NumericError, SimulationFault) as exc:
            logger.error("Numeric fault", exc_info=True)
            raise CommandError(
                f"Numeric fault: {exc}", returncode=NUMERIC_FAULT_EXIT
            ) from exc
        except PimeError as exc:
            raise CommandError(str(exc), returncode=CONFIG_ERROR_EXIT) from exc

    def run(self: "PimeCommand", **options: object) -> None:
        raise NotImplementedError

    def add_override_argument(self: "PimeCommand", parser: ArgumentParser) -> None:
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override one experiment key; may be repeated",
        )

    def parse_overrides(self: "PimeCommand", items: list[str]) -> dict[str, str]:
        overrides = {}
        for item in items:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"Expected KEY=VALUE, got {item!r}", keys=[item])
            overrides[key.strip()] = value.strip()
        return overrides
