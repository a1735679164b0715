from __future__ import annotations

from argparse import ArgumentParser

import numpy as np

from pime.envsim import NOMINAL_PARAMETERS, PhParams, PlantKind, titration_curve
from pime.exports import TITRATION_HEADER, write_rows
from pime.management.base import PimeCommand


class Command(PimeCommand):
    help = "Write the pH of the neutralization plant over a grid of acid concentrations"

    def add_arguments(self: "Command", parser: ArgumentParser) -> None:
        defaults = PhParams(**NOMINAL_PARAMETERS[PlantKind.PH])
        parser.add_argument("--out", required=True, help="CSV file (hcl,ph)")
        parser.add_argument("--points", type=int, default=201)
        parser.add_argument("--hcl-max", type=float, default=defaults.hcl_max)
        parser.add_argument("--nh3", type=float, default=defaults.nh3)
        parser.add_argument("--naoh", type=float, default=defaults.naoh)

    def run(self: "Command", **options: object) -> None:
        params = PhParams(
            **NOMINAL_PARAMETERS[PlantKind.PH], nh3=options["nh3"], naoh=options["naoh"]
        )
        grid = np.linspace(0.0, options["hcl_max"], options["points"])
        curve = titration_curve(params, grid)
        path = write_rows(
            options["out"], TITRATION_HEADER, [{"hcl": hcl, "ph": ph} for hcl, ph in curve]
        )
        self.stdout.write(
            self.style.SUCCESS(
                f"pH {curve[0][1]:.3f} -> {curve[-1][1]:.3f} over {len(curve)} points: {path}"
            )
        )
