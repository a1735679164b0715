from __future__ import annotations

from argparse import ArgumentParser
from pathlib import Path

from django.conf import settings

from pime.config import config_to_text
from pime.exceptions import PimeError
from pime.forms import load_config
from pime.harness import train
from pime.management.base import PimeCommand
from pime.models import TrainingRun


class Command(PimeCommand):
    help = "Train a policy on the model ensemble and write diagnostics and checkpoints"

    def add_arguments(self: "Command", parser: ArgumentParser) -> None:
        parser.add_argument("--config", help="Experiment file (key = value)")
        parser.add_argument("--plant", help="Plant defaults to use without a config file")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out", help="Run directory")
        parser.add_argument("--workers", type=int, help="Rollout threads")
        self.add_override_argument(parser)

    def run(self: "Command", **options: object) -> None:
        overrides = self.parse_overrides(options["overrides"])
        for key, option in (("plant", "plant"), ("seed", "seed"), ("output_dir", "out")):
            if options[option] is not None:
                overrides[key] = options[option]
        config = load_config(options["config"], overrides)
        default_dir = Path(settings.PIME_OUTPUT_DIR) / f"{config.plant}_seed{config.seed}"
        out = Path(config.output_dir or default_dir)

        record = TrainingRun.objects.create(
            plant=config.plant,
            seed=config.seed,
            config_text=config_to_text(config),
            output_dir=str(out),
        )
        record.start()
        self.stdout.write(
            f"Training {config.plant} seed {config.seed}: "
            f"{config.iterations} iterations of {config.steps_per_iteration} steps -> {out}"
        )
        try:
            result = train(config, out, options["workers"], on_iteration=record.record_iteration)
        except PimeError as exc:
            record.fail(str(exc))
            raise
        record.finish()
        last = result.diagnostics[-1]
        self.stdout.write(
            self.style.SUCCESS(
                f"Finished run #{record.id}: mean return {last['mean_return']:.6g} "
                f"after {last['env_steps']} steps. Weights: {result.checkpoint}"
            )
        )
