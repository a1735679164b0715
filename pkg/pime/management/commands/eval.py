from __future__ import annotations

from argparse import ArgumentParser
from pathlib import Path

from django.conf import settings

from pime.exceptions import ConfigError
from pime.forms import load_config
from pime.harness import Agent, evaluate
from pime.management.base import PimeCommand
from pime.models import EvaluationRun, TrainingRun


class Command(PimeCommand):
    help = "Evaluate trained weights (or the prior controller) on sampled ensemble models"

    def add_arguments(self: "Command", parser: ArgumentParser) -> None:
        parser.add_argument("--weights", help="Policy weight file written by train")
        parser.add_argument(
            "--prior", action="store_true", help="Evaluate the prior controller alone"
        )
        parser.add_argument("--config", help="Experiment file (key = value)")
        parser.add_argument("--plant", help="Plant defaults to use without a config file")
        parser.add_argument("--models", type=int, help="Number of ensemble models")
        parser.add_argument("--seed", type=int, help="Seed for the evaluation models")
        parser.add_argument("--leak", type=float, help="Extra upper-tank outflow ratio")
        parser.add_argument("--label", help="Report label; defaults to the controller kind")
        parser.add_argument("--out", help="Directory for report and trajectories")
        parser.add_argument("--training-run", type=int, help="TrainingRun id to link")
        parser.add_argument("--workers", type=int, help="Evaluation threads")
        self.add_override_argument(parser)

    def run(self: "Command", **options: object) -> None:
        if bool(options["weights"]) == bool(options["prior"]):
            raise ConfigError("Pass exactly one of --weights or --prior")
        overrides = self.parse_overrides(options["overrides"])
        for key, option in (
            ("plant", "plant"),
            ("seed", "seed"),
            ("eval.models", "models"),
            ("eval.leak", "leak"),
        ):
            if options[option] is not None:
                overrides[key] = options[option]
        config = load_config(options["config"], overrides)
        if options["prior"]:
            agent = Agent.prior_only(config)
        else:
            agent = Agent.load(config, options["weights"])
        label = options["label"] or agent.label
        out = Path(options["out"] or Path(settings.PIME_OUTPUT_DIR) / f"eval_{config.plant}")

        report = evaluate(agent, config, label=label, output_dir=out, workers=options["workers"])
        report_path = report.write_csv(out / f"report_{label}.csv")
        summary = report.summary()

        training_run = None
        if options["training_run"] is not None:
            training_run = TrainingRun.objects.filter(pk=options["training_run"]).first()
            if training_run is None:
                self.stdout.write(
                    self.style.WARNING(f"TrainingRun #{options['training_run']} not found")
                )
        EvaluationRun.objects.create(
            label=label,
            plant=config.plant,
            n_models=report.models,
            weights_path=options["weights"] or "",
            report_path=str(report_path),
            mean_steady_state_error=summary["mean_steady_state_error"],
            mean_return=summary["mean_return"],
            mean_sensitivity=summary["mean_sensitivity"],
            training_run=training_run,
        )
        self.stdout.write(
            self.style.SUCCESS(
                f"{label}: mean return {summary['mean_return']:.6g} "
                f"(std {summary['std_return']:.3g}), steady-state error "
                f"{summary['mean_steady_state_error']:.4g} over {report.models} models. "
                f"Report: {report_path}"
            )
        )
