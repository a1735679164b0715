from __future__ import annotations

import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from pime.models import EvaluationRun, TrainingRun

# fmt: off
SMALL_RUN = [
    "--set", "horizon=10",
    "--set", "episodes_per_iteration=2",
    "--set", "total_steps=40",
    "--set", "net.main=4",
    "--set", "net.z=2",
    "--set", "net.trunk=4",
    "--set", "net.value=4",
    "--set", "ppo.epochs=1",
    "--set", "ppo.minibatch=8",
    "--set", "setpoint.levels=3, 8",
    "--set", "setpoint.segment_len=20",
    "--set", "eval.models=2",
]
# fmt: on


def run_command(name: str, *args: str) -> str:
    out = StringIO()
    call_command(name, *args, stdout=out)
    return out.getvalue()


class ExportConfigCommandTests(TestCase):
    def test_tank_defaults(self) -> None:
        text = run_command("export_config")
        self.assertIn("horizon = 200\n", text)
        self.assertIn("ppo.gamma = 0.995\n", text)
        self.assertIn("ppo.minibatch = 256\n", text)

    def test_ph_defaults(self) -> None:
        text = run_command("export_config", "--plant", "ph")
        self.assertIn("horizon = 50\n", text)
        self.assertIn("ppo.gamma = 0.98\n", text)
        self.assertIn("ppo.epochs = 40\n", text)


class ErrorExitTests(TestCase):
    def test_missing_config_exits_with_one(self) -> None:
        with self.assertRaises(CommandError) as ctx:
            run_command("train", "--config", "/nonexistent/experiment.cfg")
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("/nonexistent/experiment.cfg", str(ctx.exception))
        self.assertFalse(TrainingRun.objects.exists())

    def test_malformed_override(self) -> None:
        with self.assertRaises(CommandError) as ctx:
            run_command("eval", "--prior", "--set", "seed")
        self.assertEqual(ctx.exception.returncode, 1)

    def test_eval_needs_exactly_one_controller(self) -> None:
        with self.assertRaises(CommandError):
            run_command("eval")
        with self.assertRaises(CommandError):
            run_command("eval", "--prior", "--weights", "policy_final.txt")

    def test_unknown_key_is_reported(self) -> None:
        with self.assertRaises(CommandError) as ctx:
            run_command("eval", "--prior", "--set", "ppo.gama=0.9")
        self.assertIn("ppo.gama", str(ctx.exception))

    def test_zero_sensitivity_step_exits_with_one(self) -> None:
        with self.assertRaises(CommandError) as ctx:
            run_command("eval", "--prior", "--set", "eval.sensitivity_step=0")
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("eval.sensitivity_step", str(ctx.exception))
        self.assertFalse(EvaluationRun.objects.exists())


class EvalCommandTests(TestCase):
    def test_prior_evaluation_is_recorded(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            output = run_command("eval", "--prior", "--out", tmp, *SMALL_RUN)
            report = Path(tmp) / "report_prior.csv"
            self.assertTrue(report.exists())
            self.assertEqual(len(report.read_text().splitlines()), 1 + 2 * 2)
            self.assertTrue((Path(tmp) / "trajectories" / "prior_model_001.csv").exists())
        run = EvaluationRun.objects.get()
        self.assertEqual((run.label, run.plant, run.n_models), ("prior", "tanks", 2))
        self.assertGreater(run.mean_steady_state_error, 0.0)
        self.assertIn("prior: mean return", output)

    def test_compare_reports(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            run_command("eval", "--prior", "--out", tmp, *SMALL_RUN)
            run_command("eval", "--prior", "--label", "again", "--out", tmp, *SMALL_RUN)
            table = Path(tmp) / "comparison.csv"
            run_command(
                "compare",
                "--reports",
                str(Path(tmp) / "report_prior.csv"),
                str(Path(tmp) / "report_again.csv"),
                "--out",
                str(table),
            )
            lines = table.read_text().splitlines()
        self.assertTrue(lines[0].startswith("label,segment,y_ref,reports"))
        self.assertEqual(len(lines), 1 + 2 * 2)
        self.assertTrue(lines[-1].endswith(",0,0"))


class TitrationCommandTests(TestCase):
    def test_writes_curve(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "curve.csv"
            run_command("titration_curve", "--out", str(path), "--points", "11")
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], "hcl,ph")
        self.assertEqual(len(lines), 12)
        first_ph = float(lines[1].split(",")[1])
        last_ph = float(lines[-1].split(",")[1])
        self.assertGreater(first_ph, 7.0)
        self.assertLess(last_ph, first_ph)


class TrainCommandTests(TestCase):
    def test_small_run_is_recorded_and_evaluated(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            run_command("train", "--seed", "3", "--out", tmp, "--workers", "1", *SMALL_RUN)
            record = TrainingRun.objects.get()
            self.assertEqual(record.status, TrainingRun.Status.FINISHED)
            self.assertEqual((record.iterations_done, record.env_steps), (2, 40))
            self.assertIn("seed = 3\n", record.config_text)
            self.assertEqual(record.output_dir, tmp)

            weights = str(Path(tmp) / "policy_final.txt")
            run_command(
                "eval",
                "--weights",
                weights,
                "--seed",
                "3",
                "--out",
                tmp,
                "--training-run",
                str(record.id),
                *SMALL_RUN,
            )
        evaluation = EvaluationRun.objects.get()
        self.assertEqual(evaluation.label, "pime")
        self.assertEqual(evaluation.training_run, record)
        self.assertEqual(list(record.evaluations.all()), [evaluation])
