from __future__ import annotations

from django.db import models
from django.utils import timezone

from .envsim import PlantKind


class TrainingRun(models.Model):
    """One invocation of the `train` command."""

    class Status(models.TextChoices):
        PENDING = "pending", "Pending"
        RUNNING = "running", "Running"
        FINISHED = "finished", "Finished"
        FAILED = "failed", "Failed"

    plant = models.CharField(max_length=10, choices=PlantKind.choices)
    seed = models.PositiveIntegerField(default=0)
    config_text = models.TextField(help_text="Experiment file as exported at start")
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=10, choices=Status.choices, default=Status.PENDING)
    iterations_done = models.PositiveIntegerField(default=0)
    env_steps = models.PositiveBigIntegerField(default=0)
    final_mean_return = models.FloatField(blank=True, null=True)
    error_message = models.TextField(blank=True, default="")
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)

    class Meta:
        ordering = ("-created_at",)

    def __str__(self: "TrainingRun") -> str:
        return f"{self.get_plant_display()} run #{self.id} (seed {self.seed})"

    def start(self: "TrainingRun") -> None:
        self.status = self.Status.RUNNING
        self.save(update_fields=["status"])

    def record_iteration(self: "TrainingRun", row: dict[str, float]) -> None:
        self.iterations_done = int(row["iteration"]) + 1
        self.env_steps = int(row["env_steps"])
        self.final_mean_return = float(row["mean_return"])
        self.save(update_fields=["iterations_done", "env_steps", "final_mean_return"])

    def finish(self: "TrainingRun") -> None:
        self.status = self.Status.FINISHED
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "finished_at"])

    def fail(self: "TrainingRun", message: str) -> None:
        self.status = self.Status.FAILED
        self.error_message = message
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "error_message", "finished_at"])


class EvaluationRun(models.Model):
    """One invocation of the `eval` command."""

    label = models.CharField(max_length=50)
    plant = models.CharField(max_length=10, choices=PlantKind.choices)
    n_models = models.PositiveIntegerField()
    weights_path = models.CharField(max_length=500, blank=True, default="")
    report_path = models.CharField(max_length=500)
    mean_steady_state_error = models.FloatField()
    mean_return = models.FloatField()
    mean_sensitivity = models.FloatField(default=0.0)
    training_run = models.ForeignKey(
        TrainingRun,
        on_delete=models.SET_NULL,
        blank=True,
        null=True,
        related_name="evaluations",
    )
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ("-created_at",)

    def __str__(self: "EvaluationRun") -> str:
        return f"{self.label} on {self.n_models} {self.get_plant_display()} models"
