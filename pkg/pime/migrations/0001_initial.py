# Generated by Django 5.2.7 on 2026-10-18 10:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):
    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="TrainingRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "plant",
                    models.CharField(
                        choices=[("tanks", "Cascaded tanks"), ("ph", "pH neutralization")],
                        max_length=10,
                    ),
                ),
                ("seed", models.PositiveIntegerField(default=0)),
                (
                    "config_text",
                    models.TextField(help_text="Experiment file as exported at start"),
                ),
                ("output_dir", models.CharField(max_length=500)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Pending"),
                            ("running", "Running"),
                            ("finished", "Finished"),
                            ("failed", "Failed"),
                        ],
                        default="pending",
                        max_length=10,
                    ),
                ),
                ("iterations_done", models.PositiveIntegerField(default=0)),
                ("env_steps", models.PositiveBigIntegerField(default=0)),
                ("final_mean_return", models.FloatField(blank=True, null=True)),
                ("error_message", models.TextField(blank=True, default="")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ("-created_at",),
            },
        ),
        migrations.CreateModel(
            name="EvaluationRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("label", models.CharField(max_length=50)),
                (
                    "plant",
                    models.CharField(
                        choices=[("tanks", "Cascaded tanks"), ("ph", "pH neutralization")],
                        max_length=10,
                    ),
                ),
                ("n_models", models.PositiveIntegerField()),
                ("weights_path", models.CharField(blank=True, default="", max_length=500)),
                ("report_path", models.CharField(max_length=500)),
                ("mean_steady_state_error", models.FloatField()),
                ("mean_return", models.FloatField()),
                ("mean_sensitivity", models.FloatField(default=0.0)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                (
                    "training_run",
                    models.ForeignKey(
                        blank=True,
                        null=True,
                        on_delete=django.db.models.deletion.SET_NULL,
                        related_name="evaluations",
                        to="pime.trainingrun",
                    ),
                ),
            ],
            options={
                "ordering": ("-created_at",),
            },
        ),
    ]
