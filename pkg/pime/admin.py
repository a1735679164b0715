from django.contrib import admin

from .models import EvaluationRun, TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = (
        "id",
        "plant",
        "seed",
        "status",
        "iterations_done",
        "env_steps",
        "final_mean_return",
        "created_at",
    )
    list_filter = ("plant", "status")
    search_fields = ("output_dir", "error_message")
    readonly_fields = ("created_at", "finished_at")
    date_hierarchy = "created_at"


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    list_display = (
        "label",
        "plant",
        "n_models",
        "mean_return",
        "mean_steady_state_error",
        "mean_sensitivity",
        "created_at",
    )
    list_filter = ("plant", "label")
    search_fields = ("label", "weights_path", "report_path")
    raw_id_fields = ("training_run",)
