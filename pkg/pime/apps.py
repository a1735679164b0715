from django.apps import AppConfig


class PimeConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "pime"
    verbose_name = "Prior-guided robust control"
