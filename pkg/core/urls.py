"""
URL configuration for core project.

Only the admin is exposed; it is used to browse training and evaluation runs.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
