from django.apps import AppConfig


class AssignConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.assign'
    verbose_name = 'Depth-guided assignment'
