from django.apps import AppConfig


class FlowAppConfig(AppConfig):
    name = 'flow_app'
    verbose_name = 'Optical flow on moving surfaces'
