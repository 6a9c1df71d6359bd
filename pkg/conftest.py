import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'surface_flow_application.settings')
django.setup()
