#!/usr/bin/env python
"""Django's command-line utility for administrative tasks."""
import os
import sys


# the numerical libraries read these once, at import time
THREAD_VARIABLES = ['OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS']


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'surface_flow_application.settings')
    threads = os.environ.get('SURFACE_FLOW_THREADS')
    if threads:
        for var in THREAD_VARIABLES:
            os.environ.setdefault(var, threads)
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
