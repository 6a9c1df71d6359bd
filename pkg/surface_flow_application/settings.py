"""
Django settings for surface_flow_application project.

The project has no web surface: Django provides the configuration layer,
logging setup, management commands and the test runner for the optical
flow library in flow_app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('SURFACE_FLOW_SECRET_KEY', 'surface-flow-local-key')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'flow_app',
]

# no models; the test suite only uses SimpleTestCase
DATABASES = {}

TIME_ZONE = 'UTC'

USE_TZ = True


###############################################################################
# Parameters for the GMRES solver
###############################################################################
SOLVER_RESTART = 30
SOLVER_MAX_ITERS = 2000
SOLVER_REL_TOL = 1e-3

# 'jacobi' (2x2 point-block diagonal) or 'none' for plain GMRES
SOLVER_PRECONDITIONER = 'jacobi'

# fixed-order reductions so repeated runs give bitwise-identical iterates
SOLVER_DETERMINISTIC = False

# an Arnoldi vector whose norm drops below this (relative to the rhs norm)
# ends the Krylov cycle
SOLVER_BREAKDOWN_TOL = 1e-14

###############################################################################
# Parameters for the surface geometry
###############################################################################
# determinant of the metric (in grid units) below which a chart is degenerate
DEGENERACY_THRESHOLD = 1e-10

# distance (radians) kept from the poles by the sphere chart
SPHERE_POLE_MARGIN = 0.15

# maximal displacement per time step (in grid cells) when removing the
# tangential motion of a surface
REPARAMETRIZATION_CFL = 0.5

###############################################################################
# Default model parameters (overridden by the run configuration)
###############################################################################
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.0
DEFAULT_GAMMA = 1.0
DEFAULT_BOUNDARY = 'dirichlet_zero'
DEFAULT_TRACE_CONVENTION = 'lemma'
DEFAULT_TIME_BOUNDARY = 'one_sided'
DEFAULT_FRAME_DERIVATIVES = 'central'

###############################################################################
# Output parameters
###############################################################################
# flow magnitudes are normalized by this percentile for the color coding
COLOR_WHEEL_PERCENTILE = 99.0

FLOW_FRAME_TEMPLATE = 'frame_%04d.flo'
ERROR_MAP_TEMPLATE = 'angular_error_%04d.ppm'

###############################################################################
# Runtime
###############################################################################
# the SURFACE_FLOW_THREADS environment variable is applied by manage.py,
# before the numerical libraries are imported
SURFACE_FLOW_LOG_LEVEL = os.environ.get('SURFACE_FLOW_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'flow_app': {
            'handlers': ['console'],
            'level': SURFACE_FLOW_LOG_LEVEL,
            'propagate': False,
        },
    },
}
