"""Python library for distributionally robust Bayesian control.

:copyright: (c) 2026-present The drbc developers
:license: MIT, see LICENSE.md for more details.
"""

__title__ = "drbc"
__author__ = "The drbc developers"
__license__ = "MIT"
__copyright__ = "Copyright (c) 2026-present"

from drbc.const import *
from drbc.exceptions import *
from drbc.models import *
from drbc.sde import *
from drbc.priors import *
from drbc.dual import *
from drbc.lq import *
from drbc.merton import *
from drbc.config import *
from drbc.experiments import *
