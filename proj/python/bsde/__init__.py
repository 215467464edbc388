"""Backward deep BSDE solver for European and Bermudan options."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, TrainingError, __doc__  # noqa: F401
