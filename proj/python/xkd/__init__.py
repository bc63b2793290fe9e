"""Experiential knowledge distillation on toy sequence tasks."""

from ._xkd import *  # noqa: F401,F403
from ._xkd import __doc__  # noqa: F401
