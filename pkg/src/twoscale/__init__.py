"""Sensitivity conditioning and singular-perturbation analysis for two-timescale control loops."""

from .errors import *  # noqa: F401,F403
from .kernel import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
