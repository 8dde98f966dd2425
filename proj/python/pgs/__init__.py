"""Bi-level optimization of instance weights and label transitions for weakly supervised learning."""

from ._core import *  # noqa: F401,F403
from ._core import Error, run_protocol

__all__ = [name for name in dir() if not name.startswith("_")]
