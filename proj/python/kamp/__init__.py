"""Incremental keypoint-learning benchmark over synthetic articulated figures.

Thin package wrapper around the compiled extension; everything public lives
in ``kamp._kamp`` and is re-exported here.
"""

from ._kamp import *  # noqa: F401,F403
from ._kamp import __doc__ as _core_doc

__all__ = [n for n in dir() if not n.startswith("_")]
