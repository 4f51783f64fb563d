"""Kernel selection: compiled extension when built, numpy fallback otherwise.

Set ``PPMET_PURE=1`` to force the fallback.
"""
import os

from . import _editpy

BACKEND = "python"
edit_ops = _editpy.edit_ops

if os.environ.get("PPMET_PURE") != "1":
    try:
        from ._editcore import edit_ops  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "edit_ops"]
