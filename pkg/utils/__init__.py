"""Utility package for shared numeric defaults."""

from . import defaults

__all__ = ["defaults"]
