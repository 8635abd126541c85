"""Numerical laboratory for fast-slow systems driven by chaotic maps."""

__version__ = "0.1.0"

from .maps import Branch, MapDescriptor, MapKind  # noqa: F401
from .observables import Observable, builtin  # noqa: F401
from .sampling import SamplerConfig  # noqa: F401
