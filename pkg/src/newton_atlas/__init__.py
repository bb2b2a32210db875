"""Combinatorial invariants of postcritically finite Newton maps."""

from .core import NewtonMap, newton_map_from_roots

__all__ = ["NewtonMap", "newton_map_from_roots"]
__version__ = "0.1.0"
