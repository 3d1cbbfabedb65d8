"""Copula recursive trees: piecewise linear copula estimation."""

from cortkit.cort import Cort
from cortkit.partition import Box, Partition
from cortkit.plc import PiecewiseLinearCopula

__all__ = ["Box", "Cort", "Partition", "PiecewiseLinearCopula"]
__version__ = "0.1.0"
