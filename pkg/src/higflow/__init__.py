"""Hierarchical graph forecasting with a memory buffer, plus smoothness and expressivity checks."""

from .hierarchy import HiGFlowModel, ModelConfig

__all__ = ["HiGFlowModel", "ModelConfig"]
__version__ = "0.1.0"
