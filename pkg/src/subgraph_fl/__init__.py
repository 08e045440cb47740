"""Federated subgraph learning simulator with personalized aggregation and sparse masks."""

from subgraph_fl.errors import ConfigError, NumericError, ParameterError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericError", "ParameterError", "__version__"]
