"""Invertible, unpaired low-light image enhancement with a numpy autodiff engine."""

from .errors import (
    ContractError,
    DivergenceError,
    FormatError,
    ImageIOError,
    InvEnNetError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DivergenceError",
    "FormatError",
    "ImageIOError",
    "InvEnNetError",
    "NumericError",
    "__version__",
]
