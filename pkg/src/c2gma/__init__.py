"""Conditional cycle-consistent translation with mixed-class augmentation for small SAR datasets."""

__version__ = "0.1.0"

from .datasets import DomainDataset, LabeledImage, load_dataset, save_dataset  # noqa: E402
from .errors import (  # noqa: E402
    C2GMAError,
    CapacityError,
    ConfigurationError,
    EmptyDatasetError,
    GeometryError,
    InsufficientDataError,
    ParameterError,
    ParseError,
    ShapeError,
)

__all__ = [
    "__version__",
    "DomainDataset",
    "LabeledImage",
    "load_dataset",
    "save_dataset",
    "C2GMAError",
    "CapacityError",
    "ConfigurationError",
    "EmptyDatasetError",
    "GeometryError",
    "InsufficientDataError",
    "ParameterError",
    "ParseError",
    "ShapeError",
]
