"""Panoramic camera-trajectory toolkit.

Equirectangular geometry, trajectory flow/scale handling, coverage-driven
trajectory synthesis, refine-stage segment scheduling, loop-closure and
fidelity metrics, a procedural ray-traced scene oracle and a pose-curation
pipeline.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AlignmentError,
    DegenerateStep,
    DomainError,
    NumericError,
    PanoloomError,
    ParseError,
    RoutingError,
    UsageError,
    ValidationError,
)

__all__ = [
    "AlignmentError",
    "DegenerateStep",
    "DomainError",
    "NumericError",
    "PanoloomError",
    "ParseError",
    "RoutingError",
    "UsageError",
    "ValidationError",
]
