"""Domain types: coefficients, membranes and scaling regimes."""
from .coefficients import (CoefficientBounds, CoefficientField, FieldLayout, Preset, PresetError,
                           make_field, parse_preset, sigma_matrix, validate_field)
from .membranes import MembraneDensity, MembraneFamily, build_membranes, window_halfwidth
from .regime import Coupling, ExtReal, LimitKind, LimitSpec, PowerLaw, ScalingRegime

__all__ = [
    "CoefficientBounds", "CoefficientField", "FieldLayout", "Preset", "PresetError", "make_field",
    "parse_preset", "sigma_matrix", "validate_field", "MembraneDensity", "MembraneFamily",
    "build_membranes", "window_halfwidth", "Coupling", "ExtReal", "LimitKind", "LimitSpec",
    "PowerLaw", "ScalingRegime",
]
