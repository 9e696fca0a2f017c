"""Microwave-free wide-field magnetometry with the NV zero-field feature:
field simulation, synthetic image stacks, per-superpixel fitting and analysis."""
from .lineshape import TransverseResponse, ZeroFieldFeature
from .magnetostatics import CrossPattern, CurrentPath, FieldMap, GridSpec, Route, Vec3
from .synth import CameraModel, ImageStack, ScanProtocol, Scene
from .fitstack import FitResult, FitStatus, ParameterMaps, Spectrum
from .estimators import StackBinner, ZeroFieldFitter

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "CrossPattern", "CurrentPath", "FieldMap", "FitResult", "FitStatus",
    "GridSpec", "ImageStack", "ParameterMaps", "Route", "ScanProtocol", "Scene", "Spectrum",
    "StackBinner", "TransverseResponse", "Vec3", "ZeroFieldFeature", "ZeroFieldFitter",
]
