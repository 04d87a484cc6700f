"""Learning Lindblad models of a gate layer from integer-depth time series."""

from .assemble import AssembleOptions, EquationSystem, build_system
from .curvefit import DampedSinusoidTerm, FitOptions, FitReport, fit_all, fit_series, gpof
from .finetune import PatchSpec, fine_tune, merge_patches
from .mitigation import calibrate_confusion, trex_calibrate
from .model import (
    CapacityError,
    DeviceSpec,
    LindbladModel,
    build_liouvillian,
    extract_coherence_times,
    full_template,
    load_model,
    save_model,
    synthetic_device,
)
from .pauli import (
    MeasurementBasis,
    PauliString,
    ProductStateSpec,
    StructuralError,
    TopologyGraph,
    local_observables,
    schedule_bases,
    schedule_state_sets,
)
from .sim import ExactEvolver, SpamSpec, TrotterEvolver, dataset_from_schedule, exact_curves
from .solve import SolveOptions, model_error, solve

__version__ = "0.1.0"

__all__ = [
    "AssembleOptions",
    "EquationSystem",
    "build_system",
    "DampedSinusoidTerm",
    "FitOptions",
    "FitReport",
    "fit_all",
    "fit_series",
    "gpof",
    "PatchSpec",
    "fine_tune",
    "merge_patches",
    "calibrate_confusion",
    "trex_calibrate",
    "CapacityError",
    "DeviceSpec",
    "LindbladModel",
    "build_liouvillian",
    "extract_coherence_times",
    "full_template",
    "load_model",
    "save_model",
    "synthetic_device",
    "MeasurementBasis",
    "PauliString",
    "ProductStateSpec",
    "StructuralError",
    "TopologyGraph",
    "local_observables",
    "schedule_bases",
    "schedule_state_sets",
    "ExactEvolver",
    "SpamSpec",
    "TrotterEvolver",
    "dataset_from_schedule",
    "exact_curves",
    "SolveOptions",
    "model_error",
    "solve",
]
