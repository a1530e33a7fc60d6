"""Delay-dependent sampled-data gain-scheduled control of LPV time-delay plants.

The reference application is air-fuel ratio control of a spark-ignition
engine with a three-way catalyst.
"""

from .baseline import PadeAugmentedPlant, TustinController, pade_augment, tustin_discretize
from .engine import EngineConfig, TwcState, build_afr_plant, twc_step
from .lpv import AffineMatrixFn, LPVDelayPlant, ScheduleSet, make_grid, validate_plant
from .realization import (ContinuousController, DigitalTaps, SampledDataController,
                          discretize_step, factorize, interp_coeffs, matrix_phi, realize)
from .sim import Scenario, SignalSpec, SimulationTrace, make_scenario, metrics, simulate
from .synthesis import (SynthesisCertificate, SynthesisOptions, check_certificate,
                        synthesize)

__version__ = "0.1.0"

__all__ = [
    "AffineMatrixFn", "ContinuousController", "DigitalTaps", "EngineConfig", "LPVDelayPlant",
    "PadeAugmentedPlant", "SampledDataController", "Scenario", "ScheduleSet", "SignalSpec",
    "SimulationTrace", "SynthesisCertificate", "SynthesisOptions", "TustinController",
    "TwcState", "build_afr_plant", "check_certificate", "discretize_step", "factorize",
    "interp_coeffs", "make_grid", "make_scenario", "matrix_phi", "metrics", "pade_augment",
    "realize", "simulate", "synthesize", "tustin_discretize", "twc_step", "validate_plant",
]
