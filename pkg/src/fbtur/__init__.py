"""Feedback-controlled open quantum systems: currents, thermodynamics and uncertainty relations."""
from . import _backend
from .dynamics import IntegratorConfig, PropagationState, propagate, steady_state
from .errors import *  # noqa: F401,F403
from .model import FeedbackChannel, JumpChannel, ModelSpec, load_model, save_model, thermal_qubit, validate
from .models import ClockParams, build_clock, random_model
from .thermo import ThermoReport, assemble_report, phi_fn, rate_bundle

__version__ = "0.1.0"

BACKEND = _backend.NAME

__all__ = [
    "BACKEND",
    "ClockParams",
    "FeedbackChannel",
    "IntegratorConfig",
    "JumpChannel",
    "ModelSpec",
    "PropagationState",
    "ThermoReport",
    "assemble_report",
    "build_clock",
    "load_model",
    "phi_fn",
    "propagate",
    "random_model",
    "rate_bundle",
    "save_model",
    "steady_state",
    "thermal_qubit",
    "validate",
]
