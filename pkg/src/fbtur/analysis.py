"""One-call evaluation of a model: propagate, report, and steady-state rates."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import IntegratorConfig, PropagationState, propagate, steady_state
from .thermo import RateBundle, ThermoReport, assemble_report, rate_bundle, von_neumann_entropy

STEADY = "steady"
MODEL = "model"

RATE_COLUMNS = (
    "sigma_rate_total",
    "s_tot_rate",
    "s_sys_rate",
    "s_env_rate",
    "mi_rate",
    "minus_mi_rate",
    "sigma_meas_rate",
    "activity_rate",
    "fisher_rate",
    "j_rate",
)


@dataclass(frozen=True)
class PointResult:
    """Report over ``[0, tau]`` plus rates evaluated at the initial state."""

    report: ThermoReport
    rates: RateBundle
    final: PropagationState
    initial_state: np.ndarray

    def rate_row(self):
        r = self.rates
        return {
            "sigma_rate_total": r.big_sigma_rate,
            "s_tot_rate": r.s_tot_rate,
            "s_sys_rate": r.s_sys_rate,
            "s_env_rate": r.s_env_rate,
            "mi_rate": r.mi_rate,
            "minus_mi_rate": -r.mi_rate,
            "sigma_meas_rate": r.sigma_rate,
            "activity_rate": r.activity_rate,
            "fisher_rate": r.fisher_rate,
            "j_rate": r.j_rate,
        }

    def row(self):
        out = self.report.to_dict()
        out.update(self.rate_row())
        return out


def resolve_initial(spec, initial):
    if initial is None or (isinstance(initial, str) and initial == MODEL):
        return np.asarray(spec.initial_state)
    if isinstance(initial, str) and initial == STEADY:
        return steady_state(spec)
    if isinstance(initial, str):
        raise ValueError(f"unknown initial state selector {initial!r}")
    return np.asarray(initial, dtype=complex)


def analyze(spec, tau=1.0, cfg: Optional[IntegratorConfig] = None, initial=STEADY, sample_every=0, backend=None):
    """Propagate from ``initial`` and assemble the thermodynamic report.

    ``initial`` is ``"steady"`` (default), ``"model"`` for
    ``spec.initial_state``, or an explicit density matrix.
    """
    rho0 = resolve_initial(spec, initial)
    final = propagate(spec, tau, cfg, rho0=rho0, sample_every=sample_every, backend=backend)
    report = assemble_report(final, von_neumann_entropy(rho0), von_neumann_entropy(final.rho))
    return PointResult(report, rate_bundle(spec, rho0), final, rho0)

