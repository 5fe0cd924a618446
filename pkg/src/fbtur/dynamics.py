"""Propagation of the state, the current-moment hierarchy and ``phi``.

The augmented system integrated over ``[0, tau]`` is

    rho'  = L rho
    rho1' = L rho1 + D1 rho
    rho2' = L rho2 + 2 D1 rho1 + D2 rho
    phi'  = L phi + sum_k ell_k(rho) (F_k[L_k rho L_k^+] - 1/2 {L_k^+ L_k, rho})

together with scalar accumulators that integrate the rates of
:mod:`fbtur.thermo` inside the same Runge-Kutta stages.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import RK45

from . import _backend
from .errors import (
    ConvergenceFailure,
    DegenerateStationarySpace,
    InvalidParameter,
    PositivityLoss,
    StepUnderflow,
)
from .linalg import DEFAULT_CLIP
from .model import require_valid
from .superop import build_feedback_liouvillian, pack

log = logging.getLogger(__name__)

RK4_FIXED = "rk4_fixed"
RK45_ADAPTIVE = "rk45_adaptive"
DEFAULT_REL_STEP = 1e-3
POSITIVITY_TOL = 1e-6
MIN_STEP_REL = 1e-12
COARSE_STEP_WARN = 0.5


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``h`` is the absolute RK4 step; ``None`` means ``1e-3 * tau``.
    """

    h: Optional[float] = None
    method: str = RK4_FIXED
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    renormalize_trace: bool = True
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        if self.method not in (RK4_FIXED, RK45_ADAPTIVE):
            raise InvalidParameter(f"unknown integrator method {self.method!r}")
        if self.h is not None and not self.h > 0:
            raise InvalidParameter(f"step h must be positive, got {self.h}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidParameter("tolerances must be positive")
        if not self.clip > 0:
            raise InvalidParameter("clip must be positive")

    def n_steps(self, tau):
        h = DEFAULT_REL_STEP * tau if self.h is None else self.h
        if h > tau * (1 + 1e-12):
            raise InvalidParameter(f"step h={h} exceeds tau={tau}")
        return max(1, int(np.ceil(tau / h - 1e-9)))


@dataclass
class PropagationState:
    """State and accumulators at time ``t``.

    ``samples`` (optional) holds the time series with columns
    :data:`TIMESERIES_COLUMNS`.
    """

    t: float
    rho: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    phi: np.ndarray
    acc_env_entropy: float = 0.0
    acc_activity: float = 0.0
    acc_mutual_info: float = 0.0
    acc_fisher: float = 0.0
    acc_sigma: float = 0.0
    acc_current: float = 0.0
    acc_current_phi: float = 0.0
    acc_sys_entropy: float = 0.0
    trace_drift: float = 0.0
    min_eigenvalue: float = 0.0
    n_steps: int = 0
    backend: str = ""
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def j_mean(self):
        return float(np.real(np.trace(self.rho1)))

    @property
    def j_second(self):
        return float(np.real(np.trace(self.rho2)))

    @property
    def j_var(self):
        return self.j_second - self.j_mean**2

    def accumulators(self):
        return {name: getattr(self, name) for name in _backend.ACC_FIELDS}


TIMESERIES_COLUMNS = _backend.SAMPLE_FIELDS


def _initial(spec, rho0):
    d = spec.dim
    rho = spec.initial_state if rho0 is None else np.asarray(rho0, dtype=complex)
    if rho.shape != (d, d):
        raise InvalidParameter(f"initial state has shape {rho.shape}, expected {(d, d)}")
    y = np.zeros((4, d, d), dtype=complex)
    y[0] = rho
    return y


def _finish(y, acc, t, **extra):
    kw = dict(zip(_backend.ACC_FIELDS, (float(a) for a in acc)))
    return PropagationState(t=t, rho=y[0].copy(), rho1=y[1].copy(), rho2=y[2].copy(), phi=y[3].copy(), **kw, **extra)


def propagate(spec, tau, cfg=None, rho0=None, sample_every=0, backend=None):
    """Integrate the augmented system from ``rho0`` over ``[0, tau]``.

    Parameters
    ----------
    spec : ModelSpec
    tau : float
        Final time, > 0.
    cfg : IntegratorConfig, optional
    rho0 : array_like, optional
        Initial state; defaults to ``spec.initial_state``.
    sample_every : int
        Record the time series every this many RK4 steps (0 disables).
        The adaptive method samples every accepted step when nonzero.
    backend : {"compiled", "python"}, optional
        Kernel override; the active backend is used by default.

    Returns
    -------
    PropagationState

    Raises
    ------
    PositivityLoss
        If ``rho`` develops an eigenvalue below ``-1e-6``.
    StepUnderflow
        If the adaptive step falls below ``1e-12 * tau``.
    """
    require_valid(spec)
    if not tau > 0:
        raise InvalidParameter(f"tau must be positive, got {tau}")
    cfg = cfg or IntegratorConfig()
    y0 = _initial(spec, rho0)
    packed = pack(spec)
    mod = _backend.get(backend)
    km = _backend.kernel_model(packed, backend)
    if cfg.method == RK45_ADAPTIVE:
        return _propagate_adaptive(mod, km, y0, tau, cfg, sample_every)
    n = cfg.n_steps(tau)
    stiffness = float(np.linalg.eigvalsh(packed.LdL.sum(axis=0))[-1]) * tau / n
    if stiffness > COARSE_STEP_WARN:
        log.warning(
            "step h*rate = %.3g; RK4 transients are under-resolved (results are exact only near stationarity)",
            stiffness,
        )
    y, acc, samples, drift, min_eig, status, fail = mod.rk4(
        km, y0, float(tau), int(n), bool(cfg.renormalize_trace), float(cfg.clip), int(sample_every)
    )
    if status == mod.STATUS_POSITIVITY:
        raise PositivityLoss(
            f"eigenvalue {min_eig:.3e} below -{POSITIVITY_TOL:.0e} at step {fail} of {n}; reduce the step"
        )
    if drift > 1e-10:
        log.info("trace renormalisation corrected a drift of %.3e", drift)
    return _finish(
        y,
        acc,
        float(tau),
        trace_drift=float(drift),
        min_eigenvalue=float(min_eig),
        n_steps=n,
        backend=mod.NAME,
        samples=samples if sample_every > 0 else None,
    )


def _propagate_adaptive(mod, km, y0, tau, cfg, sample_every):
    d = y0.shape[1]
    N = 4 * d * d
    clip = cfg.clip
    worst = [np.inf]

    def rhs(t, z):
        dy, R, _, _ = mod.deriv(km, z[:N].reshape(4, d, d), clip)
        out = np.empty_like(z)
        out[:N] = dy.reshape(-1)
        out[N:] = R[:8]
        return out

    z0 = np.concatenate([y0.reshape(-1), np.zeros(8, dtype=complex)])
    solver = RK45(rhs, 0.0, z0, tau, rtol=cfg.rel_tol, atol=cfg.abs_tol, first_step=min(tau, 1e-3 * tau))
    rows = []
    n_acc = 0

    def sample(t, z):
        _, R, _, _ = mod.deriv(km, z[:N].reshape(4, d, d), clip)
        rho = z[: d * d].reshape(d, d)
        rows.append([t, np.real(np.trace(rho)), R[8], R[0], R[2], R[4], R[1], R[5], R[7]])

    if sample_every:
        sample(0.0, z0)
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StepUnderflow(f"adaptive integrator failed at t={solver.t:.6g}: {msg}")
        n_acc += 1
        if solver.status == "running" and solver.step_size < MIN_STEP_REL * tau:
            raise StepUnderflow(f"adaptive step {solver.step_size:.3e} below {MIN_STEP_REL:.0e}*tau")
        # positivity is judged on accepted states only, not on trial stages
        e = np.linalg.eigvalsh(0.5 * (solver.y[: d * d].reshape(d, d) + solver.y[: d * d].reshape(d, d).conj().T))[0]
        worst[0] = min(worst[0], e)
        if worst[0] < -POSITIVITY_TOL:
            raise PositivityLoss(f"eigenvalue {worst[0]:.3e} below -{POSITIVITY_TOL:.0e} at t={solver.t:.6g}")
        if sample_every:
            sample(solver.t, solver.y)
    z = solver.y
    y = z[:N].reshape(4, d, d).copy()
    y[0] = 0.5 * (y[0] + y[0].conj().T)
    drift = abs(np.real(np.trace(y[0])) - 1.0)
    acc = np.real(z[N:])
    return _finish(
        y,
        acc,
        float(tau),
        trace_drift=float(drift),
        min_eigenvalue=float(worst[0]),
        n_steps=n_acc,
        backend=mod.NAME,
        samples=np.array(rows).reshape(-1, 9) if sample_every else None,
    )


def steady_state(spec, null_tol=1e-10):
    """Unique stationary state of the feedback generator.

    The null space of the vectorized generator is located by SVD; a
    dimension other than one raises :class:`DegenerateStationarySpace`.
    The state itself is the least-squares solution of ``G v = 0`` with the
    trace constraint appended.
    """
    require_valid(spec)
    d = spec.dim
    G = build_feedback_liouvillian(spec).matrix
    try:
        s = np.linalg.svd(G, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD of the generator failed: {exc}") from exc
    nullity = int(np.sum(s <= null_tol * max(s[0], 1.0)))
    if nullity != 1:
        raise DegenerateStationarySpace(nullity)
    A = np.vstack([G, np.eye(d).reshape(1, -1)])
    b = np.zeros(A.shape[0], dtype=complex)
    b[-1] = 1.0
    v = np.linalg.lstsq(A, b, rcond=None)[0]
    rho = v.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.real(np.trace(rho))


def write_timeseries_csv(samples, path):
    """Write a sampled time series with a header row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMESERIES_COLUMNS)
        for row in np.asarray(samples):
            w.writerow([format(float(x), ".17g") for x in row])
