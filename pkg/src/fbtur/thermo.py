"""Pointwise thermodynamic functionals and TUR bound assembly.

The functions in this module evaluate rates on a single state and are written
term by term for readability. The integrator in :mod:`fbtur.dynamics`
evaluates the same quantities through the kernels in ``_kernels`` /
``_fallback``; the tests compare both routes.
"""
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidParameter, NegativeEigenvalue, ZeroMeanCurrent
from .linalg import DEFAULT_CLIP, NEGATIVE_EIG_TOL, herm_eig, safe_log_psd
from .superop import apply_feedback_liouvillian, feedback_jump_terms

TINY_RATE = 1e-14
TINY_DENOM = 1e-15
ZERO_CURRENT = 1e-12


# -- entropies ---------------------------------------------------------------

def _psd_eigvals(rho):
    w = herm_eig(rho).eigenvalues
    if w[0] < -NEGATIVE_EIG_TOL:
        raise NegativeEigenvalue(f"eigenvalue {w[0]:.3e} below -{NEGATIVE_EIG_TOL:.0e}")
    return np.maximum(w, 0.0)


def von_neumann_entropy(rho, clip=DEFAULT_CLIP):
    """``S(rho) = -tr(rho ln rho)``, with ``0 ln 0 = 0``."""
    p = _psd_eigvals(rho)
    return float(-np.sum(p * np.log(np.maximum(p, clip))))


def relative_entropy(rho, sigma, clip=DEFAULT_CLIP):
    """``D(rho || sigma) = tr[rho (ln rho - ln sigma)]``.

    Eigenvalues of ``sigma`` below ``clip`` are raised to ``clip``, which
    regularises the support condition.
    """
    rho = np.asarray(rho, dtype=complex)
    diff = safe_log_psd(rho, clip) - safe_log_psd(sigma, clip)
    return float(np.real(np.trace(rho @ diff)))


def shannon_entropy(p):
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


# -- jump statistics ---------------------------------------------------------

def jump_rates(spec, rho):
    """``r_k = tr(L_k rho L_k^+)`` in channel order."""
    rho = np.asarray(rho, dtype=complex)
    return np.array([np.real(np.trace(ch.operator @ rho @ ch.operator.conj().T)) for ch in spec.channels])


def ell(spec, rho):
    """Normalised pair asymmetry ``(r_k - r_k*) / (r_k + r_k*)`` for each channel.

    Returns a dict keyed by channel identifier. Pairs whose total rate is
    below ``1e-15`` get 0.
    """
    r = jump_rates(spec, rho)
    out = {}
    for pos, ch in enumerate(spec.channels):
        rk, rs = r[pos], r[spec.position(ch.pair)]
        den = rk + rs
        out[ch.k] = float((rk - rs) / den) if den >= TINY_DENOM else 0.0
    return out


def env_entropy_rate(spec, rho):
    r = jump_rates(spec, rho)
    return float(sum(ch.delta_s * r[i] for i, ch in enumerate(spec.channels)))


def activity_rate(spec, rho):
    return float(np.sum(jump_rates(spec, rho)))


def current_rate(spec, x):
    """``sum_k c_k tr(L_k x L_k^+)``; works for states and for ``phi``."""
    x = np.asarray(x, dtype=complex)
    return float(sum(ch.weight * np.real(np.trace(ch.operator @ x @ ch.operator.conj().T)) for ch in spec.channels))


def fisher_rate(spec, rho):
    """Integrand ``sum_k ell_k^2 r_k`` of the Fisher information ``I_0``."""
    r = jump_rates(spec, rho)
    ells = ell(spec, rho)
    return float(sum(ells[ch.k] ** 2 * r[i] for i, ch in enumerate(spec.channels)))


def mi_rate(spec, rho, clip=DEFAULT_CLIP):
    """Rate of mutual information exploited by feedback.

    ``sum_k r_k [D(F_k[rho'_k] || rho) - D(rho'_k || rho)]`` with the
    post-jump state ``rho'_k = L_k rho L_k^+ / r_k``. Channels with
    ``r_k < 1e-14`` contribute 0.
    """
    rho = np.asarray(rho, dtype=complex)
    total = 0.0
    for ch in spec.channels:
        fb = spec.feedback[ch.k]
        if fb.kind == "identity":
            continue
        x = ch.operator @ rho @ ch.operator.conj().T
        r = float(np.real(np.trace(x)))
        if r < TINY_RATE:
            continue
        post = x / r
        total += r * (relative_entropy(fb.apply(post), rho, clip) - relative_entropy(post, rho, clip))
    return float(total)


def sys_entropy_rate(spec, rho, clip=DEFAULT_CLIP):
    """``dS/dt = -tr(L^(fb)[rho] ln rho)`` for full-rank ``rho``."""
    drho = apply_feedback_liouvillian(spec, rho)
    return float(-np.real(np.trace(drho @ safe_log_psd(rho, clip))))


class SigmaTable(NamedTuple):
    """Spectral decomposition of the measurement entropy production.

    ``terms[k, m, n]`` holds ``sigma^{mn}_k`` and ``activity_terms[k, m, n]``
    the matching ``a^{mn}_k`` (channel positions on the first axis).
    """

    sigma: float
    activity: float
    terms: np.ndarray
    activity_terms: np.ndarray


def transition_weights(spec, rho):
    """``w_k^{mn} = |<m|L_k|n>|^2`` in the eigenbasis of ``rho``, plus populations."""
    w, v = herm_eig(rho)
    p = np.maximum(w, 0.0)
    vd = v.conj().T
    W = np.array([np.abs(vd @ ch.operator @ v) ** 2 for ch in spec.channels])
    return W, p


def sigma_rate(spec, rho, clip=DEFAULT_CLIP):
    """Entropy production rate of the measurement step and its term table.

    ``sigma = 1/2 sum_{k,m,n} (x - y) ln(x / y)`` with ``x = w_k^{mn} p_n`` and
    ``y = w_{k*}^{nm} p_m``. Terms where both products are below ``1e-15``
    are dropped; populations are clipped at ``clip`` inside the logarithm.

    Returns
    -------
    SigmaTable
    """
    W, p = transition_weights(spec, rho)
    pc = np.maximum(p, clip)
    K, d, _ = W.shape
    terms = np.zeros((K, d, d))
    act = np.zeros((K, d, d))
    for pos, ch in enumerate(spec.channels):
        Ws = W[spec.position(ch.pair)]
        for m in range(d):
            for n in range(d):
                x = W[pos, m, n] * p[n]
                y = Ws[n, m] * p[m]
                act[pos, m, n] = x + y
                if x < TINY_DENOM and y < TINY_DENOM:
                    continue
                xl = max(W[pos, m, n] * pc[n], 1e-300)
                yl = max(Ws[n, m] * pc[m], 1e-300)
                terms[pos, m, n] = (x - y) * math.log(xl / yl)
    return SigmaTable(0.5 * terms.sum(), 0.5 * act.sum(), terms, act)


# -- Phi special function ----------------------------------------------------

def phi_fn(x):
    """Inverse of ``z -> z tanh z`` on ``[0, inf)``.

    Safeguarded Newton iteration inside the bracket
    ``[max(sqrt(x), x), x + 1]``.
    """
    x = float(x)
    if x < 0 or math.isnan(x):
        raise InvalidParameter(f"phi_fn needs x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    lo = max(math.sqrt(x), x)
    hi = x + 1.0
    if x > 30.0:
        # tanh(z) == 1 to double precision here
        return x
    z = min(max(lo + 1e-3 * lo, lo), hi)
    for _ in range(200):
        t = math.tanh(z)
        f = z * t - x
        if f > 0:
            hi = min(hi, z)
        else:
            lo = max(lo, z)
        fp = t + z * (1.0 - t * t)
        step = f / fp if fp > 0 else 0.0
        z_new = z - step
        if not (lo <= z_new <= hi) or step == 0.0:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 4e-16 * z_new:
            z = z_new
            break
        z = z_new
    return z


def fisher_upper_bound(big_sigma, activity):
    """``Sigma^2 / (4A) * Phi(Sigma/2A)^-2``, evaluated as ``A tanh^2(Phi(Sigma/2A))``."""
    if activity <= 0:
        return 0.0
    x = max(big_sigma, 0.0) / (2.0 * activity)
    return activity * math.tanh(phi_fn(x)) ** 2


def tur_main_rhs(delta_j, big_sigma):
    """``2 (1 + delta_J)^2 / Sigma``."""
    if big_sigma <= 0:
        return math.inf
    return 2.0 * (1.0 + delta_j) ** 2 / big_sigma


def tur_tight_rhs(delta_j, big_sigma, activity):
    """``(1 + delta_J)^2 4A / Sigma^2 Phi(Sigma/2A)^2``.

    Evaluated in the algebraically equal form ``(1+delta_J)^2 / (A tanh^2 Phi)``
    which stays finite as ``Sigma -> 0``.
    """
    if big_sigma <= 0 or activity <= 0:
        return math.inf
    t = math.tanh(phi_fn(big_sigma / (2.0 * activity)))
    return (1.0 + delta_j) ** 2 / (activity * t * t)


# -- bundles -----------------------------------------------------------------

@dataclass(frozen=True)
class RateBundle:
    """Instantaneous rates on one state."""

    s_env_rate: float
    activity_rate: float
    mi_rate: float
    sigma_rate: float
    fisher_rate: float
    j_rate: float
    j_phi_rate: float
    s_sys_rate: float
    ell: dict

    @property
    def s_tot_rate(self):
        return self.s_sys_rate + self.s_env_rate

    @property
    def big_sigma_rate(self):
        """``dS^sys/dt + dS^env/dt - dI/dt``."""
        return self.s_tot_rate - self.mi_rate


def rate_bundle(spec, rho, phi=None, clip=DEFAULT_CLIP):
    rho = np.asarray(rho, dtype=complex)
    return RateBundle(
        s_env_rate=env_entropy_rate(spec, rho),
        activity_rate=activity_rate(spec, rho),
        mi_rate=mi_rate(spec, rho, clip),
        sigma_rate=sigma_rate(spec, rho, clip).sigma,
        fisher_rate=fisher_rate(spec, rho),
        j_rate=current_rate(spec, rho),
        j_phi_rate=0.0 if phi is None else current_rate(spec, phi),
        s_sys_rate=sys_entropy_rate(spec, rho, clip),
        ell=ell(spec, rho),
    )


CHECK_TOL = 1e-8


@dataclass(frozen=True)
class ThermoReport:
    """Integrated quantities over ``[0, tau]`` and the bounds built from them.

    Fields that need a nonzero mean current are ``None`` when
    ``zero_mean_current`` is set. Margins are ``lhs - rhs`` of each
    inequality; a check passes when its margin is ``>= -1e-8``.
    """

    tau: float
    j_mean: float
    j_second: float
    j_var: float
    j_mean_quadrature: float
    current_phi: float
    delta_j: Optional[float]
    s_sys: float
    s_sys_integrated: float
    s_env: float
    s_tot: float
    mutual_info: float
    big_sigma: float
    sigma_meas: float
    activity: float
    fisher: float
    fisher_bound: float
    var_over_mean_sq: Optional[float]
    tur_rhs_main: Optional[float]
    tur_rhs_tight: Optional[float]
    cramer_rao_rhs: Optional[float]
    margin_second_law: float
    margin_tur_main: Optional[float]
    margin_tur_tight: Optional[float]
    margin_tur_order: Optional[float]
    margin_cramer_rao: Optional[float]
    margin_fisher: float
    zero_mean_current: bool
    trace_drift: float

    def checks(self, tol=CHECK_TOL):
        names = ("second_law", "tur_main", "tur_tight", "tur_order", "cramer_rao", "fisher")
        out = {}
        for name in names:
            m = getattr(self, f"margin_{name}")
            if m is not None:
                out[name] = bool(m >= -tol)
        return out

    @property
    def passed(self):
        return all(self.checks().values())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def assemble_report(final, s0, s_tau, strict=False):
    """Build a :class:`ThermoReport` from a finished propagation.

    Parameters
    ----------
    final : PropagationState
        State at ``t = tau`` with its accumulators.
    s0, s_tau : float
        Von Neumann entropies of the initial and final states.
    strict : bool
        Raise :class:`ZeroMeanCurrent` instead of marking current-normalised
        fields as not applicable.
    """
    j = float(np.real(np.trace(final.rho1)))
    j2 = float(np.real(np.trace(final.rho2)))
    var = j2 - j * j
    s_sys = s_tau - s0
    s_env = final.acc_env_entropy
    mi = final.acc_mutual_info
    big_sigma = s_sys + s_env - mi
    A = final.acc_activity
    I0 = final.acc_fisher
    fbound = fisher_upper_bound(big_sigma, A)
    zero = abs(j) < ZERO_CURRENT
    if zero and strict:
        raise ZeroMeanCurrent(f"mean current {j:.3e} is zero within {ZERO_CURRENT:.0e}")
    if zero:
        delta = vom = main = tight = cr = None
        m_main = m_tight = m_order = m_cr = None
    else:
        delta = final.acc_current_phi / j
        vom = var / (j * j)
        main = tur_main_rhs(delta, big_sigma)
        tight = tur_tight_rhs(delta, big_sigma, A)
        cr = j * j * (1.0 + delta) ** 2 / I0 if I0 > 0 else math.inf
        m_main = vom - main
        m_tight = vom - tight
        m_order = tight - main
        m_cr = var - cr
    return ThermoReport(
        tau=float(final.t),
        j_mean=j,
        j_second=j2,
        j_var=var,
        j_mean_quadrature=float(final.acc_current),
        current_phi=float(final.acc_current_phi),
        delta_j=delta,
        s_sys=float(s_sys),
        s_sys_integrated=float(final.acc_sys_entropy),
        s_env=float(s_env),
        s_tot=float(s_sys + s_env),
        mutual_info=float(mi),
        big_sigma=float(big_sigma),
        sigma_meas=float(final.acc_sigma),
        activity=float(A),
        fisher=float(I0),
        fisher_bound=float(fbound),
        var_over_mean_sq=vom,
        tur_rhs_main=main,
        tur_rhs_tight=tight,
        cramer_rao_rhs=cr,
        margin_second_law=float(big_sigma),
        margin_tur_main=m_main,
        margin_tur_tight=m_tight,
        margin_tur_order=m_order,
        margin_cramer_rao=m_cr,
        margin_fisher=float(fbound - I0),
        zero_mean_current=bool(zero),
        trace_drift=float(final.trace_drift),
    )


# -- discrete measurement/feedback step --------------------------------------

class DiscreteStep(NamedTuple):
    """Entropies of one measurement + feedback step of length ``dt``."""

    probabilities: np.ndarray
    s_before: float
    s_measured: float
    s_after: float
    info_measured: float
    info_after: float
    env_entropy: float


def discrete_step(spec, rho, dt):
    """Explicit first-order construction of one monitored step.

    Outcome 0 is the no-jump evolution ``M_0 = 1 - i H_eff dt``; outcome ``k``
    applies ``M_k = sqrt(dt) L_k`` followed by the feedback map ``F_k``.
    """
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    rho = np.asarray(rho, dtype=complex)
    d = spec.dim
    heff = spec.hamiltonian - 0.5j * sum(ch.operator.conj().T @ ch.operator for ch in spec.channels)
    M0 = np.eye(d) - 1j * heff * dt
    outcomes = [M0 @ rho @ M0.conj().T]
    fed = [outcomes[0]]
    for ch in spec.channels:
        x = dt * ch.operator @ rho @ ch.operator.conj().T
        outcomes.append(x)
        fed.append(spec.feedback[ch.k].apply(x))
    p = np.array([np.real(np.trace(x)) for x in outcomes])
    norm = p.sum()
    p = p / norm
    measured = sum(outcomes) / norm
    after = sum(fed) / norm
    s_meas_k = []
    s_fed_k = []
    for pk, x, y in zip(p, outcomes, fed):
        if pk * norm < TINY_RATE * dt:
            s_meas_k.append(0.0)
            s_fed_k.append(0.0)
            continue
        s_meas_k.append(von_neumann_entropy(x / np.real(np.trace(x))))
        s_fed_k.append(von_neumann_entropy(y / np.real(np.trace(y))))
    s_measured = von_neumann_entropy(measured)
    s_after = von_neumann_entropy(after)
    env = float(sum(pk * ch.delta_s for pk, ch in zip(p[1:], spec.channels)))
    return DiscreteStep(
        probabilities=p,
        s_before=von_neumann_entropy(rho),
        s_measured=s_measured,
        s_after=s_after,
        info_measured=s_measured - float(np.dot(p, s_meas_k)),
        info_after=s_after - float(np.dot(p, s_fed_k)),
        env_entropy=env,
    )


def discrete_step_information(spec, rho, dt):
    """Information ``I_{t+dt} - I^-_{t+dt}`` exploited in one step of length ``dt``."""
    step = discrete_step(spec, rho, dt)
    return step.info_after - step.info_measured


def second_law_comparison(spec, rho, dt=1e-6):
    """Entropy production of the measurement step in two forms.

    Returns
    -------
    ours : float
        ``S(rho^-) - S(rho) + dS_env``.
    prior : float
        ``ours + H(p) - I^-``, the weaker bound that treats the measurement
        record as a classical register. ``ours <= prior`` always.
    """
    step = discrete_step(spec, rho, dt)
    ours = step.s_measured - step.s_before + step.env_entropy
    prior = ours + shannon_entropy(step.probabilities) - step.info_measured
    return ours, prior
