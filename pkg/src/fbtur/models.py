"""Model builders: the three-level feedback clock and random test models."""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import unitary_group

from .errors import InvalidParameter
from .model import GENERAL, IDENTITY, UNITARY, FeedbackChannel, JumpChannel, ModelSpec, gibbs_state


@dataclass(frozen=True)
class ClockParams:
    """Parameters of the three-level clock.

    Base rates are for the downhill transitions ``1->0``, ``2->1`` and
    ``2->0``; the reverse rates follow from detailed balance.
    """

    E0: float = 0.0
    E1: float = 0.0
    E2: float = 1.0
    beta: float = 1.0
    gamma_1to0: float = 10.0
    gamma_2to1: float = 0.5
    gamma_2to0: float = 1.0
    feedback_on: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidParameter(f"beta must be positive, got {self.beta}")
        for name in ("gamma_1to0", "gamma_2to1", "gamma_2to0"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("E0", "E1", "E2"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameter(f"{name} must be finite")

    def to_dict(self):
        return asdict(self)


def _ket_bra(i, j, d=3):
    m = np.zeros((d, d), dtype=complex)
    m[i, j] = 1.0
    return m


def swap_unitary(i, j):
    """``|i><j| + |j><i| + |m><m|`` with ``m`` the remaining level."""
    m = 3 - i - j
    return _ket_bra(i, j) + _ket_bra(j, i) + _ket_bra(m, m)


def build_clock(p=None, initial_state=None, **overrides):
    """Three-level clock driven by feedback swaps.

    Channels are numbered ``0: 0->1, 1: 1->0, 2: 1->2, 3: 2->1, 4: 0->2,
    5: 2->0``. A jump ``i->j`` has operator ``sqrt(gamma_ij) |j><i|`` and
    entropy weight ``beta (E_i - E_j)``. The current counts ``+1`` for
    ``2->0`` and ``-1`` for ``0->2``. With feedback on, the swap of levels
    1 and 2 follows ``0->1`` and the swap of levels 0 and 2 follows ``1->0``.

    The default initial state is the Gibbs state of ``H``.
    """
    if p is None:
        p = ClockParams(**overrides)
    elif overrides:
        p = ClockParams(**{**asdict(p), **overrides})
    E = np.array([p.E0, p.E1, p.E2], dtype=float)
    H = np.diag(E).astype(complex)
    downhill = {(1, 0): p.gamma_1to0, (2, 1): p.gamma_2to1, (2, 0): p.gamma_2to0}
    rates = {}
    for (i, j), g in downhill.items():
        rates[(i, j)] = g
        rates[(j, i)] = np.exp(-p.beta * (E[i] - E[j])) * g
    order = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]
    weights = {(2, 0): 1.0, (0, 2): -1.0}
    channels = []
    for k, (i, j) in enumerate(order):
        partner = order.index((j, i))
        channels.append(
            JumpChannel(
                k,
                np.sqrt(rates[(i, j)]) * _ket_bra(j, i),
                p.beta * (E[i] - E[j]),
                partner,
                weights.get((i, j), 0.0),
                f"{i}->{j}",
            )
        )
    feedback = {k: FeedbackChannel.identity(3) for k in range(6)}
    if p.feedback_on:
        feedback[0] = FeedbackChannel.unitary(swap_unitary(1, 2))
        feedback[1] = FeedbackChannel.unitary(swap_unitary(0, 2))
    rho0 = gibbs_state(H, p.beta) if initial_state is None else initial_state
    name = "clock" if p.feedback_on else "clock_no_feedback"
    return ModelSpec(H, tuple(channels), feedback, rho0, name=name)


def clock_rate(p, i, j):
    """Transition rate ``gamma_{i->j}`` of the clock."""
    spec = build_clock(p)
    for ch in spec.channels:
        if ch.label == f"{i}->{j}":
            return float(np.abs(ch.operator[j, i]) ** 2)
    raise InvalidParameter(f"no transition {i}->{j}")


def random_unital_channel(dim, rng, n_unitaries=None):
    """Convex mixture of 2 or 3 Haar unitaries as a Kraus list."""
    if n_unitaries is None:
        n_unitaries = int(rng.integers(2, 4))
    w = rng.dirichlet(np.ones(n_unitaries))
    us = unitary_group.rvs(dim, size=n_unitaries, random_state=rng).reshape(n_unitaries, dim, dim)
    return FeedbackChannel(tuple(np.sqrt(wi) * u for wi, u in zip(w, us)), GENERAL)


def random_density_matrix(dim, rng, rank=None):
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.real(np.trace(rho))


def random_model(dim, n_pairs, seed, feedback_kind=UNITARY, delta_s_max=2.0):
    """Random model satisfying every structural invariant.

    Each pair ``(2i, 2i+1)`` has ``L_{2i+1} = A`` with ``A`` complex
    Gaussian, ``L_{2i} = exp(ds/2) A^+`` with ``ds`` uniform in
    ``[-delta_s_max, delta_s_max]``, and random antisymmetric counting
    weights. Feedback on every channel is of ``feedback_kind``
    (``identity``, ``unitary`` or ``general_unital``). The initial state is a
    random full-rank density matrix.
    """
    if dim < 2:
        raise InvalidParameter("dim must be at least 2")
    if n_pairs < 1:
        raise InvalidParameter("n_pairs must be at least 1")
    if feedback_kind == "unital":
        feedback_kind = GENERAL
    if feedback_kind not in (IDENTITY, UNITARY, GENERAL):
        raise InvalidParameter(f"unknown feedback kind {feedback_kind!r}")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    H = 0.5 * (g + g.conj().T)
    channels = []
    for i in range(n_pairs):
        A = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2 * dim)
        ds = float(rng.uniform(-delta_s_max, delta_s_max))
        c = float(rng.normal())
        channels.append(JumpChannel(2 * i, np.exp(ds / 2) * A.conj().T, ds, 2 * i + 1, c, f"pair{i}+"))
        channels.append(JumpChannel(2 * i + 1, A, -ds, 2 * i, -c, f"pair{i}-"))
    feedback = {}
    for ch in channels:
        if feedback_kind == IDENTITY:
            feedback[ch.k] = FeedbackChannel.identity(dim)
        elif feedback_kind == UNITARY:
            feedback[ch.k] = FeedbackChannel.unitary(unitary_group.rvs(dim, random_state=rng))
        else:
            feedback[ch.k] = random_unital_channel(dim, rng)
    rho0 = random_density_matrix(dim, rng)
    return ModelSpec(H, tuple(channels), feedback, rho0, name=f"random_{dim}_{n_pairs}_{seed}_{feedback_kind}")
