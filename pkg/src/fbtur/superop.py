"""Vectorized generators of the feedback master equation.

Convention: ``vec`` stacks rows, so ``vec(A X B) = (A kron B^T) vec(X)``.
With this choice ``vec(X) == X.reshape(-1)`` for C-ordered arrays.
"""
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import IDENTITY, check_dimensions

FEEDBACK = "feedback"
BARE = "bare"
MOMENT_DRIVE_1 = "moment_drive_1"
MOMENT_DRIVE_2 = "moment_drive_2"
PHI_DRIVE = "phi_drive"


@dataclass(frozen=True)
class VectorizedGenerator:
    """A ``dim**2 x dim**2`` superoperator acting on row-stacked matrices."""

    matrix: np.ndarray
    dim: int
    kind: str

    def apply(self, x):
        d = self.dim
        return (self.matrix @ np.asarray(x, dtype=complex).reshape(-1)).reshape(d, d)


def vec(x):
    return np.ascontiguousarray(x).reshape(-1)


def unvec(v, dim):
    return np.asarray(v).reshape(dim, dim)


def sandwich(a, b):
    """Superoperator of ``X -> a X b``."""
    return np.kron(a, np.asarray(b).T)


def _branches(spec, identity_feedback=False):
    """Pairs ``(position, K^a L_k)`` for every Kraus branch of every channel."""
    out = []
    for pos, ch in enumerate(spec.channels):
        if identity_feedback:
            out.append((pos, ch.operator))
            continue
        for K in spec.feedback[ch.k].kraus:
            out.append((pos, K @ ch.operator))
    return out


def _liouvillian(spec, identity_feedback):
    check_dimensions(spec)
    d = spec.dim
    eye = np.eye(d)
    H = spec.hamiltonian
    G = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for _, B in _branches(spec, identity_feedback):
        G += sandwich(B, B.conj().T)
    for ch in spec.channels:
        LdL = ch.operator.conj().T @ ch.operator
        G -= 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return G


def build_feedback_liouvillian(spec):
    """Vectorized ``L^(fb)`` including the feedback maps."""
    return VectorizedGenerator(_liouvillian(spec, False), spec.dim, FEEDBACK)


def build_bare_liouvillian(spec):
    """Vectorized GKSL generator ``L^(0)`` with every feedback map replaced by the identity."""
    return VectorizedGenerator(_liouvillian(spec, True), spec.dim, BARE)


def build_moment_drives(spec):
    """Drives of the current-moment hierarchy.

    Returns
    -------
    (VectorizedGenerator, VectorizedGenerator)
        ``D1 = sum_k c_k F_k[L_k . L_k^+]`` and ``D2 = sum_k c_k^2 F_k[L_k . L_k^+]``.
    """
    check_dimensions(spec)
    n = spec.dim**2
    D1 = np.zeros((n, n), dtype=complex)
    D2 = np.zeros((n, n), dtype=complex)
    for pos, B in _branches(spec):
        c = spec.channels[pos].weight
        if c == 0.0:
            continue
        S = sandwich(B, B.conj().T)
        D1 += c * S
        D2 += c * c * S
    return (
        VectorizedGenerator(D1, spec.dim, MOMENT_DRIVE_1),
        VectorizedGenerator(D2, spec.dim, MOMENT_DRIVE_2),
    )


def feedback_jump_terms(spec, x):
    """``F_k[L_k x L_k^+]`` for every channel, stacked in channel order."""
    x = np.asarray(x, dtype=complex)
    out = np.zeros((spec.n_channels,) + x.shape, dtype=complex)
    for pos, B in _branches(spec):
        out[pos] += B @ x @ B.conj().T
    return out


def apply_feedback_liouvillian(spec, x):
    """Operator-form evaluation of ``L^(fb)[x]`` without vectorization."""
    x = np.asarray(x, dtype=complex)
    H = spec.hamiltonian
    out = -1j * (H @ x - x @ H) + feedback_jump_terms(spec, x).sum(axis=0)
    for ch in spec.channels:
        LdL = ch.operator.conj().T @ ch.operator
        out -= 0.5 * (LdL @ x + x @ LdL)
    return out


def build_phi_drive(spec, rho):
    """State-dependent source term of the auxiliary operator ``phi``.

    ``sum_k ell_k (F_k[L_k rho L_k^+] - 1/2 {L_k^+ L_k, rho})`` with ``ell_k``
    the normalised pair-current asymmetry of :func:`fbtur.thermo.ell`.
    """
    from .thermo import ell

    check_dimensions(spec)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (spec.dim, spec.dim):
        raise DimensionMismatch(f"state has shape {rho.shape}, expected {(spec.dim, spec.dim)}")
    ells = ell(spec, rho)
    jumps = feedback_jump_terms(spec, rho)
    out = np.zeros_like(rho)
    for pos, ch in enumerate(spec.channels):
        l = ells[ch.k]
        if l == 0.0:
            continue
        LdL = ch.operator.conj().T @ ch.operator
        out += l * (jumps[pos] - 0.5 * (LdL @ rho + rho @ LdL))
    return out


@dataclass(frozen=True, eq=False)
class PackedModel:
    """Contiguous arrays describing a model, as consumed by the kernels.

    Kraus branches ``B_b = K^a_k L_k`` are grouped by channel; branches of
    channel position ``p`` occupy ``first[p]:first[p+1]``.
    """

    dim: int
    H: np.ndarray
    L: np.ndarray
    LdL: np.ndarray
    B: np.ndarray
    first: np.ndarray
    pair: np.ndarray
    weight: np.ndarray
    delta_s: np.ndarray
    trivial: np.ndarray
    unitary_like: bool

    @property
    def n_channels(self):
        return self.L.shape[0]

    @property
    def n_branches(self):
        return self.B.shape[0]

    def branch_owner(self):
        """Channel position and Kraus index of every branch."""
        pos = np.repeat(np.arange(self.n_channels), np.diff(self.first))
        alpha = np.arange(self.n_branches) - self.first[pos]
        return pos, alpha


_PACK_CACHE = weakref.WeakKeyDictionary()


def pack(spec):
    """Kernel representation of ``spec`` (cached per model object)."""
    cached = _PACK_CACHE.get(spec)
    if cached is not None:
        return cached
    check_dimensions(spec)
    K = spec.n_channels
    L = np.array([ch.operator for ch in spec.channels], dtype=complex).reshape(K, spec.dim, spec.dim)
    LdL = np.conj(np.swapaxes(L, 1, 2)) @ L
    branches = _branches(spec)
    B = np.array([b for _, b in branches], dtype=complex).reshape(len(branches), spec.dim, spec.dim)
    counts = np.bincount([p for p, _ in branches], minlength=K)
    first = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    pair = np.array([spec.position(ch.pair) for ch in spec.channels], dtype=np.int32)
    trivial = np.array([spec.feedback[ch.k].kind == IDENTITY for ch in spec.channels], dtype=np.uint8)
    packed = PackedModel(
        dim=spec.dim,
        H=np.ascontiguousarray(spec.hamiltonian, dtype=complex),
        L=np.ascontiguousarray(L),
        LdL=np.ascontiguousarray(LdL),
        B=np.ascontiguousarray(B),
        first=first,
        pair=pair,
        weight=np.array([ch.weight for ch in spec.channels], dtype=float),
        delta_s=np.array([ch.delta_s for ch in spec.channels], dtype=float),
        trivial=trivial,
        unitary_like=all(fb.is_unitary_like for fb in spec.feedback.values()),
    )
    _PACK_CACHE[spec] = packed
    return packed
