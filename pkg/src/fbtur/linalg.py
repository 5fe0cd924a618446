"""Dense complex linear algebra helpers.

Everything here works on small dense ``complex128`` matrices. Hermitian
eigendecompositions are delegated to LAPACK through :func:`numpy.linalg.eigh`.
"""
from typing import NamedTuple

import numpy as np

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    InvalidParameter,
    NegativeEigenvalue,
    NonHermitianInput,
)

HERMITIAN_TOL = 1e-8
NEGATIVE_EIG_TOL = 1e-8
DEFAULT_CLIP = 1e-14


class HermitianEig(NamedTuple):
    """Eigenvalues (ascending) and eigenvectors (as columns) of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def cmatrix(a, name="matrix"):
    """Return ``a`` as a finite, square, C-contiguous complex128 array."""
    out = np.array(a, dtype=np.complex128, order="C", copy=True)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise DimensionMismatch(f"{name} must be a square matrix, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise InvalidParameter(f"{name} contains non-finite entries")
    return out


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def hermitian_asymmetry(a):
    """Largest entry of ``|a - a^dagger|``."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - dagger(a))))


def herm_eig(a, tol=HERMITIAN_TOL):
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    a : array_like
        Square matrix, Hermitian up to ``tol`` in max-norm.
    tol : float
        Largest tolerated entry of ``a - a^dagger``.

    Returns
    -------
    HermitianEig
        Real ascending eigenvalues and a unitary matrix of eigenvectors.

    Raises
    ------
    NonHermitianInput
        If the asymmetry exceeds ``tol``.
    ConvergenceFailure
        If LAPACK does not converge.
    """
    a = cmatrix(a)
    asym = hermitian_asymmetry(a)
    if asym > tol:
        raise NonHermitianInput(f"asymmetry {asym:.3e} exceeds tolerance {tol:.1e}")
    a = 0.5 * (a + a.conj().T)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"Hermitian eigensolver failed: {exc}") from exc
    return HermitianEig(w, v)


def safe_log_psd(a, clip=DEFAULT_CLIP):
    """Matrix logarithm of a positive semidefinite matrix.

    Eigenvalues below ``clip`` are replaced by ``clip`` before taking the
    logarithm, so rank-deficient states give a finite result.

    Raises
    ------
    NegativeEigenvalue
        If an eigenvalue is below ``-1e-8``.
    """
    if not clip > 0:
        raise InvalidParameter(f"clip must be positive, got {clip}")
    w, v = herm_eig(a)
    if w[0] < -NEGATIVE_EIG_TOL:
        raise NegativeEigenvalue(f"eigenvalue {w[0]:.3e} below -{NEGATIVE_EIG_TOL:.0e}")
    logw = np.log(np.maximum(w, clip))
    return (v * logw) @ v.conj().T


def kron(a, b):
    """Kronecker product ``a (x) b``."""
    return np.kron(np.asarray(a), np.asarray(b))


def is_density_matrix(rho, tol=1e-8):
    """True if ``rho`` is Hermitian, PSD and unit trace within ``tol``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if hermitian_asymmetry(rho) > tol or abs(np.trace(rho) - 1.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] >= -tol)
