"""Selects the compiled kernels when available, else the numpy fallback.

Set ``FBTUR_BACKEND=python`` to force the fallback.
"""
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

RATE_FIELDS = (
    "s_env_rate",
    "activity_rate",
    "mi_rate",
    "fisher_rate",
    "sigma_rate",
    "j_rate",
    "j_phi_rate",
    "s_sys_rate",
    "entropy",
)
ACC_FIELDS = (
    "acc_env_entropy",
    "acc_activity",
    "acc_mutual_info",
    "acc_fisher",
    "acc_sigma",
    "acc_current",
    "acc_current_phi",
    "acc_sys_entropy",
)
SAMPLE_FIELDS = ("t", "tr_rho", "S_sys", "rate_env", "rate_mi", "rate_sigma", "rate_activity", "j_mean_rate", "rate_sys")


def _load_compiled():
    try:
        from . import _kernels
    except ImportError as exc:
        log.debug("compiled kernels unavailable: %s", exc)
        return None
    return _kernels


compiled = _load_compiled()

if os.environ.get("FBTUR_BACKEND", "").lower() == "python" or compiled is None:
    kernels = _fallback
else:
    kernels = compiled

NAME = kernels.NAME


def available():
    """Names of the importable backends."""
    return ["python"] + (["compiled"] if compiled is not None else [])


def get(name=None):
    """Kernel module by name (``None`` gives the active one)."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


_MODEL_CACHE = {}


def kernel_model(packed, backend=None):
    """Backend ``Model`` for a :class:`~fbtur.superop.PackedModel` (memoised)."""
    mod = get(backend)
    key = (id(packed), mod.NAME)
    hit = _MODEL_CACHE.get(key)
    if hit is not None and hit[0] is packed:
        return hit[1]
    m = mod.Model(
        packed.H,
        packed.L,
        packed.LdL,
        packed.B,
        packed.first,
        packed.pair,
        packed.weight,
        packed.delta_s,
        packed.trivial,
    )
    if len(_MODEL_CACHE) > 256:
        _MODEL_CACHE.clear()
    _MODEL_CACHE[key] = (packed, m)
    return m
