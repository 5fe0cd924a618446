"""Model specification: Hamiltonian, paired jump channels and feedback maps.

A :class:`ModelSpec` bundles everything needed to write down the feedback
master equation

    d rho/dt = -i[H, rho] + sum_k ( F_k[L_k rho L_k^+] - 1/2 {L_k^+ L_k, rho} ).

Jump channels come in pairs ``(k, k*)`` linked by local detailed balance,
``L_k = exp(delta_s_k / 2) L_{k*}^+``, and carry antisymmetric counting weights
``c_k = -c_{k*}``. Feedback maps are unital Kraus channels.
"""
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, InvalidModel, InvalidParameter
from .linalg import cmatrix, hermitian_asymmetry

LDB_TOL = 1e-10
PAIR_TOL = 1e-12
CHANNEL_TOL = 1e-10
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-12
PSD_TOL = 1e-12

IDENTITY = "identity"
UNITARY = "unitary"
GENERAL = "general_unital"
FEEDBACK_KINDS = (IDENTITY, UNITARY, GENERAL)

MODEL_FORMAT = "fbtur-model/1"


def _frozen(a):
    a = np.array(a, dtype=np.complex128, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """One monitored jump channel.

    Attributes
    ----------
    k : int
        Channel identifier.
    operator : ndarray
        Jump operator ``L_k``.
    delta_s : float
        Environmental entropy change per jump.
    pair : int
        Identifier of the reverse channel ``k*``.
    weight : float
        Counting weight ``c_k`` entering the current.
    label : str
        Free-form name.
    """

    k: int
    operator: np.ndarray
    delta_s: float
    pair: int
    weight: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "operator", _frozen(cmatrix(self.operator, "jump operator")))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "pair", int(self.pair))
        object.__setattr__(self, "delta_s", float(self.delta_s))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True, eq=False)
class FeedbackChannel:
    """Kraus representation of a feedback map ``F[X] = sum_a K_a X K_a^+``."""

    kraus: tuple
    kind: str = GENERAL

    def __post_init__(self):
        ops = tuple(_frozen(cmatrix(k, "Kraus operator")) for k in self.kraus)
        if not ops:
            raise InvalidParameter("a feedback channel needs at least one Kraus operator")
        if self.kind not in FEEDBACK_KINDS:
            raise InvalidParameter(f"unknown feedback kind {self.kind!r}")
        object.__setattr__(self, "kraus", ops)

    @classmethod
    def identity(cls, dim):
        return cls((np.eye(dim),), IDENTITY)

    @classmethod
    def unitary(cls, u):
        return cls((u,), UNITARY)

    @property
    def dim(self):
        return self.kraus[0].shape[0]

    @property
    def is_unitary_like(self):
        """True when the map sends pure states to pure states."""
        return self.kind in (IDENTITY, UNITARY)

    def apply(self, x):
        x = np.asarray(x)
        return sum(k @ x @ k.conj().T for k in self.kraus)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Complete description of a monitored open system with feedback."""

    hamiltonian: np.ndarray
    channels: tuple
    feedback: dict
    initial_state: np.ndarray
    name: str = ""
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hamiltonian", _frozen(cmatrix(self.hamiltonian, "Hamiltonian")))
        object.__setattr__(self, "initial_state", _frozen(cmatrix(self.initial_state, "initial state")))
        chans = tuple(self.channels)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "feedback", MappingProxyType({int(k): v for k, v in dict(self.feedback).items()}))
        index = {}
        for pos, ch in enumerate(chans):
            if ch.k in index:
                raise InvalidParameter(f"duplicate channel identifier {ch.k}")
            index[ch.k] = pos
        object.__setattr__(self, "_index", index)

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    @property
    def n_channels(self):
        return len(self.channels)

    def position(self, k):
        """Position of channel ``k`` in ``channels``."""
        return self._index[k]

    def channel(self, k):
        return self.channels[self._index[k]]

    def partner(self, k):
        return self.channel(self.channel(k).pair)

    def feedback_for(self, k):
        return self.feedback[k]

    def replace(self, **changes):
        kwargs = dict(
            hamiltonian=self.hamiltonian,
            channels=self.channels,
            feedback=dict(self.feedback),
            initial_state=self.initial_state,
            name=self.name,
        )
        kwargs.update(changes)
        return ModelSpec(**kwargs)

    def with_initial_state(self, rho):
        return self.replace(initial_state=rho)


class Violation(NamedTuple):
    invariant: str
    residual: float
    where: str = ""


def _max_abs(a):
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def check_dimensions(spec):
    """Raise :class:`DimensionMismatch` if any operator does not match ``spec.dim``."""
    d = spec.dim
    if spec.initial_state.shape != (d, d):
        raise DimensionMismatch(f"initial state has shape {spec.initial_state.shape}, expected {(d, d)}")
    for ch in spec.channels:
        if ch.operator.shape != (d, d):
            raise DimensionMismatch(f"channel {ch.k} operator has shape {ch.operator.shape}, expected {(d, d)}")
    for k, fb in spec.feedback.items():
        for K in fb.kraus:
            if K.shape != (d, d):
                raise DimensionMismatch(f"feedback {k} Kraus operator has shape {K.shape}, expected {(d, d)}")


def validate(spec):
    """Check every structural invariant of ``spec``.

    Returns
    -------
    list of Violation
        Empty exactly when the model is valid. Each entry names the failed
        invariant and its numerical residual.
    """
    out = []
    try:
        check_dimensions(spec)
    except DimensionMismatch as exc:
        return [Violation("dimensions", float("inf"), str(exc))]
    d = spec.dim
    eye = np.eye(d)

    r = hermitian_asymmetry(spec.hamiltonian)
    if r > HERMITIAN_TOL:
        out.append(Violation("hamiltonian hermitian", r))

    rho = spec.initial_state
    r = hermitian_asymmetry(rho)
    if r > HERMITIAN_TOL:
        out.append(Violation("initial state hermitian", r))
    r = abs(np.trace(rho) - 1.0)
    if r > TRACE_TOL:
        out.append(Violation("initial state trace", float(r)))
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam < -PSD_TOL:
        out.append(Violation("initial state positive", float(-lam)))

    for ch in spec.channels:
        where = f"channel {ch.k}"
        if _max_abs(ch.operator) == 0.0:
            out.append(Violation("nonzero jump operator", 0.0, where))
        if ch.pair not in spec._index:
            out.append(Violation("pair exists", float("inf"), where))
            continue
        partner = spec.channel(ch.pair)
        if partner.pair != ch.k:
            out.append(Violation("pairing involution", float("inf"), where))
        if ch.pair == ch.k:
            if abs(ch.delta_s) > PAIR_TOL:
                out.append(Violation("self-paired entropy weight", abs(ch.delta_s), where))
            if abs(ch.weight) > PAIR_TOL:
                out.append(Violation("self-paired counting weight", abs(ch.weight), where))
        r = _max_abs(ch.operator - np.exp(ch.delta_s / 2) * partner.operator.conj().T)
        r /= max(1.0, _max_abs(ch.operator))
        if r > LDB_TOL:
            out.append(Violation("local detailed balance", r, where))
        r = abs(ch.delta_s + partner.delta_s)
        if r > PAIR_TOL:
            out.append(Violation("entropy antisymmetry", r, where))
        r = abs(ch.weight + partner.weight)
        if r > PAIR_TOL:
            out.append(Violation("counting antisymmetry", r, where))
        if ch.k not in spec.feedback:
            out.append(Violation("feedback entry", float("inf"), where))

    for k, fb in spec.feedback.items():
        where = f"feedback {k}"
        if k not in spec._index:
            out.append(Violation("feedback channel exists", float("inf"), where))
        tp = sum(K.conj().T @ K for K in fb.kraus)
        un = sum(K @ K.conj().T for K in fb.kraus)
        r = _max_abs(tp - eye)
        if r > CHANNEL_TOL:
            out.append(Violation("trace-preserving", r, where))
        r = _max_abs(un - eye)
        if r > CHANNEL_TOL:
            out.append(Violation("unital", r, where))
        if fb.kind == UNITARY:
            if len(fb.kraus) != 1:
                out.append(Violation("unitary single Kraus", float(len(fb.kraus) - 1), where))
        if fb.kind == IDENTITY:
            r = max(_max_abs(K - eye) for K in fb.kraus) if len(fb.kraus) == 1 else float("inf")
            if r > CHANNEL_TOL:
                out.append(Violation("identity feedback", r, where))
    return out


def require_valid(spec):
    """Raise :class:`InvalidModel` unless ``validate(spec)`` is empty."""
    report = validate(spec)
    if report:
        raise InvalidModel(report)
    return spec


def gibbs_state(hamiltonian, beta):
    """Thermal state ``exp(-beta H) / Z``."""
    w, v = np.linalg.eigh(np.asarray(hamiltonian, dtype=np.complex128))
    p = np.exp(-beta * (w - w.min()))
    p /= p.sum()
    return (v * p) @ v.conj().T


def thermal_qubit(beta, energy_gap, gamma_down, initial_state=None):
    """Two-level system coupled to a thermal bath without feedback.

    Channel 0 is the decay ``|1> -> |0>`` (weight +1) and channel 1 the
    excitation (weight -1). The default initial state is the Gibbs state.
    """
    if not beta > 0:
        raise InvalidParameter(f"beta must be positive, got {beta}")
    if not gamma_down > 0:
        raise InvalidParameter(f"gamma_down must be positive, got {gamma_down}")
    if not np.isfinite(energy_gap):
        raise InvalidParameter("energy_gap must be finite")
    h = np.diag([0.0, energy_gap]).astype(complex)
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    gamma_up = gamma_down * np.exp(-beta * energy_gap)
    ds = beta * energy_gap
    channels = (
        JumpChannel(0, np.sqrt(gamma_down) * lower, ds, 1, 1.0, "down"),
        JumpChannel(1, np.sqrt(gamma_up) * lower.T, -ds, 0, -1.0, "up"),
    )
    feedback = {0: FeedbackChannel.identity(2), 1: FeedbackChannel.identity(2)}
    rho0 = gibbs_state(h, beta) if initial_state is None else initial_state
    return ModelSpec(h, channels, feedback, rho0, name="thermal_qubit")


# -- model file format -------------------------------------------------------

def _encode_matrix(a):
    a = np.asarray(a, dtype=np.complex128)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def _decode_matrix(rows, what):
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"{what}: malformed matrix") from exc
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise InvalidParameter(f"{what}: expected rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def model_to_dict(spec):
    return {
        "format": MODEL_FORMAT,
        "name": spec.name,
        "dim": spec.dim,
        "hamiltonian": _encode_matrix(spec.hamiltonian),
        "channels": [
            {
                "k": ch.k,
                "pair": ch.pair,
                "delta_s": ch.delta_s,
                "weight": ch.weight,
                "label": ch.label,
                "L": _encode_matrix(ch.operator),
            }
            for ch in spec.channels
        ],
        "feedback": [
            {"k": k, "kind": fb.kind, "kraus": [_encode_matrix(K) for K in fb.kraus]}
            for k, fb in spec.feedback.items()
        ],
        "initial_state": _encode_matrix(spec.initial_state),
    }


def model_from_dict(data):
    fmt = data.get("format", MODEL_FORMAT)
    if fmt != MODEL_FORMAT:
        raise InvalidParameter(f"unsupported model format {fmt!r}")
    h = _decode_matrix(data["hamiltonian"], "hamiltonian")
    if "dim" in data and int(data["dim"]) != h.shape[0]:
        raise DimensionMismatch(f"declared dim {data['dim']} but Hamiltonian is {h.shape[0]}-dimensional")
    channels = tuple(
        JumpChannel(
            c["k"],
            _decode_matrix(c["L"], f"channel {c['k']}"),
            c["delta_s"],
            c["pair"],
            c.get("weight", 0.0),
            c.get("label", ""),
        )
        for c in data["channels"]
    )
    feedback = {
        int(f["k"]): FeedbackChannel(
            tuple(_decode_matrix(K, f"feedback {f['k']}") for K in f["kraus"]),
            f.get("kind", GENERAL),
        )
        for f in data["feedback"]
    }
    rho0 = _decode_matrix(data["initial_state"], "initial_state")
    return ModelSpec(h, channels, feedback, rho0, name=data.get("name", ""))


def save_model(spec, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(spec), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
