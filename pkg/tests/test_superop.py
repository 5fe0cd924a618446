import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbtur.model import thermal_qubit
from fbtur.models import build_clock, random_model
from fbtur.superop import (
    apply_feedback_liouvillian,
    build_bare_liouvillian,
    build_feedback_liouvillian,
    build_moment_drives,
    build_phi_drive,
    pack,
    sandwich,
    vec,
)
from fbtur.model import gibbs_state
from fbtur.thermo import current_rate

from conftest import random_state


def elementwise_generator(spec, rho):
    """Index-loop evaluation of the feedback generator, used as an oracle."""
    d = spec.dim
    H = spec.hamiltonian
    out = np.zeros((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            acc = 0j
            for c in range(d):
                acc += -1j * (H[a, c] * rho[c, b] - rho[a, c] * H[c, b])
            for ch in spec.channels:
                L = ch.operator
                LdL = np.zeros((d, d), dtype=complex)
                for x in range(d):
                    for y in range(d):
                        LdL[x, y] = sum(np.conj(L[z, x]) * L[z, y] for z in range(d))
                for K in spec.feedback[ch.k].kraus:
                    B = np.zeros((d, d), dtype=complex)
                    for x in range(d):
                        for y in range(d):
                            B[x, y] = sum(K[x, z] * L[z, y] for z in range(d))
                    for c in range(d):
                        for e in range(d):
                            acc += B[a, c] * rho[c, e] * np.conj(B[b, e])
                for c in range(d):
                    acc -= 0.5 * (LdL[a, c] * rho[c, b] + rho[a, c] * LdL[c, b])
            out[a, b] = acc
    return out


def test_sandwich_convention():
    rng = np.random.default_rng(0)
    a, x, b = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    np.testing.assert_allclose(sandwich(a, b) @ vec(x), vec(a @ x @ b), atol=1e-12)


@pytest.mark.parametrize("spec", [build_clock(), build_clock(E1=-2.0, feedback_on=False), random_model(3, 2, 3, "general_unital")])
def test_generator_matches_elementwise_oracle(spec):
    rho = random_state(np.random.default_rng(5), spec.dim)
    want = elementwise_generator(spec, rho)
    np.testing.assert_allclose(build_feedback_liouvillian(spec).apply(rho), want, atol=1e-12)
    np.testing.assert_allclose(apply_feedback_liouvillian(spec, rho), want, atol=1e-12)


def test_thermal_qubit_gibbs_is_stationary():
    q = thermal_qubit(1.3, 0.7, 2.0)
    G = build_feedback_liouvillian(q)
    np.testing.assert_allclose(G.apply(gibbs_state(q.hamiltonian, 1.3)), 0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), dim=st.integers(2, 4), kind=st.sampled_from(["identity", "unitary", "general_unital"]))
def test_trace_preserving_and_hermiticity(seed, dim, kind):
    spec = random_model(dim, 2, seed, kind)
    G = build_feedback_liouvillian(spec).matrix
    trace_row = np.eye(dim).reshape(-1)
    np.testing.assert_allclose(trace_row @ G, 0, atol=1e-12)
    rho = random_state(np.random.default_rng(seed), dim)
    out = build_feedback_liouvillian(spec).apply(rho)
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


def test_identity_feedback_equals_bare():
    spec = random_model(3, 2, 11, "identity")
    np.testing.assert_array_equal(build_feedback_liouvillian(spec).matrix, build_bare_liouvillian(spec).matrix)
    clock = build_clock()
    assert not np.allclose(build_feedback_liouvillian(clock).matrix, build_bare_liouvillian(clock).matrix)


def test_unital_feedback_preserves_identity_part():
    spec = random_model(3, 2, 4, "general_unital")
    diff = build_feedback_liouvillian(spec).matrix - build_bare_liouvillian(spec).matrix
    # feedback only redistributes within jump terms, so the trace row is unchanged
    np.testing.assert_allclose(np.eye(3).reshape(-1) @ diff, 0, atol=1e-12)


def test_moment_drives_vanish_without_weights():
    spec = random_model(2, 1, 0)
    chans = tuple(type(ch)(ch.k, ch.operator, ch.delta_s, ch.pair, 0.0, ch.label) for ch in spec.channels)
    D1, D2 = build_moment_drives(spec.replace(channels=chans))
    assert not D1.matrix.any() and not D2.matrix.any()


def test_moment_drive_trace_is_current(clock):
    rho = random_state(np.random.default_rng(2), 3)
    D1, D2 = build_moment_drives(clock)
    assert np.trace(D1.apply(rho)).real == pytest.approx(current_rate(clock, rho), abs=1e-12)
    # weights are +-1 or 0, so the second-moment drive has the same trace as the activity on weighted channels
    r = [np.trace(ch.operator @ rho @ ch.operator.conj().T).real for ch in clock.channels]
    want = sum(ch.weight**2 * ri for ch, ri in zip(clock.channels, r))
    assert np.trace(D2.apply(rho)).real == pytest.approx(want, abs=1e-12)


def test_phi_drive_traceless_and_zero_at_equilibrium():
    q = thermal_qubit(1.0, 1.0, 1.0)
    eq = gibbs_state(q.hamiltonian, 1.0)
    np.testing.assert_allclose(build_phi_drive(q, eq), 0, atol=1e-14)
    spec = build_clock()
    rho = random_state(np.random.default_rng(8), 3)
    assert abs(np.trace(build_phi_drive(spec, rho))) < 1e-12


def test_phi_drive_elementwise(clock):
    rho = random_state(np.random.default_rng(3), 3)
    r = {ch.k: np.trace(ch.operator @ rho @ ch.operator.conj().T).real for ch in clock.channels}
    want = np.zeros((3, 3), dtype=complex)
    for ch in clock.channels:
        l = (r[ch.k] - r[ch.pair]) / (r[ch.k] + r[ch.pair])
        L = ch.operator
        jump = sum(K @ L @ rho @ L.conj().T @ K.conj().T for K in clock.feedback[ch.k].kraus)
        LdL = L.conj().T @ L
        want += l * (jump - 0.5 * (LdL @ rho + rho @ LdL))
    np.testing.assert_allclose(build_phi_drive(clock, rho), want, atol=1e-13)


def test_pack_layout(clock):
    p = pack(clock)
    assert p is pack(clock)
    assert p.n_channels == 6 and p.n_branches == 6
    np.testing.assert_array_equal(p.pair, [1, 0, 3, 2, 5, 4])
    np.testing.assert_array_equal(p.weight, [0, 0, 0, 0, -1, 1])
    owner, alpha = p.branch_owner()
    np.testing.assert_array_equal(owner, np.arange(6))
    np.testing.assert_array_equal(alpha, 0)
    np.testing.assert_allclose(p.B[0], clock.feedback[0].kraus[0] @ clock.channel(0).operator)
