import logging

import numpy as np
import pytest
from scipy.linalg import expm

from fbtur.dynamics import IntegratorConfig, propagate, steady_state, write_timeseries_csv
from fbtur.errors import DegenerateStationarySpace, InvalidParameter, PositivityLoss, StepUnderflow
from fbtur.model import FeedbackChannel, JumpChannel, ModelSpec, gibbs_state, thermal_qubit
from fbtur.models import build_clock, random_model
from fbtur.superop import build_feedback_liouvillian

from conftest import random_state


def tilted_generator(spec, u, weights=None):
    """Counting-field generator built directly from the branch operators."""
    d = spec.dim
    eye = np.eye(d)
    H = spec.hamiltonian
    G = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for ch in spec.channels:
        c = ch.weight if weights is None else weights
        L = ch.operator
        LdL = L.conj().T @ L
        G -= 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
        for K in spec.feedback[ch.k].kraus:
            B = K @ L
            G += np.exp(1j * u * c) * np.kron(B, B.conj())
    return G


def generating_function(spec, rho0, tau, u, weights=None):
    v = expm(tilted_generator(spec, u, weights) * tau) @ rho0.reshape(-1)
    return np.trace(v.reshape(spec.dim, spec.dim))


def fd_moments(spec, rho0, tau, weights=None):
    h1, h2 = 1e-5, 2e-4
    z = lambda u: generating_function(spec, rho0, tau, u, weights)  # noqa: E731
    mean = (-1j * (z(h1) - z(-h1)) / (2 * h1)).real
    second = (-(z(h2) - 2 * z(0.0) + z(-h2)) / h2**2).real
    return mean, second


CASES = [
    ("clock-gibbs", build_clock(), None),
    ("clock-E1=2", build_clock(E1=2.0), None),
    ("random-unital", random_model(3, 2, 5, "general_unital"), None),
]


@pytest.mark.parametrize("name,spec,rho0", CASES, ids=[c[0] for c in CASES])
def test_moments_match_counting_field(name, spec, rho0):
    rho0 = spec.initial_state if rho0 is None else rho0
    st = propagate(spec, 1.0, rho0=rho0)
    if name.startswith("random"):
        spec = spec.replace(channels=tuple(
            JumpChannel(ch.k, ch.operator, ch.delta_s, ch.pair, 1.0 if ch.k % 2 == 0 else -1.0) for ch in spec.channels
        ))
        st = propagate(spec, 1.0, rho0=rho0)
    mean, second = fd_moments(spec, rho0, 1.0)
    assert st.j_mean == pytest.approx(mean, rel=1e-6, abs=1e-10)
    assert st.j_second == pytest.approx(second, rel=1e-6, abs=1e-9)
    assert st.acc_current == pytest.approx(st.j_mean, rel=1e-8, abs=1e-12)


def test_activity_is_mean_jump_count(clock):
    st = propagate(clock, 1.0)
    mean, _ = fd_moments(clock, clock.initial_state, 1.0, weights=1.0)
    assert st.acc_activity == pytest.approx(mean, rel=1e-7)


def test_state_matches_matrix_exponential():
    spec = random_model(3, 2, 8, "unitary")
    st = propagate(spec, 0.7)
    want = (expm(build_feedback_liouvillian(spec).matrix * 0.7) @ spec.initial_state.reshape(-1)).reshape(3, 3)
    np.testing.assert_allclose(st.rho, want, atol=1e-10)


def test_thermal_equilibrium_stays_put():
    q = thermal_qubit(1.0, 1.0, 1.0)
    st = propagate(q, 2.0, rho0=gibbs_state(q.hamiltonian, 1.0))
    np.testing.assert_allclose(st.rho, gibbs_state(q.hamiltonian, 1.0), atol=1e-13)
    assert st.j_mean == pytest.approx(0.0, abs=1e-12)
    assert st.acc_sigma == pytest.approx(0.0, abs=1e-12)
    assert st.acc_env_entropy == pytest.approx(0.0, abs=1e-12)
    assert st.acc_activity == pytest.approx(2.0 * 2 * np.exp(-1) / (1 + np.exp(-1)), rel=1e-10)


def test_thermal_decay_population():
    q = thermal_qubit(1.0, 1.0, 2.0)
    excited = np.diag([0.0, 1.0]).astype(complex)
    st = propagate(q, 1.5, rho0=excited)
    g = 2.0 * (1 + np.exp(-1.0))
    p_eq = np.exp(-1.0) / (1 + np.exp(-1.0))
    assert st.rho[1, 1].real == pytest.approx(p_eq + (1 - p_eq) * np.exp(-g * 1.5), rel=1e-10)


def test_clock_steady_state_is_stationary(clock, clock_ss):
    np.testing.assert_allclose(build_feedback_liouvillian(clock).apply(clock_ss), 0, atol=1e-12)
    st = propagate(clock, 50.0, IntegratorConfig(h=1e-2), rho0=np.eye(3) / 3)
    np.testing.assert_allclose(st.rho, clock_ss, atol=1e-10)


def test_steady_state_without_feedback_is_gibbs():
    spec = build_clock(E1=0.7, feedback_on=False)
    np.testing.assert_allclose(steady_state(spec), gibbs_state(spec.hamiltonian, 1.0), atol=1e-12)


def test_degenerate_stationary_space():
    L = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    spec = ModelSpec(
        np.zeros((3, 3)),
        (JumpChannel(0, L, 0.0, 1, 0.0), JumpChannel(1, L.T, 0.0, 0, 0.0)),
        {0: FeedbackChannel.identity(3), 1: FeedbackChannel.identity(3)},
        np.eye(3) / 3,
    )
    with pytest.raises(DegenerateStationarySpace) as info:
        steady_state(spec)
    assert info.value.dimension == 2


def test_invariants_along_trajectory(clock):
    st = propagate(clock, 1.0, sample_every=50)
    s = st.samples
    assert s.shape == (21, 9)
    np.testing.assert_allclose(s[:, 1], 1.0, atol=1e-12)
    assert np.all(s[:, 6] >= 0)
    np.testing.assert_allclose(st.rho, st.rho.conj().T, atol=1e-14)
    assert abs(np.trace(st.phi)) < 1e-12
    assert abs(np.trace(st.rho1).imag) < 1e-12
    assert st.min_eigenvalue > 0


def test_accumulators_nondecreasing(clock):
    prev = None
    for tau in (0.25, 0.5, 0.75, 1.0):
        st = propagate(clock, tau, IntegratorConfig(h=1e-3))
        cur = (st.acc_activity, st.acc_fisher, st.acc_sigma)
        if prev is not None:
            assert all(c >= p for c, p in zip(cur, prev))
        prev = cur


@pytest.mark.parametrize("spec", [build_clock(E1=-5.0), build_clock(), build_clock(E1=5.0), random_model(3, 2, 2, "general_unital")])
def test_halving(spec):
    rho0 = steady_state(spec)
    a = propagate(spec, 1.0, IntegratorConfig(h=1e-3), rho0=rho0).accumulators()
    b = propagate(spec, 1.0, IntegratorConfig(h=5e-4), rho0=rho0).accumulators()
    for key in a:
        assert abs(a[key] - b[key]) <= 1e-6 * max(abs(a[key]), abs(b[key])) + 1e-12, key


def test_adaptive_agrees_with_fixed(clock):
    fixed = propagate(clock, 1.0)
    adaptive = propagate(clock, 1.0, IntegratorConfig(method="rk45_adaptive", abs_tol=1e-11, rel_tol=1e-10))
    for key, val in fixed.accumulators().items():
        assert adaptive.accumulators()[key] == pytest.approx(val, rel=1e-6, abs=1e-9), key
    np.testing.assert_allclose(adaptive.rho, fixed.rho, atol=1e-8)


def test_coarse_step_warns_then_positivity_loss(caplog):
    q = thermal_qubit(1.0, 1.0, 1e4)
    with caplog.at_level(logging.WARNING, logger="fbtur.dynamics"):
        with pytest.raises(PositivityLoss):
            propagate(q, 1.0, IntegratorConfig(h=0.1), rho0=np.diag([0.0, 1.0]))
    assert any("step" in r.message for r in caplog.records)


def test_step_underflow_on_stiff_model():
    q = thermal_qubit(1.0, 1.0, 1e15)
    with pytest.raises(StepUnderflow):
        propagate(q, 1.0, IntegratorConfig(method="rk45_adaptive"), rho0=np.diag([0.0, 1.0]))


def test_bad_inputs(clock):
    with pytest.raises(InvalidParameter):
        propagate(clock, 1.0, IntegratorConfig(h=2.0))
    with pytest.raises(InvalidParameter):
        propagate(clock, 1.0, rho0=np.eye(2) / 2)
    with pytest.raises(InvalidParameter):
        IntegratorConfig(method="euler")


def test_reentrant_across_threads(clock):
    from concurrent.futures import ThreadPoolExecutor

    specs = [build_clock(E1=e) for e in np.linspace(-2, 2, 8)]
    serial = [propagate(s, 1.0).acc_sigma for s in specs]
    with ThreadPoolExecutor(4) as pool:
        threaded = list(pool.map(lambda s: propagate(s, 1.0).acc_sigma, specs))
    assert serial == threaded


def test_timeseries_csv(tmp_path, clock):
    st = propagate(clock, 0.1, sample_every=10)
    path = tmp_path / "ts.csv"
    write_timeseries_csv(st.samples, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["t", "tr_rho", "S_sys"]
    assert len(lines) == st.samples.shape[0] + 1
