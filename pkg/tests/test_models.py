import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbtur.analysis import analyze
from fbtur.errors import InvalidParameter, ZeroMeanCurrent
from fbtur.model import gibbs_state, validate
from fbtur.models import ClockParams, build_clock, clock_rate, random_model, swap_unitary
from fbtur.thermo import assemble_report, current_rate, von_neumann_entropy


def test_clock_rates_and_weights():
    p = ClockParams()
    assert clock_rate(p, 1, 0) == pytest.approx(10.0)
    assert clock_rate(p, 0, 1) == pytest.approx(10.0)
    assert clock_rate(p, 0, 2) == pytest.approx(np.exp(-1.0))
    spec = build_clock(p)
    assert [ch.label for ch in spec.channels] == ["0->1", "1->0", "1->2", "2->1", "0->2", "2->0"]
    assert [ch.weight for ch in spec.channels] == [0, 0, 0, 0, -1, 1]
    assert spec.channel(5).delta_s == pytest.approx(1.0)
    assert spec.channel(4).delta_s == pytest.approx(-1.0)


def test_clock_feedback_swaps():
    spec = build_clock()
    np.testing.assert_array_equal(spec.feedback[0].kraus[0], swap_unitary(1, 2))
    np.testing.assert_array_equal(spec.feedback[1].kraus[0], swap_unitary(0, 2))
    assert all(spec.feedback[k].kind == "identity" for k in (2, 3, 4, 5))
    # feedback after 0->1 lands the system in level 2
    post = spec.feedback[0].apply(spec.channel(0).operator @ np.diag([1, 0, 0]) @ spec.channel(0).operator.conj().T)
    assert post[2, 2].real == pytest.approx(10.0)


def test_clock_default_state_is_gibbs():
    spec = build_clock(E1=0.3, beta=2.0)
    np.testing.assert_allclose(spec.initial_state, gibbs_state(spec.hamiltonian, 2.0), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(e1=st.floats(-5, 5), beta=st.floats(0.1, 5), on=st.booleans())
def test_clock_always_valid(e1, beta, on):
    assert validate(build_clock(E1=e1, beta=beta, feedback_on=on)) == []


def test_clock_rejects_bad_params():
    with pytest.raises(InvalidParameter):
        build_clock(beta=0.0)
    with pytest.raises(InvalidParameter):
        build_clock(gamma_2to1=-1.0)


def test_feedback_drives_positive_current(clock_ss, clock):
    assert current_rate(clock, clock_ss) > 0.5


def test_energy_offset_is_a_gauge():
    a = analyze(build_clock(E1=0.5)).report.to_dict()
    b = analyze(build_clock(E0=3.0, E1=3.5, E2=4.0)).report.to_dict()
    for key, val in a.items():
        if isinstance(val, float):
            assert b[key] == pytest.approx(val, rel=1e-7, abs=1e-10), key


def test_no_feedback_has_zero_current_and_strict_mode():
    res = analyze(build_clock(feedback_on=False))
    rep = res.report
    assert rep.zero_mean_current and rep.delta_j is None and rep.margin_tur_main is None
    assert rep.mutual_info == 0.0
    assert rep.big_sigma == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ZeroMeanCurrent):
        assemble_report(res.final, von_neumann_entropy(res.initial_state), von_neumann_entropy(res.final.rho), strict=True)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), dim=st.integers(2, 4), n_pairs=st.integers(1, 3),
       kind=st.sampled_from(["identity", "unitary", "general_unital", "unital"]))
def test_random_models_are_valid(seed, dim, n_pairs, kind):
    spec = random_model(dim, n_pairs, seed, kind)
    assert validate(spec) == []
    assert spec.n_channels == 2 * n_pairs


def test_random_model_is_seeded():
    a, b = random_model(3, 2, 42), random_model(3, 2, 42)
    np.testing.assert_array_equal(a.hamiltonian, b.hamiltonian)
    assert not np.array_equal(a.hamiltonian, random_model(3, 2, 43).hamiltonian)
    with pytest.raises(InvalidParameter):
        random_model(1, 1, 0)
