import warnings

import numpy as np
import pytest

from fbtur import _backend
from fbtur.dynamics import propagate
from fbtur.errors import InvalidParameter, StepTooCoarse
from fbtur.model import thermal_qubit
from fbtur.models import build_clock, random_model
from fbtur.trajectories import default_dt, run_ensemble, simulate_trajectory, stream, write_trajectories_csv


def test_streams_are_independent_of_order():
    a = stream(3, 7, 5)
    np.testing.assert_array_equal(a, stream(3, 7, 5))
    assert not np.array_equal(a, stream(3, 8, 5))
    assert not np.array_equal(a, stream(4, 7, 5))


def test_same_seed_same_trajectory(clock):
    a = simulate_trajectory(clock, 1.0, dt=1e-3, rng_seed=11)
    b = simulate_trajectory(clock, 1.0, dt=1e-3, rng_seed=11)
    assert a == b
    assert a != simulate_trajectory(clock, 1.0, dt=1e-3, rng_seed=12)


def test_ensemble_independent_of_threads_and_batches(clock):
    base = run_ensemble(clock, 1.0, dt=1e-3, n_traj=300, base_seed=5)
    for threads, batch in ((4, None), (3, 7), (1, 1000)):
        other = run_ensemble(clock, 1.0, dt=1e-3, n_traj=300, base_seed=5, threads=threads, batch_size=batch)
        np.testing.assert_array_equal(other.currents, base.currents)
        assert other.var_J == base.var_J


@pytest.mark.skipif("compiled" not in _backend.available(), reason="compiled kernels not built")
def test_backends_sample_identically(clock):
    a = run_ensemble(clock, 1.0, dt=1e-3, n_traj=40, base_seed=2, backend="compiled", keep_records=True)
    b = run_ensemble(clock, 1.0, dt=1e-3, n_traj=40, base_seed=2, backend="python", keep_records=True)
    np.testing.assert_array_equal(a.currents, b.currents)
    assert a.records == b.records


def test_records_consistent_with_current(clock):
    stats = run_ensemble(clock, 1.0, dt=1e-3, n_traj=50, base_seed=1, keep_records=True)
    weight = {ch.k: ch.weight for ch in clock.channels}
    for rec in stats.records:
        times = [e[0] for e in rec.events]
        assert times == sorted(times) and all(0 < t <= 1.0 + 1e-12 for t in times)
        assert rec.n_jumps == len(rec.events)
        assert rec.current == sum(weight[k] for _, k, _ in rec.events)
        assert all(alpha is None for _, _, alpha in rec.events)


def test_multi_kraus_feedback_records_branch():
    spec = random_model(3, 1, 4, "general_unital")
    rec = simulate_trajectory(spec, 5.0, rng_seed=3)
    assert rec.n_jumps > 0
    assert all(isinstance(alpha, int) for _, _, alpha in rec.events)


def test_vanishing_rates_give_no_jumps():
    q = thermal_qubit(1.0, 1.0, 1e-12)
    stats = run_ensemble(q, 1.0, n_traj=20)
    assert stats.mean_jumps == 0 and stats.var_J == 0


def test_survival_law():
    q = thermal_qubit(1.0, 1.0, 2.0, initial_state=np.diag([0.0, 1.0]))
    g = abs(q.channel(0).operator[0, 1]) ** 2
    tau, n = 0.5, 4000
    stats = run_ensemble(q, tau, dt=1e-4, n_traj=n, base_seed=9, keep_records=True)
    jumped = np.mean([rec.n_jumps > 0 for rec in stats.records])
    p = 1 - np.exp(-g * tau)
    assert abs(jumped - p) <= 4 * np.sqrt(p * (1 - p) / n)


def test_first_jump_is_always_down():
    q = thermal_qubit(1.0, 1.0, 2.0, initial_state=np.diag([0.0, 1.0]))
    rec = simulate_trajectory(q, 3.0, dt=1e-3, rng_seed=4)
    assert rec.events and rec.events[0][1] == 0


def test_mean_state_and_activity_match_master_equation(clock):
    n = 4000
    stats = run_ensemble(clock, 1.0, dt=2e-4, n_traj=n, base_seed=17)
    st = propagate(clock, 1.0)
    np.testing.assert_allclose(np.diag(stats.mean_state).real, np.diag(st.rho).real, atol=0.03)
    assert abs(stats.mean_jumps - st.acc_activity) <= 4 * stats.se_jumps + 0.01
    assert abs(stats.z_mean(st.j_mean)) <= 4


def test_pure_and_mixed_paths_agree(clock):
    a = run_ensemble(clock, 1.0, dt=1e-3, n_traj=3000, base_seed=1, path="pure")
    b = run_ensemble(clock, 1.0, dt=1e-3, n_traj=3000, base_seed=1, path="mixed")
    z = (a.mean_J - b.mean_J) / np.hypot(a.se_mean, b.se_mean)
    assert abs(z) <= 4


def test_coarse_step_rejected_and_warned(clock):
    with pytest.raises(StepTooCoarse):
        run_ensemble(clock, 1.0, dt=0.2, n_traj=2)
    with pytest.warns(UserWarning):
        run_ensemble(clock, 1.0, dt=0.02, n_traj=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_ensemble(clock, 1.0, dt=1e-3, n_traj=2)


def test_invalid_arguments(clock):
    with pytest.raises(InvalidParameter):
        run_ensemble(clock, 1.0, n_traj=1)
    with pytest.raises(InvalidParameter):
        run_ensemble(clock, 1.0, n_traj=2, path="gillespie")
    with pytest.raises(InvalidParameter):
        run_ensemble(clock, -1.0, n_traj=2)


def test_default_dt(clock):
    assert default_dt(clock, 1.0) == pytest.approx(1e-3 / np.linalg.eigvalsh(sum(
        ch.operator.conj().T @ ch.operator for ch in clock.channels))[-1])
    assert default_dt(thermal_qubit(1.0, 1.0, 1e-6), 2.0) == pytest.approx(2e-3)


def test_histogram_counts_everything(clock):
    stats = run_ensemble(clock, 1.0, dt=1e-3, n_traj=200)
    edges, counts = stats.histogram
    assert sum(counts) == 200 and len(edges) == len(counts) + 1


def test_trajectories_csv(tmp_path, clock):
    stats = run_ensemble(clock, 0.5, dt=1e-3, n_traj=10, keep_records=True)
    path = tmp_path / "traj.csv"
    write_trajectories_csv(stats.records, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + sum(r.n_jumps for r in stats.records)


def test_euler_bias_is_first_order():
    # from the excited state the no-jump branch stays excited, so the scheme's
    # survival probability is exactly (1 - g dt)^n rather than exp(-g tau)
    q = thermal_qubit(1.0, 1.0, 4.0, initial_state=np.diag([0.0, 1.0]))
    g = abs(q.channel(0).operator[0, 1]) ** 2
    tau, n = 0.5, 20000
    for dt in (0.025, 0.001):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            stats = run_ensemble(q, tau, dt=dt, n_traj=n, base_seed=3, keep_records=True)
        survived = np.mean([rec.n_jumps == 0 for rec in stats.records])
        discrete = (1 - g * dt) ** round(tau / dt)
        se = np.sqrt(discrete * (1 - discrete) / n)
        assert abs(survived - discrete) <= 4 * se
        bias = discrete - np.exp(-g * tau)
        assert abs(bias) == pytest.approx(0.5 * g**2 * tau * dt * np.exp(-g * tau), rel=0.3)


def test_empirical_tur(clock, clock_ss):
    from fbtur.analysis import analyze

    rep = analyze(clock).report
    stats = run_ensemble(clock.with_initial_state(clock_ss), 1.0, dt=1e-3, n_traj=4000, base_seed=8)
    ratio = stats.var_J / stats.mean_J**2
    assert ratio >= rep.tur_rhs_main * 0.9
