import numpy as np
import pytest

from fbtur.analysis import analyze
from fbtur.dynamics import IntegratorConfig
from fbtur.models import build_clock, random_model
from fbtur.thermo import rate_bundle


def test_steady_point_matches_rates(clock, clock_ss):
    res = analyze(clock, tau=1.0)
    rep = res.report
    b = rate_bundle(clock, clock_ss)
    assert rep.j_mean == pytest.approx(b.j_rate, rel=1e-9)
    assert rep.activity == pytest.approx(b.activity_rate, rel=1e-9)
    assert rep.big_sigma == pytest.approx(b.big_sigma_rate, rel=1e-8)
    assert rep.s_sys == pytest.approx(0.0, abs=1e-12)
    assert res.rate_row()["minus_mi_rate"] == -b.mi_rate
    assert rep.passed


def test_report_identities():
    rep = analyze(random_model(3, 2, 1, "general_unital"), tau=0.8, initial="model").report
    assert rep.s_tot == pytest.approx(rep.s_sys + rep.s_env)
    assert rep.big_sigma == pytest.approx(rep.s_tot - rep.mutual_info)
    assert rep.s_sys_integrated == pytest.approx(rep.s_sys, rel=1e-6, abs=1e-9)
    assert rep.j_var == pytest.approx(rep.j_second - rep.j_mean**2)
    assert rep.big_sigma >= rep.sigma_meas - 1e-10
    assert rep.fisher <= rep.fisher_bound + 1e-8
    assert set(rep.checks()) == {"second_law", "tur_main", "tur_tight", "tur_order", "cramer_rao", "fisher"}


def test_explicit_initial_state(clock):
    res = analyze(clock, tau=0.5, initial=np.eye(3) / 3, cfg=IntegratorConfig(h=1e-3))
    np.testing.assert_allclose(res.initial_state, np.eye(3) / 3)
    with pytest.raises(ValueError):
        analyze(clock, initial="thermal")
