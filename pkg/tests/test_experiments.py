import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from amplab import spectral as sp
from amplab.dynamics import h_operator
from amplab.experiments import (StudyConfig, StudyError, fit_slope, run_study, stationary_variances,
                                wasserstein_1d, write_outputs)

FAST = dict(eps_ladder=(0.4, 0.2, 0.1), samples=8, T0=0.2, bootstrap=100)


# --- slope fitting -----------------------------------------------------------------

def test_fit_slope_exact_power_law():
    eps = [0.2, 0.1, 0.05]
    slope, ci = fit_slope(eps, [[e ** 0.5] * 5 for e in eps])
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert ci == pytest.approx((0.5, 0.5), abs=1e-12)


def test_fit_slope_constant_and_scalars():
    slope, ci = fit_slope([0.4, 0.2, 0.1], [2.0, 2.0, 2.0])
    assert slope == pytest.approx(0.0, abs=1e-12) and ci[0] == ci[1]


@pytest.mark.parametrize("eps,values", [([0.2, 0.2, 0.1], [1, 1, 1]), ([0.2, 0.1], [1, 1]),
                                        ([0.2, 0.1, 0.05], [1, 0, 1]), ([0.2, 0.1, 0.05], [[1, -1], 1, 1])])
def test_fit_slope_rejects_degenerate_input(eps, values):
    with pytest.raises(StudyError):
        fit_slope(eps, values)


def test_fit_slope_ignores_nan_samples():
    eps = [0.2, 0.1, 0.05]
    slope, _ = fit_slope(eps, [[e, np.nan] for e in eps])
    assert slope == pytest.approx(1.0)


def test_bootstrap_interval_covers_true_slope():
    rng = np.random.default_rng(5)
    eps = np.array([0.2, 0.1, 0.05])
    hits = 0
    for rep in range(60):
        vals = [e ** 0.5 * (1 + 0.1 * rng.standard_normal(32)) for e in eps]
        _, (lo, hi) = fit_slope(eps, vals, bootstrap=200, seed=rep)
        hits += lo <= 0.5 <= hi
    assert hits / 60 >= 0.85


def test_fit_slope_deterministic():
    vals = [np.linspace(1, 2, 10) * e for e in (0.3, 0.2, 0.1)]
    assert fit_slope([0.3, 0.2, 0.1], vals, seed=3) == fit_slope([0.3, 0.2, 0.1], vals, seed=3)


# --- Wasserstein -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.lists(st.floats(-10, 10), min_size=1, max_size=30))
def test_wasserstein_matches_scipy(x, y):
    assert wasserstein_1d(x, y) == pytest.approx(stats.wasserstein_distance(x, y), rel=1e-9, abs=1e-9)


def test_wasserstein_shift():
    x = np.random.default_rng(0).standard_normal(500)
    assert wasserstein_1d(x, x + 0.3) == pytest.approx(0.3)
    assert wasserstein_1d(x, x) == 0.0


# --- configuration -----------------------------------------------------------------

def test_config_defaults():
    assert StudyConfig(kind="approx").eps_ladder == (0.2, 0.1, 0.05)
    assert StudyConfig(kind="htbounds").eps_ladder == (0.2, 0.1, 0.05, 0.025)
    assert StudyConfig(kind="attract").T0 == 2.0
    assert StudyConfig(kind="linear").T0 == 1.0
    cfg = StudyConfig(kind="linear")
    assert cfg.step(0.05) == pytest.approx(0.25 * 0.05 ** 2)
    assert cfg.step(0.2) == 1e-3


@pytest.mark.parametrize("kw", [dict(kind="nope"), dict(eps_ladder=(0.1, 0.2, 0.05)), dict(samples=4),
                                dict(eps_ladder=(0.2, 0.1, -0.1))])
def test_config_rejects(kw):
    with pytest.raises(StudyError):
        StudyConfig(**kw)


def test_stationary_variances_match_symbols():
    d = sp.make_domain(2 * math.pi, 0.1)
    band = np.arange(d.N_eps - 3, d.N_eps + 4)
    qk = np.ones(2 * d.K + 1)
    v_sh, v_gl = stationary_variances(d, qk, 1.0, band)
    lam = sp.sh_eigenvalues(d)
    assert v_sh == pytest.approx(1 / (-2 * lam[band + d.K]))
    # matched modes: the two variances agree to first order in eps
    assert np.max(np.abs(v_sh / v_gl - 1)) < 0.2
    d2 = sp.make_domain(2 * math.pi, 0.05)
    band2 = np.arange(d2.N_eps - 3, d2.N_eps + 4)
    v2_sh, v2_gl = stationary_variances(d2, np.ones(2 * d2.K + 1), 1.0, band2)
    assert np.max(np.abs(v2_sh / v2_gl - 1)) < np.max(np.abs(v_sh / v_gl - 1))


# --- small studies -----------------------------------------------------------------

def test_linear_study_runs_and_repeats():
    a = run_study(StudyConfig(kind="linear", **FAST))
    b = run_study(StudyConfig(kind="linear", **FAST))
    assert [p["errors"] for p in a.per_eps] == [p["errors"] for p in b.per_eps]
    assert a.slope == b.slope and a.slope_ci == b.slope_ci
    assert all(len(p["errors"]) == 8 for p in a.per_eps)
    assert a.aborts == 0 and a.extras["abort_fraction"] == 0.0


def test_seed_changes_samples():
    a = run_study(StudyConfig(kind="linear", **FAST))
    b = run_study(StudyConfig(kind="linear", seed=7, **FAST))
    assert a.per_eps[0]["errors"] != b.per_eps[0]["errors"]


def test_linear_study_without_noise_or_data_vanishes():
    r = run_study(StudyConfig(kind="linear", noise_scale=0.0, a1_amplitude=0.0, initial_c0=0.0, **FAST))
    errs = np.array([p["errors"] for p in r.per_eps])
    assert np.nanmax(np.abs(errs)) < 1e-12


def test_decoupled_control_shows_no_decay():
    r = run_study(StudyConfig(kind="residual", decoupled=True, **FAST))
    assert not r.passed
    assert r.slope_ci[0] <= 0.1


def test_residual_coupled_decays():
    r = run_study(StudyConfig(kind="residual", **FAST))
    means = [p["mean"] for p in r.per_eps]
    assert means[-1] < means[0]
    assert r.slope > 0


def test_attractivity_small_run():
    r = run_study(StudyConfig(kind="attract", eps_ladder=(0.4, 0.2, 0.1), samples=8, T0=1.0))
    assert r.passed
    assert all(p["median_c0"] <= r.saturation_bound for p in r.per_eps)
    assert all(p["median_c0"] < 10.0 for p in r.per_eps)


def test_ht_bounds_table():
    r = run_study(StudyConfig(kind="htbounds", n_t=31))
    assert [row["eps"] for row in r["per_eps"]] == [0.2, 0.1, 0.05, 0.025]
    # C0 quantity bounded; band-restricted norm bounded
    assert max(r["ratios"]["h1_to_c0"]) < 1.2
    assert max(r["ratios"]["ha_to_halpha_band"]) < 1.2
    assert r["h0_norm"] == 0.0


def test_folded_mode_keeps_operator_norm_order_one():
    # input e_{-2N} is mapped onto the neutral mode e_N, so |lambda| does not shrink with eps
    t = 0.9
    for eps in (0.2, 0.1, 0.05):
        d = sp.make_domain(2 * math.pi, eps)
        lam, _ = h_operator(t, d)
        assert lam[-2 * d.N_eps + d.K_a] == pytest.approx(math.exp(-t), rel=1e-6)


def test_write_outputs_deterministic(tmp_path):
    cfg = StudyConfig(kind="linear", **FAST)
    r = run_study(cfg)
    c1, j1 = write_outputs(r, cfg, str(tmp_path / "a"))
    c2, j2 = write_outputs(run_study(cfg), cfg, str(tmp_path / "b"))
    assert open(c1).read() == open(c2).read()
    d1, d2 = json.load(open(j1)), json.load(open(j2))
    d1.pop("created"), d2.pop("created")
    assert d1 == d2
    assert d1["config"]["seed"] == cfg.seed
    rows = open(c1).read().splitlines()
    assert rows[0] == "eps,sample,error" and len(rows) == 1 + 3 * 8
    assert os.path.basename(c1) == "study_linear.csv"


def test_write_outputs_htbounds(tmp_path):
    cfg = StudyConfig(kind="htbounds", eps_ladder=(0.2, 0.1, 0.05), n_t=11)
    c, j = write_outputs(run_study(cfg), cfg, str(tmp_path))
    assert open(c).read().splitlines()[0] == "eps,ha_to_halpha,ha_to_halpha_band,h1_to_c0,l2_sum"
    assert json.load(open(j))["kind"] == "htbounds"
