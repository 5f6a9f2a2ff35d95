import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amplab import noise as nz
from amplab import spectral as sp
from amplab.derivation import gamma_k, parse_symbol


# --- correlations and coefficients --------------------------------------------------

def test_white_noise_coefficients():
    d = sp.make_domain(2 * math.pi, 0.1)
    c = nz.build_noise_coefficients(nz.white_noise(), d)
    assert np.all(c.qk == 1.0) and c.deviation == 0.0
    r = nz.build_noise_coefficients(nz.white_noise(), d, "restriction")
    assert np.all(r.qk == 1.0) and r.deviation == 0.0


def test_exponential_sampling_is_exact():
    d = sp.make_domain(math.pi, 0.2)
    c = nz.build_noise_coefficients(nz.exponential_correlation(1.0), d)
    k = np.arange(-d.K, d.K + 1)
    np.testing.assert_allclose(c.qk, 1 / (1 + (k * math.pi * d.eps / d.L) ** 2), rtol=1e-15)
    assert c.deviation == 0.0
    np.testing.assert_array_equal(c.qk, c.qk[::-1])


def test_restriction_matches_closed_form():
    # periodic restriction of exp(-|x|/l)/(2l) to [-L/eps, L/eps]
    L, eps, ell = math.pi, 0.5, 1.0
    d = sp.make_domain(L, eps, 32)
    c = nz.build_noise_coefficients(nz.exponential_correlation(ell), d, "restriction")
    k = np.arange(-32, 33)
    w = k * math.pi * eps / L
    expect = (1 - (-1.0) ** k * math.exp(-L / (eps * ell))) / (1 + ell ** 2 * w ** 2)
    np.testing.assert_allclose(c.qk, expect, rtol=1e-9, atol=1e-12)


def test_restriction_deviation_is_order_eps():
    ratios = []
    for eps in (0.5, 0.25, 0.125):
        d = sp.make_domain(math.pi, eps, 32)
        c = nz.build_noise_coefficients(nz.exponential_correlation(1.0), d, "restriction")
        ratios.append(c.deviation_constant)
    assert max(ratios) < 1.0
    assert ratios[-1] <= ratios[0]


def test_restriction_reports_negative_coefficient():
    # sinc^2 has a triangular transform; cutting it off at a finite length breaks positivity
    corr = nz.table_correlation([0.0, 2.0, 3.0], [1.0, 0.0, 0.0], q=lambda x: np.sinc(x / np.pi) ** 2)
    d = sp.make_domain(math.pi, 0.5, 32)
    with pytest.raises(nz.NegativeCoefficientError) as info:
        nz.build_noise_coefficients(corr, d, "restriction")
    assert info.value.k == 5 and info.value.value < 0


def test_restriction_needs_physical_profile():
    d = sp.make_domain(math.pi, 0.5, 32)
    with pytest.raises(nz.NoiseError, match="q\\(x\\)"):
        nz.build_noise_coefficients(nz.table_correlation([0, 1], [1, 0.5]), d, "restriction")


def test_correlation_validation():
    with pytest.raises(nz.NoiseError):
        nz.table_correlation([0, 1, 2], [1, -0.1, 0])
    with pytest.raises(nz.NoiseError):
        nz.exponential_correlation(0.0)
    e = nz.exponential_correlation(2.0)
    z = np.linspace(-5, 5, 11)
    np.testing.assert_array_equal(e(z), e(-z))


def test_table_file_round_trip(tmp_path):
    p = tmp_path / "qhat.txt"
    p.write_text("0 1\n1 0.5\n2 0.25\n")
    c = nz.load_correlation_table(str(p))
    assert c(1.5) == pytest.approx(0.375)
    assert c(-0.5) == pytest.approx(0.75)
    assert c(10.0) == pytest.approx(0.25)


# --- streams -------------------------------------------------------------------------

def test_stream_is_deterministic_and_block_invariant():
    a = nz.WienerStream(7, (1, 2, 3), block=5)
    b = nz.WienerStream(7, (1, 2, 3), block=1 << 15)
    x = np.concatenate([a.normals(3), a.normals(11), a.normals(1)])
    np.testing.assert_array_equal(x, b.normals(15))
    c = nz.WienerStream(7, (1, 2, 4))
    assert not np.array_equal(c.normals(15), x)


def test_real_increments_moments():
    d = sp.make_domain(2.0, 0.5, 6)
    s = nz.WienerStream(11)
    h = 0.01
    draws = np.array([nz.sample_increments(s, d, h) for _ in range(100_000)])
    K = d.K
    # mirror is exact
    assert np.max(np.abs(draws[:, ::-1] - np.conj(draws))) == 0.0
    assert np.all(draws[:, K].imag == 0)
    for k in (0, 1, 4):
        z = draws[:, K + k]
        m2 = np.abs(z) ** 2
        assert abs(m2.mean() - h) < 3 * m2.std() / math.sqrt(m2.size)
        if k:
            sq = z * z
            se = np.abs(sq).std() / math.sqrt(sq.size)
            assert abs(sq.mean()) < 3 * math.sqrt(2) * se


def test_complex_increments_moments():
    s = nz.WienerStream(5)
    h = 0.02
    z = np.array([s.complex_increments(2, h) for _ in range(50_000)])
    m2 = np.abs(z) ** 2
    np.testing.assert_array_less(np.abs(m2.mean(0) - h), 3 * m2.std(0) / math.sqrt(len(z)))
    assert np.max(np.abs((z * z).mean(0))) < 4 * h / math.sqrt(len(z))


def test_complex_normals_unit_modulus():
    z = nz.WienerStream(0).complex_normals((200_000,))
    assert np.mean(np.abs(z) ** 2) == pytest.approx(1.0, abs=0.01)


def test_real_noise_reproduces_delta_covariance():
    # sum_k dW_k e_k(x) dW_k e_k(y): white noise needs E u(x) u(y) = h delta_K(x - y)
    L, K, h = 1.5, 5, 0.1
    d = sp.make_domain(L, 0.5, K)
    s = nz.WienerStream(2)
    g = np.array([sp.to_grid(nz.sample_increments(s, d, h), L, 2 * K + 1, real=True)
                  for _ in range(40_000)])
    cov = g.T @ g / len(g)
    # discrete delta with cell size 2L/M has height M/(2L)
    M = 2 * K + 1
    np.testing.assert_allclose(cov, h * M / (2 * L) * np.eye(M), atol=0.05 * h * M / (2 * L))


# --- coupling -------------------------------------------------------------------------

def _coupling(eps=0.1, corr=None, decoupled=False):
    d = sp.make_domain(2 * math.pi, eps)
    corr = corr or nz.white_noise()
    c = nz.build_noise_coefficients(corr, d)
    return d, nz.make_coupling(d, c, corr, decoupled=decoupled)


def test_coupling_carrier_mode_shares_increment():
    d, cm = _coupling()
    a, b = nz.WienerStream(1, (0,)), nz.WienerStream(1, (1,))
    for _ in range(5):
        sh, gl = nz.coupled_increments(a, b, d, cm, 1e-3)
        assert sh[d.K + d.N_eps] == gl[d.K_a]


@pytest.mark.parametrize("corr", [nz.white_noise(), nz.exponential_correlation(0.7)], ids=["white", "exp"])
def test_coupling_matched_band_shares_increments(corr):
    d, cm = _coupling(corr=corr)
    a, b = nz.WienerStream(1, (0,)), nz.WienerStream(1, (1,))
    band = cm.matched_band
    mask = cm.gl_matched_mask()
    m = np.arange(-d.K_a, d.K_a + 1)
    assert set(m[mask] + d.N_eps) == set(band)
    for _ in range(3):
        sh, gl = nz.coupled_increments(a, b, d, cm, 1e-3)
        x = sh[band + d.K] / cm.sh_amplitude[band + d.K]
        y = gl[band - d.N_eps + d.K_a] / cm.gl_amplitude
        if corr.kind == "white":
            np.testing.assert_array_equal(x, y)
        else:
            # one rounding in each amplitude product
            np.testing.assert_allclose(x, y, rtol=4 * np.finfo(float).eps, atol=0)


def test_coupled_mode_correlation():
    d, cm = _coupling()
    a, b = nz.WienerStream(3, (0,)), nz.WienerStream(3, (1,))
    pairs = [nz.coupled_increments(a, b, d, cm, 1.0) for _ in range(10_000)]
    sh = np.array([p[0] for p in pairs])
    gl = np.array([p[1] for p in pairs])
    x, y = sh[:, d.K + d.N_eps + 1], gl[:, d.K_a + 1]
    corr = np.vdot(y, x).real / math.sqrt(np.vdot(x, x).real * np.vdot(y, y).real)
    assert corr == pytest.approx(1.0, abs=1e-12)
    # a mode far above the band against the carrier amplitude mode
    far = sh[:, d.K + 3 * d.N_eps]
    z = gl[:, d.K_a]
    c = np.vdot(z, far) / len(z)
    assert abs(c) < 3 * math.sqrt(2) / math.sqrt(len(z))


def test_decoupled_map_shares_nothing():
    d, cm = _coupling(decoupled=True)
    assert not cm.gl_matched_mask().any()
    a, b = nz.WienerStream(1, (0,)), nz.WienerStream(1, (1,))
    sh, gl = nz.coupled_increments(a, b, d, cm, 1e-3)
    assert sh[d.K + d.N_eps] != gl[d.K_a]


def test_band_excludes_zero_and_shift_injective():
    for eps in (0.3, 0.2, 0.1, 0.05):
        d, cm = _coupling(eps)
        assert cm.matched_band.min() > 0
        m = np.arange(-d.K_a, d.K_a + 1)
        assert np.unique(m + cm.shift).size == m.size


def test_batch_matches_single_streams():
    d, cm = _coupling(0.2)
    batch = nz.CoupledNoiseBatch(9, 2, [0, 5], d, cm)
    sh_b, gl_b = batch(1e-3)
    a = nz.WienerStream.for_sample(9, 5, "sh", 2)
    b = nz.WienerStream.for_sample(9, 5, "gl", 2)
    sh, gl = nz.coupled_increments(a, b, d, cm, 1e-3)
    np.testing.assert_array_equal(sh_b[1], sh)
    np.testing.assert_array_equal(gl_b[1], gl)


def test_cutoff_mismatch_rejected():
    d, cm = _coupling(0.2)
    other = sp.make_domain(2 * math.pi, 0.2, d.K + 2)
    with pytest.raises(nz.NoiseError):
        nz.coupled_increments(nz.WienerStream(0), nz.WienerStream(1), other, cm, 1e-3)


# --- OU series --------------------------------------------------------------------

def test_ou_series_starts_at_zero():
    s = nz.WienerStream(4)
    for n in (1, 10, 300):
        a = nz.ou_series_sample(1.0, 1.0, n, s, np.array([0.0, 0.3]), n_samples=20)
        assert np.all(a[:, 0] == 0)


def test_ou_stationary_part_matches_kernel():
    # sum_n a_n^2 exp(i pi n z / T) is the Fourier series of exp(-gamma|z|)/(2 gamma)
    T, g = 1.0, 1.3
    a = nz.ou_coefficients(g, T, 20000)
    n = np.arange(-20000, 20001)
    for z in (0.0, 0.2, 0.7, 1.0):
        series = np.sum(a ** 2 * np.cos(math.pi * n * z / T))
        assert series == pytest.approx(math.exp(-g * z) / (2 * g), abs=2e-5)


def test_ou_coefficient_decay():
    for g in (0.5, 1.0, 4.0):
        a = nz.ou_coefficients(g, 2.0, 500)
        n = np.arange(-500, 501)
        assert np.max(a * (1 + np.abs(n))) < 1.0


def test_ou_rejects_nonpositive_rate():
    with pytest.raises(nz.NoiseError):
        nz.ou_coefficients(0.0, 1.0, 5)
    with pytest.raises(nz.NoiseError):
        nz.ou_series_sample(1.0, 1.0, 0, nz.WienerStream(0), np.zeros(1))


def test_ou_variance_monte_carlo():
    s = nz.WienerStream(8)
    t = np.array([0.3, 1.0])
    a = nz.ou_series_sample(1.0, 1.0, 400, s, t, n_samples=20_000)
    var = np.mean(np.abs(a) ** 2, axis=0)
    se = np.std(np.abs(a) ** 2, axis=0) / math.sqrt(len(a))
    expect = (1 - np.exp(-2 * t)) / 2
    np.testing.assert_array_less(np.abs(var - expect), 4 * se + 2e-3)


def test_ou_truncation_error_shrinks():
    # exact covariance of the truncated series, against the closed form
    T, g, t, s = 1.0, 1.0, 0.5, 1.0
    target = (math.exp(-g * abs(t - s)) - math.exp(-g * (t + s))) / (2 * g)
    errs = []
    for N in (10, 100, 1000):
        a = nz.ou_coefficients(g, T, N)
        n = np.arange(-N, N + 1)
        ft = np.exp(1j * math.pi * n * t / T) - math.exp(-g * t)
        fs = np.exp(1j * math.pi * n * s / T) - math.exp(-g * s)
        errs.append(abs(np.sum(a ** 2 * ft * np.conj(fs)) - target))
    assert errs[0] > errs[1] > errs[2]


# --- series statistics -------------------------------------------------------------

def test_gaussian_series_stats_examples():
    assert nz.gaussian_series_stats([2.0], [3.0], 1.0) == pytest.approx((2.0, math.sqrt(6)))
    assert nz.gaussian_series_stats([], [], 0.5) == (0.0, 0.0)


def test_k3_family_finite_and_decreasing():
    P = parse_symbol("(1 - z^2)^2")
    vals = []
    for eps in (0.2, 0.1, 0.05):
        d = sp.make_domain(2 * math.pi, eps)
        c = nz.build_noise_coefficients(nz.white_noise(), d)
        vals.append(nz.k3_family_stats(d, c, gamma_k(P, d), 1.0, 3.0, 200, 0.5))
    assert all(math.isfinite(v) for pair in vals for v in pair)
    assert vals[0][1] > vals[1][1] > vals[2][1]
    assert vals[0][0] > vals[1][0] > vals[2][0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), sample=st.integers(0, 1000))
def test_sample_streams_reproducible(seed, sample):
    a = nz.WienerStream.for_sample(seed, sample, "gl", 1).complex_increments(3, 0.1)
    b = nz.WienerStream.for_sample(seed, sample, "gl", 1).complex_increments(3, 0.1)
    np.testing.assert_array_equal(a, b)
