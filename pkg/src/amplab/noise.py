"""Noise correlations, seeded Wiener streams, SH/GL coupling and OU series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .spectral import DomainSpec

STREAM_TAGS = {"sh": 0, "gl": 1, "init": 2, "ou": 3, "aux": 4}


class NoiseError(ValueError):
    pass


class NegativeCoefficientError(NoiseError):
    def __init__(self, k: int, value: float):
        super().__init__(f"restricted correlation gives q_k = {value:.3e} < 0 at k = {k}")
        self.k = k
        self.value = value


@dataclass(frozen=True)
class CorrelationSpec:
    """Spatial correlation: Fourier transform qhat, optional physical profile q."""
    kind: str
    qhat: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz_bound: float
    ell: float | None = None
    q: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __call__(self, zeta):
        return self.qhat(np.abs(np.asarray(zeta, dtype=float)))

    def validate(self, zmax: float = 50.0, n: int = 4001) -> None:
        z = np.linspace(-zmax, zmax, n)
        v = self(z)
        if not np.all(np.isfinite(v)):
            raise NoiseError(f"{self.kind}: qhat is not bounded on the sample grid")
        if np.min(v) < 0:
            raise NoiseError(f"{self.kind}: qhat takes negative values")
        if not math.isfinite(self.lipschitz_bound) or self.lipschitz_bound < 0:
            raise NoiseError(f"{self.kind}: Lipschitz bound must be finite")
        slope = np.max(np.abs(np.diff(v) / np.diff(z)))
        if slope > self.lipschitz_bound * (1 + 1e-6) + 1e-12:
            raise NoiseError(f"{self.kind}: sampled slope {slope:.3g} exceeds Lipschitz bound")


def white_noise() -> CorrelationSpec:
    return CorrelationSpec("white", lambda z: np.ones_like(np.asarray(z, float)), 0.0)


def exponential_correlation(ell: float = 1.0) -> CorrelationSpec:
    """qhat = 1/(1 + ell^2 zeta^2), i.e. q(x) = exp(-|x|/ell) / (2 ell)."""
    if ell <= 0:
        raise NoiseError("correlation length must be positive")
    # max of |d/dz| (1+l^2 z^2)^-1 is at z = 1/(sqrt(3) l)
    lip = 3 * math.sqrt(3) * ell / 8
    spec = CorrelationSpec(
        "exponential",
        lambda z: 1.0 / (1.0 + (ell * np.asarray(z, float)) ** 2),
        lip,
        ell=ell,
        q=lambda x: np.exp(-np.abs(x) / ell) / (2 * ell),
    )
    spec.validate()
    return spec


def table_correlation(zeta: Sequence[float], values: Sequence[float],
                      q: Callable | None = None) -> CorrelationSpec:
    """Linear interpolation in |zeta|; constant beyond the last node."""
    z = np.asarray(zeta, float)
    v = np.asarray(values, float)
    if z.ndim != 1 or z.size < 2 or z.shape != v.shape:
        raise NoiseError("table needs two equal-length columns with >= 2 rows")
    if np.any(np.diff(z) <= 0) or z[0] < 0:
        raise NoiseError("table zeta column must be nonnegative and increasing")
    if np.any(v < 0):
        raise NoiseError("table qhat column has negative entries")
    lip = float(np.max(np.abs(np.diff(v) / np.diff(z))))
    spec = CorrelationSpec("table", lambda s: np.interp(np.abs(s), z, v), lip, q=q)
    spec.validate(zmax=max(50.0, float(z[-1])))
    return spec


def load_correlation_table(path: str) -> CorrelationSpec:
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise NoiseError(f"{path}: expected two columns (zeta, qhat)")
    return table_correlation(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class NoiseCoefficients:
    qk: np.ndarray
    construction: str
    domain: DomainSpec = field(repr=False)
    deviation: float = 0.0

    @property
    def K(self) -> int:
        return (self.qk.size - 1) // 2

    @property
    def deviation_constant(self) -> float:
        return self.deviation / self.domain.eps


def _restricted_coefficient(q: Callable, X: float, w: float) -> float:
    # q even: integral over [-X, X] of q(x) cos(w x)
    if w == 0:
        val, _ = integrate.quad(q, 0.0, X, limit=200)
    else:
        val, _ = integrate.quad(q, 0.0, X, weight="cos", wvar=w, limit=200)
    return 2.0 * val


def build_noise_coefficients(corr: CorrelationSpec, domain: DomainSpec,
                             construction: str = "sampling", K: int | None = None) -> NoiseCoefficients:
    K = domain.K if K is None else K
    k = np.arange(-K, K + 1)
    z = k * math.pi * domain.eps / domain.L
    sampled = corr(z)
    if construction == "sampling":
        qk = np.array(sampled, dtype=float)
    elif construction == "restriction":
        if corr.kind == "white":
            qk = np.ones(k.size)
        elif corr.q is None:
            raise NoiseError(f"{corr.kind}: restriction needs the physical correlation q(x)")
        else:
            X = domain.L / domain.eps
            half = np.array([_restricted_coefficient(corr.q, X, float(w)) for w in z[K:]])
            for kk, v in enumerate(half):
                if v < 0:
                    raise NegativeCoefficientError(kk, float(v))
            qk = np.concatenate([half[:0:-1], half])
    else:
        raise NoiseError(f"unknown construction {construction!r}")
    dev = float(np.max(np.abs(np.sqrt(qk) - np.sqrt(sampled))))
    qk.setflags(write=False)
    return NoiseCoefficients(qk, construction, domain, dev)


class WienerStream:
    """Seeded Gaussian source; block-buffered but sequence-identical to unbuffered draws."""

    def __init__(self, seed: int, stream_id: Sequence[int] = (), block: int = 1 << 15):
        self.seed = int(seed)
        self.stream_id = tuple(int(s) for s in stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._block = int(block)
        self._buf = np.empty(0)
        self._pos = 0

    @classmethod
    def for_sample(cls, seed: int, sample: int, tag: str, level: int = 0) -> "WienerStream":
        return cls(seed, (level, sample, STREAM_TAGS[tag]))

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos == self._buf.size:
                self._buf = self._gen.standard_normal(max(self._block, n - filled))
                self._pos = 0
            take = min(n - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def real_increments(self, K: int, h: float) -> np.ndarray:
        """Increments over k = -K..K of a real field: mirrored, real zero mode of variance h."""
        z = self.normals(2 * K + 1)
        pos = math.sqrt(h / 2) * (z[1:K + 1] + 1j * z[K + 1:])
        out = np.empty(2 * K + 1, complex)
        out[K] = math.sqrt(h) * z[0]
        out[K + 1:] = pos
        out[:K] = np.conj(pos[::-1])
        return out

    def complex_increments(self, K: int, h: float) -> np.ndarray:
        """Independent complex increments with E|dW|^2 = h, E dW^2 = 0."""
        z = self.normals(2 * (2 * K + 1))
        n = 2 * K + 1
        return math.sqrt(h / 2) * (z[:n] + 1j * z[n:])

    def complex_normals(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        z = self.normals(2 * n)
        return ((z[:n] + 1j * z[n:]) / math.sqrt(2)).reshape(shape)


def sample_increments(stream: WienerStream, domain: DomainSpec, h: float, space: str = "u") -> np.ndarray:
    if h <= 0:
        raise NoiseError("time step must be positive")
    if space == "u":
        return stream.real_increments(domain.K, h)
    return stream.complex_increments(domain.K_a, h)


@dataclass(frozen=True)
class CouplingMap:
    """Which GL modes share increments with SH modes, and the noise amplitudes."""
    shift: int
    sh_amplitude: np.ndarray
    gl_amplitude: float
    matched_band: np.ndarray   # u-modes k > 0 in the band around the carrier
    K: int
    K_a: int
    decoupled: bool = False

    def gl_matched_mask(self) -> np.ndarray:
        m = np.arange(-self.K_a, self.K_a + 1)
        mask = np.isin(m + self.shift, self.matched_band)
        if self.decoupled:
            mask[:] = False
        return mask


def matched_band(domain: DomainSpec, zeta: float = 1.0, r: float = 0.5) -> np.ndarray:
    k = np.arange(1, domain.K + 1)
    return k[np.abs(k * domain.eps * math.pi / domain.L - zeta) < r]


def make_coupling(domain: DomainSpec, coeffs: NoiseCoefficients, corr: CorrelationSpec,
                  r: float = 0.5, decoupled: bool = False) -> CouplingMap:
    if coeffs.K != domain.K:
        raise NoiseError("noise coefficients and domain cutoffs differ")
    if domain.K_a + domain.N_eps > domain.K:
        raise NoiseError(f"coupling needs K >= {domain.K_a + domain.N_eps}")
    band = matched_band(domain, 1.0, r)
    if band.size and band.min() <= 0:
        raise NoiseError("matched band must exclude the zero mode")
    amp = np.sqrt(coeffs.qk)
    amp.setflags(write=False)
    band.setflags(write=False)
    return CouplingMap(domain.N_eps, amp, float(math.sqrt(corr(1.0))), band,
                       domain.K, domain.K_a, decoupled)


def coupled_increments(stream: WienerStream, offband: WienerStream, domain: DomainSpec,
                       coupling: CouplingMap, h: float) -> tuple[np.ndarray, np.ndarray]:
    """SH gets amp_k dW_k; GL mode m gets gl_amp dW_{m+N} on the band, fresh noise elsewhere."""
    if coupling.K != domain.K or coupling.K_a != domain.K_a:
        raise NoiseError("coupling map does not match the domain cutoff")
    dW = stream.real_increments(domain.K, h)
    fresh = offband.complex_increments(domain.K_a, h)
    mask = coupling.gl_matched_mask()
    m = np.arange(-domain.K_a, domain.K_a + 1)
    shared = dW[np.clip(m + coupling.shift + domain.K, 0, 2 * domain.K)]
    gl = np.where(mask, shared, fresh) * coupling.gl_amplitude
    return coupling.sh_amplitude * dW, gl


class CoupledNoiseBatch:
    """Per-sample stream pairs for a batch of coupled trajectories."""

    def __init__(self, seed: int, level: int, samples: Sequence[int], domain: DomainSpec,
                 coupling: CouplingMap):
        self.domain = domain
        self.coupling = coupling
        self.sh = [WienerStream.for_sample(seed, s, "sh", level) for s in samples]
        self.gl = [WienerStream.for_sample(seed, s, "gl", level) for s in samples]
        m = np.arange(-domain.K_a, domain.K_a + 1)
        self._mask = coupling.gl_matched_mask()
        self._idx = np.clip(m + coupling.shift + domain.K, 0, 2 * domain.K)

    def __call__(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        K, Ka = self.domain.K, self.domain.K_a
        dW = np.stack([s.real_increments(K, h) for s in self.sh])
        fresh = np.stack([s.complex_increments(Ka, h) for s in self.gl])
        gl = np.where(self._mask, dW[:, self._idx], fresh) * self.coupling.gl_amplitude
        return dW * self.coupling.sh_amplitude, gl


# --- Ornstein-Uhlenbeck series ---------------------------------------------------

def ou_coefficients(gamma, T: float, n_terms: int) -> np.ndarray:
    """a_n for n = -n_terms..n_terms (broadcast over gamma along a leading axis).

    The stationary part sum_n a_n xi_n exp(i pi n t / T) has covariance
    exp(-gamma |t-s|) / (2 gamma) for |t - s| <= T.
    """
    g = np.asarray(gamma, float)[..., None]
    if np.any(g <= 0):
        raise NoiseError("OU series needs a positive decay rate")
    n = np.arange(-n_terms, n_terms + 1)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    return np.sqrt(0.5 * T * (1 - sign * np.exp(-g * T)) / ((g * T) ** 2 + (math.pi * n) ** 2))


def ou_series_sample(gamma, T: float, n_terms: int, stream: WienerStream,
                     times: np.ndarray, n_samples: int = 1, chunk: int = 1000) -> np.ndarray:
    """Paths a(t) = sum_n a_n xi_n (exp(i pi n t/T) - exp(-gamma t)); shape (n_samples, len(times)).

    A sequence of rates reuses the same xi_n for every rate and returns shape
    (len(gamma), n_samples, len(times)).
    """
    if n_terms < 1:
        raise NoiseError("n_terms must be >= 1")
    times = np.asarray(times, float)
    gs = np.atleast_1d(np.asarray(gamma, float))
    a = ou_coefficients(gs, T, n_terms)                          # (ng, 2n+1)
    n = np.arange(-n_terms, n_terms + 1)
    wave = np.exp(1j * math.pi * np.outer(n, times) / T)
    basis = np.concatenate([a[i][:, None] * (wave - np.exp(-g * times)[None, :])
                            for i, g in enumerate(gs)], axis=1)
    out = np.empty((n_samples, basis.shape[1]), complex)
    for lo in range(0, n_samples, chunk):
        hi = min(n_samples, lo + chunk)
        xi = stream.complex_normals((hi - lo, n.size))
        out[lo:hi] = xi @ basis
    out = out.reshape(n_samples, gs.size, times.size).transpose(1, 0, 2)
    return out if np.ndim(gamma) else out[0]


def gaussian_series_stats(sup_norms, lipschitz, delta: float) -> tuple[float, float]:
    s = np.asarray(sup_norms, float)
    lip = np.asarray(lipschitz, float)
    if s.size == 0:
        return 0.0, 0.0
    S1 = math.sqrt(float(np.sum(s ** 2)))
    S2 = math.sqrt(float(np.sum(s ** (2 - delta) * lip ** delta)))
    return S1, S2


def k3_family_stats(domain: DomainSpec, coeffs: NoiseCoefficients, gamma_k: np.ndarray,
                    T: float, R: float, n_terms: int, delta: float, nt: int = 65) -> tuple[float, float]:
    """S1, S2 of f_{n,k} = sqrt(q_k) a_{n,k} e_k(x)(exp(i pi n t/T) - exp(-gamma_k t)) over |k eps pi/L| >= R."""
    K = domain.K
    k = np.arange(-K, K + 1)
    sel = np.abs(k * domain.eps * math.pi / domain.L) >= R
    if not np.any(sel):
        return 0.0, 0.0
    ks, g, q = k[sel], np.asarray(gamma_k)[sel], coeffs.qk[sel]
    a = ou_coefficients(g, T, n_terms)                          # (nk, 2n+1)
    n = np.arange(-n_terms, n_terms + 1)
    t = np.linspace(0, T, nt)
    # sup over t of |exp(i pi n t/T) - exp(-g t)|, evaluated on a grid
    ph = np.exp(1j * math.pi * np.outer(n, t) / T)              # (2n+1, nt)
    sups = np.empty_like(a)
    for i, gi in enumerate(g):
        sups[i] = np.max(np.abs(ph - np.exp(-gi * t)[None, :]), axis=1)
    base = np.sqrt(q)[:, None] * a / math.sqrt(2 * domain.L)
    sup_f = base * sups
    lip = base * (2 * math.pi * np.abs(ks)[:, None] / domain.L + math.pi * np.abs(n)[None, :] / T + g[:, None])
    return gaussian_series_stats(sup_f.ravel(), lip.ravel(), delta)
