"""Domain geometry, Fourier coefficients, projections, norms and linear symbols.

Fields on [-L, L] are stored as dense coefficient arrays over k = -K..K in the
orthonormal basis e_k(x) = exp(i k pi x / L) / sqrt(2L); array index k + K.
Physical grids use FFT ordering, x_j = 2 L j / M folded into [-L, L).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

U_SPACE = "u"
A_SPACE = "a"

_SNAP = 1e-12


class SpectralError(ValueError):
    pass


def nearest_integer(x: float) -> int:
    """Nearest integer with halves rounded away from zero, so [-x] = -[x]."""
    if x < 0:
        return -nearest_integer(-x)
    n = math.floor(x + 0.5)
    if abs(x - round(x)) < _SNAP * max(1.0, x):
        n = round(x)
    return int(n)


@dataclass(frozen=True)
class DomainSpec:
    L: float
    eps: float
    K: int
    N_eps: int
    delta_eps: float
    rho_eps: float

    @property
    def K_a(self) -> int:
        """Cutoff of amplitude fields; their projection then fits in [-K, K]."""
        return self.K - self.N_eps

    @property
    def n_modes(self) -> int:
        return 2 * self.K + 1

    def wavenumbers(self, K: int | None = None) -> np.ndarray:
        K = self.K if K is None else K
        return np.arange(-K, K + 1)


def make_domain(L: float, eps: float, K: int | None = None, c: float = 3.0) -> DomainSpec:
    """Build the rescaled domain. K defaults to ceil(c L / eps)."""
    if not L > 0:
        raise SpectralError(f"L must be positive, got {L}")
    if not 0 < eps <= 1:
        raise SpectralError(f"eps must lie in (0, 1], got {eps}")
    x = L / (eps * math.pi)
    if K is None:
        K = math.ceil(c * L / eps)
    kmin = 2 * math.ceil(x - _SNAP * max(1.0, x))
    if K < kmin:
        raise SpectralError(f"K={K} too small for L={L}, eps={eps}: need K >= {kmin}")
    N = nearest_integer(x)
    if abs(x - N) < _SNAP * max(1.0, x):
        delta = 0.0
    else:
        delta = 1.0 / eps - math.pi * N / L
    rho = N * math.pi * eps / L
    return DomainSpec(float(L), float(eps), int(K), N, delta, rho)


@dataclass(frozen=True)
class FourierField:
    coeffs: np.ndarray
    space: str
    domain: DomainSpec = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 == 0:
            raise SpectralError("coefficient array must be 1-d with odd length 2K+1")
        if self.space not in (U_SPACE, A_SPACE):
            raise SpectralError(f"unknown space tag {self.space!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return (self.coeffs.size - 1) // 2

    def mode(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0j
        return complex(self.coeffs[k + self.K])

    def reality_defect(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(c[::-1] - np.conj(c)))) if c.size else 0.0

    def __add__(self, other: FourierField) -> FourierField:
        _check_compatible(self, other)
        return FourierField(self.coeffs + other.coeffs, self.space, self.domain)

    def __sub__(self, other: FourierField) -> FourierField:
        _check_compatible(self, other)
        return FourierField(self.coeffs - other.coeffs, self.space, self.domain)

    def scale(self, s: complex) -> FourierField:
        return FourierField(self.coeffs * s, self.space, self.domain)


def _check_compatible(f: FourierField, g: FourierField):
    if f.space != g.space or f.K != g.K:
        raise SpectralError("fields live in different spaces or cutoffs")


def zero_field(domain: DomainSpec, space: str = U_SPACE) -> FourierField:
    K = domain.K if space == U_SPACE else domain.K_a
    return FourierField(np.zeros(2 * K + 1, complex), space, domain)


def unit_mode(domain: DomainSpec, k: int, space: str = A_SPACE) -> FourierField:
    K = domain.K if space == U_SPACE else domain.K_a
    c = np.zeros(2 * K + 1, complex)
    c[k + K] = 1.0
    return FourierField(c, space, domain)


# --- coefficient-level kernels (batched over leading axes) -----------------

def pi_coeffs(A: np.ndarray, N: int, K: int) -> np.ndarray:
    """u_k = A_{k-N} + conj(A_{-k-N}) for k in [-K, K]; A has cutoff <= K - N."""
    Ka = (A.shape[-1] - 1) // 2
    if Ka + N > K:
        raise SpectralError(f"projection needs K >= {Ka + N}, have K={K}")
    u = np.zeros(A.shape[:-1] + (2 * K + 1,), complex)
    # mode m lands at k = m + N (index m + N + K)
    u[..., K + N - Ka:K + N + Ka + 1] += A
    # conj(A_m) lands at k = -(m + N): reversed block
    u[..., K - N - Ka:K - N + Ka + 1] += np.conj(A[..., ::-1])
    return u


def iota_coeffs(u: np.ndarray, N: int, K: int) -> np.ndarray:
    """Keep k > 0 and half the zero mode, shift by -N; result has cutoff K - N."""
    Ka = K - N
    if N > Ka:
        raise SpectralError(f"injection needs K >= {2 * N}, have K={K}")
    A = np.zeros(u.shape[:-1] + (2 * Ka + 1,), complex)
    # u_k (k = 0..K) goes to m = k - N, index m + Ka = k - N + Ka
    A[..., Ka - N:Ka - N + K + 1] = u[..., K:]
    A[..., Ka - N] *= 0.5
    return A


def project_pi(A: FourierField, domain: DomainSpec | None = None) -> FourierField:
    if A.space != A_SPACE:
        raise SpectralError("project_pi expects an a-space field")
    d = domain or A.domain
    return FourierField(pi_coeffs(A.coeffs, d.N_eps, d.K), U_SPACE, d)


def inject_iota(u: FourierField, tol: float = 1e-10) -> FourierField:
    if u.space != U_SPACE:
        raise SpectralError("inject_iota expects a u-space field")
    scale = max(1.0, float(np.max(np.abs(u.coeffs))) if u.coeffs.size else 1.0)
    if u.reality_defect() > tol * scale:
        raise SpectralError(f"field is not real (mirror defect {u.reality_defect():.3e})")
    d = u.domain
    return FourierField(iota_coeffs(u.coeffs, d.N_eps, u.K), A_SPACE, d)


def band_project(f: FourierField, cutoff: float, complement: bool = False) -> FourierField:
    if not cutoff > 0:
        raise SpectralError("cutoff must be positive")
    k = np.arange(-f.K, f.K + 1)
    keep = np.abs(k) <= cutoff
    if complement:
        keep = ~keep
    return FourierField(np.where(keep, f.coeffs, 0), f.space, f.domain)


# --- transforms -------------------------------------------------------------

def grid_points(L: float, M: int) -> np.ndarray:
    """Points 2 L j / M in FFT order, folded into [-L, L)."""
    x = 2.0 * L * np.arange(M) / M
    return np.where(x >= L, x - 2 * L, x)


def to_grid(c: np.ndarray, L: float, M: int, real: bool = False, workers: int | None = None) -> np.ndarray:
    """Evaluate coefficient arrays (..., 2K+1) on M grid points."""
    K = (c.shape[-1] - 1) // 2
    if M < 2 * K + 1:
        raise SpectralError(f"grid of {M} points cannot carry cutoff {K}")
    scale = M / math.sqrt(2 * L)
    if real:
        return sfft.irfft(c[..., K:], n=M, axis=-1, workers=workers) * scale
    b = np.zeros(c.shape[:-1] + (M,), complex)
    b[..., :K + 1] = c[..., K:]
    if K:
        b[..., M - K:] = c[..., :K]
    return sfft.ifft(b, axis=-1, workers=workers) * scale


def from_grid(f: np.ndarray, L: float, K: int, workers: int | None = None) -> np.ndarray:
    """Coefficients k = -K..K of grid values (..., M); exact for band-limited data."""
    M = f.shape[-1]
    if M < 2 * K + 1:
        raise SpectralError(f"grid of {M} points cannot resolve cutoff {K}")
    scale = math.sqrt(2 * L) / M
    if np.isrealobj(f):
        h = sfft.rfft(f, axis=-1, workers=workers)[..., :K + 1] * scale
        out = np.empty(f.shape[:-1] + (2 * K + 1,), complex)
        out[..., K:] = h
        out[..., :K] = np.conj(h[..., :0:-1])
        return out
    g = sfft.fft(f, axis=-1, workers=workers) * scale
    return np.concatenate([g[..., M - K:], g[..., :K + 1]], axis=-1)


def inverse_transform(f: FourierField, M: int | None = None) -> np.ndarray:
    M = f.coeffs.size if M is None else M
    return to_grid(f.coeffs, f.domain.L, M, real=(f.space == U_SPACE))


def forward_transform(values: np.ndarray, domain: DomainSpec, space: str = U_SPACE,
                      K: int | None = None) -> FourierField:
    if K is None:
        K = domain.K if space == U_SPACE else domain.K_a
    values = np.asarray(values)
    if space == U_SPACE:
        values = values.real if np.iscomplexobj(values) else values
    else:
        values = values.astype(complex)
    return FourierField(from_grid(values, domain.L, K), space, domain)


def pad_size(K: int, factor: int = 2) -> int:
    """Grid size for dealiased cubes: at least factor * (2K+1) and >= 4K+1."""
    return sfft.next_fast_len(max(factor * (2 * K + 1), 4 * K + 1))


def cube(c: np.ndarray, L: float, real: bool, M: int | None = None, workers=None) -> np.ndarray:
    """Dealiased u^3 (real) or |A|^2 A (complex), truncated back to the input cutoff."""
    K = (c.shape[-1] - 1) // 2
    M = pad_size(K) if M is None else M
    g = to_grid(c, L, M, real=real, workers=workers)
    g = g * g * g if real else (g.real ** 2 + g.imag ** 2) * g
    return from_grid(g, L, K, workers=workers)


# --- norms -------------------------------------------------------------------

def sobolev_weights(K: int, alpha: float) -> np.ndarray:
    return (1.0 + np.abs(np.arange(-K, K + 1))) ** (2 * alpha)


def norm(f: FourierField, kind: str = "L2", *, alpha: float = 0.0, p: float = 2.0,
         oversample: int = 4) -> float:
    """L2 (half-weighted in u-space), H (order alpha), C0 or Lp norms."""
    c = f.coeffs
    if kind == "L2":
        s = float(np.sum(np.abs(c) ** 2))
        return math.sqrt(0.5 * s if f.space == U_SPACE else s)
    if kind == "H":
        if f.space == U_SPACE:
            c = iota_coeffs(c, f.domain.N_eps, f.K)
        K = (c.size - 1) // 2
        return math.sqrt(float(np.sum(sobolev_weights(K, alpha) * np.abs(c) ** 2)))
    M = oversample * c.size
    g = np.abs(to_grid(c, f.domain.L, M, real=(f.space == U_SPACE)))
    if kind == "C0":
        return float(np.max(g))
    if kind == "Lp":
        return float((2 * f.domain.L / M * np.sum(g ** p)) ** (1.0 / p))
    raise SpectralError(f"unknown norm kind {kind!r}")


def c0_norms(c: np.ndarray, L: float, real: bool, oversample: int = 4, workers=None) -> np.ndarray:
    """Batched sup norm over the oversampled grid."""
    M = oversample * c.shape[-1]
    return np.max(np.abs(to_grid(c, L, M, real=real, workers=workers)), axis=-1)


# --- operator symbols ----------------------------------------------------------

@dataclass(frozen=True)
class OperatorSymbol:
    kind: str
    eigenvalues: np.ndarray
    space: str

    @property
    def K(self) -> int:
        return (self.eigenvalues.size - 1) // 2


def sh_eigenvalues(domain: DomainSpec, K: int | None = None) -> np.ndarray:
    K = domain.K if K is None else K
    k = np.arange(-K, K + 1)
    z = domain.eps * math.pi * k / domain.L
    return -1.0 - (1.0 - z * z) ** 2 / domain.eps ** 2


def gl_eigenvalues(domain: DomainSpec, K: int | None = None) -> np.ndarray:
    K = domain.K_a if K is None else K
    k = np.arange(-K, K + 1)
    return -1.0 - 4.0 * (math.pi * k / domain.L - domain.delta_eps) ** 2


def operator_symbol(kind: str, domain: DomainSpec, P=None, zero_index: int = 0,
                    K: int | None = None) -> OperatorSymbol:
    """Eigenvalue table for 'SH', 'GL', 'GeneralizedSH' or 'GL_j'.

    P is a derivation.SymbolSpec for the generalized kinds; zero_index picks
    the positive zero for 'GL_j'.
    """
    if kind == "SH":
        return OperatorSymbol(kind, sh_eigenvalues(domain, K), U_SPACE)
    if kind == "GL":
        return OperatorSymbol(kind, gl_eigenvalues(domain, K), A_SPACE)
    if P is None:
        raise SpectralError(f"symbol kind {kind!r} needs a SymbolSpec")
    P.require_valid()
    if kind == "GeneralizedSH":
        K = domain.K if K is None else K
        z = domain.eps * math.pi * np.arange(-K, K + 1) / domain.L
        return OperatorSymbol(kind, -1.0 - P(z) / domain.eps ** 2, U_SPACE)
    if kind == "GL_j":
        zeta = P.zeros[zero_index]
        kj = nearest_integer(domain.L * zeta / (domain.eps * math.pi))
        shift = domain.L * zeta / (domain.eps * math.pi) - kj
        K = domain.K - kj if K is None else K
        k = np.arange(-K, K + 1)
        lam = -1.0 - 0.5 * P.second_derivative(zeta) * (math.pi * (k - shift) / domain.L) ** 2
        return OperatorSymbol(kind, lam, A_SPACE)
    raise SpectralError(f"unknown symbol kind {kind!r}")


def dissipation_comparison(domain: DomainSpec) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic forms of -L_eps and of iota^*(1 - d_x^2) iota on real modes k = 0..K.

    For k > 0 the test function is e_k + e_{-k}; for k = 0 it is e_0.
    """
    K, N, L = domain.K, domain.N_eps, domain.L
    sig = -sh_eigenvalues(domain)[K:]
    m = np.arange(0, K + 1) - N
    lap = 1.0 + (math.pi * m / L) ** 2
    lhs = sig.copy()
    rhs = lap.copy()
    lhs[0] *= 0.5     # half-weighted norm of e_0
    rhs[0] *= 0.25    # iota keeps half of the zero mode
    return lhs, rhs
