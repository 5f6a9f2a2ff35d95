"""Exponential-Euler integrators for the rescaled SH and GL equations.

Both equations are written as d/dt X = lam X + N(X) + noise with the full
linear symbol lam treated exactly, N(X) = nu_tilde X - cubic * X^3 (|A|^2 A for
GL), and the noise over each step drawn with its exact OU variance.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .noise import (CorrelationSpec, WienerStream, build_noise_coefficients,
                    white_noise)
from .spectral import A_SPACE, U_SPACE, DomainSpec, FourierField, OperatorSymbol

BLOWUP_C0 = 1e3
MAGIC = b"AMPL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIdddB")
_TAGS = {"SH": 0, "GL": 1}


class IntegrationBlowup(RuntimeError):
    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"{what} left the admissible range at t = {t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SDEParams:
    nu: float = 1.0
    cubic: float = 1.0
    noise_on: bool = True
    correlation: CorrelationSpec = field(default_factory=white_noise, repr=False)

    @property
    def nu_tilde(self) -> float:
        return 1.0 + self.nu

    @classmethod
    def sh(cls, nu=1.0, noise_on=True, correlation=None):
        return cls(nu, 1.0, noise_on, correlation or white_noise())

    @classmethod
    def gl(cls, nu=1.0, noise_on=True, correlation=None):
        return cls(nu, 3.0, noise_on, correlation or white_noise())


def default_step(eps: float) -> float:
    return min(1e-3, eps * eps / 4)


def step_grid(T: float, h: float) -> tuple[int, float]:
    """Number of steps and the adjusted step so that n h = T."""
    n = max(1, math.ceil(T / h - 1e-9))
    return n, T / n


def phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-6
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2 + z * z / 6, np.expm1(safe) / safe)


class ExpEuler:
    """Per-mode factors of the exponential-Euler step for a diagonal symbol."""

    def __init__(self, eigenvalues: np.ndarray, h: float):
        lam = np.asarray(eigenvalues, float)
        self.h = float(h)
        self.lam = lam
        self.E = np.exp(h * lam)
        self.F = h * phi1(h * lam)
        # dW has variance h; scale to the exact variance (e^{2 lam h} - 1) / (2 lam)
        self.S = np.sqrt(phi1(2 * h * lam))


def drift(c: np.ndarray, params: SDEParams, L: float, real: bool, workers=None) -> np.ndarray:
    out = params.nu_tilde * c
    if params.cubic:
        out = out - params.cubic * sp.cube(c, L, real, workers=workers)
    return out


def advance(c: np.ndarray, scheme: ExpEuler, params: SDEParams, L: float, real: bool,
            increments: np.ndarray | None = None, workers=None) -> np.ndarray:
    new = scheme.E * c + scheme.F * drift(c, params, L, real, workers)
    if params.noise_on and increments is not None:
        new = new + scheme.S * increments
    return new


def step(state: FourierField, params: SDEParams, symbol: OperatorSymbol, h: float,
         increments: np.ndarray | None = None, t: float = 0.0) -> FourierField:
    if state.space != symbol.space or state.K != symbol.K:
        raise sp.SpectralError("state and symbol do not match")
    new = advance(state.coeffs, ExpEuler(symbol.eigenvalues, h), params, state.domain.L,
                  state.space == U_SPACE, increments)
    if not np.all(np.isfinite(new)):
        raise IntegrationBlowup(t + h)
    return FourierField(new, state.space, state.domain)


@dataclass(frozen=True)
class TrajectoryRecord:
    equation_tag: str
    times: np.ndarray
    snapshots: np.ndarray       # (n_snap, 2K+1) coefficients
    seed: int | None
    h: float
    domain: DomainSpec = field(repr=False)
    scheme: str = "exponential-euler"

    @property
    def space(self) -> str:
        return U_SPACE if self.equation_tag == "SH" else A_SPACE

    def field(self, i: int) -> FourierField:
        return FourierField(self.snapshots[i], self.space, self.domain)

    def __len__(self):
        return self.times.size


def _noise_amplitudes(params: SDEParams, domain: DomainSpec, symbol: OperatorSymbol) -> np.ndarray:
    if symbol.space == U_SPACE:
        return np.sqrt(build_noise_coefficients(params.correlation, domain, K=symbol.K).qk)
    return np.full(2 * symbol.K + 1, math.sqrt(float(params.correlation(1.0))))


def _draw(stream: WienerStream, space: str, K: int, h: float) -> np.ndarray:
    if space == U_SPACE:
        return stream.real_increments(K, h)
    return stream.complex_increments(K, h)


def simulate(initial: FourierField, params: SDEParams, symbol: OperatorSymbol, T: float,
             h: float, stream=None, snapshot_stride: int = 1, amplitudes=None) -> TrajectoryRecord:
    """Iterate the step from `initial` up to time T.

    `stream` is a WienerStream (increments scaled by the per-mode amplitudes)
    or a callable h -> pre-scaled increments; None means no noise.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    n, h = step_grid(T, h)
    if n % snapshot_stride:
        raise ValueError(f"snapshot stride {snapshot_stride} does not divide {n} steps")
    dom = initial.domain
    real = initial.space == U_SPACE
    scheme = ExpEuler(symbol.eigenvalues, h)
    if amplitudes is None and isinstance(stream, WienerStream):
        amplitudes = _noise_amplitudes(params, dom, symbol)
    c = initial.coeffs.copy()
    times = [0.0]
    snaps = [c.copy()]
    for i in range(n):
        incr = None
        if stream is not None and params.noise_on:
            if isinstance(stream, WienerStream):
                incr = amplitudes * _draw(stream, initial.space, initial.K, h)
            else:
                incr = stream(h)
        c = advance(c, scheme, params, dom.L, real, incr)
        if not np.all(np.isfinite(c)):
            raise IntegrationBlowup((i + 1) * h)
        # sum |c_k| / sqrt(2L) bounds the sup norm; only then pay for the grid
        if np.sum(np.abs(c)) / math.sqrt(2 * dom.L) > BLOWUP_C0 and sp.c0_norms(c, dom.L, real) > BLOWUP_C0:
            raise IntegrationBlowup((i + 1) * h)
        if (i + 1) % snapshot_stride == 0:
            times.append((i + 1) * h)
            snaps.append(c.copy())
    seed = stream.seed if isinstance(stream, WienerStream) else None
    tag = "SH" if real else "GL"
    return TrajectoryRecord(tag, np.array(times), np.array(snaps), seed, h, dom)


def stochastic_convolution(symbol: OperatorSymbol, amplitudes, stream: WienerStream, T: float,
                           h: float, domain: DomainSpec, snapshot_stride: int = 1) -> TrajectoryRecord:
    """Per-mode OU recursion W(t+h) = e^{lam h} W(t) + amp * (exact-variance noise)."""
    amp = np.broadcast_to(np.asarray(amplitudes, float), symbol.eigenvalues.shape)
    if np.any(amp < 0):
        raise ValueError("amplitudes must be nonnegative")
    zero = FourierField(np.zeros(symbol.eigenvalues.size, complex), symbol.space, domain)
    lin = SDEParams(nu=-1.0, cubic=0.0, noise_on=True)   # nu_tilde = 0: no drift
    return simulate(zero, lin, symbol, T, h, stream, snapshot_stride, amplitudes=amp)


# --- residual ------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    sup_c0_over_time: float
    per_time: np.ndarray
    times: np.ndarray
    components: dict = field(default_factory=dict)


class ResidualTracker:
    """Streaming discrete residual of psi_n in the mild SH recursion.

    y_{n+1} = E y_n + F (nu_tilde psi_n - psi_n^3) + S dW_n with y_0 = psi_0;
    Res_n = y_n - psi_n.  A discrete SH solution has Res identically zero.
    """

    def __init__(self, psi0: np.ndarray, scheme: ExpEuler, params: SDEParams, L: float, workers=None):
        self.y = np.array(psi0, complex, copy=True)
        self.scheme, self.params, self.L, self.workers = scheme, params, L, workers

    def update(self, psi: np.ndarray, sh_increments: np.ndarray | None) -> None:
        self.y = advance(psi, self.scheme, self.params, self.L, True, sh_increments, self.workers) \
            + self.scheme.E * (self.y - psi)

    def residual(self, psi: np.ndarray) -> np.ndarray:
        return self.y - psi


def residual(A_traj: TrajectoryRecord, W_sh: TrajectoryRecord, params: SDEParams,
             domain: DomainSpec | None = None, W_gl: TrajectoryRecord | None = None,
             gl_params: SDEParams | None = None) -> ResidualReport:
    """Res(pi A)(t_n) = -pi A_n + e^{t_n L} pi A_0 + sum of exponential-Euler drift terms + W_n.

    Inputs must be stored at every step.  With W_gl (the GL stochastic
    convolution on the same increments) the residual is also split into the
    semigroup-difference, cubic-mismatch and noise-difference parts.
    """
    d = domain or A_traj.domain
    if A_traj.times.shape != W_sh.times.shape or not np.allclose(A_traj.times, W_sh.times, rtol=1e-12, atol=0):
        raise ValueError("trajectory time grids differ")
    h = A_traj.h
    if not np.allclose(np.diff(A_traj.times), h, rtol=1e-9):
        raise ValueError("residual needs snapshots at every step")
    K, N, L = d.K, d.N_eps, d.L
    params = SDEParams(params.nu, 1.0, params.noise_on, params.correlation)
    sh = ExpEuler(sp.sh_eigenvalues(d, K), h)
    psi = sp.pi_coeffs(A_traj.snapshots, N, K)
    n = psi.shape[0]
    semi = psi[0].copy()
    Q = np.zeros_like(semi)
    res = np.empty_like(psi)
    for i in range(n):
        res[i] = -psi[i] + semi + Q + W_sh.snapshots[i]
        if i + 1 < n:
            Q = sh.E * Q + sh.F * drift(psi[i], params, L, True)
            semi = sh.E * semi
    per = sp.c0_norms(res, L, True)
    comps = {}
    if W_gl is not None:
        gp = gl_params or SDEParams(params.nu, 3.0, params.noise_on, params.correlation)
        gl = ExpEuler(sp.gl_eigenvalues(d, A_traj.snapshots.shape[1] // 2), h)
        A = A_traj.snapshots
        s = psi[0].copy()
        g = A[0].copy()
        c = np.zeros_like(s)
        semi_t = np.empty_like(psi)
        cub_t = np.empty_like(psi)
        for i in range(n):
            semi_t[i] = s - sp.pi_coeffs(g, N, K)
            cub_t[i] = c
            if i + 1 < n:
                NA = drift(A[i], gp, L, False)
                s = sh.E * s + sh.F * sp.pi_coeffs(NA, N, K)
                g = gl.E * g + gl.F * NA
                c = sh.E * c + sh.F * (drift(psi[i], params, L, True) - sp.pi_coeffs(NA, N, K))
        noise_t = W_sh.snapshots - sp.pi_coeffs(W_gl.snapshots, N, K)
        for name, arr in (("semigroup", semi_t), ("cubic", cub_t), ("noise", noise_t)):
            comps[name] = float(np.max(sp.c0_norms(arr, L, True)))
        comps["closure"] = float(np.max(np.abs(semi_t + cub_t + noise_t - res)))
    return ResidualReport(float(np.max(per)), per, A_traj.times.copy(), comps)


# --- semigroup difference H_t ---------------------------------------------------

def h_lambda(t: float, domain: DomainSpec, K: int | None = None, literal: bool = False) -> np.ndarray:
    """lambda_k(t) with H_t e_k = lambda_k(t) pi e_k, k = -K_a..K_a.

    The SH factor is the SH symbol at the projected index k + N.  `literal`
    uses k - N instead; with delta = 0 that is the exact table mirrored in k.
    """
    K = domain.K_a if K is None else K
    k = np.arange(-K, K + 1)
    eps, L, N = domain.eps, domain.L, domain.N_eps
    j = k - N if literal else k + N
    sh = 1.0 + (1.0 - (eps * math.pi * j / L) ** 2) ** 2 / eps ** 2
    gl = 1.0 + 4.0 * (k * math.pi / L - domain.delta_eps) ** 2
    return np.exp(-t * sh) - np.exp(-t * gl)


def h_operator(t: float, domain: DomainSpec, alpha: float = 0.75, literal: bool = False):
    """lambda table plus operator-norm values of H_t.

    ha_to_halpha is the exact norm from H_a to H_u^alpha: pi identifies e_k and
    e_{-k-2N}, so pairs of modes share one image.  Input e_{-2N} lands on the
    neutral mode e_N and keeps |lambda| ~ e^{-t} for every eps; ha_to_halpha_band
    restricts the input to |k| <= N.  h1_to_c0 is the exact norm from H_a^1 to
    C^0 (the sup is attained at x = 0).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    lam = h_lambda(t, domain, literal=literal)
    Ka, N = domain.K_a, domain.N_eps
    k = np.arange(-Ka, Ka + 1)
    w = (1.0 + np.abs(k)) ** alpha
    diag = float(np.max(np.abs(lam) * w))
    # pair each k > -N with k' = -k - 2N (< -N), when retained
    sel = k >= -N
    kp = -k[sel] - 2 * N
    partner = np.where(kp >= -Ka, lam[np.clip(kp + Ka, 0, 2 * Ka)], 0.0)
    partner = np.where(k[sel] == -N, 0.0, partner)
    pair = float(np.max(w[sel] * np.sqrt(lam[sel] ** 2 + partner ** 2)))
    inner = np.abs(k) <= N
    band = float(np.max(w[inner] * np.abs(lam[inner])))
    l2 = float(np.sum(lam ** 2 / (1.0 + k.astype(float) ** 2)))
    h1c0 = 2.0 / math.sqrt(2 * domain.L) * math.sqrt(float(np.sum(lam ** 2 / (1.0 + np.abs(k)) ** 2)))
    return lam, {"ha_to_halpha": pair, "ha_to_halpha_diag": diag, "ha_to_halpha_band": band,
                 "h1_to_c0": h1c0, "weighted_l2_sum": l2}


# --- trajectory files -------------------------------------------------------------

def write_trajectory(record: TrajectoryRecord, path: str, manifest: dict | None = None) -> None:
    K = (record.snapshots.shape[1] - 1) // 2
    d = record.domain
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, K, d.L, d.eps, record.h, _TAGS[record.equation_tag]))
        body = np.empty((len(record), 1 + 2 * (2 * K + 1)), "<f8")
        body[:, 0] = record.times
        body[:, 1::2] = record.snapshots.real
        body[:, 2::2] = record.snapshots.imag
        fh.write(body.tobytes())
    info = {"file": path.rsplit("/", 1)[-1], "equation": record.equation_tag, "seed": record.seed,
            "scheme": record.scheme, "h": record.h, "L": d.L, "eps": d.eps, "K": K,
            "domain_K": d.K, "N_eps": d.N_eps, "delta_eps": d.delta_eps, "snapshots": len(record)}
    info.update(manifest or {})
    with open(path + ".json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_trajectory(path: str) -> TrajectoryRecord:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, K, L, eps, h, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a trajectory file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    width = 1 + 2 * (2 * K + 1)
    body = np.frombuffer(raw, "<f8", offset=_HEADER.size).reshape(-1, width)
    try:
        with open(path + ".json") as fh:
            info = json.load(fh)
    except OSError:
        info = {}
    seed, Kd = info.get("seed"), info.get("domain_K")
    eq = {v: k for k, v in _TAGS.items()}[tag]
    dom = sp.make_domain(L, eps, Kd if Kd is not None else (K if eq == "SH" else None))
    snaps = body[:, 1::2] + 1j * body[:, 2::2]
    return TrajectoryRecord(eq, body[:, 0].copy(), snaps, seed, h, dom)
