"""Monte Carlo scaling studies for the SH / GL approximation.

Every study runs, for each eps on a ladder, a batch of coupled samples and
reduces each sample to one error number.  The batch is advanced as arrays of
shape (samples, modes); each sample owns its own Wiener streams, so results do
not depend on batching or thread count.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import subprocess
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import spectral as sp
from .dynamics import (BLOWUP_C0, ExpEuler, ResidualTracker, SDEParams, advance,
                       h_operator, step_grid)
from .noise import (CoupledNoiseBatch, WienerStream, build_noise_coefficients,
                    exponential_correlation, load_correlation_table, make_coupling,
                    white_noise)

KINDS = ("linear", "approx", "residual", "concentration", "attract", "invariant", "htbounds")
TARGET_SLOPE = 0.5


class StudyError(RuntimeError):
    pass


@dataclass
class StudyConfig:
    kind: str = "approx"
    eps_ladder: tuple | None = None   # (0.2, 0.1, 0.05); htbounds adds 0.025
    samples: int = 32
    T0: float | None = None           # 1 by default, 2 for attract
    L: float = 2 * math.pi
    correlation: str = "white"        # white | exponential | path to a (zeta, qhat) table
    ell: float = 1.0
    construction: str = "sampling"
    seed: int = 20240611
    nu: float = 1.0
    h_max: float = 1e-3
    h_eps2: float = 0.25
    K_factor: float = 3.0
    band_radius: float = 0.5
    oversample: int = 4
    bootstrap: int = 400
    threshold: float = 0.35
    decoupled: bool = False
    noise_scale: float = 1.0
    a1_amplitude: float = 0.5
    delta: float = 1.0 / 3.0
    t_burn: float = 10.0
    window: float = 20.0
    sample_every: float = 0.1
    initial_c0: float = 10.0
    alpha: float = 0.75
    t_min: float = 1e-3
    t_max: float = 1.0
    n_t: int = 121
    wasserstein_modes: int = 3
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StudyError(f"unknown study kind {self.kind!r}")
        if self.eps_ladder is None:
            self.eps_ladder = (0.2, 0.1, 0.05, 0.025) if self.kind == "htbounds" else (0.2, 0.1, 0.05)
        self.eps_ladder = tuple(float(e) for e in self.eps_ladder)
        if len(self.eps_ladder) < 1 or min(self.eps_ladder) <= 0:
            raise StudyError("eps_ladder needs positive entries")
        if any(b >= a for a, b in zip(self.eps_ladder, self.eps_ladder[1:])):
            raise StudyError("eps_ladder must be strictly decreasing")
        if self.kind != "htbounds" and self.samples < 8:
            raise StudyError("slope fitting needs samples >= 8")
        if self.T0 is None:
            self.T0 = 2.0 if self.kind == "attract" else 1.0

    def correlation_spec(self):
        if self.correlation == "white":
            return white_noise()
        if self.correlation == "exponential":
            return exponential_correlation(self.ell)
        return load_correlation_table(self.correlation)

    def step(self, eps: float) -> float:
        return min(self.h_max, self.h_eps2 * eps * eps)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps_ladder"] = list(self.eps_ladder)
        return d


@dataclass
class ScalingResult:
    kind: str
    per_eps: list
    slope: float
    slope_ci: tuple
    target_slope: float
    passed: bool
    aborts: int = 0
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "slope_ci": list(self.slope_ci),
            "target_slope": self.target_slope,
            "pass": self.passed,
            "aborts": self.aborts,
            "per_eps": [{k: v for k, v in p.items() if k != "errors"} for p in self.per_eps],
            "extras": self.extras,
        }


@dataclass
class AdmissibilityReport:
    kind: str
    per_eps: list
    saturation_bound: float
    passed: bool
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"kind": self.kind, "pass": self.passed, "saturation_bound": self.saturation_bound,
                "per_eps": [{k: v for k, v in p.items() if k != "errors"} for p in self.per_eps],
                "extras": self.extras}


# --- statistics ---------------------------------------------------------------

def _ols(x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def fit_slope(eps, values, bootstrap: int = 400, seed: int = 0, level: float = 0.95):
    """Least-squares slope of log(mean value) against log(eps), with a bootstrap CI.

    `values` holds one array of per-sample values per eps (or scalars, in
    which case the CI collapses to the point estimate).
    """
    eps = np.asarray(eps, float)
    groups = [np.atleast_1d(np.asarray(v, float)) for v in values]
    if len(groups) != eps.size:
        raise StudyError("need one value group per eps")
    if np.unique(eps).size < 3:
        raise StudyError("slope fit needs at least 3 distinct eps values")
    groups = [g[np.isfinite(g)] for g in groups]
    if any(g.size == 0 or np.any(g <= 0) for g in groups):
        raise StudyError("slope fit needs positive values")
    x = np.log(eps)
    slope = _ols(x, np.log([g.mean() for g in groups]))
    if bootstrap <= 0 or all(g.size == 1 for g in groups):
        return slope, (slope, slope)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(777,)))
    boots = np.empty(bootstrap)
    for b in range(bootstrap):
        means = [g[rng.integers(0, g.size, g.size)].mean() for g in groups]
        boots[b] = _ols(x, np.log(means))
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return slope, (float(lo), float(hi))


def wasserstein_1d(x, y) -> float:
    """W1 between empirical laws, as the integral of |F_x - F_y|."""
    x = np.sort(np.asarray(x, float))
    y = np.sort(np.asarray(y, float))
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    allv = np.sort(np.concatenate([x, y]))
    d = np.diff(allv)
    Fx = np.searchsorted(x, allv[:-1], side="right") / x.size
    Fy = np.searchsorted(y, allv[:-1], side="right") / y.size
    return float(np.sum(np.abs(Fx - Fy) * d))


def stationary_variances(domain: sp.DomainSpec, qk: np.ndarray, qhat1: float, band: np.ndarray):
    """Stationary variances of matched SH and GL modes: q/(2|lambda|) per equation."""
    lam_sh = sp.sh_eigenvalues(domain)[band + domain.K]
    lam_gl = sp.gl_eigenvalues(domain)[band - domain.N_eps + domain.K_a]
    return qk[band + domain.K] / (-2 * lam_sh), qhat1 / (-2 * lam_gl)


# --- level setup -------------------------------------------------------------------

@dataclass
class _Level:
    index: int
    eps: float
    domain: sp.DomainSpec
    h: float
    n_steps: int
    coupling: object
    sh: ExpEuler
    gl: ExpEuler
    sh_params: SDEParams
    gl_params: SDEParams


def _setup_level(cfg: StudyConfig, index: int, eps: float, T: float) -> _Level:
    dom = sp.make_domain(cfg.L, eps, c=cfg.K_factor)
    corr = cfg.correlation_spec()
    coeffs = build_noise_coefficients(corr, dom, cfg.construction)
    coupling = make_coupling(dom, coeffs, corr, r=cfg.band_radius, decoupled=cfg.decoupled)
    if cfg.noise_scale != 1.0:
        coupling = dataclasses.replace(coupling, sh_amplitude=coupling.sh_amplitude * cfg.noise_scale,
                                       gl_amplitude=coupling.gl_amplitude * cfg.noise_scale)
    n, h = step_grid(T, cfg.step(eps))
    noise_on = cfg.noise_scale != 0
    return _Level(index, eps, dom, h, n, coupling,
                  ExpEuler(sp.sh_eigenvalues(dom), h), ExpEuler(sp.gl_eigenvalues(dom), h),
                  SDEParams.sh(cfg.nu, noise_on), SDEParams.gl(cfg.nu, noise_on))


def admissible_initial(cfg: StudyConfig, dom: sp.DomainSpec, level: int, samples) -> np.ndarray:
    """A(0) = W0 + A1: W0 has mode variances 1/(1+|k|)^2, A1 = a (1 + cos(pi x/L)/2)."""
    Ka = dom.K_a
    m = np.arange(-Ka, Ka + 1)
    c = 1.0 / (1.0 + np.abs(m))
    A1 = np.zeros(2 * Ka + 1, complex)
    s = cfg.a1_amplitude * math.sqrt(2 * dom.L)
    A1[Ka] = s
    A1[Ka - 1] = A1[Ka + 1] = s / 4
    out = np.empty((len(samples), 2 * Ka + 1), complex)
    for i, smp in enumerate(samples):
        xi = WienerStream.for_sample(cfg.seed, smp, "init", level).complex_normals(2 * Ka + 1)
        out[i] = A1 + c * xi
    return out


def large_initial(cfg: StudyConfig, dom: sp.DomainSpec, level: int, samples) -> np.ndarray:
    """Rough real data with flat spectrum, rescaled to sup norm cfg.initial_c0."""
    K = dom.K
    out = np.empty((len(samples), 2 * K + 1), complex)
    for i, smp in enumerate(samples):
        st = WienerStream.for_sample(cfg.seed, smp, "init", level)
        u = st.real_increments(K, 1.0)
        out[i] = u * cfg.initial_c0 / sp.c0_norms(u, dom.L, True, cfg.oversample)
    return out


# --- the coupled batch loop -----------------------------------------------------------

def _c0(c, lv: _Level, cfg: StudyConfig, real=True):
    return sp.c0_norms(c, lv.domain.L, real, cfg.oversample, workers=cfg.threads)


def _run_level(cfg: StudyConfig, lv: _Level, samples) -> dict:
    """Advance one eps level; returns per-sample statistics for cfg.kind."""
    kind = cfg.kind
    dom, L, N, K = lv.domain, lv.domain.L, lv.domain.N_eps, lv.domain.K
    W = cfg.threads
    noise = CoupledNoiseBatch(cfg.seed, lv.index, samples, dom, lv.coupling)
    M = len(samples)
    sup = np.zeros(M)
    aborted = np.zeros(M, bool)
    linear = kind == "linear"
    shp = SDEParams(-1.0, 0.0, True) if linear else lv.sh_params    # nu_tilde = 0 for plain OU
    glp = SDEParams(-1.0, 0.0, True) if linear else lv.gl_params
    need_sh = kind in ("linear", "approx", "residual", "invariant", "attract")
    need_gl = kind != "attract"
    u = A = None
    if kind == "attract":
        u = large_initial(cfg, dom, lv.index, samples)
    elif linear:
        u = np.zeros((M, 2 * K + 1), complex)
        A = np.zeros((M, 2 * dom.K_a + 1), complex)
    else:
        A = admissible_initial(cfg, dom, lv.index, samples)
        u = sp.pi_coeffs(A, N, K) if need_sh else None
    tracker = None
    if kind == "residual":
        tracker = ResidualTracker(sp.pi_coeffs(A, N, K), lv.sh, lv.sh_params, L, W)
        u = None
    wl = np.zeros((M, 2 * K + 1), complex) if kind == "attract" else None
    u0 = u.copy() if kind == "attract" else None
    every = max(1, round(cfg.sample_every / lv.h)) if kind == "invariant" else 1
    burn = round(cfg.t_burn / lv.h) if kind == "invariant" else 0
    acc = np.zeros(M)
    n_acc = 0
    mode_samples = {"sh": [], "gl": []}
    nw = cfg.wasserstein_modes

    def stat(A, u):
        if kind in ("linear", "approx", "invariant"):
            return _c0(u - sp.pi_coeffs(A, N, K), lv, cfg)
        if kind == "concentration":
            m = np.arange(-dom.K_a, dom.K_a + 1)
            return _c0(np.where(np.abs(m) > cfg.delta / lv.eps, A, 0), lv, cfg, real=False)
        if kind == "residual":
            return _c0(tracker.residual(sp.pi_coeffs(A, N, K)), lv, cfg)
        return None

    for n in range(lv.n_steps):
        dsh, dgl = noise(lv.h)
        if tracker is not None:
            tracker.update(sp.pi_coeffs(A, N, K), dsh)
        if need_sh and u is not None:
            u = advance(u, lv.sh, shp, L, True, dsh, W)
        if need_gl:
            A = advance(A, lv.gl, glp, L, False, dgl, W)
        if kind == "attract":
            wl = lv.sh.E * wl + lv.sh.S * dsh
        # blow-up guard (cheap bound first)
        for arr, real in ((u, True), (A, False)):
            if arr is None:
                continue
            bound = np.sum(np.abs(arr), axis=1) / math.sqrt(2 * L)
            bad = ~np.isfinite(bound)
            check = (bound > BLOWUP_C0) & ~bad
            if np.any(check):
                bad[check] |= _c0(arr[check], lv, cfg, real) > BLOWUP_C0
            if np.any(bad & ~aborted):
                aborted |= bad
                arr[bad] = 0
        if kind == "invariant":
            if n + 1 > burn and (n + 1 - burn) % every == 0:
                acc += stat(A, u)
                n_acc += 1
                if nw:
                    mode_samples["sh"].append(u[:, K + N:K + N + nw].real.copy())
                    mode_samples["gl"].append(A[:, dom.K_a:dom.K_a + nw].real.copy())
        elif kind != "attract":
            sup = np.maximum(sup, stat(A, u))
    out = {"aborted": aborted}
    if kind == "invariant":
        out["errors"] = acc / max(1, n_acc)
        if nw:
            sh = np.concatenate(mode_samples["sh"])
            gl = np.concatenate(mode_samples["gl"])
            out["w1"] = [wasserstein_1d(sh[:, j], gl[:, j]) for j in range(nw)]
    elif kind == "attract":
        semi = u0 * np.exp(lv.sh.lam * lv.h * lv.n_steps)
        rem = u - wl - semi
        out["c0_final"] = _c0(u, lv, cfg)
        w = sp.sobolev_weights(dom.K_a, 1.0)
        out["rem_h1"] = np.sqrt(np.sum(w * np.abs(sp.iota_coeffs(rem, N, K)) ** 2, axis=1))
    else:
        out["errors"] = sup
    out["errors"] = np.where(aborted, np.nan, out.get("errors", np.zeros(M)))
    return out


def _per_eps_entry(eps, errors, aborted) -> dict:
    good = errors[np.isfinite(errors)]
    m = float(good.mean()) if good.size else float("nan")
    se = float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1 else float("nan")
    return {"eps": eps, "mean": m, "stderr": se, "aborted": int(aborted.sum()),
            "errors": [float(v) for v in errors]}


def _scaling_study(cfg: StudyConfig, T: float) -> ScalingResult:
    samples = list(range(cfg.samples))
    per = []
    extras: dict = {"w1": []} if cfg.kind == "invariant" else {}
    total_abort = 0
    for i, eps in enumerate(cfg.eps_ladder):
        lv = _setup_level(cfg, i, eps, T)
        res = _run_level(cfg, lv, samples)
        per.append(_per_eps_entry(eps, res["errors"], res["aborted"]))
        per[-1].update({"K": lv.domain.K, "N_eps": lv.domain.N_eps, "h": lv.h, "steps": lv.n_steps})
        total_abort += int(res["aborted"].sum())
        if "w1" in res:
            extras["w1"].append({"eps": eps, "modes": res["w1"]})
    eps = [p["eps"] for p in per]
    errs = [np.array(p["errors"]) for p in per]
    try:
        slope, ci = fit_slope(eps, errs, cfg.bootstrap, cfg.seed)
    except StudyError as exc:
        if all(np.nanmax(np.abs(e)) == 0 for e in errs):
            slope, ci = float("nan"), (float("nan"), float("nan"))
            extras["note"] = "all errors vanish identically"
        else:
            raise exc
    abort_frac = total_abort / (cfg.samples * len(eps))
    means = [p["mean"] for p in per]
    extras["monotone"] = bool(all(b <= a + 1e-15 for a, b in zip(means, means[1:])))
    extras["abort_fraction"] = abort_frac
    passed = bool(np.isfinite(slope) and slope >= cfg.threshold and ci[0] > 0 and abort_frac <= 0.05)
    return ScalingResult(cfg.kind, per, slope, ci, TARGET_SLOPE, passed, total_abort, extras)


def study_linear_coupling(cfg: StudyConfig) -> ScalingResult:
    return _scaling_study(_with_kind(cfg, "linear"), cfg.T0)


def study_approximation(cfg: StudyConfig) -> ScalingResult:
    return _scaling_study(_with_kind(cfg, "approx"), cfg.T0)


def study_residual(cfg: StudyConfig) -> ScalingResult:
    return _scaling_study(_with_kind(cfg, "residual"), cfg.T0)


def study_concentration(cfg: StudyConfig) -> ScalingResult:
    return _scaling_study(_with_kind(cfg, "concentration"), cfg.T0)


def study_invariant_measure(cfg: StudyConfig) -> ScalingResult:
    cfg = _with_kind(cfg, "invariant")
    relax = 1.0 / abs(cfg.nu) if cfg.nu else math.inf
    if cfg.t_burn < 5 * relax:
        warnings.warn(f"burn-in {cfg.t_burn} is shorter than 5 relaxation times ({5 * relax:.3g})")
    return _scaling_study(cfg, cfg.t_burn + cfg.window)


def study_attractivity(cfg: StudyConfig) -> AdmissibilityReport:
    cfg = _with_kind(cfg, "attract")
    samples = list(range(cfg.samples))
    bound = 5 * math.sqrt(1 + cfg.nu)
    per = []
    for i, eps in enumerate(cfg.eps_ladder):
        lv = _setup_level(cfg, i, eps, cfg.T0)
        res = _run_level(cfg, lv, samples)
        c0 = res["c0_final"]
        rem = res["rem_h1"]
        per.append({"eps": eps, "median_c0": float(np.median(c0)),
                    "c0_moment4": float(np.mean(c0 ** 4)),
                    "remainder_h1_mean": float(np.mean(rem)),
                    "remainder_h1_moment4": float(np.mean(rem ** 4)),
                    "aborted": int(res["aborted"].sum())})
    m4 = [p["remainder_h1_moment4"] for p in per]
    bounded = max(m4) <= 16 * min(m4) if min(m4) > 0 else True
    passed = bool(all(p["median_c0"] <= bound for p in per) and bounded
                  and not any(p["aborted"] for p in per))
    return AdmissibilityReport("attract", per, bound, passed, {"remainder_moment4_bounded": bool(bounded)})


def study_ht_bounds(cfg: StudyConfig) -> dict:
    ts = np.logspace(math.log10(cfg.t_min), math.log10(cfg.t_max), cfg.n_t)
    rows = []
    for eps in cfg.eps_ladder:
        dom = sp.make_domain(cfg.L, eps, c=cfg.K_factor)
        q1 = q2 = q3 = qb = 0.0
        for t in ts:
            _, nrm = h_operator(float(t), dom, cfg.alpha)
            q1 = max(q1, t ** ((cfg.alpha + 1) / 2) * nrm["ha_to_halpha"] / eps)
            qb = max(qb, t ** ((cfg.alpha + 1) / 2) * nrm["ha_to_halpha_band"] / eps)
            q2 = max(q2, nrm["h1_to_c0"] / math.sqrt(eps))
            q3 = max(q3, nrm["weighted_l2_sum"] / eps)
        rows.append({"eps": eps, "ha_to_halpha": q1, "ha_to_halpha_band": qb, "h1_to_c0": q2, "l2_sum": q3})
    cols = ("ha_to_halpha", "ha_to_halpha_band", "h1_to_c0", "l2_sum")
    ratios = {key: [rows[i + 1][key] / rows[i][key] for i in range(len(rows) - 1)] for key in cols}
    _, h0 = h_operator(0.0, sp.make_domain(cfg.L, cfg.eps_ladder[0], c=cfg.K_factor), cfg.alpha)
    passed = all(r <= 2.0 for key in ("ha_to_halpha", "h1_to_c0") for r in ratios[key])
    return {"kind": "htbounds", "per_eps": rows, "ratios": ratios, "max_ratio":
            {k: max(v) for k, v in ratios.items()}, "h0_norm": h0["ha_to_halpha"], "pass": bool(passed)}


def _with_kind(cfg: StudyConfig, kind: str) -> StudyConfig:
    return cfg if cfg.kind == kind else dataclasses.replace(cfg, kind=kind)


STUDIES = {
    "linear": study_linear_coupling,
    "approx": study_approximation,
    "residual": study_residual,
    "concentration": study_concentration,
    "attract": study_attractivity,
    "invariant": study_invariant_measure,
    "htbounds": study_ht_bounds,
}


def run_study(cfg: StudyConfig):
    return STUDIES[cfg.kind](cfg)


# --- outputs -----------------------------------------------------------------------

def version_string() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def result_summary(result) -> dict:
    return result.summary() if hasattr(result, "summary") else dict(result)


def write_outputs(result, cfg: StudyConfig, outdir: str) -> tuple[str, str]:
    os.makedirs(outdir, exist_ok=True)
    stem = os.path.join(outdir, f"study_{cfg.kind}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if cfg.kind == "htbounds":
        cols = ["eps", "ha_to_halpha", "ha_to_halpha_band", "h1_to_c0", "l2_sum"]
        w.writerow(cols)
        for r in result["per_eps"]:
            w.writerow([repr(float(r[c])) for c in cols])
    elif cfg.kind == "attract":
        w.writerow(["eps", "median_c0", "c0_moment4", "remainder_h1_mean", "remainder_h1_moment4"])
        for r in result.per_eps:
            w.writerow([repr(r[k]) for k in ("eps", "median_c0", "c0_moment4",
                                              "remainder_h1_mean", "remainder_h1_moment4")])
    else:
        w.writerow(["eps", "sample", "error"])
        for p in result.per_eps:
            for i, e in enumerate(p["errors"]):
                w.writerow([repr(p["eps"]), i, repr(e)])
    with open(stem + ".csv", "w") as fh:
        fh.write(buf.getvalue())
    summary = result_summary(result)
    summary["config"] = cfg.echo()
    summary["version"] = version_string()
    summary["created"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(stem + ".json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return stem + ".csv", stem + ".json"
