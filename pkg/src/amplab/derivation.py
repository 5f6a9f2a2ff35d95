"""Symbols P(zeta), their zeros and quadratic models, and derived amplitude systems."""
from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
import sympy
from scipy import optimize

from .noise import CorrelationSpec, white_noise
from .spectral import DomainSpec

Z = sympy.Symbol("z", real=True)
NONLINEARITIES = ("u^3", "u(u_x)^2")


class SymbolParseError(ValueError):
    def __init__(self, msg: str, column: int, text: str):
        super().__init__(f"{msg} at column {column}\n  {text}\n  {' ' * (column - 1)}^")
        self.column = column


class AssumptionError(ValueError):
    pass


# --- parser ------------------------------------------------------------------
# expr := term (('+'|'-') term)* ; term := unary ('*' unary)*
# unary := ('+'|'-') unary | power ; power := atom ('^' int)? ; atom := number | z | zeta | '(' expr ')'

_TOKEN = re.compile(r"\s*(?:(\d+(?:\.\d*)?|\.\d+)|(zeta|z|ζ)|(\*\*|[-+*^()]))")


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise SymbolParseError(f"unexpected character {text[col - 1]!r}", col, text)
        num, var, op = m.groups()
        col = m.start(m.lastindex) + 1
        if num is not None:
            out.append(("num", num, col))
        elif var is not None:
            out.append(("var", var, col))
        else:
            out.append(("op", "^" if op == "**" else op, col))
        pos = m.end()
    out.append(("end", "", len(text) + 1))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise SymbolParseError(msg, tok[2], self.text)

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            t = self.term()
            e = e + t if op == "+" else e - t
        return e

    def term(self):
        e = self.unary()
        while self.peek() == ("op", "*", self.peek()[2]):
            self.take()
            e = e * self.unary()
        return e

    def unary(self):
        t = self.peek()
        if t[0] == "op" and t[1] in ("+", "-"):
            self.take()
            v = self.unary()
            return -v if t[1] == "-" else v
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            t = self.take()
            if t[0] != "num" or not t[1].isdigit():
                self.error("exponent must be a nonnegative integer", t)
            base = base ** int(t[1])
        return base

    def atom(self):
        t = self.take()
        if t[0] == "num":
            return sympy.Rational(Fraction(t[1]))
        if t[0] == "var":
            return Z
        if t == ("op", "(", t[2]):
            e = self.expr()
            if self.peek()[1] != ")":
                self.error("expected ')'")
            self.take()
            return e
        self.error("expected a number, z or '('", t)


def parse_symbol(text: str) -> "SymbolSpec":
    """Parse 'P = (1 - z^2)^2 * (9 - z^2)^2' (the 'P =' prefix is optional)."""
    body = text
    m = re.match(r"\s*P\s*=", text)
    offset = 0
    if m:
        offset = m.end()
        body = " " * offset + text[offset:]
    expr = _Parser(body).parse()
    poly = sympy.Poly(sympy.expand(expr), Z)
    return SymbolSpec(name=text.strip(), poly=poly)


# --- symbols -------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    items: dict
    zeros: tuple
    R: float | None
    second_derivatives: tuple
    exact_zeros: tuple = ()

    @property
    def failed(self) -> list:
        return [k for k, (ok, _) in self.items.items() if not ok]

    @property
    def passed(self) -> bool:
        return not self.failed

    def describe(self) -> str:
        return "\n".join(f"{k}: {'ok' if ok else 'FAIL'} ({msg})" for k, (ok, msg) in self.items.items())


@dataclass(frozen=True)
class SymbolSpec:
    """Even symbol P, given as a polynomial in z or as callables (P, P', P'')."""
    name: str = "P"
    poly: sympy.Poly | None = None
    func: Callable | None = field(default=None, repr=False)
    dfunc: Callable | None = field(default=None, repr=False)
    d2func: Callable | None = field(default=None, repr=False)
    R: float | None = None
    zmax: float = 20.0

    def __call__(self, z):
        z = np.asarray(z, float)
        if self.poly is not None:
            coeffs = [float(c) for c in self.poly.all_coeffs()]
            return np.polyval(coeffs, z)
        return np.asarray(self.func(z), float)

    def second_derivative(self, z):
        if self.poly is not None:
            d2 = [float(c) for c in self.poly.diff(Z).diff(Z).all_coeffs()]
            return np.polyval(d2, np.asarray(z, float))
        return np.asarray(self.d2func(np.asarray(z, float)), float)

    @property
    def zeros(self) -> tuple:
        return self.check().zeros

    def check(self) -> AssumptionReport:
        return check_assumptions(self)

    def require_valid(self) -> None:
        rep = self.check()
        if not rep.passed:
            raise AssumptionError(f"symbol {self.name!r} violates {', '.join(rep.failed)}\n{rep.describe()}")


_REPORTS: dict = {}


def check_assumptions(P: SymbolSpec, grid: np.ndarray | None = None) -> AssumptionReport:
    key = (P.name, None if P.poly is None else str(P.poly.as_expr()), id(P.func))
    if grid is None and key in _REPORTS:
        return _REPORTS[key]
    rep = _check_poly(P) if P.poly is not None else _check_func(P, grid)
    if grid is None:
        _REPORTS[key] = rep
    return rep


def _check_poly(P: SymbolSpec) -> AssumptionReport:
    p = P.poly
    items = {}
    items["P1"] = (True, "polynomial")
    even = all(c == 0 for (e,), c in p.terms() if e % 2)
    items["even"] = (even, "only even powers" if even else "odd powers present")
    roots = sympy.real_roots(p) if p.degree() > 0 else []
    mult: dict = {}
    for r in roots:
        mult[r] = mult.get(r, 0) + 1
    odd = [r for r, m in mult.items() if m % 2]
    P0 = p.eval(0)
    lc = p.LC()
    nonneg = not odd and lc > 0 or (p.degree() == 0 and P0 >= 0)
    items["P2"] = (bool(nonneg and P0 > 0),
                   f"P(0) = {P0}" + ("" if nonneg else "; P changes sign"))
    has_origin = any(r == 0 for r in mult)
    items["P3"] = (not p.is_zero and not has_origin,
                   "zero at the origin" if has_origin else f"{len(mult)} real zeros")
    zeros = sorted(float(r) for r in mult if r > 0)
    d2 = p.diff(Z).diff(Z)
    d2v = tuple(float(d2.eval(r)) for r in sorted(r for r in mult if r > 0))
    bad = [z for z, v in zip(zeros, d2v) if not v > 0]
    items["P4"] = (not bad and all(d2.eval(r) > 0 for r in mult),
                   "nondegenerate" if not bad else f"degenerate zeros {bad}")
    q = p - sympy.Poly(Z ** 2, Z)
    R = None
    if q.is_zero or (q.degree() == 0 and q.LC() >= 0):
        R, ok = 0.0, True
    elif q.LC() > 0 and q.degree() > 0:
        rr = [float(r) for r in sympy.real_roots(q)]
        R, ok = (max(abs(r) for r in rr) if rr else 0.0), True
    else:
        ok = False
    items["P5"] = (ok, f"R = {R}" if ok else "P grows slower than zeta^2")
    if P.R is not None and ok:
        z = np.linspace(P.R, P.R + 50, 2001)
        items["P5"] = (bool(np.all(P(z) >= z * z - 1e-9)), f"R = {P.R} (given)")
    exact = tuple(sorted((r for r in mult if r > 0), key=float))
    return AssumptionReport(items, tuple(zeros), R, d2v, exact)


def _check_func(P: SymbolSpec, grid) -> AssumptionReport:
    z = np.linspace(0, P.zmax, 20001) if grid is None else np.asarray(grid, float)
    v = P(z)
    items = {"P1": (True, "assumed for callables")}
    items["even"] = (bool(np.allclose(P(-z), v, rtol=1e-10, atol=1e-12)), "sampled")
    items["P2"] = (bool(np.min(v) >= -1e-12 and P(np.array([0.0]))[0] > 0), "sampled")
    # zeros: sampled local minima with P ~ 0, refined on P'
    zeros = []
    idx = np.where((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]) & (v[1:-1] < 1e-6))[0] + 1
    for i in idx:
        a, b = z[i - 1], z[i + 1]
        try:
            zr = optimize.brentq(P.dfunc, a, b) if P.dfunc(a) * P.dfunc(b) < 0 else z[i]
        except ValueError:
            zr = z[i]
        if abs(P(np.array([zr]))[0]) < 1e-8 and (not zeros or abs(zr - zeros[-1]) > 1e-6):
            zeros.append(float(zr))
    items["P3"] = (all(zz > 1e-9 for zz in zeros), f"{len(zeros)} zeros")
    d2v = tuple(float(P.second_derivative(zz)) for zz in zeros)
    items["P4"] = (all(d > 0 for d in d2v), "sampled")
    R = P.R if P.R is not None else P.zmax / 2
    tail = z[z >= R]
    items["P5"] = (bool(tail.size and np.all(P(tail) >= tail ** 2)), f"R = {R}")
    zeros = [zz for zz in zeros if zz > 1e-9]
    return AssumptionReport(items, tuple(zeros), R, tuple(d for d, zz in zip(d2v, zeros)))


def default_band_radius(zeros) -> float:
    """Half the smallest half-gap between zeros, capped at half the smallest zero."""
    zs = sorted(zeros)
    r = 0.5 * zs[0]
    gaps = np.diff(zs)
    if gaps.size:
        r = min(r, 0.5 * float(np.min(gaps)) / 2)
    return r


@dataclass(frozen=True)
class TaylorModel:
    zeta: float
    curvature: float              # P''(zeta) / 2
    center: float                 # L zeta / (eps pi)
    band: np.ndarray              # indices k with |k eps pi / L - zeta| < r
    r: float
    domain: DomainSpec = field(repr=False)

    def __call__(self, k):
        k = np.asarray(k, float)
        L = self.domain.L
        return self.curvature * math.pi ** 2 / L ** 2 * (k - self.center) ** 2 + 1.0


def taylor_model(P: SymbolSpec, j: int, domain: DomainSpec, r: float | None = None) -> TaylorModel:
    P.require_valid()
    zs = P.zeros
    if not 0 <= j < len(zs):
        raise IndexError(f"symbol has {len(zs)} positive zeros, index {j} out of range")
    r = default_band_radius(zs) if r is None else r
    signed = sorted(list(zs) + [-z for z in zs])
    if any(b - a < 2 * r for a, b in zip(signed, signed[1:])) or min(zs) <= r:
        raise ValueError(f"bands of radius {r} overlap or contain 0; use r < {default_band_radius(zs)}")
    L, eps = domain.L, domain.eps
    zeta = zs[j]
    k = np.arange(-domain.K, domain.K + 1)
    band = k[np.abs(k * eps * math.pi / L - zeta) < r]
    return TaylorModel(zeta, 0.5 * float(P.second_derivative(zeta)), L * zeta / (eps * math.pi),
                       band, r, domain)


def gamma_k(P: SymbolSpec, domain: DomainSpec, k=None) -> np.ndarray:
    """P(k eps pi / L) / eps^2 + 1."""
    k = np.arange(-domain.K, domain.K + 1) if k is None else np.asarray(k)
    return P(k * domain.eps * math.pi / domain.L) / domain.eps ** 2 + 1.0


# --- amplitude systems -------------------------------------------------------------

@dataclass(frozen=True)
class CubicTerm:
    target: int                   # equation index l (0-based)
    monomial: tuple               # sorted ((mode index, conjugated?), ...) of length 3
    coefficient: Fraction         # enters the equation as -coefficient * monomial

    def label(self, names=None) -> str:
        parts = []
        for i, conj in self.monomial:
            nm = names[i] if names else f"A{i + 1}"
            parts.append(f"conj({nm})" if conj else nm)
        return "*".join(parts)


@dataclass(frozen=True)
class AmplitudeSystem:
    zeros: tuple
    diffusion: tuple
    linear: tuple
    cubic_terms: tuple
    noise_amp: tuple
    resonances: tuple
    nonlinearity: str
    symbol: str = ""

    def terms_for(self, l: int) -> dict:
        return {t.monomial: t.coefficient for t in self.cubic_terms if t.target == l}

    def to_dict(self) -> dict:
        return {
            "symbol": self.symbol,
            "nonlinearity": self.nonlinearity,
            "zeros": list(self.zeros),
            "diffusion": list(self.diffusion),
            "linear": list(self.linear),
            "noise_amplitude": list(self.noise_amp),
            "cubic_terms": [
                {"equation": t.target + 1, "monomial": t.label(),
                 "factors": [[i + 1, bool(c)] for i, c in t.monomial],
                 "coefficient": str(t.coefficient)} for t in self.cubic_terms],
            "resonances": [list(r) for r in self.resonances],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = []
        for l, z in enumerate(self.zeros):
            rhs = [f"{_fmt(self.diffusion[l])} d_x^2 A{l + 1}", f"{_fmt(self.linear[l])} A{l + 1}"]
            for t in self.cubic_terms:
                if t.target == l:
                    sign = "-" if t.coefficient > 0 else "+"
                    rhs.append(f"{sign} {_fmt(abs(t.coefficient))} {t.label()}")
            rhs.append(f"+ {_fmt(self.noise_amp[l])} eta{l + 1}")
            lines.append(f"dA{l + 1}/dt = " + " ".join(
                [rhs[0], "+ " + rhs[1]] + rhs[2:]) + f"    [carrier zeta = {_fmt(z)}]")
        return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else str(x)
    xf = float(x)
    return str(int(round(xf))) if abs(xf - round(xf)) < 1e-12 else f"{xf:.6g}"


def _carrier_values(P: SymbolSpec) -> list:
    """Exact rationals when the zeros are rational, floats otherwise."""
    exact = check_assumptions(P).exact_zeros
    if exact and all(isinstance(z, sympy.Rational) for z in exact):
        return [Fraction(int(z.p), int(z.q)) for z in exact]
    return [float(z) for z in P.zeros]


def _same(a, b) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) < 1e-9 * max(1.0, abs(float(b)))


def derive_amplitude_system(P: SymbolSpec, nonlinearity: str = "u^3",
                            corr: CorrelationSpec | None = None, nu: float = 1.0) -> AmplitudeSystem:
    """Collect the resonant cubic terms of the ansatz u = sum_j 2 Re(A_j e^{i zeta_j x}).

    Ordered triples of signed carriers are enumerated; each triple is read as
    (undifferentiated factor, factor, factor).  For u^3 the weight is 1, for
    u (u_x)^2 it is -w_b w_c from the two derivatives.
    """
    if nonlinearity not in NONLINEARITIES:
        raise ValueError(f"unsupported nonlinearity {nonlinearity!r}; choose from {NONLINEARITIES}")
    P.require_valid()
    corr = corr or white_noise()
    zs = _carrier_values(P)
    carriers = [(i, s) for i in range(len(zs)) for s in (1, -1)]
    terms: dict = {}
    for l, target in enumerate(zs):
        for trip in itertools.product(carriers, repeat=3):
            w = [s * zs[i] for i, s in trip]
            if not _same(sum(w), target):
                continue
            weight = Fraction(1) if nonlinearity == "u^3" else -w[1] * w[2]
            mono = tuple(sorted((i, s < 0) for i, s in trip))
            terms[(l, mono)] = terms.get((l, mono), 0) + weight
    relations = sorted({(tuple(sorted(float(-zs[i] if c else zs[i]) for i, c in m)), float(zs[l]))
                        for (l, m), c in terms.items() if c != 0 and not _is_diagonal(m, l)})
    cubic = tuple(CubicTerm(l, m, c) for (l, m), c in sorted(terms.items()) if c != 0)
    zf = tuple(float(z) for z in zs)
    return AmplitudeSystem(
        zeros=zf,
        diffusion=tuple(0.5 * float(P.second_derivative(z)) for z in zf),
        linear=tuple(float(nu) for _ in zf),
        cubic_terms=cubic,
        noise_amp=tuple(math.sqrt(float(corr(z))) for z in zf),
        resonances=tuple(relations),
        nonlinearity=nonlinearity,
        symbol=P.name,
    )


def _is_diagonal(mono, l) -> bool:
    """A_l |A_i|^2 type: one unconjugated A_l plus a conjugate pair."""
    rest = list(mono)
    if (l, False) not in rest:
        return False
    rest.remove((l, False))
    (i, c1), (j, c2) = rest
    return i == j and c1 != c2


def monomial_wavenumber(mono, zeros) -> float:
    return sum(-zeros[i] if c else zeros[i] for i, c in mono)
