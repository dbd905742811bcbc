"""Continued fractions, irrationality profiles and small-divisor scans.

Real numbers enter either exactly (integers, fractions, sympy rationals) or
as an enclosure ``[x - delta, x + delta]`` computed at ``precision_bits`` of
working precision. Partial quotients are only emitted while both ends of the
enclosure agree on them, so a continued fraction is never silently wrong:
when the enclosure stops determining the next quotient the expansion ends
with ``exhausted=True``.

Every verdict is a finite-depth statement. "Diophantine" cannot be decided
from finitely many digits; :func:`check_admissible` only certifies that no
convergent with denominator up to ``scan_depth`` beats the configured budget.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import mpmath
import numpy as np
import sympy

from .spectral import TWO_PI, ModelParams

DEFAULT_PRECISION_BITS = 256


class ResonanceError(ArithmeticError):
    """An exact resonance ``lambda_{p,n} = 0`` was found."""

    def __init__(self, message: str, witness: tuple[int, int]):
        super().__init__(message)
        self.witness = witness


class WindowTooSmallError(ValueError):
    def __init__(self, message: str, n: int):
        super().__init__(message)
        self.n = n


@dataclass(frozen=True)
class RealSource:
    """An exact rational or a certified enclosure of a real number."""

    lo: Fraction
    hi: Fraction
    precision_bits: int | None
    label: str = ""

    @property
    def exact(self) -> bool:
        return self.lo == self.hi

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def radius(self) -> Fraction:
        return (self.hi - self.lo) / 2


def _mpf_to_fraction(x: mpmath.mpf) -> Fraction:
    # read the mantissa directly; re-wrapping would round to the global precision
    man, exp = x.man_exp
    return Fraction(int(man)) * Fraction(2) ** int(exp)


def real_source(x: Any, precision_bits: int = DEFAULT_PRECISION_BITS) -> RealSource:
    """Normalise ``x`` into a :class:`RealSource`.

    Accepts ints, :class:`~fractions.Fraction`, floats (taken as the exact
    binary value), sympy expressions or strings parsed by sympy.
    """
    if isinstance(x, RealSource):
        return x
    if isinstance(x, (int, Fraction)):
        f = Fraction(x)
        return RealSource(f, f, None, str(f))
    if isinstance(x, float):
        f = Fraction(x)
        return RealSource(f, f, 53, repr(x))
    expr = sympy.sympify(x, rational=True) if isinstance(x, str) else x
    if not isinstance(expr, sympy.Basic):
        raise TypeError(f"cannot analyse {x!r}")
    if expr.is_rational:
        num, den = sympy.fraction(sympy.nsimplify(expr))
        f = Fraction(int(num), int(den))
        return RealSource(f, f, None, str(expr))
    digits = int(precision_bits * math.log10(2)) + 10
    with mpmath.workprec(precision_bits + 40):
        value = mpmath.mpf(sympy.N(expr, digits))
    mid = _mpf_to_fraction(value)
    # evalf is accurate to the requested digits; keep a generous guard
    radius = abs(mid) * Fraction(1, 2 ** (precision_bits - 4)) + Fraction(1, 2 ** (precision_bits + 32))
    return RealSource(mid - radius, mid + radius, precision_bits, str(expr))


@dataclass
class ContinuedFraction:
    integer_part: int
    quotients: list[int]
    convergents: list[tuple[int, int]]
    source: RealSource
    exhausted: bool = False
    terminated: bool = False

    @property
    def terms(self) -> list[int]:
        return [self.integer_part, *self.quotients]


def _floor(x: Fraction) -> int:
    return x.numerator // x.denominator


def continued_fraction(x: Any, depth: int, precision_bits: int = DEFAULT_PRECISION_BITS) -> ContinuedFraction:
    """Partial quotients after the integer part, up to ``depth`` of them.

    ``terminated`` marks an exact rational whose expansion ended;
    ``exhausted`` marks an enclosure too wide to fix the next quotient.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    src = real_source(x, precision_bits)
    lo, hi = src.lo, src.hi
    a0 = _floor(lo)
    if _floor(hi) != a0:
        return ContinuedFraction(a0, [], [], src, exhausted=True)
    p_prev, q_prev, p, q = 1, 0, a0, 1
    convergents = [(p, q)]
    quotients: list[int] = []
    lo, hi = lo - a0, hi - a0
    exhausted = terminated = False
    while len(quotients) < depth:
        if lo == 0 and hi == 0:
            terminated = True
            break
        if lo <= 0:
            exhausted = True
            break
        lo, hi = 1 / hi, 1 / lo
        a = _floor(lo)
        if _floor(hi) != a or (hi == a + 1 and lo != hi):
            exhausted = True
            break
        quotients.append(a)
        p_prev, q_prev, p, q = p, q, a * p + p_prev, a * q + q_prev
        convergents.append((p, q))
        lo, hi = lo - a, hi - a
    else:
        terminated = src.exact and lo == 0
    return ContinuedFraction(a0, quotients, convergents, src, exhausted, terminated)


def convergents_up_to(x: Any, q_max: int, precision_bits: int = DEFAULT_PRECISION_BITS) -> ContinuedFraction:
    """Expand until a convergent denominator exceeds ``q_max`` (or the expansion stops)."""
    depth = 16
    while True:
        cf = continued_fraction(x, depth, precision_bits)
        if cf.terminated or cf.exhausted or cf.convergents[-1][1] > q_max:
            return cf
        depth *= 2


def from_quotients(terms: Sequence[int]) -> Fraction:
    """The rational ``[a0; a1, ..., ak]``."""
    if not terms:
        raise ValueError("empty quotient schedule")
    value = Fraction(terms[-1])
    for a in reversed(terms[:-1]):
        value = a + 1 / value
    return value


@dataclass(frozen=True)
class ProfileEntry:
    q: int
    p: int
    exponent: float
    exact_hit: bool = False


def _log_abs(x: Fraction) -> float:
    return float(mpmath.log(abs(mpmath.mpf(x.numerator))) - mpmath.log(mpmath.mpf(x.denominator)))


def irrationality_profile(
    x: Any, q_max: int, precision_bits: int = DEFAULT_PRECISION_BITS
) -> list[ProfileEntry]:
    """Effective exponents ``-log|x - p/q| / log q`` along convergents with ``2 <= q <= q_max``.

    An exact hit (``x = p/q``) yields ``exponent = inf`` and ends the profile.
    """
    if q_max < 2:
        raise ValueError("q_max must be >= 2")
    src = real_source(x, precision_bits)
    cf = convergents_up_to(src, q_max, precision_bits)
    out: list[ProfileEntry] = []
    for p, q in cf.convergents:
        if q > q_max:
            break
        if q < 2:
            continue
        err = src.mid - Fraction(p, q)
        if err == 0 and src.exact:
            out.append(ProfileEntry(q, p, math.inf, True))
            break
        if abs(err) <= src.radius:
            break  # below working precision
        out.append(ProfileEntry(q, p, -_log_abs(err) / math.log(q)))
    return out


def small_divisor(p: int, n: int, params: ModelParams) -> float:
    """``lambda_{p,n} = 2 pi p / T - a n^d``."""
    return TWO_PI * p / params.T - params.a * float(n) ** params.d


def divisor_grid(params: ModelParams, P: int, N: int) -> np.ndarray:
    """``lambda_{p,n}`` on the window ``[-P, P] x [-N, N]``."""
    p = np.arange(-P, P + 1, dtype=float)[:, None]
    return TWO_PI * p / params.T - params.eigenvalues(N)[None, :]


def find_window_resonance(params: ModelParams, P: int, N: int, skip_mean: bool = False) -> tuple[int, int] | None:
    """Return an exactly resonant ``(p, n)`` in the window, else ``None``.

    Resonance means ``x n^d`` is an integer ``p`` with ``|p| <= P`` where
    ``x = aT/2pi``; this only happens for rational ``x`` (or ``n = 0``).
    """
    if not skip_mean:
        return (0, 0)
    x = params.rotation_number()
    if not x.is_rational:
        return None
    num, den = sympy.fraction(x)
    xf = Fraction(int(num), int(den))
    for n in range(1, N + 1):
        y = xf * n**params.d
        if y.denominator == 1 and abs(y.numerator) <= P:
            return (y.numerator, n)
    return None


@dataclass
class DivisorTable:
    n: np.ndarray
    p_min: np.ndarray
    mu: np.ndarray
    fitted_exponent: float
    fitted_constant: float
    r: float
    d: int
    record_n: np.ndarray
    precision_bits: int | None
    rowwise_ok: bool = True
    fit_on: str = "record minima"

    @property
    def rowwise_bound(self) -> np.ndarray:
        return self.fitted_constant * self.n.astype(float) ** (-self.d * (self.r - 1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["n", "p_min", "mu", "log_n", "log_mu"])
        for n, p, mu in zip(self.n, self.p_min, self.mu):
            w.writerow([int(n), int(p), repr(float(mu)), repr(math.log(n)), repr(math.log(mu))])
        return buf.getvalue()


def divisor_scan(
    params: ModelParams,
    N_scan: int,
    P_scan: int,
    precision_bits: int = DEFAULT_PRECISION_BITS,
) -> DivisorTable:
    """Minimal divisors ``mu(n) = min_{|p| <= P_scan} |lambda_{p,n}|`` for ``1 <= n <= N_scan``.

    The minimiser is the integer nearest to ``x n^d`` (``x = aT/2pi``),
    computed in exact arithmetic on the enclosure midpoint. The power law is
    fitted on the running-minimum records (the lower envelope), where the
    Diophantine bound is sharp; the constant is the row-wise infimum of
    ``mu(n) n^{d(r-1)}`` and is data, not a certified bound.
    """
    if N_scan < 8 or P_scan < 8:
        raise ValueError("N_scan and P_scan must be >= 8")
    src = real_source(params.rotation_number(), precision_bits)
    x = src.mid
    scale = TWO_PI / params.T
    ns = np.arange(1, N_scan + 1)
    p_min = np.empty(N_scan, dtype=np.int64)
    mu = np.empty(N_scan)
    for i, n in enumerate(ns):
        y = x * int(n) ** params.d
        p = _floor(y + Fraction(1, 2))
        dist = abs(y - p)
        if dist == 0 or (not src.exact and dist <= src.radius * int(n) ** params.d):
            raise ResonanceError(f"exact resonance at (p, n) = ({p}, {n}) at working precision", (p, int(n)))
        if abs(p) > P_scan:
            raise WindowTooSmallError(
                f"minimizing p = {p} for n = {n} lies outside |p| <= {P_scan}", int(n)
            )
        p_min[i] = p
        mu[i] = scale * float(mpmath.mpf(dist.numerator) / dist.denominator)
    records = [0]
    for i in range(1, N_scan):
        if mu[i] < mu[records[-1]]:
            records.append(i)
    rec = np.array(records)
    pts = rec if rec.size >= 3 else np.arange(N_scan)
    slope, _ = np.polyfit(np.log(ns[pts]), np.log(mu[pts]), 1)
    expo = params.d * (params.r - 1)
    c = float(np.min(mu * ns.astype(float) ** expo))
    table = DivisorTable(
        n=ns,
        p_min=p_min,
        mu=mu,
        fitted_exponent=float(slope),
        fitted_constant=c,
        r=params.r,
        d=params.d,
        record_n=ns[rec],
        precision_bits=src.precision_bits,
    )
    table.rowwise_ok = bool(c > 0 and np.all(mu >= table.rowwise_bound * (1 - 1e-12)))
    return table


@dataclass
class AdmissibilityReport:
    verdict: str
    depth: int
    precision_bits: int | None
    rotation_number: str
    evidence: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "depth": self.depth,
            "precision_bits": self.precision_bits,
            "rotation_number": self.rotation_number,
            "evidence": self.evidence,
        }


def check_admissible(
    params: ModelParams,
    scan_depth: int,
    precision_bits: int = DEFAULT_PRECISION_BITS,
    budget_slack: float = 3.0,
) -> AdmissibilityReport:
    """Finite-depth Diophantine certificate for ``x = aT/2pi``.

    Convergents ``p/q`` with ``q <= scan_depth`` are walked in order; the first
    event decides: an exact hit gives ``"resonant"``, a convergent with
    ``|x - p/q| < 1 / (budget_slack * q^r)`` gives ``"suspicious"``. Otherwise
    the verdict is ``"admissible-at-depth"``. The slack absorbs the constant
    in the Diophantine inequality (``sqrt 5`` is optimal for r = 2).
    """
    x = params.rotation_number()
    src = real_source(x, precision_bits)
    cf = convergents_up_to(src, scan_depth, precision_bits)
    base = {"depth": scan_depth, "precision_bits": src.precision_bits or precision_bits, "rotation_number": str(x)}
    checked = 0
    for p, q in cf.convergents:
        if q > scan_depth:
            break
        err = src.mid - Fraction(p, q)
        if err == 0 and src.exact:
            return AdmissibilityReport("resonant", **base, evidence={"witness": [p, q], "convergents_checked": checked})
        checked += 1
        if q < 2 or abs(err) <= src.radius:
            continue
        exponent = -_log_abs(err) / math.log(q)
        if exponent > params.r + math.log(budget_slack) / math.log(q):
            return AdmissibilityReport(
                "suspicious",
                **base,
                evidence={"witness": [p, q], "effective_exponent": exponent, "convergents_checked": checked},
            )
    return AdmissibilityReport(
        "admissible-at-depth",
        **base,
        evidence={
            "convergents_checked": checked,
            "largest_q": max((q for _, q in cf.convergents if q <= scan_depth), default=1),
            "precision_exhausted": cf.exhausted,
        },
    )


def hurwitz_bound(q: int) -> float:
    return 1.0 / (math.sqrt(5.0) * q * q)


def liouville_partial_sum(terms: int) -> Fraction:
    """``sum_{k=1}^{terms} 10^{-k!}``."""
    return sum((Fraction(1, 10 ** math.factorial(k)) for k in range(1, terms + 1)), Fraction(0))


def exhaustive_minimizer(x: float | Fraction, n: int, d: int, P: int) -> int:
    """Brute-force ``argmin_{|p| <= P} |p - x n^d|`` (ties to the smaller p)."""
    y = Fraction(x) * n**d
    best, best_p = None, 0
    for p in range(-P, P + 1):
        dist = abs(y - p)
        if best is None or dist < best:
            best, best_p = dist, p
    return best_p
