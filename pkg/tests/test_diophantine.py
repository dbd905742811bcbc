import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from floerpde.diophantine import (
    ResonanceError,
    WindowTooSmallError,
    check_admissible,
    continued_fraction,
    convergents_up_to,
    divisor_grid,
    divisor_scan,
    exhaustive_minimizer,
    find_window_resonance,
    from_quotients,
    hurwitz_bound,
    irrationality_profile,
    liouville_partial_sum,
    real_source,
    small_divisor,
)
from floerpde.spectral import ModelParams

GOLDEN = (1 + sympy.sqrt(5)) / 2


def golden_params(d):
    return ModelParams.from_rotation(GOLDEN, d=d, h=3.0 * d, r=2.0)


def test_rational_expansion():
    cf = continued_fraction(Fraction(7, 3), 5)
    assert cf.terms == [2, 3]
    assert cf.convergents == [(2, 1), (7, 3)]
    assert cf.terminated and not cf.exhausted


def test_golden_convergents_are_fibonacci_ratios():
    cf = continued_fraction(GOLDEN, 10)
    assert cf.terms == [1] * 11
    fib = [1, 1]
    while len(fib) < 13:
        fib.append(fib[-1] + fib[-2])
    assert cf.convergents == [(fib[k + 1], fib[k]) for k in range(11)]


def test_sqrt2_convergents():
    cf = continued_fraction(sympy.sqrt(2), 6)
    assert cf.terms == [1, 2, 2, 2, 2, 2, 2]
    for p, q in [(3, 2), (7, 5), (17, 12)]:
        assert (p, q) in cf.convergents
    # squares approach 2 alternately from both sides
    errs = [Fraction(p * p, q * q) - 2 for p, q in cf.convergents]
    assert all(abs(b) < abs(a) for a, b in zip(errs, errs[1:]))
    assert all((a > 0) != (b > 0) for a, b in zip(errs, errs[1:]))


def test_precision_exhaustion_is_flagged():
    cf = continued_fraction(GOLDEN, 10_000, precision_bits=64)
    assert cf.exhausted
    exact = continued_fraction(GOLDEN, len(cf.quotients) + 5, precision_bits=512)
    assert cf.quotients == exact.quotients[: len(cf.quotients)]


def test_float_source_is_exact_binary():
    src = real_source(0.1)
    assert src.exact and src.mid == Fraction(0.1)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=12), st.integers(0, 20), st.integers(2, 60))
def test_quotients_round_trip(tail, a0, last):
    terms = [a0, *tail, last]
    cf = continued_fraction(from_quotients(terms), 100)
    assert cf.terms == terms and cf.terminated


@given(st.integers(2, 10_000).filter(lambda k: math.isqrt(k) ** 2 != k))
def test_convergent_invariants(k):
    x = sympy.sqrt(k)
    cf = continued_fraction(x, 30)
    conv, terms = cf.convergents, cf.terms
    for j in range(2, len(conv)):
        assert conv[j][0] == terms[j] * conv[j - 1][0] + conv[j - 2][0]
        assert conv[j][1] == terms[j] * conv[j - 1][1] + conv[j - 2][1]
    mid = cf.source.mid
    for (p, q), (_, q_next) in zip(conv, conv[1:]):
        assert math.gcd(p, q) == 1
        assert abs(mid - Fraction(p, q)) < Fraction(1, q * q_next)


def test_profile_detects_rational():
    prof = irrationality_profile(Fraction(1, 2), 1000)
    assert prof[-1].exact_hit and prof[-1].exponent == math.inf


def test_golden_profile_obeys_hurwitz():
    prof = irrationality_profile(GOLDEN, 10**6)
    assert prof[-1].q == 832040
    mid = real_source(GOLDEN).mid
    phi = (1 + math.sqrt(5)) / 2
    q_prev = 1
    for e in prof:
        # q^2 |x - p/q| = 1 / (phi + q_prev / q), which tends to 1 / sqrt(5)
        scaled = float(abs(mid - Fraction(e.p, e.q))) * e.q**2
        assert scaled == pytest.approx(1.0 / (phi + q_prev / e.q), rel=1e-12)
        assert scaled >= 1.0 / phi**2
        assert e.exponent <= 2 + 2 * math.log(phi) / math.log(e.q) + 1e-12
        q_prev = e.q
    assert prof[-1].q ** 2 * float(abs(mid - Fraction(prof[-1].p, prof[-1].q))) == pytest.approx(hurwitz_bound(1), rel=1e-10)
    excess = [e.exponent - 2 for e in prof]
    assert excess[-1] < excess[0] and excess[-1] < 0.06


def test_liouville_profile_has_large_exponent():
    x = liouville_partial_sum(4)
    prof = irrationality_profile(x, 10**6)
    assert max(e.exponent for e in prof) > 3


def test_small_divisor_values():
    p = ModelParams("2*pi", "2*pi", d=2)
    assert small_divisor(4, 2, p) == 0.0
    assert small_divisor(0, 0, p) == 0.0
    q = golden_params(1)
    x = float(GOLDEN)
    assert small_divisor(3, 2, q) == pytest.approx(2 * math.pi / q.T * (3 - x * 2), rel=1e-12)
    grid = divisor_grid(q, 3, 2)
    assert grid[3 + 3, 2 + 2] == pytest.approx(small_divisor(3, 2, q), rel=1e-14)


def test_window_resonance_lookup():
    assert find_window_resonance(ModelParams("2*pi", "2*pi", d=2), 8, 4, skip_mean=True) == (1, 1)
    assert find_window_resonance(golden_params(2), 64, 32, skip_mean=True) is None
    assert find_window_resonance(golden_params(2), 64, 32) == (0, 0)


def test_golden_d1_scan_law():
    table = divisor_scan(golden_params(1), 256, 512)
    assert -1.1 <= table.fitted_exponent <= -0.9
    assert table.rowwise_ok and table.fitted_constant > 0
    assert np.all(table.mu * table.n >= table.fitted_constant * (1 - 1e-12))
    # records sit on Fibonacci numbers
    assert list(table.record_n[-4:]) == [55, 89, 144, 233]


def test_golden_d2_rowwise_bound():
    params = golden_params(2)
    table = divisor_scan(params, 128, 30_000)
    assert table.rowwise_ok
    assert np.all(table.mu >= table.fitted_constant * table.n.astype(float) ** -2.0 * (1 - 1e-12))
    assert np.all(table.mu <= math.pi / params.T * (1 + 1e-12))


def test_scan_minimizers_match_brute_force():
    params = golden_params(1)
    P = 512
    table = divisor_scan(params, 256, P)
    x = real_source(params.rotation_number()).mid
    rng = np.random.default_rng(7)
    lam = divisor_grid(params, P, 256)
    for n in rng.choice(table.n, 10, replace=False):
        assert table.p_min[n - 1] == exhaustive_minimizer(x, int(n), 1, P)
        assert np.argmin(np.abs(lam[:, 256 + n])) - P == table.p_min[n - 1]


def test_rational_scan_reports_resonance():
    with pytest.raises(ResonanceError) as exc:
        divisor_scan(ModelParams("2*pi", "2*pi", d=2), 16, 64)
    assert exc.value.witness == (1, 1)


def test_window_too_small_names_first_row():
    with pytest.raises(WindowTooSmallError) as exc:
        divisor_scan(golden_params(2), 32, 100)
    assert exc.value.n == 8  # first n with round(x n^2) > 100
    with pytest.raises(ValueError):
        divisor_scan(golden_params(1), 4, 64)


def test_admissibility_verdicts():
    assert check_admissible(ModelParams("2*pi", "2*pi", d=1), 1000).verdict == "resonant"
    golden = check_admissible(golden_params(1), 10**6)
    assert golden.verdict == "admissible-at-depth" and golden.precision_bits == 256
    liou = ModelParams.from_rotation(sympy.Rational(liouville_partial_sum(4)), d=1, h=3.0)
    rep = check_admissible(liou, 10**6)
    assert rep.verdict == "suspicious"
    p, q = rep.evidence["witness"]
    assert rep.evidence["effective_exponent"] > 2
    assert rep.to_dict()["depth"] == 10**6


def test_convergents_up_to_stops_past_bound():
    cf = convergents_up_to(GOLDEN, 1000)
    assert cf.convergents[-1][1] > 1000 >= cf.convergents[-2][1]


def test_enclosure_keeps_working_precision():
    import mpmath

    src = real_source(GOLDEN, 256)
    with mpmath.workprec(400):
        exact = (1 + mpmath.sqrt(5)) / 2
        err = abs(mpmath.mpf(src.mid.numerator) / src.mid.denominator - exact)
        assert err < mpmath.mpf(2) ** -250
        assert mpmath.mpf(src.lo.numerator) / src.lo.denominator <= exact <= mpmath.mpf(src.hi.numerator) / src.hi.denominator
