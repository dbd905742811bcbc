"""Twisted-periodic solutions by harmonic balance, closed-form linear solves and decay audits.

In the twisted gauge a space-time field ``U(p, n)`` represents
``u(t) = sum U(p, n) e^{i (2 pi p / T - a n^d) t} z_n`` and ``u' = i grad G_t(u)``
becomes the diagonal balance

    R(p, n) = lambda_{p,n} U(p, n) - (grad G(u))^(p, n) = 0,
    lambda_{p,n} = 2 pi p / T - a n^d.

``(grad G)^`` is the FFT over a temporal collocation grid of
``grad F_t(phi^A_t u(t))`` evaluated on the physical slices, which are plain
temporal Fourier sums of ``U``.
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
from scipy.sparse.linalg import LinearOperator, gmres

from .diophantine import ResonanceError, from_quotients
from .nonlinearity import NonlinearitySpec, Potential, evaluator
from .spectral import (
    TWO_PI,
    EquationKind,
    Gauge,
    ModelParams,
    SpaceTimeField,
    SpectralField,
    gauge_transform,
    mode_index,
    mode_weight,
    scale_norm,
)


class HBStagnationError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    max_newton: int = 50
    krylov_tol: float = 1e-6
    krylov_max: int = 200
    fd_epsilon: float = 1e-6
    max_halvings: int = 8
    stagnation_steps: int = 5
    picard_warmup: int = 0


def divisors(params: ModelParams, P: int, N: int) -> np.ndarray:
    """``lambda_{p,n}`` on ``[-P, P] x [-N, N]``."""
    p = np.arange(-P, P + 1, dtype=float)[:, None]
    return TWO_PI * p / params.T - params.eigenvalues(N)[None, :]


def resonance_witness(params: ModelParams, P: int, N: int, active: np.ndarray | None = None) -> tuple[int, int] | None:
    """First ``(p, n)`` with ``lambda_{p,n} = 0`` exactly among the active modes."""
    x = params.rotation_number()
    rational = bool(x.is_rational)
    xf = Fraction(int(sympy.fraction(x)[0]), int(sympy.fraction(x)[1])) if rational else None
    for n in mode_index(N):
        n = int(n)
        if n == 0:
            y = Fraction(0)
        elif rational:
            y = xf * n**params.d
        else:
            continue
        if y.denominator == 1 and abs(y.numerator) <= P:
            p = y.numerator
            if active is None or active[p + P, n + N]:
                return (p, n)
    return None


@dataclass
class HBProblem:
    """Harmonic-balance problem on the window ``[-P, P] x [-N, N]``.

    With a mean-free nonlinearity the whole ``n = 0`` column is inactive
    (it carries ``lambda_{0,0} = 0`` and the gradient never reaches it);
    otherwise every mode is active and the resonance check rejects the window.
    """

    params: ModelParams
    spec: NonlinearitySpec
    P: int
    N: int
    options: SolverOptions = field(default_factory=SolverOptions)
    time_factor: int = 4

    def __post_init__(self) -> None:
        if self.P < 0 or self.N < 1:
            raise ValueError("need P >= 0 and N >= 1")
        self.lam = divisors(self.params, self.P, self.N)
        self.active = np.ones_like(self.lam, dtype=bool)
        if self.spec.mean_free:
            self.active[:, self.N] = False
        witness = resonance_witness(self.params, self.P, self.N, self.active)
        if witness is not None:
            raise ResonanceError(
                f"lambda_(p,n) = 0 at (p, n) = {witness} inside the window"
                + ("" if self.spec.mean_free else "; the mean mode needs a mean-free nonlinearity"),
                witness,
            )
        self.Mt = self.time_factor * (2 * self.P + 1)
        if self.Mt < 4 * self.P:
            raise ValueError("temporal collocation grid smaller than 4P")
        self.t_grid = np.arange(self.Mt) * self.params.T / self.Mt
        self.ev = evaluator(self.spec, self.params, self.N)

    @property
    def min_divisor(self) -> tuple[float, tuple[int, int]]:
        lam = np.where(self.active, np.abs(self.lam), np.inf)
        i, j = np.unravel_index(np.argmin(lam), lam.shape)
        return float(lam[i, j]), (int(i - self.P), int(j - self.N))

    def physical_slices(self, U: np.ndarray) -> np.ndarray:
        """``v(t_j) = phi^A_{t_j} u(t_j) = sum_p U(p, n) e^{i 2 pi p t_j / T}``; shape ``(Mt, 2N+1)``."""
        P, Mt = self.P, self.Mt
        buf = np.zeros((Mt, 2 * self.N + 1), dtype=complex)
        buf[: P + 1] = U[P:]
        if P:
            buf[Mt - P :] = U[:P]
        return np.fft.ifft(buf, axis=0) * Mt

    def _to_modes(self, slices: np.ndarray) -> np.ndarray:
        spec = np.fft.fft(slices, axis=0) / self.Mt
        P = self.P
        out = np.empty((2 * P + 1, slices.shape[1]), dtype=complex)
        out[P:] = spec[: P + 1]
        if P:
            out[:P] = spec[self.Mt - P :]
        return out

    def grad_hat(self, U: np.ndarray) -> np.ndarray:
        """Twisted coefficients of ``grad G_t(u(t))``, restricted to active modes."""
        g = self.ev.grad(self.physical_slices(U), self.t_grid)
        out = self._to_modes(g)
        out[~self.active] = 0.0
        return out

    def residual(self, U: np.ndarray) -> np.ndarray:
        R = self.lam * U - self.grad_hat(U)
        R[~self.active] = 0.0
        return R

    def pack(self, U: np.ndarray) -> np.ndarray:
        a = U[self.active]
        return np.concatenate([a.real, a.imag])

    def unpack(self, x: np.ndarray) -> np.ndarray:
        k = x.size // 2
        U = np.zeros(self.lam.shape, dtype=complex)
        U[self.active] = x[:k] + 1j * x[k:]
        return U

    def seed(self) -> np.ndarray:
        """Linear seed ``U = c / lambda`` on the active modes."""
        chat = self.spec.potential.coeffs(self.P, self.N)
        U = np.zeros_like(chat)
        U[self.active] = chat[self.active] / self.lam[self.active]
        return U


def hb_residual(U: SpaceTimeField, problem: HBProblem) -> SpaceTimeField:
    """``R = lambda U - (grad G)^`` for a twisted-gauge field."""
    if U.gauge is not Gauge.TWISTED:
        raise ValueError("harmonic balance works in the twisted gauge")
    if (U.P, U.N) != (problem.P, problem.N):
        raise ValueError(f"field window {(U.P, U.N)} differs from problem window {(problem.P, problem.N)}")
    inactive = U.coeffs[~problem.active]
    if np.any(inactive != 0):
        raise ResonanceError("field excites an inactive (resonant) mode", (0, 0))
    return SpaceTimeField(problem.residual(U.coeffs), U.params, Gauge.TWISTED)


@dataclass
class HBTrace:
    residual_history: list[float] = field(default_factory=list)
    newton_steps: int = 0
    krylov_iterations: list[int] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    picard_steps: int = 0
    min_divisor: float = math.nan
    min_divisor_mode: tuple[int, int] = (0, 0)
    contraction_estimate: float = math.nan
    trivial: bool = False
    converged: bool = False
    physical: SpaceTimeField | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "residual_history": self.residual_history,
            "newton_steps": self.newton_steps,
            "krylov_iterations": self.krylov_iterations,
            "step_lengths": self.step_lengths,
            "picard_steps": self.picard_steps,
            "min_divisor": self.min_divisor,
            "min_divisor_mode": list(self.min_divisor_mode),
            "contraction_estimate": self.contraction_estimate,
            "trivial": self.trivial,
            "converged": self.converged,
        }


def contraction_estimate(problem: HBProblem, U: np.ndarray, probes: int = 4, seed: int = 0) -> float:
    """Sampled ``sup |d grad G| / min |lambda|`` at ``U`` (finite-difference probes)."""
    rng = np.random.default_rng(seed)
    base = np.abs(U).max() if np.any(U) else 1.0
    best = 0.0
    for _ in range(probes):
        V = problem.unpack(rng.normal(size=2 * int(problem.active.sum())))
        V /= np.linalg.norm(V)
        e = 1e-6 * max(1.0, base)
        dG = (problem.grad_hat(U + e * V) - problem.grad_hat(U - e * V)) / (2 * e)
        best = max(best, float(np.linalg.norm(dG)))
    return best / problem.min_divisor[0]


def hb_solve(problem: HBProblem, initial: SpaceTimeField | str = "linear-seed") -> tuple[SpaceTimeField, HBTrace]:
    """Damped Newton-GMRES on the harmonic-balance residual.

    The Jacobian action ``V -> lambda V - d(grad G)[V]`` uses central
    differences; GMRES is preconditioned by ``1 / lambda``. A step is halved
    up to ``max_halvings`` times until the residual decreases; after
    ``stagnation_steps`` consecutive failures the solve stops with the
    smallest divisor and the Picard contraction estimate attached.
    """
    opts = problem.options
    params = problem.params
    trace = HBTrace()
    trace.min_divisor, trace.min_divisor_mode = problem.min_divisor
    zero = np.zeros(problem.lam.shape, dtype=complex)
    R0 = problem.residual(zero)
    if not np.any(R0):
        trace.trivial = trace.converged = True
        trace.residual_history.append(0.0)
        U = SpaceTimeField(zero, params, Gauge.TWISTED)
        trace.physical = gauge_transform(U, Gauge.PHYSICAL)
        return U, trace
    if isinstance(initial, str):
        if initial == "linear-seed":
            U = problem.seed()
        elif initial == "zero":
            U = zero.copy()
        else:
            raise ValueError(f"unknown initial guess {initial!r}")
    else:
        U = np.array(initial.coeffs, dtype=complex)
        U[~problem.active] = 0.0
    for _ in range(opts.picard_warmup):
        G = problem.grad_hat(U)
        U = np.where(problem.active, G / np.where(problem.active, problem.lam, 1.0), 0.0)
        trace.picard_steps += 1
    lam_vec = problem.pack(problem.lam + 0j)
    lam_vec = np.concatenate([lam_vec[: lam_vec.size // 2]] * 2)
    precond = LinearOperator((lam_vec.size,) * 2, matvec=lambda x: x / lam_vec, dtype=float)
    R = problem.residual(U)
    rnorm = float(np.linalg.norm(R))
    trace.residual_history.append(rnorm)
    stalled = 0
    while rnorm > opts.newton_tol:
        if trace.newton_steps >= opts.max_newton:
            break
        Ux = U.copy()

        def jac(v: np.ndarray, Ux: np.ndarray = Ux) -> np.ndarray:
            V = problem.unpack(v)
            nv = np.linalg.norm(V)
            if nv == 0:
                return np.zeros_like(v)
            e = opts.fd_epsilon * max(1.0, float(np.linalg.norm(Ux))) / nv
            dG = (problem.grad_hat(Ux + e * V) - problem.grad_hat(Ux - e * V)) / (2 * e)
            return problem.pack(problem.lam * V - dG)

        A = LinearOperator((lam_vec.size,) * 2, matvec=jac, dtype=float)
        iters = [0]

        def count(_: Any) -> None:
            iters[0] += 1

        delta, _info = gmres(
            A,
            -problem.pack(R),
            rtol=opts.krylov_tol,
            atol=0.0,
            restart=opts.krylov_max,
            maxiter=1,
            M=precond,
            callback=count,
            callback_type="pr_norm",
        )
        trace.krylov_iterations.append(iters[0])
        D = problem.unpack(delta)
        alpha, accepted = 1.0, False
        for _ in range(opts.max_halvings + 1):
            trial = U + alpha * D
            Rt = problem.residual(trial)
            tnorm = float(np.linalg.norm(Rt))
            if tnorm < rnorm:
                accepted = True
                break
            alpha *= 0.5
        U, R = trial, Rt
        trace.newton_steps += 1
        trace.step_lengths.append(alpha)
        if accepted:
            stalled = 0
        else:
            stalled += 1
        rnorm = tnorm
        trace.residual_history.append(rnorm)
        if stalled >= opts.stagnation_steps:
            diag = {
                "min_divisor": trace.min_divisor,
                "min_divisor_mode": list(trace.min_divisor_mode),
                "contraction_estimate": contraction_estimate(problem, U),
                "residual": rnorm,
            }
            raise HBStagnationError(
                f"Newton stagnated at residual {rnorm:.3e}; min |lambda| = {diag['min_divisor']:.3e}, "
                f"Picard estimate sup|d grad G| / min|lambda| = {diag['contraction_estimate']:.3e}",
                diag,
            )
    trace.converged = rnorm <= opts.newton_tol
    trace.contraction_estimate = contraction_estimate(problem, U)
    out = SpaceTimeField(U, params, Gauge.TWISTED)
    trace.physical = gauge_transform(out, Gauge.PHYSICAL)
    return out, trace


def initial_slice(U: SpaceTimeField) -> SpectralField:
    """``u(0) = sum_p U(p, n)``."""
    return SpectralField(U.coeffs.sum(axis=0), U.params)


def round_trip_defects(
    U: SpaceTimeField, spec: NonlinearitySpec, steps: int = 512, forcing: str = "exact"
) -> dict[str, float]:
    """Re-integrate ``u(0)`` over one period along both flow paths.

    ``physical``: ``|phi^H_T u(0) - u(0)|_0`` with the splitting integrator;
    ``twisted``: ``|phi^G_T u(0) - phi^A_{-T} u(0)|_0`` with RK4 on the twisted field.
    """
    from .dynamics import FlowConfig, flow_map, twisted_flow_map
    from .spectral import free_flow

    params = U.params
    u0 = initial_slice(U)
    T = params.T
    phys = flow_map(u0, 0.0, T, FlowConfig(steps, "strang", forcing), spec)
    twist = twisted_flow_map(u0, 0.0, T, steps, spec, forcing)
    return {
        "physical": (phys - u0).norm(),
        "twisted": (twist - free_flow(u0, -T)).norm(),
        "steps": steps,
    }


@dataclass
class DecayAudit:
    p: np.ndarray
    n: np.ndarray
    magnitude: np.ndarray
    statistic: np.ndarray
    shell_max: list[float]
    shells_nonempty: list[bool]
    regularity_sigma: float
    regularity_norm: float
    regularity_samples: list[float]
    monotone_tail: bool
    slack: float = 1.1

    @property
    def verdict(self) -> str:
        return "PASS" if self.monotone_tail else "FAIL"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["p", "n", "abs", "statistic"])
        for row in zip(self.p.ravel(), self.n.ravel(), self.magnitude.ravel(), self.statistic.ravel()):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3]))])
        return buf.getvalue()

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "shell_max": self.shell_max,
            "regularity_sigma": self.regularity_sigma,
            "regularity_norm": self.regularity_norm,
            "max_statistic": float(self.statistic.max()) if self.statistic.size else 0.0,
        }


def decay_audit(U: SpaceTimeField, params: ModelParams | None = None, n_times: int = 32, slack: float = 1.1) -> DecayAudit:
    """Per-mode decay statistic, dyadic shell maxima and the sampled regularity norm.

    The statistic is ``|U(p, n)| w(n)^{h - d(r-1)} max(|p|, 1)^m`` and shell
    ``j`` collects ``2^j <= max(max(|p|,1), w(n)) < 2^{j+1}``. The tail is
    monotone when every non-empty shell beyond shell 2 is at most ``slack``
    times the previous non-empty one.
    """
    params = params or U.params
    P, N = U.P, U.N
    p = np.arange(-P, P + 1)[:, None] * np.ones((1, 2 * N + 1), dtype=int)
    n = np.ones((2 * P + 1, 1), dtype=int) * mode_index(N)[None, :]
    beta = params.h - params.d * (params.r - 1)
    mag = np.abs(U.coeffs)
    stat = mag * mode_weight(n) ** beta * np.maximum(np.abs(p), 1).astype(float) ** params.m
    rho = np.maximum(np.maximum(np.abs(p), 1), np.maximum(np.abs(n), 1))
    shell = np.floor(np.log2(rho)).astype(int)
    n_shells = int(shell.max()) + 1
    shell_max, nonempty = [], []
    for j in range(n_shells):
        sel = shell == j
        nonempty.append(bool(sel.any()))
        shell_max.append(float(stat[sel].max()) if sel.any() else 0.0)
    ok = True
    prev = None
    for j in range(2, n_shells):
        if not nonempty[j]:
            continue
        if prev is not None and shell_max[j] > slack * shell_max[prev]:
            ok = False
        prev = j
    sigma = beta - 0.5
    ts = np.arange(n_times) * params.T / n_times
    samples = [scale_norm(U.evaluate(float(t)), sigma) for t in ts]
    return DecayAudit(p, n, mag, stat, shell_max, nonempty, sigma, max(samples), samples, ok, slack)


def _wave_resonance(params: ModelParams, P: int, N: int, forced: np.ndarray) -> tuple[int, int] | None:
    ratio = sympy.nsimplify(params.period_T / params.period_X)
    for i, j in zip(*np.nonzero(forced)):
        p, n = int(i - P), int(j - N)
        if n == 0 and p == 0:
            return (p, n)
        if ratio.is_rational and sympy.Integer(p) ** 2 == (ratio * n) ** 2:
            return (p, n)
    return None


def linear_forced_solve(
    chat: np.ndarray | Potential,
    params: ModelParams,
    P: int | None = None,
    N: int | None = None,
    form: str = "first-order",
) -> tuple[SpaceTimeField, DecayAudit]:
    """Closed-form solution of the linear forced problem.

    ``first-order``: ``U = c / lambda`` (twisted gauge). ``wave``:
    ``phi(p, n) = c / ((2 pi n / X)^2 - (2 pi p / T)^2)`` for
    ``phi_tt = phi_xx + c`` in the physical exponential basis, which is the
    same number as ``c (T / 2 pi n)^2 / ((T/X - p/n)(T/X + p/n))``. Exactly
    resonant modes are an error when forced and left at zero otherwise.
    """
    if isinstance(chat, Potential):
        if P is None or N is None:
            raise ValueError("window (P, N) required with a Potential")
        chat = chat.coeffs(P, N)
    chat = np.asarray(chat, dtype=complex)
    P, N = (chat.shape[0] - 1) // 2, (chat.shape[1] - 1) // 2
    forced = chat != 0
    if form == "first-order":
        witness = resonance_witness(params, P, N, forced)
        denom = divisors(params, P, N)
        gauge = Gauge.TWISTED
    elif form == "wave":
        witness = _wave_resonance(params, P, N, forced)
        p = np.arange(-P, P + 1, dtype=float)[:, None]
        n = mode_index(N).astype(float)[None, :]
        denom = (TWO_PI * n / params.X) ** 2 - (TWO_PI * p / params.T) ** 2
        gauge = Gauge.PHYSICAL
    else:
        raise ValueError(f"unknown form {form!r}")
    if witness is not None:
        raise ResonanceError(f"forced mode (p, n) = {witness} is exactly resonant", witness)
    out = np.zeros_like(chat)
    out[forced] = chat[forced] / denom[forced]
    U = SpaceTimeField(out, params, gauge)
    return U, decay_audit(U, params)


@dataclass
class CounterexampleEntry:
    k: int
    p: int
    q: int
    chat_scaled: Fraction
    chat_magnitude: float
    exponent: float
    phi_hat: Fraction


@dataclass
class CounterexampleReport:
    quotients: list[int]
    ratio: Fraction
    entries: list[CounterexampleEntry]
    superpolynomial: bool
    coefficients_exactly_one: bool
    min_order: float
    potential: Potential
    params: ModelParams

    def to_dict(self) -> dict[str, Any]:
        return {
            "quotients": self.quotients,
            "superpolynomial_decay": self.superpolynomial,
            "smoothness_flag": "PASS" if self.superpolynomial else "FAIL",
            "solution_coefficients_exactly_one": self.coefficients_exactly_one,
            "min_order": self.min_order,
            "entries": [
                {
                    "k": e.k,
                    "p": e.p,
                    "q": e.q,
                    "chat_magnitude": e.chat_magnitude,
                    "log10_chat": float(mpmath.log10(abs(mpmath.mpf(e.chat_scaled.numerator) / e.chat_scaled.denominator)))
                    + 2 * math.log10(TWO_PI / float(self.params.T)),
                    "exponent": e.exponent,
                    "phi_hat": str(e.phi_hat),
                }
                for e in self.entries
            ],
        }


def liouville_schedule(depth: int) -> list[int]:
    """Quotients ``[1; 2, a_2, ...]`` with ``a_{k+1} = q_k^k``.

    Then ``|x - p_k/q_k| ~ q_k^{-(k+2)}``, so the forcing along the
    convergents decays like ``q_k^{-k}``: faster than any fixed power.
    """
    if depth < 2:
        raise ValueError("depth must be >= 2")
    terms = [1, 2]
    q_prev, q = 1, 2
    while len(terms) < depth + 1:
        k = len(terms) - 1
        a = q**k
        terms.append(a)
        q_prev, q = q, a * q + q_prev
    return terms


def counterexample_generate(quotients: Sequence[int], min_order: float = 4.0) -> CounterexampleReport:
    """Forcing concentrated on near-resonances of ``T/X = [a_0; a_1, ...]``.

    With ``X = 2 pi`` and ``T = 2 pi x``, the forcing at ``(p_k, q_k)`` is
    ``c = (2 pi / T)^2 (q_k^2 x^2 - p_k^2)``, which makes the wave-form
    solution coefficient exactly ``1``. The last convergent equals ``x`` and
    is skipped (it is an exact resonance). The decay flag requires the
    effective orders ``-log|c| / log q_k`` to increase strictly and to reach
    ``min_order``.
    """
    quotients = [int(a) for a in quotients]
    if not quotients:
        raise ValueError("empty quotient schedule")
    if any(a <= 0 for a in quotients):
        raise ValueError("quotients must be positive")
    x = from_quotients(quotients)
    convs = []
    p_prev, q_prev, p, q = 1, 0, quotients[0], 1
    convs.append((p, q))
    for a in quotients[1:]:
        p_prev, q_prev, p, q = p, q, a * p + p_prev, a * q + q_prev
        convs.append((p, q))
    convs = [(p, q) for p, q in convs if Fraction(p, q) != x and q >= 2]
    if len(convs) < 3:
        raise ValueError(f"schedule yields {len(convs)} usable convergents; need at least 3")
    params = ModelParams(
        period_X=2 * sympy.pi,
        period_T=2 * sympy.pi * sympy.Rational(x.numerator, x.denominator),
        d=2,
        kind=EquationKind.NLW,
    )
    scale = mpmath.mpf(1) / mpmath.mpf(x.numerator) ** 2 * mpmath.mpf(x.denominator) ** 2  # (2 pi / T)^2 with X = 2 pi
    entries = []
    modes = []
    for k, (p, q) in enumerate(convs, start=1):
        ct = q * q * x * x - p * p
        # wave-form division c / ((2 pi q / X)^2 - (2 pi p / T)^2) in units of (2 pi / X)^2
        phi = (ct / (x * x)) / (q * q - Fraction(p * p) / (x * x))
        mag = abs(mpmath.mpf(ct.numerator) / ct.denominator) * scale
        exponent = float(-mpmath.log(mag) / mpmath.log(q))
        entries.append(CounterexampleEntry(k, p, q, ct, float(mag), exponent, phi))
        modes.append((p, q, float(mag) * (1 if ct > 0 else -1), 0.0))
        modes.append((-p, -q, float(mag) * (1 if ct > 0 else -1), 0.0))
    orders = [e.exponent for e in entries]
    increasing = all(b > a for a, b in zip(orders, orders[1:]))
    superpoly = increasing and orders[-1] >= min_order
    exactly_one = all(e.phi_hat == 1 for e in entries)
    pot = Potential(family="modes", modes=tuple(m for m in modes if m[2] != 0.0))
    return CounterexampleReport(quotients, x, entries, superpoly, exactly_one, min_order, pot, params)
