"""Regularizing convolution nonlinearities, their gradients and the cutoff wrapper.

A nonlinearity is assembled from a kernel ``psi`` (given by its Fourier
coefficients), a pointwise profile ``f`` and an exterior potential ``c_t``:

* NLS-like:  ``F_t(u) = 1/2 int_0^X eps m(t) f(|u*psi|^2) dx + <c_t, u>``
* NLW-like:  ``F_t(u) = 1/(2 pi) int_0^X eps m(t) g(phi*psi) dx + <c_t, u>``

with ``(u*psi)^(n) = u(n) psi(n)``. Integrals are trapezoid sums on an
equispaced collocation grid; gradients are exact gradients of those sums
with respect to the real inner product ``Re sum u conj(v)``.

Every evaluation routine is vectorised over leading axes so that a whole
temporal grid of slices can be processed in one call.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
import sympy
from scipy.special import expit

from .spectral import (
    TWO_PI,
    EquationKind,
    ModelParams,
    SpectralField,
    coeffs_to_grid,
    free_multiplier,
    grid_to_coeffs,
    mode_index,
    mode_weight,
    nlw_exponential_coeffs,
)

KERNEL_FAMILIES = ("bessel", "bump", "table")
PROFILE_FAMILIES = ("polynomial", "gaussian_poly", "sine")
POTENTIAL_FAMILIES = ("zero", "exp_decay", "modes")


@dataclass(frozen=True)
class Kernel:
    """Kernel coefficients ``psi(n)`` with a declared decay class ``|psi(n)| <= K w(n)^{-h_psi}``.

    ``bessel`` is ``(1 + n^2)^{-order/2}``; ``bump`` is the smooth bump
    ``exp(-1/(1 - (x/delta)^2))`` on ``|x| < delta = support * X``, normalised
    to ``psi(0) = 1``; ``table`` holds explicit ``(n, re, im)`` rows and is
    zero elsewhere.
    """

    family: str = "bessel"
    order: float = 6.0
    support: float = 0.25
    table: tuple[tuple[int, float, float], ...] = ()
    h_psi: float | None = None
    K: float | None = None

    def __post_init__(self) -> None:
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "bump" and not 0 < self.support < 0.5:
            raise ValueError("bump support must lie in (0, 0.5)")

    @property
    def decay_order(self) -> float:
        if self.h_psi is not None:
            return float(self.h_psi)
        return float(self.order) if self.family == "bessel" else 0.0

    def coeffs(self, N: int, X: float = TWO_PI) -> np.ndarray:
        n = mode_index(N).astype(float)
        if self.family == "bessel":
            return (1.0 + n * n) ** (-self.order / 2.0) + 0j
        if self.family == "bump":
            return _bump_coeffs(N, self.support)
        out = np.zeros(2 * N + 1, dtype=complex)
        for k, re, im in self.table:
            if abs(k) <= N:
                out[k + N] = complex(re, im)
        return out

    def verify(self, N: int, X: float = TWO_PI) -> float:
        """Check the declared decay class on ``[-N, N]``; return the smallest valid ``K``."""
        psi = self.coeffs(N, X)
        ratio = np.abs(psi) * mode_weight(mode_index(N)) ** self.decay_order
        k_eff = float(ratio.max())
        if self.K is not None and k_eff > self.K * (1 + 1e-12):
            n_bad = int(mode_index(N)[np.argmax(ratio)])
            raise ValueError(
                f"kernel violates |psi(n)| <= {self.K} w(n)^-{self.decay_order} at n = {n_bad} (needs K >= {k_eff:.6g})"
            )
        return k_eff


@functools.lru_cache(maxsize=64)
def _bump_coeffs(N: int, support: float) -> np.ndarray:
    M = max(8192, 32 * (2 * N + 1))
    y = (np.arange(M) / M + 0.5) % 1.0 - 0.5  # position in periods, centred
    z = y / support
    inside = np.abs(z) < 1
    vals = np.zeros(M)
    vals[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    c = grid_to_coeffs(vals.astype(complex), N)
    c = c.real / c.real[N]
    c.flags.writeable = False
    return c + 0j


def load_kernel_csv(path: str | Path, h_psi: float | None = None, K: float | None = None) -> Kernel:
    """Kernel from a CSV with columns ``n, re, im`` (an optional header row is skipped)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().lower() == "n":
                continue
            rows.append((int(rec[0]), float(rec[1]), float(rec[2])))
    return Kernel(family="table", table=tuple(rows), h_psi=h_psi, K=K)


@functools.lru_cache(maxsize=64)
def _profile_derivatives(family: str, coeffs: tuple[float, ...], width: float) -> tuple[Callable, ...]:
    s = sympy.Symbol("s", real=True)
    poly = sum((sympy.Float(c) * s**k for k, c in enumerate(coeffs)), sympy.Integer(0))
    if family == "polynomial":
        expr = poly
    elif family == "gaussian_poly":
        expr = poly * sympy.exp(-(s**2) / (2 * sympy.Float(width) ** 2))
    else:
        expr = -sympy.cos(s)
    funcs = []
    for k in range(5):
        fk = sympy.lambdify(s, sympy.diff(expr, s, k), "numpy")
        funcs.append(fk)
    return tuple(funcs)


@dataclass(frozen=True)
class Profile:
    """Pointwise profile ``f(s)`` times the temporal modulation ``m(t)``.

    Families: ``polynomial`` (``sum c_k s^k``), ``gaussian_poly``
    (``sum c_k s^k exp(-s^2 / 2 width^2)``) and ``sine`` (``-cos s``, whose
    derivative is the sine-Gordon force). The modulation is
    ``offset + amp cos(2 pi harmonic t / T)``.
    """

    family: str = "gaussian_poly"
    coeffs: tuple[float, ...] = (0.0, 0.0, 0.5)
    width: float = 1.0
    mod_offset: float = 1.0
    mod_amp: float = 0.0
    mod_harmonic: int = 1

    def __post_init__(self) -> None:
        if self.family not in PROFILE_FAMILIES:
            raise ValueError(f"unknown profile family {self.family!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.width <= 0:
            raise ValueError("profile width must be positive")

    @property
    def is_zero(self) -> bool:
        return self.family != "sine" and not any(self.coeffs)

    def derivative(self, s: np.ndarray, k: int = 0) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(s, dtype=float)
        out = _profile_derivatives(self.family, self.coeffs, self.width)[k](s)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(s))

    def modulation(self, t: np.ndarray | float, T: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.mod_offset + self.mod_amp * np.cos(TWO_PI * self.mod_harmonic * t / T)

    def derivative_bounds(self, sample_range: float = 8.0, samples: int = 4001) -> list[float]:
        """Sampled ``sup |f^(k)|`` for ``k = 0..4`` on ``[-sample_range, sample_range]``."""
        s = np.linspace(-sample_range, sample_range, samples)
        bounds = []
        for k in range(5):
            vals = self.derivative(s, k)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"profile derivative of order {k} is not finite on the sampled range")
            bounds.append(float(np.max(np.abs(vals))))
        return bounds


@dataclass(frozen=True)
class Potential:
    """Exterior forcing ``c_t = sum_p c(p, n) e^{i 2 pi p t / T} z_n``.

    ``exp_decay`` is ``amplitude * exp(-rate (|p| + |n|))`` for ``|p| <= p_cap``;
    ``modes`` lists explicit ``(p, n, re, im)`` entries.
    """

    family: str = "zero"
    amplitude: float = 0.0
    rate: float = 1.0
    p_cap: int = 16
    modes: tuple[tuple[int, int, float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.family not in POTENTIAL_FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.p_cap < 0:
            raise ValueError("p_cap must be >= 0")

    @property
    def is_zero(self) -> bool:
        if self.family == "zero":
            return True
        if self.family == "exp_decay":
            return self.amplitude == 0.0
        return not any(re or im for _, _, re, im in self.modes)

    @property
    def P(self) -> int:
        if self.family == "modes" and self.modes:
            return max(abs(p) for p, *_ in self.modes)
        return self.p_cap if self.family == "exp_decay" else 0

    def coeffs(self, P: int, N: int) -> np.ndarray:
        """``c(p, n)`` on ``[-P, P] x [-N, N]`` (entries outside the window dropped)."""
        out = np.zeros((2 * P + 1, 2 * N + 1), dtype=complex)
        if self.family == "exp_decay":
            pc = min(P, self.p_cap)
            p = np.arange(-pc, pc + 1, dtype=float)[:, None]
            n = mode_index(N).astype(float)[None, :]
            out[P - pc : P + pc + 1] = self.amplitude * np.exp(-self.rate * (np.abs(p) + np.abs(n)))
        elif self.family == "modes":
            for p, n, re, im in self.modes:
                if abs(p) <= P and abs(n) <= N:
                    out[p + P, n + N] += complex(re, im)
        return out

    def slices(self, t: np.ndarray | float, N: int, T: float) -> np.ndarray:
        """``c_t(n)`` for every entry of ``t``; shape ``t.shape + (2N+1,)``."""
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros(t.shape + (2 * N + 1,), dtype=complex)
        P = self.P
        chat = self.coeffs(P, N)
        p = np.arange(-P, P + 1, dtype=float)
        phase = np.exp(1j * TWO_PI * t[..., None] * p / T)
        return phase @ chat


@dataclass(frozen=True)
class NonlinearitySpec:
    """Kernel, profile, potential, amplitude and optional cutoff.

    ``mean_free`` evaluates ``F(Pi u)`` with ``Pi`` removing the ``n = 0``
    mode, which is resonant for every period pair; ``wrapped`` switches on
    the Hilbert-scale cutoff ``chi(|u|_{-h}^2)`` of radius ``cutoff_radius``.
    """

    kernel: Kernel = Kernel()
    profile: Profile = Profile()
    potential: Potential = Potential()
    amplitude: float = 0.0
    cutoff_radius: float | None = None
    wrapped: bool = False
    mean_free: bool = False
    grid_factor: int = 4

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.cutoff_radius is not None and self.cutoff_radius <= 0:
            raise ValueError("cutoff radius must be positive")
        if self.wrapped and self.cutoff_radius is None:
            raise ValueError("a wrapped nonlinearity needs a cutoff radius")
        if self.grid_factor < 2:
            raise ValueError(f"grid factor {self.grid_factor} < 2 would alias the quadratic products")

    @classmethod
    def zero(cls) -> "NonlinearitySpec":
        return cls(amplitude=0.0)

    @classmethod
    def linear(cls, potential: Potential, mean_free: bool = True) -> "NonlinearitySpec":
        return cls(amplitude=0.0, potential=potential, mean_free=mean_free)

    @property
    def has_nonlinear_part(self) -> bool:
        return self.amplitude > 0 and not self.profile.is_zero

    @property
    def is_zero(self) -> bool:
        return not self.has_nonlinear_part and self.potential.is_zero

    def grid_size(self, N: int) -> int:
        return self.grid_factor * (2 * N + 1)


def cutoff_wrap(spec: NonlinearitySpec, radius: float | None = None) -> NonlinearitySpec:
    """Switch on ``F = chi(|u|_{-h}^2) F~``; ``radius`` overrides the configured ``R``."""
    R = radius if radius is not None else spec.cutoff_radius
    if R is None:
        raise ValueError("cutoff_wrap needs a radius")
    return replace(spec, cutoff_radius=float(R), wrapped=True)


def _ramp(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smooth step ``Psi`` (0 for x <= 0, 1 for x >= 1) and its derivative."""
    x = np.asarray(x, dtype=float)
    inner = (x > 0) & (x < 1)
    xi = np.where(inner, x, 0.5)
    with np.errstate(over="ignore"):
        val = expit(1.0 / (1.0 - xi) - 1.0 / xi)
    der = val * (1.0 - val) * (1.0 / xi**2 + 1.0 / (1.0 - xi) ** 2)
    val = np.where(x >= 1, 1.0, np.where(inner, val, 0.0))
    der = np.where(inner, der, 0.0)
    return val, der


def chi(r: np.ndarray | float, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Cutoff ``chi(r)`` (1 on ``[0, R]``, 0 on ``[R+1, inf)``) and ``chi'(r)``; slope in ``[-2, 0]``."""
    val, der = _ramp(np.asarray(r, dtype=float) - R)
    return 1.0 - val, -der


class Evaluator:
    """Batched evaluation of ``F_t`` and its gradient at a fixed truncation ``N``.

    Inputs are coefficient arrays of shape ``(..., 2N+1)`` with matching
    time arrays broadcastable to the leading shape.
    """

    def __init__(self, spec: NonlinearitySpec, params: ModelParams, N: int):
        self.spec = spec
        self.params = params
        self.N = N
        self.M = spec.grid_size(N)
        if self.M < 2 * (2 * N + 1):
            raise ValueError(f"collocation grid of {self.M} points undersized for N = {N}")
        psi = spec.kernel.coeffs(N, params.X)
        if params.kind is EquationKind.NLW and not np.allclose(psi[::-1], np.conj(psi), rtol=0, atol=1e-14):
            raise ValueError("NLW kernels must satisfy psi(-n) = conj(psi(n))")
        self.psi = psi
        self.weight_mh = mode_weight(mode_index(N)) ** (-2.0 * params.h)

    def _project(self, c: np.ndarray, level: int | None) -> np.ndarray:
        c = np.array(c, dtype=complex, copy=True)
        N = self.N
        if level is not None:
            if not 0 <= level <= N:
                raise IndexError(f"level {level} outside [0, {N}]")
            c[..., : N - level] = 0.0
            c[..., N + level + 1 :] = 0.0
        if self.spec.mean_free:
            c[..., N] = 0.0
        return c

    def _raw(self, v: np.ndarray, t: np.ndarray, want_grad: bool) -> tuple[np.ndarray, np.ndarray | None]:
        spec, params, N = self.spec, self.params, self.N
        X = params.X
        lead = v.shape[:-1]
        F = np.zeros(lead)
        G = np.zeros(v.shape, dtype=complex) if want_grad else None
        if spec.has_nonlinear_part:
            amp = spec.amplitude * np.broadcast_to(spec.profile.modulation(t, params.T), lead)
            if params.kind is EquationKind.NLS:
                Wg = coeffs_to_grid(v * self.psi, self.M)
                s = (Wg * Wg.conj()).real
                F = F + 0.5 * X * amp * np.mean(spec.profile.derivative(s, 0), axis=-1)
                if want_grad:
                    q = amp[..., None] * spec.profile.derivative(s, 1) * Wg
                    G += X * grid_to_coeffs(q, N) * np.conj(self.psi)
            else:
                phi = nlw_exponential_coeffs(v.real)
                Wg = coeffs_to_grid(phi * self.psi, self.M).real
                F = F + X / TWO_PI * amp * np.mean(spec.profile.derivative(Wg, 0), axis=-1)
                if want_grad:
                    sh = grid_to_coeffs(amp[..., None] * spec.profile.derivative(Wg, 1) + 0j, N)
                    G += _nlw_pullback(sh, self.psi, X)
        if not spec.potential.is_zero:
            c = spec.potential.slices(np.broadcast_to(t, lead), N, params.T)
            F = F + np.sum((c * np.conj(v)).real, axis=-1)
            if want_grad:
                G += c
        return F, G

    def value(self, coeffs: np.ndarray, t: np.ndarray | float, level: int | None = None) -> np.ndarray:
        return self.value_and_grad(coeffs, t, level, want_grad=False)[0]

    def grad(self, coeffs: np.ndarray, t: np.ndarray | float, level: int | None = None) -> np.ndarray:
        return self.value_and_grad(coeffs, t, level)[1]

    def value_and_grad(
        self, coeffs: np.ndarray, t: np.ndarray | float, level: int | None = None, want_grad: bool = True
    ) -> tuple[np.ndarray, np.ndarray | None]:
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[-1] != 2 * self.N + 1:
            raise ValueError(f"expected {2 * self.N + 1} modes, got {coeffs.shape[-1]}")
        t = np.asarray(t, dtype=float)
        v = self._project(coeffs, level)
        F, G = self._raw(v, t, want_grad or self.spec.wrapped)
        if G is not None:
            G = self._project(G, level)
        if self.spec.wrapped:
            rho = np.sum(np.abs(v) ** 2 * self.weight_mh, axis=-1)
            cval, cder = chi(rho, self.spec.cutoff_radius)
            if want_grad:
                G = cval[..., None] * G + (2.0 * cder * F)[..., None] * self.weight_mh * v
            F = cval * F
        return F, (G if want_grad else None)

    def grad_twisted(self, coeffs: np.ndarray, t: np.ndarray | float, level: int | None = None) -> np.ndarray:
        """``phi^A_{-t} grad F_t(phi^A_t u)`` batched over ``t``."""
        t = np.asarray(t, dtype=float)
        mult = free_multiplier(self.params, self.N, t)
        return np.conj(mult) * self.grad(coeffs * mult, t, level)

    def value_twisted(self, coeffs: np.ndarray, t: np.ndarray | float, level: int | None = None) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.value(coeffs * free_multiplier(self.params, self.N, t), t, level)


def _nlw_pullback(sh: np.ndarray, psi: np.ndarray, X: float) -> np.ndarray:
    """Gradient in the real ``q`` amplitudes from the grid force coefficients ``sh``."""
    N = (sh.shape[-1] - 1) // 2
    out = np.zeros(sh.shape, dtype=complex)
    out[..., N] = (math.sqrt(2.0) * X * psi[N] * sh[..., N]).real / TWO_PI
    if N:
        k = np.arange(1, N + 1)
        zeta = math.sqrt(2.0) * X * psi[N + k] * np.conj(sh[..., N + k])
        out[..., N - k] = zeta.real / np.sqrt(k) / TWO_PI
        out[..., N + k] = zeta.imag / np.sqrt(k) / TWO_PI
    return out


@functools.lru_cache(maxsize=32)
def evaluator(spec: NonlinearitySpec, params: ModelParams, N: int) -> Evaluator:
    return Evaluator(spec, params, N)


def convolve(u: SpectralField, spec: NonlinearitySpec) -> SpectralField:
    """``(u * psi)^(n) = u(n) psi(n)``."""
    return SpectralField(u.coeffs * spec.kernel.coeffs(u.N, u.params.X), u.params)


def eval_F(u: SpectralField, t: float, spec: NonlinearitySpec, level: int | None = None) -> float:
    return float(evaluator(spec, u.params, u.N).value(u.coeffs, t, level))


def grad_F(u: SpectralField, t: float, spec: NonlinearitySpec, level: int | None = None) -> SpectralField:
    return SpectralField(evaluator(spec, u.params, u.N).grad(u.coeffs, t, level), u.params)


def eval_G(u: SpectralField, t: float, spec: NonlinearitySpec, level: int | None = None) -> float:
    return float(evaluator(spec, u.params, u.N).value_twisted(u.coeffs, t, level))


def grad_G(u: SpectralField, t: float, spec: NonlinearitySpec, level: int | None = None) -> SpectralField:
    """``phi^A_{-t}(grad F_t(phi^A_t u))``; the free flow is unitary so this is the gradient of ``F_t o phi^A_t``."""
    return SpectralField(evaluator(spec, u.params, u.N).grad_twisted(u.coeffs, t, level), u.params)


def inner(u: SpectralField | np.ndarray, v: SpectralField | np.ndarray) -> float:
    """Real inner product ``Re sum u conj(v)``."""
    a = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    b = v.coeffs if isinstance(v, SpectralField) else np.asarray(v)
    return float(np.sum((a * np.conj(b)).real))

