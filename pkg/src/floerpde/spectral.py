"""Hilbert-scale spectral fields on the circle.

Fields are stored as complex coefficient arrays in the Darboux basis ``z_n``
of the free operator, ``A z_n = a n^d z_n`` with ``a = (2 pi / X)^d``. The
symplectic Hilbert space is identified with ``l^2(Z, C)``: the real inner
product is ``<u, v> = Re sum u(n) conj(v(n))`` and the complex structure ``J``
acts as multiplication by ``i``.

A :class:`SpectralField` holds one time slice over ``n in [-N, N]``; a
:class:`SpaceTimeField` holds ``(p, n) in [-P, P] x [-N, N]`` together with the
gauge (temporal exponent convention) of its temporal modes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import sympy

TWO_PI = 2.0 * math.pi
SERIAL_FLOOR = 1e-300


class EquationKind(str, Enum):
    NLS = "nls"
    NLW = "nlw"


class Gauge(str, Enum):
    TWISTED = "twisted"
    PHYSICAL = "physical"


def _as_expr(value: Any) -> sympy.Expr:
    if isinstance(value, sympy.Basic):
        return value
    if isinstance(value, str):
        return sympy.sympify(value, rational=True)
    if isinstance(value, int):
        return sympy.Integer(value)
    if isinstance(value, float):
        return sympy.Rational(value)
    from fractions import Fraction

    if isinstance(value, Fraction):
        return sympy.Rational(value.numerator, value.denominator)
    raise TypeError(f"cannot interpret {value!r} as a real quantity")


@dataclass(frozen=True)
class ModelParams:
    """Operator order, periods, regularity and Diophantine budget.

    ``period_X`` and ``period_T`` are kept as exact sympy expressions so that
    the rotation number ``aT/2pi`` can be analysed at arbitrary precision;
    the float views ``X`` and ``T`` feed the numerics.
    """

    period_X: sympy.Expr
    period_T: sympy.Expr
    d: int = 2
    h: float = 5.0
    r: float = 2.0
    kind: EquationKind = EquationKind.NLS

    def __post_init__(self) -> None:
        object.__setattr__(self, "period_X", _as_expr(self.period_X))
        object.__setattr__(self, "period_T", _as_expr(self.period_T))
        object.__setattr__(self, "kind", EquationKind(self.kind))
        if not (self.period_X.is_positive and self.period_T.is_positive):
            raise ValueError("periods X and T must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("operator order d must be a positive integer")
        object.__setattr__(self, "d", int(self.d))
        if self.h <= 0:
            raise ValueError("regularization order h must be positive")
        if self.r < 2:
            raise ValueError("irrationality-measure budget r must be >= 2")

    @classmethod
    def from_rotation(cls, rotation: Any, period_X: Any = "2*pi", **kw: Any) -> "ModelParams":
        """Build parameters whose rotation number ``aT/2pi`` equals ``rotation``."""
        X = _as_expr(period_X)
        d = int(kw.get("d", 2))
        a = (2 * sympy.pi / X) ** d
        T = sympy.simplify(2 * sympy.pi * _as_expr(rotation) / a)
        return cls(period_X=X, period_T=T, **kw)

    @property
    def X(self) -> float:
        return float(self.period_X)

    @property
    def T(self) -> float:
        return float(self.period_T)

    @property
    def a(self) -> float:
        return (TWO_PI / self.X) ** self.d

    @property
    def m(self) -> int:
        return math.floor(self.h / self.d)

    def rotation_number(self) -> sympy.Expr:
        """Exact ``aT/2pi``."""
        a = (2 * sympy.pi / self.period_X) ** self.d
        return sympy.nsimplify(sympy.simplify(a * self.period_T / (2 * sympy.pi)))

    def eigenvalues(self, N: int) -> np.ndarray:
        n = np.arange(-N, N + 1, dtype=float)
        return self.a * n**self.d

    def require_solver_ready(self) -> None:
        """Refuse configurations outside the admissible regime of the solvers."""
        if self.m < 2:
            raise ValueError(f"smoothness level m = floor(h/d) = {self.m} < 2")
        if not self.h > self.d * self.r:
            raise ValueError(f"need h > d*r, got h={self.h}, d*r={self.d * self.r}")


def mode_index(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


def mode_weight(n: np.ndarray | int) -> np.ndarray:
    """Scale weight ``w(n) = max(|n|, 1)``."""
    return np.maximum(np.abs(np.asarray(n, dtype=float)), 1.0)


@dataclass(frozen=True)
class SpectralField:
    coeffs: np.ndarray
    params: ModelParams

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coefficients must be a 1-D array of odd length 2N+1")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def modes(self) -> np.ndarray:
        return mode_index(self.N)

    @classmethod
    def zeros(cls, N: int, params: ModelParams) -> "SpectralField":
        return cls(np.zeros(2 * N + 1, dtype=complex), params)

    @classmethod
    def from_modes(cls, modes: dict[int, complex], N: int, params: ModelParams) -> "SpectralField":
        c = np.zeros(2 * N + 1, dtype=complex)
        for n, value in modes.items():
            if abs(n) > N:
                raise IndexError(f"mode {n} outside [-{N}, {N}]")
            c[n + N] = value
        return cls(c, params)

    def coeff(self, n: int) -> complex:
        return complex(self.coeffs[n + self.N]) if abs(n) <= self.N else 0j

    def padded(self, N: int) -> "SpectralField":
        if N < self.N:
            raise ValueError("padding cannot shrink a field; use truncate")
        c = np.zeros(2 * N + 1, dtype=complex)
        c[N - self.N : N + self.N + 1] = self.coeffs
        return SpectralField(c, self.params)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        N = max(self.N, other.N)
        return SpectralField(self.padded(N).coeffs + other.padded(N).coeffs, self.params)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        N = max(self.N, other.N)
        return SpectralField(self.padded(N).coeffs - other.padded(N).coeffs, self.params)

    def scaled(self, factor: complex) -> "SpectralField":
        return SpectralField(self.coeffs * factor, self.params)

    def norm(self, sigma: float = 0.0) -> float:
        return scale_norm(self, sigma)

    def to_grid(self, M: int | None = None) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
        """Reconstruct the physical field on ``M`` equispaced points of ``[0, X)``.

        NLS-like fields return complex samples of ``u(x) = sum u(n) e^{2 pi i n x / X}``.
        NLW-like fields return the real pair ``(phi, pi)`` built from the real
        basis ``xi_n / sqrt(w(n))`` (cosines for ``n <= 0``, sines for ``n > 0``).
        """
        M = M or 4 * (2 * self.N + 1)
        if self.params.kind is EquationKind.NLS:
            return coeffs_to_grid(self.coeffs, M)
        phi_hat = nlw_exponential_coeffs(self.coeffs.real)
        pi_hat = nlw_exponential_coeffs(self.coeffs.imag)
        return coeffs_to_grid(phi_hat, M), coeffs_to_grid(pi_hat, M)


def coeffs_to_grid(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Evaluate ``sum_n c(n) e^{2 pi i n j / M}`` on ``j = 0..M-1`` along the last axis."""
    N = (coeffs.shape[-1] - 1) // 2
    if M < 2 * N + 1:
        raise ValueError(f"grid of {M} points cannot carry {2 * N + 1} modes")
    buf = np.zeros(coeffs.shape[:-1] + (M,), dtype=complex)
    buf[..., : N + 1] = coeffs[..., N:]
    if N:
        buf[..., M - N :] = coeffs[..., :N]
    return np.fft.ifft(buf, axis=-1) * M


def grid_to_coeffs(values: np.ndarray, N: int) -> np.ndarray:
    """Inverse of :func:`coeffs_to_grid` restricted to modes ``[-N, N]``."""
    M = values.shape[-1]
    spec = np.fft.fft(values, axis=-1) / M
    out = np.empty(values.shape[:-1] + (2 * N + 1,), dtype=complex)
    out[..., N:] = spec[..., : N + 1]
    if N:
        out[..., :N] = spec[..., M - N :]
    return out


def nlw_exponential_coeffs(q: np.ndarray) -> np.ndarray:
    """Map real Darboux amplitudes ``q(n)`` to exponential Fourier coefficients.

    ``sum_n q(n) xi_n(x) / sqrt(w(n))`` with ``xi_0 = sqrt 2``,
    ``xi_{-k} = sqrt 2 cos(2 pi k x / X)`` and ``xi_k = sqrt 2 sin(2 pi k x / X)``.
    """
    N = (q.shape[-1] - 1) // 2
    out = np.zeros(q.shape, dtype=complex)
    out[..., N] = math.sqrt(2.0) * q[..., N]
    if N:
        k = np.arange(1, N + 1)
        scale = math.sqrt(2.0) / np.sqrt(k) / 2.0
        cos_amp = q[..., N - k]
        sin_amp = q[..., N + k]
        pos = scale * (cos_amp - 1j * sin_amp)
        out[..., N + k] = pos
        out[..., N - k] = np.conj(pos)
    return out


def scale_norm(u: SpectralField, sigma: float) -> float:
    """``( sum_n |u(n)|^2 w(n)^{2 sigma} )^{1/2}``."""
    w = mode_weight(u.modes) ** (2.0 * sigma)
    terms = np.abs(u.coeffs) ** 2 * w
    return float(math.sqrt(math.fsum(terms)))


def truncate(u: SpectralField, k: int) -> tuple[SpectralField, SpectralField]:
    """Split ``u`` into its modes ``|n| <= k`` and the remainder.

    The head lives on ``[-k, k]``; the tail keeps the full window with the
    head modes zeroed, so ``head + tail == u`` exactly.
    """
    if k < 0 or k > u.N:
        raise IndexError(f"mode cap k={k} outside [0, {u.N}]")
    N = u.N
    head = SpectralField(u.coeffs[N - k : N + k + 1], u.params)
    tail = u.coeffs.copy()
    tail[N - k : N + k + 1] = 0.0
    return head, SpectralField(tail, u.params)


def free_multiplier(params: ModelParams, N: int, t: float | np.ndarray) -> np.ndarray:
    """``e^{i a n^d t}`` over ``n in [-N, N]``; broadcasts over leading axes of ``t``."""
    omega = params.eigenvalues(N)
    t = np.asarray(t, dtype=float)
    return np.exp(1j * t[..., None] * omega)


def free_flow(u: SpectralField, t: float) -> SpectralField:
    """Exact free flow ``phi^A_t``: mode ``n`` is multiplied by ``e^{i a n^d t}``."""
    return SpectralField(u.coeffs * free_multiplier(u.params, u.N, t), u.params)


@dataclass(frozen=True)
class SpaceTimeField:
    coeffs: np.ndarray
    params: ModelParams
    gauge: Gauge = Gauge.TWISTED

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] % 2 != 1 or c.shape[1] % 2 != 1:
            raise ValueError("space-time coefficients must have shape (2P+1, 2N+1)")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "gauge", Gauge(self.gauge))

    @property
    def P(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def N(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @classmethod
    def zeros(cls, P: int, N: int, params: ModelParams, gauge: Gauge = Gauge.TWISTED) -> "SpaceTimeField":
        return cls(np.zeros((2 * P + 1, 2 * N + 1), dtype=complex), params, gauge)

    def norm(self) -> float:
        """Temporal-mean ``l^2`` norm, ``(1/T int_0^T |u(t)|_0^2 dt)^{1/2}``."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def temporal_exponents(self) -> np.ndarray:
        """Angular frequency of every ``(p, n)`` mode in this gauge."""
        p = np.arange(-self.P, self.P + 1, dtype=float)[:, None]
        base = TWO_PI * p / self.params.T
        if self.gauge is Gauge.PHYSICAL:
            return np.broadcast_to(base, self.coeffs.shape)
        return base - self.params.eigenvalues(self.N)[None, :]

    def evaluate(self, t: float) -> SpectralField:
        """The spatial slice at time ``t`` in this gauge's convention."""
        phase = np.exp(1j * self.temporal_exponents() * t)
        return SpectralField(np.sum(self.coeffs * phase, axis=0), self.params)

    def slice_grid(self, M: int) -> np.ndarray:
        """Slices at ``t_j = j T / M``; shape ``(M, 2N+1)``. Exact for ``M >= 2P+1``."""
        phys = coeffs_to_grid(self.coeffs.T, M).T
        if self.gauge is Gauge.TWISTED:
            t = np.arange(M) * self.params.T / M
            phys = phys * free_multiplier(self.params, self.N, -t)
        return phys


def gauge_transform(U: SpaceTimeField, target: Gauge | str) -> SpaceTimeField:
    """Relabel the temporal convention; coefficients are untouched.

    Twisted slices ``u(t)`` and physical slices ``phi^A_t u(t)`` share their
    ``(p, n)`` coefficients, so only the flag changes.
    """
    target = Gauge(target)
    if target is U.gauge:
        return U
    return replace(U, gauge=target)


def field_to_json(U: SpectralField | SpaceTimeField) -> dict[str, Any]:
    if isinstance(U, SpectralField):
        grid = U.coeffs[None, :]
        gauge, P = None, 0
    else:
        grid = U.coeffs
        gauge, P = U.gauge.value, U.P
    N = (grid.shape[1] - 1) // 2
    rows = []
    for ip, iz in zip(*np.nonzero(np.abs(grid) >= SERIAL_FLOOR)):
        c = grid[ip, iz]
        rows.append([int(ip - P), int(iz - N), float(c.real), float(c.imag)])
    return {"gauge": gauge, "N": N, "P": P, "coeffs": rows}


def field_from_json(doc: dict[str, Any], params: ModelParams) -> SpectralField | SpaceTimeField:
    N, P = int(doc["N"]), int(doc["P"])
    grid = np.zeros((2 * P + 1, 2 * N + 1), dtype=complex)
    for p, n, re, im in doc["coeffs"]:
        grid[p + P, n + N] = complex(re, im)
    if doc.get("gauge") is None:
        return SpectralField(grid[0], params)
    return SpaceTimeField(grid, params, Gauge(doc["gauge"]))


def save_field(U: SpectralField | SpaceTimeField, path: str | Path) -> None:
    Path(path).write_text(json.dumps(field_to_json(U), indent=1) + "\n")


def load_field(path: str | Path, params: ModelParams) -> SpectralField | SpaceTimeField:
    return field_from_json(json.loads(Path(path).read_text()), params)
