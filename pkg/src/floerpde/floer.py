"""Floer connecting curves by mode-wise variation of constants and Picard iteration.

A curve ``u(s, t) = sum_{p,n} w_{p,n}(s) e^{i (2 pi p / T - a n^d) t} z_n`` solves
``d_s u + i d_t u + phi(s) grad G_t(u) = 0`` iff every mode satisfies

    w' = lambda_{p,n} w + f_{p,n},   f = -phi(s) (grad G(u(s)))^(p, n).

Each mode is solved in its contracting direction (forward for
``lambda < 0``, backward for ``lambda > 0``) with an exponential integrator
that is exact for piecewise-linear ``f``; the nonlinear coupling is resolved
by Picard iteration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.signal import lfilter
from scipy.special import exprel

from .nonlinearity import evaluator
from .periodic import HBProblem, contraction_estimate, decay_audit
from .spectral import Gauge, SpaceTimeField


class FloerNonConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


def _smoothstep(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x)


def cutoff_profile(s: np.ndarray | float, tau: float | None = None) -> np.ndarray:
    """``phi_tau(s)``: 0 for ``s <= -1``, 1 on ``[0, 2 tau]``, 0 for ``s >= 2 tau + 1``.

    Ramps are cubic smoothsteps (slope at most 1.5). ``tau = None`` is the
    one-sided profile that stays 1 for all ``s >= 0``.
    """
    return cutoff_profile_with_slope(s, tau)[0]


def cutoff_profile_with_slope(s: np.ndarray | float, tau: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    if tau is not None and tau < 0:
        raise ValueError("tau must be >= 0")
    up, dup = _smoothstep(s + 1.0)
    if tau is None:
        return up, dup
    down, ddown = _smoothstep(s - 2.0 * tau)
    return up * (1.0 - down), dup * (1.0 - down) - up * ddown


def _phi2(z: np.ndarray) -> np.ndarray:
    """``(e^z - 1 - z) / z^2`` with a series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    big = (np.expm1(zs) - zs) / zs**2
    series = 0.5 + z / 6.0 + z * z / 24.0 + z**3 / 120.0
    return np.where(small, series, big)


def modewise_bvp(
    lam: float | np.ndarray,
    f: np.ndarray,
    ds: float,
    right: str = "zero",
    left: str = "zero",
) -> np.ndarray:
    """Decaying solution of ``w' = lambda w + f`` on a uniform grid.

    ``f`` has shape ``(S,)`` for a scalar ``lambda`` or ``(S, ...)`` matching
    the shape of ``lambda``. Modes with ``lambda < 0`` are integrated forward
    from the left end, modes with ``lambda > 0`` backward from the right end.
    The start value is 0 (``"zero"``) or the stationary value ``-f/lambda``
    (``"stationary"``).
    """
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr == 0):
        raise ZeroDivisionError("lambda = 0 is a resonant mode")
    f = np.asarray(f)
    if lam_arr.ndim == 0:
        return _bvp_scalar(float(lam_arr), f, ds, right, left)
    if f.shape[1:] != lam_arr.shape:
        raise ValueError(f"f has mode shape {f.shape[1:]}, lambda has {lam_arr.shape}")
    S = f.shape[0]
    w = np.zeros(f.shape, dtype=np.result_type(f, float))
    neg = lam_arr < 0
    z = -np.abs(lam_arr) * ds
    E = np.exp(z)
    p1 = exprel(z)
    p2 = _phi2(z)
    a = ds * (p1 - p2)
    b = ds * p2
    # forward sweep for lambda < 0
    w[0] = np.where(neg, -f[0] / lam_arr if left == "stationary" else 0.0, 0.0)
    for j in range(S - 1):
        w[j + 1] = np.where(neg, E * w[j] + a * f[j] + b * f[j + 1], 0.0)
    # backward sweep for lambda > 0
    pos = ~neg
    start = -f[S - 1] / lam_arr if right == "stationary" else 0.0
    w[S - 1] = np.where(pos, start, w[S - 1])
    for j in range(S - 2, -1, -1):
        w[j] = np.where(pos, E * w[j + 1] - (b * f[j] + a * f[j + 1]), w[j])
    return w


def _bvp_scalar(lam: float, f: np.ndarray, ds: float, right: str, left: str) -> np.ndarray:
    z = -abs(lam) * ds
    E, p1, p2 = math.exp(z), float(exprel(z)), float(_phi2(z))
    a, b = ds * (p1 - p2), ds * p2
    if lam < 0:
        g = np.empty_like(f, dtype=np.result_type(f, float))
        g[0] = -f[0] / lam if left == "stationary" else 0.0
        g[1:] = a * f[:-1] + b * f[1:]
        return lfilter([1.0], [1.0, -E], g)
    fr = f[::-1]
    g = np.empty_like(fr, dtype=np.result_type(f, float))
    g[0] = -fr[0] / lam if right == "stationary" else 0.0
    g[1:] = -(b * fr[1:] + a * fr[:-1])
    return lfilter([1.0], [1.0, -E], g)[::-1]


@dataclass
class FloerCurve:
    s: np.ndarray
    slices: np.ndarray  # (S, 2P+1, 2N+1), twisted gauge
    forcing: np.ndarray  # f on the final iterate
    tau: float | None
    converged: bool
    iterations: int
    problem: HBProblem
    change_history: list[float] = field(default_factory=list)
    bound_ratio_history: list[float] = field(default_factory=list)
    contraction: float = math.nan
    contractive: bool = True

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    def slice_field(self, j: int) -> SpaceTimeField:
        return SpaceTimeField(self.slices[j], self.problem.params, Gauge.TWISTED)

    def plateau(self) -> tuple[float, float]:
        if self.tau is None:
            return float(self.s[-1] - 2.0), float(self.s[-1])
        return 2.0 * self.tau - 2.0, 2.0 * self.tau

    def right_asymptote(self) -> SpaceTimeField:
        lo, hi = self.plateau()
        sel = (self.s >= lo - 1e-12) & (self.s <= hi + 1e-12)
        return SpaceTimeField(self.slices[sel].mean(axis=0), self.problem.params, Gauge.TWISTED)

    def left_asymptote_norm(self) -> float:
        return float(np.linalg.norm(self.slices[0]))

    def to_csv(self, stride: int = 1, floor: float = 1e-12) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["s", "p", "n", "re", "im"])
        P, N = self.problem.P, self.problem.N
        for j in range(0, self.s.size, stride):
            for ip, iz in zip(*np.nonzero(np.abs(self.slices[j]) > floor)):
                c = self.slices[j, ip, iz]
                w.writerow([repr(float(self.s[j])), int(ip - P), int(iz - N), repr(float(c.real)), repr(float(c.imag))])
        return buf.getvalue()

    def index(self) -> dict[str, Any]:
        return {
            "s_min": float(self.s[0]),
            "s_max": float(self.s[-1]),
            "ds": self.ds,
            "tau": self.tau,
            "P": self.problem.P,
            "N": self.problem.N,
            "converged": self.converged,
            "iterations": self.iterations,
            "contraction_estimate": self.contraction,
            "contractive": self.contractive,
        }


def _batched_grad_hat(problem: HBProblem, W: np.ndarray) -> np.ndarray:
    """``(grad G)^`` for a batch of twisted slices ``W`` of shape ``(B, 2P+1, 2N+1)``."""
    P, Mt = problem.P, problem.Mt
    buf = np.zeros((W.shape[0], Mt, W.shape[2]), dtype=complex)
    buf[:, : P + 1] = W[:, P:]
    if P:
        buf[:, Mt - P :] = W[:, :P]
    phys = np.fft.ifft(buf, axis=1) * Mt
    g = problem.ev.grad(phys, problem.t_grid)
    spec = np.fft.fft(g, axis=1) / Mt
    out = np.empty_like(W)
    out[:, P:] = spec[:, : P + 1]
    if P:
        out[:, :P] = spec[:, Mt - P :]
    out[:, ~problem.active] = 0.0
    return out


def _forcing(problem: HBProblem, W: np.ndarray, phi: np.ndarray, chunk: int) -> np.ndarray:
    f = np.zeros_like(W)
    idx = np.nonzero(phi > 0)[0]
    for k in range(0, idx.size, chunk):
        sel = idx[k : k + chunk]
        f[sel] = -phi[sel, None, None] * _batched_grad_hat(problem, W[sel])
    return f


def default_s_grid(tau: float | None, s_min: float = -8.0, s_max: float | None = None, ds: float = 0.05) -> np.ndarray:
    if s_max is None:
        s_max = 2.0 * (tau or 0.0) + 8.0
    count = int(round((s_max - s_min) / ds)) + 1
    return s_min + ds * np.arange(count)


def floer_iterate(
    problem: HBProblem,
    tau: float | None = None,
    max_picard: int = 50,
    tol: float = 1e-8,
    s_min: float = -8.0,
    s_max: float | None = None,
    ds: float = 0.05,
    chunk: int = 32,
    raise_on_failure: bool = True,
) -> FloerCurve:
    """Picard iteration for the cutoff Floer equation on a uniform ``s`` grid.

    Starts from the zero curve; every sweep recomputes
    ``f = -phi(s) (grad G)^`` slice by slice and re-solves every mode with
    :func:`modewise_bvp`. The one-sided profile closes the right end with
    the stationary value ``-f/lambda`` for ``lambda > 0``.
    """
    s = default_s_grid(tau, s_min, s_max, ds)
    phi = cutoff_profile(s, tau)
    lam = np.where(problem.active, problem.lam, 1.0)
    right = "stationary" if tau is None else "zero"
    W = np.zeros((s.size,) + problem.lam.shape, dtype=complex)
    rough = contraction_estimate(problem, problem.seed()) * math.sqrt(2.0)
    curve = FloerCurve(s, W, np.zeros_like(W), tau, False, 0, problem, contraction=rough, contractive=rough < 1)
    for it in range(1, max_picard + 1):
        f = _forcing(problem, W, phi, chunk)
        Wn = modewise_bvp(lam, f, ds, right=right)
        Wn[:, ~problem.active] = 0.0
        change = float(np.max(np.abs(Wn - W))) if W.size else 0.0
        sup_w = np.max(np.abs(Wn), axis=0)
        sup_f = np.max(np.abs(f), axis=0)
        bound = math.sqrt(2.0) * sup_f / np.abs(lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sup_f > 0, sup_w / bound, np.where(sup_w > 0, np.inf, 0.0))
        curve.bound_ratio_history.append(float(ratio[problem.active].max()) if problem.active.any() else 0.0)
        curve.change_history.append(change)
        W = Wn
        curve.slices, curve.forcing, curve.iterations = W, f, it
        if change <= tol:
            curve.converged = True
            break
    if not curve.converged and raise_on_failure:
        raise FloerNonConvergenceError(
            f"Picard iteration did not reach {tol:g} in {max_picard} sweeps "
            f"(last change {curve.change_history[-1]:.3e}, contraction estimate {curve.contraction:.3e})",
            {"change_history": curve.change_history, "contraction_estimate": curve.contraction},
        )
    # forcing consistent with the returned curve for the diagnostics
    curve.forcing = _forcing(problem, W, phi, chunk)
    return curve


def dense_values(lam: np.ndarray, W: np.ndarray, f: np.ndarray, ds: float, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact cell solution at ``s_j + theta ds`` for piecewise-linear ``f``, and ``f`` there.

    Modes with ``lambda < 0`` are propagated from the left node, modes with
    ``lambda > 0`` from the right node, so no exponential is ever amplified.
    """
    lam = np.asarray(lam, dtype=float)
    f0, f1, w0, w1 = f[:-1], f[1:], W[:-1], W[1:]
    tau = theta * ds
    z = lam * tau
    fwd = np.exp(z) * w0 + tau * exprel(z) * f0 + (f1 - f0) * (tau * tau / ds) * _phi2(z)
    taub = (1.0 - theta) * ds
    zb = -lam * taub
    bwd = np.exp(zb) * w1 - (taub * exprel(zb) * f1 + (f0 - f1) * (taub * taub / ds) * _phi2(zb))
    w = np.where(lam < 0, fwd, bwd)
    return w, f0 + theta * (f1 - f0)


def ode_residual(curve: FloerCurve, thetas: tuple[float, ...] = (0.25, 0.5, 0.75), rel_step: float = 1e-4) -> float:
    """``sup |w' - lambda w - f|`` at interior points of every cell, by centred differences of the cell solution.

    ``f`` is the piecewise-linear interpolant the integrator is exact for;
    the difference step is ``rel_step * ds``.
    """
    lam = np.where(curve.problem.active, curve.problem.lam, 0.0)
    W, f, ds = curve.slices, curve.forcing, curve.ds
    if W.shape[0] < 2:
        return 0.0
    delta = rel_step * ds
    worst = 0.0
    for th in thetas:
        w, fm = dense_values(lam, W, f, ds, th)
        wp, _ = dense_values(lam, W, f, ds, th + rel_step)
        wm, _ = dense_values(lam, W, f, ds, th - rel_step)
        res = (wp - wm) / (2 * delta) - lam * w - fm
        res[:, ~curve.problem.active] = 0.0
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def ode_residual_nodes(curve: FloerCurve) -> float:
    """Centred differences on the ``s`` nodes themselves (carries an ``O(ds^2)`` truncation term)."""
    lam = np.where(curve.problem.active, curve.problem.lam, 0.0)
    W, f, ds = curve.slices, curve.forcing, curve.ds
    res = (W[2:] - W[:-2]) / (2 * ds) - lam * W[1:-1] - f[1:-1]
    return float(np.max(np.abs(res))) if res.size else 0.0


def _tail_profile(W: np.ndarray, P: int, N: int, m: int, ladder: tuple[int, ...]) -> list[float]:
    pw = np.maximum(np.abs(np.arange(-P, P + 1)), 1).astype(float) ** (m - 1)
    col = np.einsum("spn,p->sn", np.abs(W), pw)  # sum over p per (s, n)
    n = np.abs(np.arange(-N, N + 1))
    out = []
    for ell in ladder:
        sel = n > ell
        out.append(float(np.sqrt(np.max(np.sum(col[:, sel] ** 2, axis=1)))) if sel.any() else 0.0)
    return out


@dataclass
class FloerDiagnostics:
    energy: float
    energy_fd: float
    energy_bound: float
    sup_F: float
    energy_ok: bool
    ladder: tuple[int, ...]
    tail: list[float]
    tail_weighted: list[float]
    tail_monotone: bool
    tail_bounded: bool
    left_asymptote: float
    bound_ratio: float
    ode_residual: float
    ode_residual_nodes: float
    audit: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        out = dict(self.__dict__)
        out["ladder"] = list(self.ladder)
        return out


def floer_diagnostics(
    curve: FloerCurve, ladder: tuple[int, ...] = (4, 8, 16, 24), slack: float = 0.05, tail_slack: float = 1.1
) -> FloerDiagnostics:
    """Energy against ``4 T sup|F|``, the tail-norm ladder and the audit of the right asymptote.

    ``E = T int sum |lambda w + f|^2 ds`` (trapezoid), cross-checked by
    ``T int sum |w'|^2 ds`` with centred differences. The tail statistic is
    ``sup_s ( sum_{|n| > l} ( sum_p |w| max(|p|,1)^{m-1} )^2 )^{1/2}``.
    """
    prob = curve.problem
    params = prob.params
    T = params.T
    lam = np.where(prob.active, prob.lam, 0.0)
    W, f, ds = curve.slices, curve.forcing, curve.ds
    dens = np.sum(np.abs(lam * W + f) ** 2, axis=(1, 2))
    energy = T * float(np.trapezoid(dens, dx=ds)) if W.shape[0] > 1 else 0.0
    dw = (W[2:] - W[:-2]) / (2 * ds)
    energy_fd = T * float(np.trapezoid(np.sum(np.abs(dw) ** 2, axis=(1, 2)), dx=ds)) if W.shape[0] > 2 else 0.0
    # sup |F| sampled on the physical slices of every curve slice
    ev = evaluator(prob.spec, params, prob.N)
    sup_F = 0.0
    for j in range(0, W.shape[0], 16):
        block = W[j : j + 16]
        phys = np.stack([prob.physical_slices(b) for b in block])
        vals = ev.value(phys, prob.t_grid)
        sup_F = max(sup_F, float(np.max(np.abs(vals))))
    bound = 4.0 * T * sup_F
    tail = _tail_profile(W, prob.P, prob.N, params.m, ladder)
    expo = params.h - params.d * (params.r - 1) - 0.5
    weighted = [t * ell**expo for t, ell in zip(tail, ladder)]
    monotone = all(b <= tail_slack * a for a, b in zip(tail, tail[1:]))
    bounded = bool(np.all(np.isfinite(weighted))) and max(weighted) <= tail_slack * weighted[0] if weighted else True
    audit = decay_audit(curve.right_asymptote()).to_dict()
    return FloerDiagnostics(
        energy=energy,
        energy_fd=energy_fd,
        energy_bound=bound,
        sup_F=sup_F,
        energy_ok=energy <= bound * (1.0 + slack),
        ladder=tuple(ladder),
        tail=tail,
        tail_weighted=weighted,
        tail_monotone=monotone,
        tail_bounded=bool(bounded),
        left_asymptote=curve.left_asymptote_norm(),
        bound_ratio=max(curve.bound_ratio_history) if curve.bound_ratio_history else 0.0,
        ode_residual=ode_residual(curve),
        ode_residual_nodes=ode_residual_nodes(curve),
        audit=audit,
    )
