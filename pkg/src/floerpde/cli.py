"""Command-line frontend: one config, one command, one output directory.

Exit codes: 0 when every enabled check passes, 2 when a check fails,
1 on usage or configuration errors. Every run writes ``manifest.json``
(hashes, versions, timings) next to its deterministic artifacts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .diophantine import ResonanceError, WindowTooSmallError, check_admissible, divisor_scan
from .dynamics import Trace, flow_map, twisted_flow_map
from .floer import FloerNonConvergenceError, floer_diagnostics, floer_iterate
from .nonlinearity import grad_F
from .periodic import (
    HBProblem,
    HBStagnationError,
    counterexample_generate,
    decay_audit,
    hb_solve,
    linear_forced_solve,
    liouville_schedule,
    round_trip_defects,
)
from .spectral import SpaceTimeField, SpectralField, field_to_json, free_flow, mode_index, mode_weight, scale_norm

COMMANDS = (
    "diophantine",
    "counterexample",
    "linear-solve",
    "solve-periodic",
    "floer",
    "convergence-study",
    "flow",
)

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class Run:
    """Collects the report, artifacts, checks and stage timings of one command."""

    def __init__(self, cfg: RunConfig, base: Path, args: argparse.Namespace):
        self.cfg = cfg
        self.base = base
        self.args = args
        self.report: dict[str, Any] = {}
        self.checks: dict[str, bool] = {}
        self.artifacts: dict[str, str] = {}
        self.timings: dict[str, float] = {}

    def timed(self, stage: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0

    def check(self, name: str, ok: bool) -> None:
        self.checks[name] = bool(ok)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _csv(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# commands


def cmd_diophantine(run: Run) -> None:
    cfg, params = run.cfg, run.cfg.params()
    dio = cfg.diophantine
    adm = run.timed("admissibility", lambda: check_admissible(params, dio.scan_depth, dio.precision_bits, dio.budget_slack))
    run.report["admissibility"] = adm.to_dict()
    run.check("admissible", adm.verdict == "admissible-at-depth")
    P_scan = dio.P_scan
    if P_scan is None:
        x = float(params.rotation_number())
        P_scan = max(8, math.ceil(abs(x) * dio.N_scan**params.d) + 2)
    try:
        table = run.timed("scan", lambda: divisor_scan(params, dio.N_scan, P_scan, dio.precision_bits))
    except ResonanceError as exc:
        run.report["scan"] = {"status": "resonant", "witness": list(exc.witness), "message": str(exc)}
        run.check("scan", False)
        return
    except WindowTooSmallError as exc:
        run.report["scan"] = {"status": "window-too-small", "n": exc.n, "message": str(exc)}
        run.check("scan", False)
        return
    run.artifacts["divisor_table.csv"] = table.to_csv()
    run.report["scan"] = {
        "status": "ok",
        "N_scan": dio.N_scan,
        "P_scan": P_scan,
        "fitted_exponent": table.fitted_exponent,
        "predicted_exponent": -params.d * (params.r - 1),
        "fitted_constant": table.fitted_constant,
        "fit_on": table.fit_on,
        "record_n": table.record_n,
        "rowwise_bound_holds": table.rowwise_ok,
        "precision_bits": table.precision_bits,
    }
    run.check("rowwise_bound", table.rowwise_ok)


def _schedule(cfg: RunConfig) -> list[int]:
    ce = cfg.counterexample
    if ce.schedule == "liouville":
        return liouville_schedule(ce.depth)
    if ce.schedule == "golden":
        return [1] * (ce.depth + 1)
    if not ce.quotients:
        raise ConfigError("counterexample.schedule = 'custom' needs counterexample.quotients")
    return list(ce.quotients)


def cmd_counterexample(run: Run) -> None:
    cfg = run.cfg
    quotients = _schedule(cfg)
    rep = run.timed("generate", lambda: counterexample_generate(quotients, cfg.counterexample.min_order))
    doc = rep.to_dict()
    doc["schedule"] = cfg.counterexample.schedule
    doc["ratio_T_over_X"] = f"{rep.ratio.numerator}/{rep.ratio.denominator}"
    run.report["counterexample"] = doc
    rows = [[e.k, e.p, e.q, str(e.chat_scaled), e.chat_magnitude, e.exponent, str(e.phi_hat)] for e in rep.entries]
    run.artifacts["counterexample.csv"] = _csv(["k", "p", "q", "chat_scaled", "chat_abs", "order", "solution_coeff"], rows)
    run.check("smoothness_flag", rep.superpolynomial)
    run.check("solution_coefficients_exactly_one", rep.coefficients_exactly_one)


def cmd_linear_solve(run: Run) -> None:
    cfg, params = run.cfg, run.cfg.params()
    spec = cfg.spec(run.base)
    P, N = cfg.window.P, cfg.window.N
    chat = spec.potential.coeffs(P, N)
    if spec.mean_free and cfg.linear.form == "first-order":
        chat[:, N] = 0.0
    try:
        U, audit = run.timed("solve", lambda: linear_forced_solve(chat, params, form=cfg.linear.form))
    except ResonanceError as exc:
        run.report["linear"] = {"status": "resonant", "witness": list(exc.witness), "message": str(exc)}
        run.check("nonresonant", False)
        return
    run.report["linear"] = {"status": "ok", "form": cfg.linear.form, "norm": U.norm(), "gauge": U.gauge.value}
    run.report["audit"] = audit.to_dict()
    run.artifacts["solution.json"] = dumps(field_to_json(U))
    run.artifacts["decay_audit.csv"] = audit.to_csv()
    run.check("decay_audit", audit.verdict == "PASS")


def _problem(cfg: RunConfig, base: Path, P: int | None = None, N: int | None = None) -> HBProblem:
    params = cfg.params()
    params.require_solver_ready()
    spec = cfg.spec(base)
    spec.kernel.verify(N or cfg.window.N, params.X)
    spec.profile.derivative_bounds(cfg.nonlinearity.profile.sample_range)
    return HBProblem(params, spec, cfg.window.P if P is None else P, cfg.window.N if N is None else N, cfg.solver_options())


def _solve(run: Run, problem: HBProblem) -> tuple[SpaceTimeField, Any] | None:
    try:
        return run.timed("hb_solve", lambda: hb_solve(problem))
    except HBStagnationError as exc:
        run.report["hb"] = {"status": "stagnated", "message": str(exc), "diagnostics": exc.args[1] if len(exc.args) > 1 else {}}
        run.check("hb_converged", False)
        return None


def cmd_solve_periodic(run: Run) -> None:
    cfg = run.cfg
    try:
        problem = _problem(cfg, run.base)
    except ResonanceError as exc:
        run.report["hb"] = {"status": "resonant", "witness": list(exc.witness), "message": str(exc)}
        run.check("nonresonant", False)
        return
    out = _solve(run, problem)
    if out is None:
        return
    U, trace = out
    params, spec = problem.params, problem.spec
    residual = trace.residual_history[-1]
    run.report["hb"] = {"status": "converged" if trace.converged else "not-converged", "residual": residual, **trace.to_dict()}
    run.check("hb_converged", trace.converged)
    g0 = grad_F(SpectralField.zeros(problem.N, params), 0.0, spec).norm()
    run.report["nontriviality"] = {"grad_F_zero_norm": g0, "solution_norm": U.norm(), "trivial": trace.trivial}
    if g0 > 0:
        run.check("nontrivial", U.norm() > cfg.solver.nontrivial_floor)
    audit = run.timed("audit", lambda: decay_audit(U, params))
    run.report["audit"] = audit.to_dict()
    run.check("decay_audit", audit.verdict == "PASS")
    if trace.trivial:
        rt = {"physical": 0.0, "twisted": 0.0, "steps": 0}
    else:
        rt = run.timed("round_trip", lambda: round_trip_defects(U, spec, cfg.solver.round_trip_steps, cfg.flow.forcing))
    run.report["round_trip"] = rt
    run.check("round_trip", max(rt["physical"], rt["twisted"]) <= cfg.solver.round_trip_tol)
    run.artifacts["solution.json"] = dumps(field_to_json(U))
    run.artifacts["solution_physical.json"] = dumps(field_to_json(trace.physical))
    run.artifacts["decay_audit.csv"] = audit.to_csv()
    run.artifacts["residual_history.csv"] = _csv(
        ["iteration", "residual"], [[i, r] for i, r in enumerate(trace.residual_history)]
    )


def cmd_floer(run: Run) -> None:
    cfg = run.cfg
    fl = cfg.floer
    try:
        problem = _problem(cfg, run.base)
    except ResonanceError as exc:
        run.report["floer"] = {"status": "resonant", "witness": list(exc.witness), "message": str(exc)}
        run.check("nonresonant", False)
        return
    out = _solve(run, problem)
    if out is None:
        return
    U, trace = out
    run.report["hb"] = {"residual": trace.residual_history[-1], "converged": trace.converged}
    try:
        curve = run.timed(
            "floer_iterate",
            lambda: floer_iterate(problem, fl.tau, fl.max_picard, fl.tol, fl.s_min, fl.s_max, fl.ds),
        )
    except FloerNonConvergenceError as exc:
        run.report["floer"] = {"status": "not-converged", "message": str(exc)}
        run.check("floer_converged", False)
        return
    diag = run.timed("diagnostics", lambda: floer_diagnostics(curve))
    right = curve.right_asymptote()
    right_err = float(np.linalg.norm(right.coeffs - U.coeffs))
    run.report["floer"] = {
        "status": "converged" if curve.converged else "not-converged",
        "change_history": curve.change_history,
        "right_asymptote_error": right_err,
        **curve.index(),
    }
    run.report["diagnostics"] = diag.to_dict()
    run.check("floer_converged", curve.converged)
    run.check("left_asymptote", diag.left_asymptote <= fl.left_tol)
    run.check("right_asymptote", right_err <= fl.right_tol)
    run.check("energy_bound", diag.energy_ok)
    run.check("tail_monotone", diag.tail_monotone)
    run.check("tail_bounded", diag.tail_bounded)
    run.artifacts["curve.csv"] = curve.to_csv(fl.csv_stride)
    run.artifacts["curve_index.json"] = dumps(curve.index())
    run.artifacts["tail.csv"] = _csv(
        ["ell", "tail", "tail_weighted"], [[e, t, w] for e, t, w in zip(diag.ladder, diag.tail, diag.tail_weighted)]
    )
    run.artifacts["solution.json"] = dumps(field_to_json(right))


def _tail_norm(U: np.ndarray, P: int, N: int) -> float:
    p = np.abs(np.arange(-P, P + 1))[:, None]
    n = np.abs(mode_index(N))[None, :]
    sel = (p > P // 2) | (n > N // 2)
    return float(np.linalg.norm(U[sel]))


def cmd_convergence_study(run: Run) -> None:
    cfg = run.cfg
    ladder = [tuple(x) for x in cfg.convergence.ladder]

    def rung(NP: tuple[int, int]) -> dict[str, Any]:
        N, P = NP
        problem = _problem(cfg, run.base, P=P, N=N)
        t0 = time.perf_counter()
        U, trace = hb_solve(problem)
        elapsed = time.perf_counter() - t0
        params = problem.params
        sigma = params.h - params.d * (params.r - 1) - 0.5
        ts = np.arange(32) * params.T / 32
        reg = max(scale_norm(U.evaluate(float(t)), sigma) for t in ts)
        return {
            "N": N,
            "P": P,
            "residual": trace.residual_history[-1],
            "converged": trace.converged,
            "norm": U.norm(),
            "tail": _tail_norm(U.coeffs, P, N),
            "regularity_norm": reg,
            "min_divisor": problem.min_divisor[0],
            "_elapsed": elapsed,
        }

    jobs = max(1, int(run.args.jobs or 1))
    try:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = run.timed("ladder", lambda: list(pool.map(rung, ladder)))
    except (ResonanceError, HBStagnationError) as exc:
        run.report["convergence"] = {"status": "failed", "message": str(exc)}
        run.check("ladder_solved", False)
        return
    for row in rows:
        run.timings[f"rung_{row['N']}x{row['P']}"] = row.pop("_elapsed")
    tails = [r["tail"] for r in rows]
    decreasing = all(b < a for a, b in zip(tails, tails[1:]))
    run.report["convergence"] = {"status": "ok", "rows": rows, "tail_decreasing": decreasing}
    header = ["N", "P", "residual", "norm", "tail", "regularity_norm", "min_divisor"]
    run.artifacts["convergence.csv"] = _csv(header, [[r[k] for k in header] for r in rows])
    run.check("ladder_converged", all(r["converged"] for r in rows))
    run.check("tail_decreasing", decreasing)


def cmd_flow(run: Run) -> None:
    cfg = run.cfg
    params, spec = cfg.params(), cfg.spec(run.base)
    N = cfg.window.N
    rng = np.random.default_rng(cfg.seed)
    c = rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)
    c *= cfg.flow.initial_amplitude * mode_weight(mode_index(N)) ** (-2.0)
    if spec.mean_free:
        c[N] = 0.0
    u0 = SpectralField(c, params)
    t1 = cfg.flow.periods * params.T
    flow_cfg = cfg.flow_config()
    trace = Trace([]) if run.args.trace else None
    u1 = run.timed("flow", lambda: flow_map(u0, 0.0, t1, flow_cfg, spec, trace))
    n_steps = max(1, math.ceil(t1 / flow_cfg.dt(params) - 1e-9))
    u2 = run.timed("twisted", lambda: twisted_flow_map(u0, 0.0, t1, n_steps, spec, cfg.flow.forcing))
    two_path = (u1 - free_flow(u2, t1)).norm()
    run.report["flow"] = {
        "t_final": t1,
        "steps": n_steps,
        "scheme": flow_cfg.scheme,
        "forcing": flow_cfg.forcing,
        "norm_initial": u0.norm(),
        "norm_final": u1.norm(),
        "two_path_defect": two_path,
    }
    run.check("finite", bool(np.all(np.isfinite(u1.coeffs))))
    run.artifacts["initial.json"] = dumps(field_to_json(u0))
    run.artifacts["solution.json"] = dumps(field_to_json(u1))
    if trace is not None:
        run.artifacts["trace.csv"] = trace.to_csv()


HANDLERS: dict[str, Callable[[Run], None]] = {
    "diophantine": cmd_diophantine,
    "counterexample": cmd_counterexample,
    "linear-solve": cmd_linear_solve,
    "solve-periodic": cmd_solve_periodic,
    "floer": cmd_floer,
    "convergence-study": cmd_convergence_study,
    "flow": cmd_flow,
}


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "mpmath", "sympy", "pydantic"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _output_dir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    if args.output:
        return Path(args.output)
    env = os.environ.get("OUTPUT_DIR")
    if env:
        return Path(env)
    return Path(cfg.output_dir or "out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floerpde", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
    ap.add_argument("--jobs", type=int, default=1, metavar="N", help="threads for ladder sweeps")
    ap.add_argument("--trace", action="store_true", help="write per-step trace.csv (flow)")
    ap.add_argument("--output", metavar="DIR", help="artifact directory (overrides OUTPUT_DIR and the config)")
    ap.add_argument("--seed", type=int, metavar="S", help="override the config seed")
    return ap


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.jobs is not None and args.jobs < 1:
        print("floerpde: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    t_start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        base = Path(args.config).resolve().parent
        job = Run(cfg, base, args)
        HANDLERS[args.command](job)
    except ConfigError as exc:
        print(f"floerpde: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:
        print(f"floerpde: {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = _output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    job.report["command"] = args.command
    job.report["checks"] = job.checks
    job.report["verdict"] = "PASS" if job.passed else "FAIL"
    job.artifacts["report.json"] = dumps(job.report)
    for name, text in job.artifacts.items():
        with open(out / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    manifest = {
        "command": args.command,
        "config_path": str(Path(args.config).resolve()),
        "config_sha256": cfg.digest(),
        "config_file_sha256": hashlib.sha256(Path(args.config).read_bytes()).hexdigest(),
        "seed": cfg.seed,
        "jobs": args.jobs,
        "precision_bits": cfg.diophantine.precision_bits,
        "versions": _versions(),
        "platform": platform.platform(),
        "timings": {**job.timings, "total": time.perf_counter() - t_start},
        "artifacts": sorted(job.artifacts),
        "verdict": job.report["verdict"],
    }
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    summary = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in job.checks.items())
    print(f"{args.command}: {job.report['verdict']} ({summary}) -> {out}")
    return EXIT_OK if job.passed else EXIT_CHECK


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
