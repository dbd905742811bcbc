"""Run configuration: a TOML document validated by pydantic.

Every table rejects unknown keys. Validation errors are reported with the
line of the offending key (or of its table header when the key is missing).
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Any, Literal

import sympy
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import FlowConfig
from .nonlinearity import Kernel, NonlinearitySpec, Potential, Profile, load_kernel_csv
from .periodic import SolverOptions
from .spectral import ModelParams


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``path:line`` when known."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    period_X: str = "2*pi"
    period_T: str
    d: int = Field(2, ge=1)
    h: float = Field(5.0, gt=0)
    r: float = Field(2.0, ge=2)
    kind: Literal["nls", "nlw"] = "nls"

    @field_validator("period_X", "period_T")
    @classmethod
    def _positive_expr(cls, v: str) -> str:
        try:
            expr = sympy.sympify(v, rational=True)
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ValueError(f"cannot parse {v!r} as an expression") from exc
        if not expr.is_positive:
            raise ValueError(f"{v!r} is not a positive real number")
        return v


class WindowBlock(_Block):
    N: int = Field(64, ge=1)
    P: int = Field(64, ge=0)


class KernelBlock(_Block):
    family: Literal["bessel", "bump", "table"] = "bessel"
    order: float = Field(6.0, gt=0)
    support: float = Field(0.25, gt=0, lt=0.5)
    h_psi: float | None = None
    K: float | None = None
    csv: str | None = None

    @model_validator(mode="after")
    def _table_needs_csv(self) -> "KernelBlock":
        if self.family == "table" and not self.csv:
            raise ValueError("a table kernel needs a csv path")
        return self


class ProfileBlock(_Block):
    family: Literal["polynomial", "gaussian_poly", "sine"] = "gaussian_poly"
    coeffs: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.5])
    width: float = Field(1.0, gt=0)
    mod_offset: float = 1.0
    mod_amp: float = 0.0
    mod_harmonic: int = 1
    sample_range: float = Field(8.0, gt=0)


class PotentialBlock(_Block):
    family: Literal["zero", "exp_decay", "modes"] = "zero"
    amplitude: float = 0.0
    rate: float = Field(1.0, gt=0)
    p_cap: int = Field(16, ge=0)
    modes: list[tuple[int, int, float, float]] = Field(default_factory=list)


class NonlinearityBlock(_Block):
    amplitude: float = Field(0.0, ge=0)
    mean_free: bool = True
    cutoff_radius: float | None = Field(None, gt=0)
    wrapped: bool = False
    grid_factor: int = Field(4, ge=2)
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    profile: ProfileBlock = Field(default_factory=ProfileBlock)
    potential: PotentialBlock = Field(default_factory=PotentialBlock)

    @model_validator(mode="after")
    def _wrap_needs_radius(self) -> "NonlinearityBlock":
        if self.wrapped and self.cutoff_radius is None:
            raise ValueError("wrapped = true needs cutoff_radius")
        return self


class SolverBlock(_Block):
    newton_tol: float = Field(1e-10, gt=0)
    max_newton: int = Field(50, ge=1)
    krylov_tol: float = Field(1e-6, gt=0)
    krylov_max: int = Field(200, ge=1)
    fd_epsilon: float = Field(1e-6, gt=0)
    max_halvings: int = Field(8, ge=0)
    stagnation_steps: int = Field(5, ge=1)
    picard_warmup: int = Field(0, ge=0)
    round_trip_steps: int = Field(512, ge=1)
    round_trip_tol: float = Field(1e-6, gt=0)
    nontrivial_floor: float = Field(1e-3, ge=0)


class LinearBlock(_Block):
    form: Literal["first-order", "wave"] = "first-order"


class FlowBlock(_Block):
    steps_per_period: int = Field(256, ge=1)
    scheme: Literal["lie", "strang"] = "strang"
    forcing: Literal["exact", "split"] = "exact"
    periods: float = Field(1.0, gt=0)
    initial_amplitude: float = Field(0.1, ge=0)


class DiophantineBlock(_Block):
    scan_depth: int = Field(1_000_000, ge=2)
    N_scan: int = Field(256, ge=8)
    P_scan: int | None = Field(None, ge=8)
    precision_bits: int = Field(256, ge=64)
    budget_slack: float = Field(3.0, gt=0)


class CounterexampleBlock(_Block):
    schedule: Literal["liouville", "golden", "custom"] = "liouville"
    depth: int = Field(6, ge=2)
    quotients: list[int] = Field(default_factory=list)
    min_order: float = Field(4.0, gt=0)


class FloerBlock(_Block):
    tau: float | None = Field(None, ge=0)
    s_min: float = -8.0
    s_max: float | None = None
    ds: float = Field(0.05, gt=0)
    max_picard: int = Field(50, ge=1)
    tol: float = Field(1e-8, gt=0)
    left_tol: float = Field(1e-6, gt=0)
    right_tol: float = Field(1e-5, gt=0)
    csv_stride: int = Field(20, ge=1)


class ConvergenceBlock(_Block):
    ladder: list[tuple[int, int]] = Field(default_factory=lambda: [(8, 8), (16, 16), (32, 32), (64, 64)])


class RunConfig(_Block):
    seed: int = 0
    output_dir: str | None = None
    model: ModelBlock
    window: WindowBlock = Field(default_factory=WindowBlock)
    nonlinearity: NonlinearityBlock = Field(default_factory=NonlinearityBlock)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    flow: FlowBlock = Field(default_factory=FlowBlock)
    linear: LinearBlock = Field(default_factory=LinearBlock)
    diophantine: DiophantineBlock = Field(default_factory=DiophantineBlock)
    counterexample: CounterexampleBlock = Field(default_factory=CounterexampleBlock)
    floer: FloerBlock = Field(default_factory=FloerBlock)
    convergence: ConvergenceBlock = Field(default_factory=ConvergenceBlock)

    # domain objects

    def params(self) -> ModelParams:
        m = self.model
        return ModelParams(period_X=m.period_X, period_T=m.period_T, d=m.d, h=m.h, r=m.r, kind=m.kind)

    def kernel(self, base: Path | None = None) -> Kernel:
        k = self.nonlinearity.kernel
        if k.family == "table":
            path = Path(k.csv)
            if base is not None and not path.is_absolute():
                path = base / path
            return load_kernel_csv(path, h_psi=k.h_psi, K=k.K)
        return Kernel(family=k.family, order=k.order, support=k.support, h_psi=k.h_psi, K=k.K)

    def spec(self, base: Path | None = None) -> NonlinearitySpec:
        nl = self.nonlinearity
        pr, po = nl.profile, nl.potential
        return NonlinearitySpec(
            kernel=self.kernel(base),
            profile=Profile(pr.family, tuple(pr.coeffs), pr.width, pr.mod_offset, pr.mod_amp, pr.mod_harmonic),
            potential=Potential(po.family, po.amplitude, po.rate, po.p_cap, tuple(tuple(m) for m in po.modes)),
            amplitude=nl.amplitude,
            cutoff_radius=nl.cutoff_radius,
            wrapped=nl.wrapped,
            mean_free=nl.mean_free,
            grid_factor=nl.grid_factor,
        )

    def solver_options(self) -> SolverOptions:
        s = self.solver
        return SolverOptions(
            newton_tol=s.newton_tol,
            max_newton=s.max_newton,
            krylov_tol=s.krylov_tol,
            krylov_max=s.krylov_max,
            fd_epsilon=s.fd_epsilon,
            max_halvings=s.max_halvings,
            stagnation_steps=s.stagnation_steps,
            picard_warmup=s.picard_warmup,
        )

    def flow_config(self) -> FlowConfig:
        f = self.flow
        return FlowConfig(f.steps_per_period, f.scheme, f.forcing)

    def canonical(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\s\"]+?)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _line_index(text: str) -> tuple[dict[tuple[str, str], int], dict[str, int]]:
    keys: dict[tuple[str, str], int] = {}
    tables: dict[str, int] = {"": 1}
    table = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m and not line.lstrip().startswith("[["):
            table = ".".join(part.strip().strip('"') for part in m.group(1).split("."))
            tables[table] = lineno
            continue
        m = _KEY.match(line)
        if m:
            keys.setdefault((table, m.group(1)), lineno)
    return keys, tables


def _locate(loc: tuple[Any, ...], keys: dict[tuple[str, str], int], tables: dict[str, int]) -> int | None:
    parts = [str(p) for p in loc if not isinstance(p, int)]
    for cut in range(len(parts), 0, -1):
        table, key = ".".join(parts[: cut - 1]), parts[cut - 1]
        if (table, key) in keys:
            return keys[(table, key)]
        dotted = ".".join(parts[:cut])
        if dotted in tables:
            return tables[dotted]
    return None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        where = f"{source}:{m.group(1)}" if m else source
        raise ConfigError(f"{where}: TOML syntax error: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        keys, tables = _line_index(text)
        lines = []
        for err in exc.errors():
            line = _locate(tuple(err["loc"]), keys, tables)
            where = f"{source}:{line}" if line else source
            field = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.canonical())


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``reference_nls``, ``zero_spec``, ...)."""
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    if not path.exists():
        raise FileNotFoundError(f"no shipped config named {name!r}")
    return path
