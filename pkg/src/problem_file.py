"""
Problem files - JSON schema, validation and builders
Also reads and writes trajectories (CSV) and reports (JSON)
"""
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from certificates import ConditionConstants
from errors import GridMismatchError, ProblemFileError
from expression import Expression, parse_expression
from frac_ops import Grid, PsiFunction, PsiKind, Trajectory
from operators import Generator
from solver import ProblemSpec

logger = logging.getLogger(__name__)

SCHEMA_VERSIONS = {"1.0"}

ExpressionSource = Union[str, list[str]]


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class Orders(_Section):
    mu: float = Field(gt=0, le=1)
    nu: float = Field(ge=0, le=1)


class Interval(_Section):
    t0: float = Field(default=0.0, ge=0)
    a: float = Field(gt=0)


class Nonlocal(_Section):
    points: list[float] = Field(default_factory=list)
    g_expr: ExpressionSource = "0"


class PsiSection(_Section):
    kind: Literal["identity", "power", "exponential"] = "identity"
    parameter: float = Field(default=1.0, gt=0)


class GridSection(_Section):
    n: int = Field(default=256, ge=8)


class SolverSection(_Section):
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=200, ge=1)


class ConstantsSection(_Section):
    M: float = Field(ge=0)
    L: float = Field(default=0.0, ge=0)
    K0: float = Field(default=0.0, ge=0)
    K1: float = Field(default=0.0, ge=0)
    H: float = Field(default=0.0, ge=0)
    Q0: float = Field(default=0.0, ge=0)
    G1_tilde: float = Field(default=0.0, ge=0)
    u0_norm: Optional[float] = Field(default=None, ge=0)
    r: float = Field(default=1.0, gt=0)
    L_time: float = Field(default=0.0, ge=0)
    K0_time: float = Field(default=0.0, ge=0)


class GronwallSection(_Section):
    alpha: float = Field(gt=0)
    v_expr: str = "1"
    g_expr: str = "1"
    u_expr: Optional[str] = None


class ProblemFile(_Section):
    schema_version: str
    name: str = "problem"
    orders: Orders
    interval: Interval
    generator: list[list[float]]
    u0: list[float]
    f_expr: ExpressionSource = "0"
    kernel_expr: ExpressionSource = "0"
    nonlocal_: Nonlocal = Field(default_factory=Nonlocal, alias="nonlocal")
    psi: PsiSection = Field(default_factory=PsiSection)
    grid: GridSection = Field(default_factory=GridSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    constants: Optional[ConstantsSection] = None
    gronwall: Optional[GronwallSection] = None

    @field_validator('schema_version')
    @classmethod
    def _known_version(cls, value: str) -> str:
        if value not in SCHEMA_VERSIONS:
            raise ValueError(f"unsupported schema_version {value!r}, expected one of {sorted(SCHEMA_VERSIONS)}")
        return value

    @property
    def dim(self) -> int:
        return len(self.u0)


def load_problem_file(path: Union[str, Path]) -> ProblemFile:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ProblemFileError(f"cannot read problem file {path}: {e}") from e
    return parse_problem_file(text, str(path))


def parse_problem_file(text: str, origin: str = "<string>") -> ProblemFile:
    try:
        return ProblemFile.model_validate_json(text)
    except ValidationError as e:
        raise ProblemFileError(f"invalid problem file {origin}: {e}") from e


# ============================================================================
# EXPRESSION-BACKED MAPS
# ============================================================================

def _component_sources(source: ExpressionSource, dim: int, field_name: str) -> list[str]:
    """A single string applies to every component"""
    if isinstance(source, str):
        return [source] * dim
    if len(source) != dim:
        raise ProblemFileError(f"{field_name} has {len(source)} expressions, state dimension is {dim}")
    return list(source)


def _state_names(dim: int) -> set[str]:
    names = {f"u{k + 1}" for k in range(dim)}
    if dim == 1:
        names.add("u")
    return names


def _parse_all(sources: list[str], allowed: set[str], field_name: str) -> list[Expression]:
    expressions = [parse_expression(s) for s in sources]
    for expr in expressions:
        unknown = expr.variables - allowed
        if unknown:
            raise ProblemFileError(f"{field_name}: unknown variables {sorted(unknown)} in '{expr.source}'")
    return expressions


def _state_env(u: np.ndarray) -> dict[str, np.ndarray]:
    env = {f"u{k + 1}": u[:, k] for k in range(u.shape[1])}
    if u.shape[1] == 1:
        env["u"] = u[:, 0]
    return env


def _stack(expressions: list[Expression], env: dict, m: int) -> np.ndarray:
    return np.column_stack([np.broadcast_to(np.asarray(e.evaluate(env), dtype=float), (m,)) for e in expressions])


class StateExpressionMap:
    """f(t, u) given by one expression per component"""

    def __init__(self, expressions: list[Expression]):
        self.expressions = expressions

    def __call__(self, t: np.ndarray, u: np.ndarray) -> np.ndarray:
        env = {"t": t, **_state_env(u)}
        return _stack(self.expressions, env, t.shape[0])


class KernelExpressionMap:
    """K(t, s, u) given by one expression per component"""

    def __init__(self, expressions: list[Expression]):
        self.expressions = expressions

    def __call__(self, t: np.ndarray, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        env = {"t": t, "s": s, **_state_env(u)}
        return _stack(self.expressions, env, t.shape[0])


class NonlocalExpressionMap:
    """g over the values u(t_1), ..., u(t_p), referenced as u@t1, u2@t3, ..."""

    def __init__(self, expressions: list[Expression]):
        self.expressions = expressions

    def __call__(self, values: np.ndarray) -> np.ndarray:
        p, dim = values.shape
        env = {}
        for k in range(p):
            for c in range(dim):
                env[f"u{c + 1}@t{k + 1}"] = values[k, c]
                if dim == 1:
                    env[f"u@t{k + 1}"] = values[k, c]
        return np.array([float(np.asarray(e.evaluate(env))) for e in self.expressions])


def build_psi(section: PsiSection) -> PsiFunction:
    return PsiFunction(PsiKind(section.kind), section.parameter)


def build_problem(pf: ProblemFile) -> ProblemSpec:
    dim = pf.dim
    rows = {len(row) for row in pf.generator}
    if len(pf.generator) != dim or rows != {dim}:
        raise ProblemFileError(f"generator must be {dim}x{dim} to match u0")

    states = _state_names(dim)
    f_exprs = _parse_all(_component_sources(pf.f_expr, dim, "f_expr"), states | {"t"}, "f_expr")
    k_exprs = _parse_all(_component_sources(pf.kernel_expr, dim, "kernel_expr"), states | {"t", "s"}, "kernel_expr")

    points = pf.nonlocal_.points
    nonlocal_names = {f"u{c + 1}@t{k + 1}" for c in range(dim) for k in range(len(points))}
    if dim == 1:
        nonlocal_names |= {f"u@t{k + 1}" for k in range(len(points))}
    g_exprs = _parse_all(_component_sources(pf.nonlocal_.g_expr, dim, "nonlocal.g_expr"), nonlocal_names, "nonlocal.g_expr")

    def all_zero(exprs: list[Expression]) -> bool:
        return all(e.is_zero for e in exprs)

    g_map = None if all_zero(g_exprs) else NonlocalExpressionMap(g_exprs)
    return ProblemSpec(
        mu=pf.orders.mu,
        nu=pf.orders.nu,
        t0=pf.interval.t0,
        a=pf.interval.a,
        A=Generator(np.array(pf.generator, dtype=float)),
        u0=np.array(pf.u0, dtype=float),
        f=None if all_zero(f_exprs) else StateExpressionMap(f_exprs),
        kernel=None if all_zero(k_exprs) else KernelExpressionMap(k_exprs),
        nonlocal_points=tuple(points) if g_map is not None else (),
        nonlocal_g=g_map,
        psi=build_psi(pf.psi),
    )


def build_grid(pf: ProblemFile, n: Optional[int] = None) -> Grid:
    return Grid(pf.interval.t0, pf.interval.a, n or pf.grid.n)


def build_constants(pf: ProblemFile) -> Optional[ConditionConstants]:
    """ConditionConstants from the file's constants section, if present"""
    c = pf.constants
    if c is None:
        return None
    gamma = pf.orders.mu + pf.orders.nu * (1 - pf.orders.mu)
    u0_norm = c.u0_norm
    if u0_norm is None:
        u0_norm = (pf.interval.t0 + pf.interval.a) ** (1 - gamma) * float(np.linalg.norm(pf.u0))
    return ConditionConstants(
        M=c.M, L=c.L, K0=c.K0, K1=c.K1, H=c.H, Q0=c.Q0, G1_tilde=c.G1_tilde, r=c.r,
        a=pf.interval.a, mu=pf.orders.mu, psi=build_psi(pf.psi), t0=pf.interval.t0,
        u0_norm=u0_norm, L_time=c.L_time, K0_time=c.K0_time,
    )


def time_profile(source: str, grid: Grid) -> np.ndarray:
    """Evaluate an expression in t on the grid nodes"""
    expr = parse_expression(source)
    unknown = expr.variables - {"t"}
    if unknown:
        raise ProblemFileError(f"profile '{source}' may only use t, found {sorted(unknown)}")
    return np.broadcast_to(np.asarray(expr.evaluate({"t": grid.nodes}), dtype=float), (grid.n + 1,)).copy()


# ============================================================================
# OUTPUT FORMATS
# ============================================================================

def _fmt(value: float) -> str:
    return format(value, '.15g')


def trajectory_csv(u: Trajectory) -> str:
    """t, w1..wd, u1..ud; the u columns are blank at t = 0 when gamma < 1"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    d = u.dim
    writer.writerow(['t'] + [f'w{k + 1}' for k in range(d)] + [f'u{k + 1}' for k in range(d)])
    unweighted = u.unweighted()
    for i, t in enumerate(u.grid.nodes):
        plain = ['' if math.isnan(x) else _fmt(x) for x in unweighted[i]]
        writer.writerow([_fmt(t)] + [_fmt(x) for x in u.values_weighted[i]] + plain)
    return buffer.getvalue()


def read_trajectory_csv(path: Union[str, Path], grid: Grid, gamma: float) -> Trajectory:
    """Trajectory from the weighted columns of a solution CSV"""
    try:
        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise ProblemFileError(f"cannot read trajectory {path}: {e}") from e
    if not rows:
        raise ProblemFileError(f"trajectory file {path} is empty")
    header, body = rows[0], rows[1:]
    w_columns = [i for i, name in enumerate(header) if name.startswith('w')]
    if not header or header[0] != 't' or not w_columns:
        raise ProblemFileError(f"trajectory file {path} lacks the t / w columns")
    try:
        times = np.array([float(r[0]) for r in body])
        values = np.array([[float(r[i]) for i in w_columns] for r in body])
    except (ValueError, IndexError) as e:
        raise ProblemFileError(f"malformed trajectory file {path}: {e}") from e
    if times.shape != grid.nodes.shape or not np.allclose(times, grid.nodes, rtol=0, atol=1e-12 * max(1.0, grid.end)):
        raise GridMismatchError(f"trajectory in {path} is not sampled on the problem grid (n = {grid.n})")
    return Trajectory(grid, gamma, values)


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def report_json(report: dict) -> str:
    """Deterministic JSON text; non-finite numbers become null"""
    return json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n"
