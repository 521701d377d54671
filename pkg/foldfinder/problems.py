"""
Built-in parametric systems and the problem-file front end.

Problem files are TOML with flat keys per problem; the bundled ones live
in `problems/` at the root of the repository.
"""
import logging
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import warnings
from collections import namedtuple
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import List, Optional

import numpy as np

from .constants import PROBLEMS_DIR
from .core import DomainSpec, ParametricSystem
from .errors import (
    BadExponent,
    DimensionMismatch,
    NegativeEntry,
    NonpositiveParameter,
    NotIrreducible,
    ParseError,
    ProblemFileError,
)
from .expressions import Expression, compile_vector
from .matrix import check_irreducible

_log = logging.getLogger(__name__)

KINDS = ("linear", "power-flow", "convex-concave-fd", "bratu-fd", "custom")


def _positive(name, value):
    if not value > 0:
        raise NonpositiveParameter(f"{name} must be positive, got {value}")
    return float(value)


def _mesh(n, L):
    if int(n) != n or n < 1:
        raise DimensionMismatch(f"mesh size must be a positive integer, got {n}")
    return int(n), _positive("L", L), _positive("L", L) / (int(n) + 1)


def _second_difference(u, tau):
    """(-u_{i-1} + 2 u_i - u_{i+1}) / tau^2 with u_0 = u_{n+1} = 0, on (n,) or (n, m)."""
    padded = np.zeros((u.shape[0] + 2,) + u.shape[1:])
    padded[1:-1] = u
    return (2 * padded[1:-1] - padded[:-2] - padded[2:]) / tau**2


def _laplacian(n, tau):
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / tau**2


def _sine_profile(n, L, tau):
    return np.sin(np.pi * tau * np.arange(1, n + 1) / L)


# ---- linear ---- #


def build_linear(A, upper=10.0) -> ParametricSystem:
    """g(x) = A x, h(x) = x on (0, upper)^n: lambda* is the Perron root of A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if np.any(A < 0):
        raise NegativeEntry("A must be entrywise nonnegative")
    if not check_irreducible(A).irreducible:
        raise NotIrreducible("A must be irreducible")
    upper = _positive("upper", upper)

    return ParametricSystem(
        n,
        g=lambda x: np.tensordot(A, x, axes=1),
        h=lambda x: np.array(x, dtype=float),
        domain=DomainSpec.positive_orthant(n, upper),
        jac_g=lambda x: A.copy(),
        jac_h=lambda x: np.eye(n),
        name=f"linear(n={n})",
        sampling_box=(np.full(n, upper * 1e-2), np.full(n, upper)),
        seed_point=np.full(n, upper / 10),
        positivity_start=np.full(n, upper / 10),
        structural_r=True,
        r_caveat="J = A - lambda I has the constant off-diagonal pattern of A.",
        params={"kind": "linear", "A": A.tolist(), "upper": upper},
    )


# ---- two-bus power flow ---- #


def power_flow_nose(p, q):
    """Closed-form maximum loadability (theta*, v*, lambda*) of the two-bus system.

    Eliminating theta gives v^4 + (2 lambda q - 1) v^2 + lambda^2 (p^2 + q^2) = 0,
    which has real roots iff 4 p^2 lambda^2 + 4 q lambda <= 1.
    """
    p, q = _positive("p", p), _positive("q", q)
    lam = (np.hypot(p, q) - q) / (2 * p**2)
    v = np.sqrt((1 - 2 * q * lam) / 2)
    theta = np.arcsin(-p * lam / v)
    return float(theta), float(v), float(lam)


def build_power_flow(p, q) -> ParametricSystem:
    """x = (theta, v): -v sin(theta) = lambda p, v cos(theta) - v^2 = lambda q."""
    p, q = _positive("p", p), _positive("q", q)

    def g(x):
        theta, v = x[0], x[1]
        return np.stack([-v * np.sin(theta), v * np.cos(theta) - v**2])

    def h(x):
        shape = np.shape(x)[1:]
        return np.stack([np.full(shape, p), np.full(shape, q)])

    def jac_g(x):
        theta, v = x
        return np.array(
            [
                [-v * np.cos(theta), -np.sin(theta)],
                [-v * np.sin(theta), np.cos(theta) - 2 * v],
            ]
        )

    return ParametricSystem(
        2,
        g,
        h,
        DomainSpec.box([-np.pi / 2, 0.0], [np.pi / 2, np.inf]),
        jac_g=jac_g,
        jac_h=lambda x: np.zeros((2, 2)),
        name=f"power-flow(p={p:g}, q={q:g})",
        sampling_box=(np.array([-1.5, 0.01]), np.array([1.5, 2.0])),
        seed_point=np.array([-0.3, 0.6]),
        branch_seed=(np.array([0.0, 1.0]), 0.01),
        structural_r=True,
        r_caveat="off-diagonals -sin(theta), -v sin(theta) vanish on theta = 0.",
        params={"kind": "power-flow", "p": p, "q": q},
    )


# ---- finite-difference boundary value problems ---- #


def check_growth_hypothesis(p, q) -> bool:
    """Numerical test of p(t)/t^q -> +inf at infinity and p(t)/t -> 0 at 0."""
    with np.errstate(all="ignore"):
        large = [float(p(np.array(t))) / t**q for t in (1e3, 1e6)]
        small = [abs(float(p(np.array(t)))) / t for t in (1e-3, 1e-6)]
    ok = (
        all(np.isfinite(large + small))
        and large[1] > large[0] > 0
        and small[1] <= small[0]
        and small[1] < 1e-2
    )
    if not ok:
        message = f"p may violate the growth hypothesis: p(t)/t^q at 1e3, 1e6 = {large}, |p(t)|/t at 1e-3, 1e-6 = {small}"
        _log.warning("%s", message)
        warnings.warn(message)
    return ok


def build_convex_concave_fd(n, L=1.0, q=0.5, gamma=2.0, p_expr: Optional[str] = None) -> ParametricSystem:
    """-(u_{i+1} - 2u_i + u_{i-1}) / tau^2 - p(u_i) - lambda u_i^q = 0 on the open orthant.

    p(t) = t^gamma unless an expression in t is given.
    """
    n, L, tau = _mesh(n, L)
    if not 0 < q < 1:
        raise BadExponent(f"q must lie in (0, 1), got {q}")

    if p_expr is None:
        if not gamma > 1:
            raise BadExponent(f"gamma must exceed 1, got {gamma}")
        gamma = float(gamma)

        def p(u):
            return u**gamma

        def dp(u):
            return gamma * u ** (gamma - 1)

        description = f"t^{gamma:g}"
    else:
        p_expression = Expression(p_expr, 1, variables=("t",))
        dp_expression = p_expression.derivative(0)

        def p(u):
            return p_expression(np.asarray(u)[None, ...])

        def dp(u):
            return dp_expression(np.asarray(u)[None, ...])

        check_growth_hypothesis(p, q)
        description = p_expr

    def g(u):
        return _second_difference(u, tau) - p(u)

    def h(u):
        return u**q

    laplacian = _laplacian(n, tau)
    profile = _sine_profile(n, L, tau)
    mu1 = 4 / tau**2 * np.sin(np.pi * tau / (2 * L)) ** 2
    # amplitude maximizing lambda along the sine profile when p = t^gamma
    amplitude = ((1 - q) * mu1 / (gamma - q)) ** (1 / (gamma - 1)) if p_expr is None else 1.0
    seed_lambda = 1.0

    delta = 1e-1
    while delta > 1e-8 and np.min(g(delta * profile) / h(delta * profile)) <= 0:
        delta /= 10

    return ParametricSystem(
        n,
        g,
        h,
        DomainSpec.positive_orthant(n),
        jac_g=lambda u: laplacian - np.diag(dp(u)),
        jac_h=lambda u: np.diag(q * u ** (q - 1)),
        name=f"convex-concave(n={n}, L={L:g}, q={q:g}, p={description})",
        sampling_box=(np.zeros(n), np.full(n, 3 * amplitude)),
        seed_point=amplitude * profile,
        positivity_start=delta * profile,
        branch_seed=((seed_lambda / mu1) ** (1 / (1 - q)) * profile, seed_lambda),
        structural_r=True,
        r_caveat="tridiagonal Jacobian with constant off-diagonals -1/tau^2.",
        params={
            "kind": "convex-concave-fd",
            "n": n,
            "L": L,
            "q_param": q,
            "gamma": None if p_expr is not None else gamma,
            "p": p_expr,
        },
    )


def build_bratu_fd(n, L=1.0) -> ParametricSystem:
    """-(u_{i+1} - 2u_i + u_{i-1}) / tau^2 = lambda exp(u_i) on the open orthant."""
    n, L, tau = _mesh(n, L)
    laplacian = _laplacian(n, tau)
    profile = _sine_profile(n, L, tau)

    return ParametricSystem(
        n,
        g=lambda u: _second_difference(u, tau),
        h=np.exp,
        domain=DomainSpec.positive_orthant(n),
        jac_g=lambda u: laplacian.copy(),
        jac_h=lambda u: np.diag(np.exp(u)),
        name=f"bratu(n={n}, L={L:g})",
        sampling_box=(np.zeros(n), np.full(n, 3.0)),
        seed_point=1.2 * profile,
        positivity_start=np.sin(tau * np.arange(1, n + 1)),
        branch_seed=(0.1 * profile, 0.5),
        structural_r=True,
        r_caveat="tridiagonal Jacobian with constant off-diagonals -1/tau^2.",
        params={"kind": "bratu-fd", "n": n, "L": L},
    )


# ---- user-defined systems ---- #


def _vector(value, n, name):
    array = np.broadcast_to(np.asarray(value, dtype=float), (n,)) if np.ndim(value) == 0 else np.asarray(value, dtype=float)
    if array.shape != (n,):
        raise DimensionMismatch(f"{name} must have {n} entries, got {np.size(value)}")
    return array.copy()


def build_custom(n, g, h, lower, upper, strict=True, sampling_box=None, seed_point=None, name="custom"):
    n = int(n)
    if n < 1:
        raise DimensionMismatch("n must be a positive integer")
    g_fun, g_jac = compile_vector(g, n)
    h_fun, h_jac = compile_vector(h, n)
    box = None
    if sampling_box is not None:
        if len(sampling_box) != 2:
            raise DimensionMismatch("sampling_box must be [lower, upper]")
        box = (_vector(sampling_box[0], n, "sampling_box lower"), _vector(sampling_box[1], n, "sampling_box upper"))
    return ParametricSystem(
        n,
        g_fun,
        h_fun,
        DomainSpec.box(
            _vector(lower, n, "domain.lower"),
            _vector(upper, n, "domain.upper"),
            np.broadcast_to(np.asarray(strict, dtype=bool), (n,)),
        ),
        jac_g=g_jac,
        jac_h=h_jac,
        name=name,
        sampling_box=box,
        seed_point=None if seed_point is None else _vector(seed_point, n, "seed_point"),
        params={"kind": "custom", "n": n, "g": list(g), "h": list(h)},
    )


# ---- problem files ---- #


@dataclass(frozen=True)
class ProblemSpec:
    """The image of a problem file: kind, kind-specific parameters and the
    optional sampling box and seed point."""

    kind: str
    params: dict
    name: str = "problem"
    seed_point: Optional[List[float]] = None
    sampling_box: Optional[List[List[float]]] = None
    source: str = field(default="", repr=False)

    def with_param(self, key, value) -> "ProblemSpec":
        return replace(self, params={**self.params, key: value})

    def build(self) -> ParametricSystem:
        return build_system(self)


def _toml_error_position(error):
    match = re.search(r"line (\d+), column (\d+)", str(error))
    return (int(match.group(1)), int(match.group(2))) if match else (1, 1)


def parse_problem(text: str, name="problem") -> ProblemSpec:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as error:
        line, column = _toml_error_position(error)
        raise ParseError(f"{name}: {error}", line, column) from error

    kind = data.pop("kind", None)
    if kind not in KINDS:
        raise ProblemFileError(f"{name}: kind must be one of {', '.join(KINDS)}, got {kind!r}")
    seed_point = data.pop("seed_point", None)
    sampling_box = data.pop("sampling_box", None)
    name = data.pop("name", name)
    return ProblemSpec(kind, data, name, seed_point, sampling_box, text)


def load_problem(path) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ProblemFileError(f"cannot read {path}: {error}") from error
    return parse_problem(text, path.stem)


def _require(params, key, kind):
    if key not in params:
        raise ProblemFileError(f"{kind} problems need the key {key!r}")
    return params[key]


def build_system(spec: ProblemSpec) -> ParametricSystem:
    params = spec.params
    kind = spec.kind
    if kind == "linear":
        system = build_linear(_require(params, "A", kind), params.get("upper", 10.0))
    elif kind == "power-flow":
        system = build_power_flow(params.get("p", 1.0), params.get("q", 1.0))
    elif kind == "convex-concave-fd":
        exponent = params.get("q_param", params.get("q", 0.5))
        system = build_convex_concave_fd(
            _require(params, "n", kind),
            params.get("L", 1.0),
            exponent,
            params.get("gamma", 2.0),
            params.get("p"),
        )
    elif kind == "bratu-fd":
        system = build_bratu_fd(_require(params, "n", kind), params.get("L", 1.0))
    else:
        n = _require(params, "n", kind)
        expressions = _require(params, "expressions", kind)
        domain = _require(params, "domain", kind)
        system = build_custom(
            n,
            _require(expressions, "g", "custom"),
            _require(expressions, "h", "custom"),
            _require(domain, "lower", "custom"),
            _require(domain, "upper", "custom"),
            domain.get("strict", True),
            spec.sampling_box,
            spec.seed_point,
            spec.name,
        )
        return system

    n = system.n
    overrides = {}
    if spec.seed_point is not None:
        overrides["seed_point"] = _vector(spec.seed_point, n, "seed_point")
    if spec.sampling_box is not None:
        overrides["sampling_box"] = tuple(_vector(b, n, "sampling_box") for b in spec.sampling_box)
    return replace(system, **overrides) if overrides else system


# ---- bundled problems ---- #

ProblemData = namedtuple("ProblemData", "name kind n description")


def list_problems() -> List[str]:
    return sorted(path.stem for path in PROBLEMS_DIR.glob("*.toml"))


@lru_cache()
def problem_data(name: str) -> ProblemData:
    spec = load_problem(PROBLEMS_DIR / f"{name}.toml")
    params = spec.params
    if spec.kind == "linear":
        n = len(params.get("A", []))
    elif spec.kind == "power-flow":
        n = 2
    else:
        n = params.get("n")
    return ProblemData(spec.name, spec.kind, n, params.get("description", ""))


def resolve_problem(name_or_path) -> Path:
    """A path, or the name of a bundled problem."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = PROBLEMS_DIR / f"{name_or_path}.toml"
    if bundled.exists():
        return bundled
    bundled = PROBLEMS_DIR / path.name
    if bundled.exists():
        return bundled
    raise ProblemFileError(f"no problem file {name_or_path!r}")
