"""
Parametric systems f(x, lambda) = g(x) - lambda h(x) and the bifurcation
functional lambda(x) = min_i g_i(x) / h_i(x).

Every other module speaks in terms of the objects defined here.
Evaluators accept a single point of shape (n,) or a batch of points
stacked as columns, shape (n, m).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from .constants import (
    BOUNDARY_FRACTION,
    EPS_ACTIVE,
    EPS_WEIGHT,
    FD_STEP,
    MEMBERSHIP_MARGIN,
    PROBE_MAX_STEPS,
    PROBE_TOL,
)
from .errors import (
    DegenerateWeight,
    DimensionMismatch,
    DomainViolation,
    EmptyActiveSet,
    InvalidDomain,
)

_log = logging.getLogger(__name__)

VectorMap = Callable[[np.ndarray], np.ndarray]
MatrixMap = Callable[[np.ndarray], np.ndarray]


def fd_jacobian(fun: VectorMap, x, step=FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian, step scaled by (1 + |x_j|)."""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(x.size):
        hj = step * (1 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = hj
        columns.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * hj))
    return np.column_stack(columns)


@dataclass(frozen=True)
class DomainSpec:
    """An open (or half-open) box. Infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray
    strict: np.ndarray
    membership_margin: float = MEMBERSHIP_MARGIN

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        strict = np.broadcast_to(np.asarray(self.strict, dtype=bool), lower.shape)
        if lower.shape != upper.shape:
            raise DimensionMismatch(
                f"domain bounds have {lower.size} and {upper.size} entries"
            )
        if np.any(lower >= upper):
            raise InvalidDomain("every lower bound must be below its upper bound")
        if self.membership_margin < 0:
            raise InvalidDomain("membership margin must be nonnegative")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "strict", strict.copy())

    @classmethod
    def box(cls, lower, upper, strict=True, margin=MEMBERSHIP_MARGIN):
        return cls(lower, upper, strict, margin)

    @classmethod
    def positive_orthant(cls, n, upper=np.inf, margin=MEMBERSHIP_MARGIN):
        return cls(np.zeros(n), np.full(n, upper), True, margin)

    @property
    def n(self):
        return self.lower.size

    @property
    def finite(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def mask(self, points) -> np.ndarray:
        """Membership of a batch of points stored as columns (n, m)."""
        points = np.asarray(points, dtype=float)
        lower = self.lower[:, None]
        upper = self.upper[:, None]
        strict = self.strict[:, None]
        above = np.where(strict, points > lower, points >= lower)
        below = np.where(strict, points < upper, points <= upper)
        return np.all(above & below & np.isfinite(points), axis=0)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != self.lower.shape:
            return False
        return bool(self.mask(x[:, None])[0])

    def boundary_distance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.min(np.minimum(x - self.lower, self.upper - x)))

    def near_boundary(self, x) -> bool:
        return self.boundary_distance(x) <= self.membership_margin

    def check(self, x):
        if not self.contains(x):
            raise DomainViolation(f"point {np.asarray(x).tolist()} lies outside Q")

    def step_bounds(self, x, radius, fraction=BOUNDARY_FRACTION):
        """Per-coordinate bounds for a step from x: inside an l-inf ball
        of the given radius, never covering more than `fraction` of the
        distance to a finite bound."""
        x = np.asarray(x, dtype=float)
        lo = np.maximum(-radius, -fraction * (x - self.lower))
        hi = np.minimum(radius, fraction * (self.upper - x))
        return lo, hi


@dataclass(frozen=True)
class ParametricSystem:
    """f(x, lambda) = g(x) - lambda h(x) on a box domain Q."""

    n: int
    g: VectorMap
    h: VectorMap
    domain: DomainSpec
    jac_g: Optional[MatrixMap] = None
    jac_h: Optional[MatrixMap] = None
    name: str = "system"
    sampling_box: Optional[Tuple[np.ndarray, np.ndarray]] = None
    seed_point: Optional[np.ndarray] = None
    positivity_start: Optional[np.ndarray] = None
    branch_seed: Optional[Tuple[np.ndarray, float]] = None
    structural_r: bool = False
    r_caveat: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise DimensionMismatch("state dimension must be positive")
        if self.domain.n != self.n:
            raise DimensionMismatch(
                f"domain has dimension {self.domain.n}, system has {self.n}"
            )

    def __str__(self):
        return f"<{self.__class__.__name__}({self.name}, n={self.n})>"

    def g_of(self, x) -> np.ndarray:
        return np.asarray(self.g(np.asarray(x, dtype=float)), dtype=float)

    def h_of(self, x) -> np.ndarray:
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float)

    def jacobian_g(self, x) -> np.ndarray:
        if self.jac_g is not None:
            return np.asarray(self.jac_g(np.asarray(x, dtype=float)), dtype=float)
        return fd_jacobian(self.g_of, x)

    def jacobian_h(self, x) -> np.ndarray:
        if self.jac_h is not None:
            return np.asarray(self.jac_h(np.asarray(x, dtype=float)), dtype=float)
        return fd_jacobian(self.h_of, x)

    def f(self, x, lam) -> np.ndarray:
        return self.g_of(x) - lam * self.h_of(x)

    def jac_x(self, x, lam) -> np.ndarray:
        return self.jacobian_g(x) - lam * self.jacobian_h(x)

    def f_lambda(self, x) -> np.ndarray:
        return -self.h_of(x)

    def without_jacobians(self) -> "ParametricSystem":
        return replace(self, jac_g=None, jac_h=None)

    def scaled(self, c) -> "ParametricSystem":
        """The system (c g, c h): every ratio is unchanged."""
        g, h, jac_g, jac_h = self.g, self.h, self.jac_g, self.jac_h
        return replace(
            self,
            g=lambda x: c * np.asarray(g(x)),
            h=lambda x: c * np.asarray(h(x)),
            jac_g=None if jac_g is None else (lambda x: c * np.asarray(jac_g(x))),
            jac_h=None if jac_h is None else (lambda x: c * np.asarray(jac_h(x))),
            name=f"{self.name}*{c:g}",
        )

    def sampling_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.sampling_box is not None:
            lower, upper = self.sampling_box
            return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        if self.domain.finite:
            return self.domain.lower, self.domain.upper
        raise InvalidDomain(
            f"{self.name}: Q is unbounded, a finite sampling box is required"
        )

    def weights_admissible(self, x) -> bool:
        """Standing assumption h(x) >= 0, h(x) != 0, up to EPS_WEIGHT."""
        h = self.h_of(x)
        return bool(np.all(h >= -EPS_WEIGHT) and np.any(h > EPS_WEIGHT))


@dataclass(frozen=True)
class RatioProfile:
    x: np.ndarray
    ratios: np.ma.MaskedArray
    lambda_of_x: float
    active: Tuple[int, ...]
    values: np.ndarray
    weights: np.ndarray

    @property
    def n(self):
        return self.x.size

    @property
    def full_active(self) -> bool:
        return len(self.active) == self.n

    @property
    def defined(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.ratios)

    @property
    def spread(self) -> float:
        """max - min over the defined ratios."""
        return float(self.ratios.max() - self.ratios.min())

    def residual(self) -> float:
        """|| g(x) - lambda(x) h(x) ||_inf"""
        return float(np.max(np.abs(self.values - self.lambda_of_x * self.weights)))

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "ratios": [None if m else float(r) for r, m in
                       zip(self.ratios.data, np.ma.getmaskarray(self.ratios))],
            "lambda_of_x": self.lambda_of_x,
            "active": list(self.active),
            "full_active": self.full_active,
        }


def ratio_profile(system: ParametricSystem, x, eps_active=EPS_ACTIVE) -> RatioProfile:
    x = np.array(x, dtype=float)
    system.domain.check(x)
    g = system.g_of(x)
    h = system.h_of(x)
    defined = np.abs(h) > EPS_WEIGHT
    if not defined.any():
        raise DegenerateWeight(f"all weights vanish at {x.tolist()}")

    r = np.zeros_like(g)
    r[defined] = g[defined] / h[defined]
    ratios = np.ma.masked_array(r, mask=~defined)
    lam = float(ratios.min())
    close = r - lam <= eps_active * (1 + abs(lam))
    active = tuple(int(i) for i in np.flatnonzero(defined & close))
    return RatioProfile(x, ratios, lam, active, g, h)


def lambda_of(system: ParametricSystem, x) -> float:
    """lambda(x), or -inf where it is not defined (outside Q, no weight)."""
    try:
        return ratio_profile(system, x).lambda_of_x
    except (DomainViolation, DegenerateWeight):
        return -np.inf


def bifurcation_functional(system: ParametricSystem, points) -> np.ndarray:
    """lambda(x) for a batch of points stored as columns; -inf where undefined."""
    points = np.asarray(points, dtype=float)
    inside = system.domain.mask(points)
    values = np.full(points.shape[1], -np.inf)
    if not inside.any():
        return values
    batch = points[:, inside]
    with np.errstate(all="ignore"):
        g = np.asarray(system.g(batch), dtype=float).reshape(system.n, -1)
        h = np.asarray(system.h(batch), dtype=float).reshape(system.n, -1)
        defined = np.abs(h) > EPS_WEIGHT
        r = np.where(defined, g / np.where(defined, h, 1.0), np.inf)
    lam = r.min(axis=0)
    lam[~defined.any(axis=0)] = -np.inf
    values[inside] = lam
    return values


@dataclass(frozen=True)
class Subdifferential:
    active: Tuple[int, ...]
    gradients: np.ndarray

    @property
    def hull_dimension(self) -> int:
        if len(self.active) < 2:
            return 0
        return int(np.linalg.matrix_rank(self.gradients[1:] - self.gradients[0]))


def ratio_gradients(system: ParametricSystem, x, indices, ratios=None) -> np.ndarray:
    """Rows grad r_i(x) = (grad g_i - r_i grad h_i) / h_i for i in indices."""
    x = np.asarray(x, dtype=float)
    indices = list(indices)
    g = system.g_of(x)
    h = system.h_of(x)
    if np.any(np.abs(h[indices]) <= EPS_WEIGHT):
        raise DegenerateWeight(f"an active weight vanishes at {x.tolist()}")
    r = g[indices] / h[indices] if ratios is None else np.asarray(ratios)[indices]
    jg = system.jacobian_g(x)[indices]
    jh = system.jacobian_h(x)[indices]
    return (jg - r[:, None] * jh) / h[indices][:, None]


def subdifferential(system: ParametricSystem, profile: RatioProfile) -> Subdifferential:
    if not profile.active:
        raise EmptyActiveSet(f"no active index at {profile.x.tolist()}")
    gradients = ratio_gradients(
        system, profile.x, profile.active, profile.ratios.filled(0.0)
    )
    return Subdifferential(profile.active, gradients)


def sample_points(system: ParametricSystem, count, rng, max_rounds=20) -> List[np.ndarray]:
    """Seeded uniform points of the sampling box that lie strictly inside Q."""
    lower, upper = system.sampling_bounds()
    points: List[np.ndarray] = []
    rounds = 0  # avoids looping forever on a box that misses Q
    while len(points) < count and rounds < max_rounds:
        batch = rng.uniform(lower, upper, size=(count, system.n))
        for x in batch:
            if system.domain.contains(x) and not system.domain.near_boundary(x):
                points.append(x)
        rounds += 1
    return points[:count]


class NewtonResult(NamedTuple):
    x: np.ndarray
    residual: float
    initial_residual: float
    converged: bool
    steps: int


def damped_newton(
    system: ParametricSystem, lam, x0, tol=PROBE_TOL, max_steps=PROBE_MAX_STEPS
) -> NewtonResult:
    """Newton on x -> f(x, lam) with Armijo backtracking on 1/2 ||f||^2.

    Trial points outside Q are treated like failed Armijo tests.
    """
    x = np.array(x0, dtype=float)
    fx = system.f(x, lam)
    phi = 0.5 * fx @ fx
    initial = float(np.max(np.abs(fx)))
    steps = 0
    for steps in range(1, max_steps + 1):
        if np.max(np.abs(fx)) <= tol:
            break
        jac = system.jac_x(x, lam)
        try:
            d = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(jac, -fx, rcond=None)[0]

        alpha = 1.0
        while alpha >= 1e-10:
            trial = x + alpha * d
            if system.domain.contains(trial):
                ft = system.f(trial, lam)
                pt = 0.5 * ft @ ft
                if pt <= (1 - 2e-4 * alpha) * phi:
                    x, fx, phi = trial, ft, pt
                    break
            alpha /= 2
        else:
            _log.debug("newton stalled at %s (|f| = %.3e)", x, np.max(np.abs(fx)))
            break

    residual = float(np.max(np.abs(fx)))
    return NewtonResult(x, residual, initial, residual <= tol, steps)
