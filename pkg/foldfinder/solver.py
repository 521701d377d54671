"""
Maximization of the bifurcation functional lambda(x) = min_i r_i(x).

Four interchangeable strategies share one driver: multistart, local solve,
optional fold polish, deterministic merge. Every reported lambda_star is an
attained value lambda(x_star), hence a lower bound on the supremum.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp

from .certify import min_norm_in_hull, stationarity_residual
from .constants import (
    GRID_MAX_DIM,
    MAX_ITERS,
    SMOOTHING_SCHEDULE,
    TOL_STATIONARITY,
    TOL_STEP,
    TRUST_RADIUS,
)
from .continuation import refine_fold
from .core import (
    ParametricSystem,
    RatioProfile,
    bifurcation_functional,
    lambda_of,
    ratio_gradients,
    ratio_profile,
    sample_points,
    subdifferential,
)
from .errors import (
    DegenerateWeight,
    DimensionTooLarge,
    DomainViolation,
    EmptyActiveSet,
    InfeasibleStart,
    IterationCap,
    NoConvergence,
    UsageError,
)

_log = logging.getLogger(__name__)


class Strategy(Enum):
    EPIGRAPH_SLP = "epigraph-slp"
    SMOOTHED_ASCENT = "smoothed-ascent"
    SUBGRADIENT = "subgradient"
    GRID_ORACLE = "grid-oracle"


@dataclass(frozen=True)
class SolveConfig:
    strategy: Strategy = Strategy.EPIGRAPH_SLP
    max_iters: int = MAX_ITERS
    tol_step: float = TOL_STEP
    tol_stationarity: float = TOL_STATIONARITY
    multistart: int = 8
    seed: int = 0
    smoothing_schedule: Tuple[float, ...] = SMOOTHING_SCHEDULE
    trust_radius_init: float = TRUST_RADIUS
    resolution: int = 200
    polish: bool = True
    strict: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "smoothing_schedule", tuple(self.smoothing_schedule))
        if min(self.tol_step, self.tol_stationarity, self.trust_radius_init) <= 0:
            raise UsageError("tolerances and the trust radius must be positive")
        if self.multistart < 1 or self.max_iters < 1:
            raise UsageError("multistart and max_iters must be at least 1")
        schedule = self.smoothing_schedule
        if not schedule or min(schedule) <= 0 or any(a <= b for a, b in zip(schedule, schedule[1:])):
            raise UsageError("the smoothing schedule must be positive and decreasing")
        if self.resolution < 2:
            raise UsageError("grid resolution must be at least 2 per axis")

    def to_dict(self):
        data = asdict(self)
        data["strategy"] = self.strategy.value
        data["smoothing_schedule"] = list(self.smoothing_schedule)
        return data


class TraceEntry(NamedTuple):
    lam: float
    step: float


class StartSummary(NamedTuple):
    index: int
    initial_lambda: float
    final_lambda: float
    reason: str
    iterations: int
    polished: bool


@dataclass
class LocalResult:
    x: np.ndarray
    lam: float
    initial_lambda: float
    reason: str
    iterations: int
    trace: List[TraceEntry] = field(default_factory=list)
    polished: bool = False

    @property
    def converged(self):
        return self.reason in ("step", "stationary", "grid")


@dataclass(frozen=True)
class SolveResult:
    x_star: np.ndarray
    lambda_star: float
    profile: RatioProfile
    stationarity_residual: float
    starts_converged: int
    best_start_index: int
    trace: List[TraceEntry]
    strategy: Strategy
    reason: str
    starts: List[StartSummary] = field(default_factory=list)
    unbounded_suspected: bool = False

    def to_dict(self):
        return {
            "strategy": self.strategy.value,
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star,
            "profile": self.profile.to_dict(),
            "stationarity_residual": self.stationarity_residual,
            "starts_converged": self.starts_converged,
            "best_start_index": self.best_start_index,
            "reason": self.reason,
            "unbounded_suspected": self.unbounded_suspected,
            "starts": [s._asdict() for s in self.starts],
            "trace": [list(t) for t in self.trace],
        }


# ---- smoothing ---- #


def smoothed_lambda(profile: RatioProfile, mu) -> Tuple[float, np.ndarray]:
    """lambda_mu = -mu log sum exp(-r_i / mu) over the defined ratios, and
    the softmin weights (zero on undefined ratios).

    lambda_mu <= lambda(x) <= lambda_mu + mu log(#defined).
    """
    defined = profile.defined
    r = profile.ratios.data[defined]
    lam_mu = float(-mu * logsumexp(-r / mu))
    weights = np.zeros(profile.n)
    weights[defined] = np.exp(-(r - lam_mu) / mu)
    return lam_mu, weights


# ---- local strategies ---- #


def _slp(system: ParametricSystem, x0, config: SolveConfig) -> LocalResult:
    """Sequential linear programming on max t s.t. r_i(x) >= t, inside an
    l-inf trust region."""
    x = np.array(x0, dtype=float)
    profile = ratio_profile(system, x)
    lam = initial = profile.lambda_of_x
    radius = config.trust_radius_init * max(1.0, np.max(np.abs(x)))
    trace = [TraceEntry(lam, 0.0)]
    n = system.n
    reason = "iteration-cap"

    it = 0
    for it in range(1, config.max_iters + 1):
        scale = config.tol_step * (1 + np.max(np.abs(x)))
        if radius < scale:
            reason = "step"
            break
        defined = np.flatnonzero(profile.defined)
        grads = ratio_gradients(system, x, defined, profile.ratios.filled(0.0))
        lo, hi = system.domain.step_bounds(x, radius)

        # variables (d, t): minimize -t s.t. t - grad r_i . d <= r_i - lambda
        A_ub = np.column_stack([-grads, np.ones(defined.size)])
        b_ub = profile.ratios.data[defined] - lam
        c = np.zeros(n + 1)
        c[-1] = -1
        bounds = list(zip(lo, hi)) + [(None, None)]
        lp = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if lp.status != 0:
            reason = "lp-failure"
            _log.debug("linear subproblem failed: %s", lp.message)
            break
        d, predicted = lp.x[:n], lp.x[n]
        if predicted <= 1e-15 * (1 + abs(lam)):
            reason = "stationary"
            break

        trial = x + d
        accepted = False
        if system.domain.contains(trial):
            try:
                trial_profile = ratio_profile(system, trial)
            except DegenerateWeight:
                trial_profile = None
            if trial_profile is not None and np.all(trial_profile.defined[defined]):
                actual = trial_profile.lambda_of_x - lam
                if actual > 0:
                    accepted = True
                    rho = actual / predicted
                    step = float(np.max(np.abs(d)))
                    x, profile, lam = trial, trial_profile, trial_profile.lambda_of_x
                    trace.append(TraceEntry(lam, step))
                    if rho > 0.75 and step >= 0.99 * radius:
                        radius *= 2
                    elif rho < 0.25:
                        radius *= 0.5
                    if step < scale:
                        reason = "step"
                        break
        if not accepted:
            radius *= 0.25

        if profile.full_active and it % 5 == 0:
            if stationarity_residual(system, x, profile).residual <= config.tol_stationarity:
                reason = "stationary"
                break

    return LocalResult(x, lam, initial, reason, it, trace)


def _smoothing_bounds(system):
    margin = system.domain.membership_margin

    def inner(bound, sign):
        return bound + sign * margin * (1 + abs(bound)) if np.isfinite(bound) else None

    return [(inner(lo, 1), inner(hi, -1)) for lo, hi in zip(system.domain.lower, system.domain.upper)]


def _smoothed(system: ParametricSystem, x0, config: SolveConfig) -> LocalResult:
    """Ascent of lambda_mu for each mu of the schedule (L-BFGS-B with its
    line search), keeping the best true lambda seen."""
    x = np.array(x0, dtype=float)
    best_x, best = x, lambda_of(system, x)
    initial = best
    trace = [TraceEntry(best, 0.0)]
    bounds = _smoothing_bounds(system)
    reason = "iteration-cap"
    iterations = 0

    for mu in config.smoothing_schedule:

        def objective(z, mu=mu):
            try:
                profile = ratio_profile(system, z)
            except (DomainViolation, DegenerateWeight):
                return np.inf, np.zeros_like(z)
            lam_mu, weights = smoothed_lambda(profile, mu)
            defined = np.flatnonzero(profile.defined)
            grads = ratio_gradients(system, z, defined, profile.ratios.filled(0.0))
            return -lam_mu, -(weights[defined] @ grads)

        result = minimize(
            objective,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.max_iters, "gtol": config.tol_stationarity},
        )
        iterations += int(result.nit)
        step = float(np.max(np.abs(result.x - x)))
        x = result.x
        lam = lambda_of(system, x)
        trace.append(TraceEntry(lam, step))
        _log.debug("smoothed ascent mu=%g: lambda=%.12g after %d iterations", mu, lam, result.nit)
        if lam > best:
            best_x, best = x, lam
        reason = "stationary" if result.success else "iteration-cap"
        if step < config.tol_step * (1 + np.max(np.abs(x))):
            reason = "step"

    return LocalResult(best_x, best, initial, reason, iterations, trace)


def _subgradient(system: ParametricSystem, x0, config: SolveConfig) -> LocalResult:
    """Ascent along the minimum-norm element of the hull of active
    gradients, step size radius / (k + 1)."""
    x = np.array(x0, dtype=float)
    best_x, best = x, lambda_of(system, x)
    initial = best
    trace = [TraceEntry(best, 0.0)]
    radius = config.trust_radius_init * max(1.0, np.max(np.abs(x)))
    reason = "iteration-cap"

    k = 0
    for k in range(1, config.max_iters + 1):
        profile = ratio_profile(system, x, eps_active=1e-4)
        _, z, _ = min_norm_in_hull(subdifferential(system, profile).gradients)
        norm = np.linalg.norm(z)
        if norm <= config.tol_stationarity:
            reason = "stationary"
            break
        alpha = radius / k
        if alpha < config.tol_step * (1 + np.max(np.abs(x))):
            reason = "step"
            break
        lo, hi = system.domain.step_bounds(x, alpha)
        trial = x + np.clip(alpha * z / norm, lo, hi)
        lam = lambda_of(system, trial)
        if not np.isfinite(lam):
            radius /= 2
            continue
        x = trial
        trace.append(TraceEntry(lam, alpha))
        if lam > best:
            best_x, best = x, lam

    return LocalResult(best_x, best, initial, reason, k, trace)


LOCAL_SOLVERS = {
    Strategy.EPIGRAPH_SLP: _slp,
    Strategy.SMOOTHED_ASCENT: _smoothed,
    Strategy.SUBGRADIENT: _subgradient,
}


# ---- driver ---- #


def _polish(system: ParametricSystem, local: LocalResult) -> LocalResult:
    """Newton on the extended fold system when the ratios are nearly equal."""
    try:
        profile = ratio_profile(system, local.x)
    except (DomainViolation, DegenerateWeight):
        return local
    lam = profile.lambda_of_x
    if not np.all(profile.defined) or profile.spread > 1e-4 * (1 + abs(lam)):
        return local
    try:
        x, _, _ = refine_fold(system, local.x, lam)
    except (NoConvergence, np.linalg.LinAlgError):
        return local
    refined = lambda_of(system, x)
    if refined >= lam - 1e-10 * (1 + abs(lam)):
        _log.debug("fold polish: lambda %.15g -> %.15g", lam, refined)
        local.x, local.lam, local.polished = x, refined, True
    return local


def starting_points(system: ParametricSystem, config: SolveConfig) -> List[np.ndarray]:
    """Problem seed point, positivity start, then seeded uniform samples."""
    starts = []
    for special in (system.seed_point, system.positivity_start):
        if special is not None and system.domain.contains(special):
            starts.append(np.asarray(special, dtype=float))
    rng = np.random.default_rng(config.seed)
    remaining = config.multistart - len(starts)
    if remaining > 0:
        starts.extend(sample_points(system, remaining, rng))
    return starts[: config.multistart]


def _rank_key(local: LocalResult, stationarity):
    return (-float(f"{local.lam:.12g}"), stationarity, tuple(local.x))


def _unbounded_suspected(system, local: LocalResult) -> bool:
    """lambda still increasing at the edge of the sampling box, on an axis
    where Q itself is unbounded."""
    if len(local.trace) < 2 or local.trace[-1].lam <= local.trace[-2].lam:
        return False
    lower, upper = system.sampling_bounds()
    width = upper - lower
    edge = (local.x <= lower + 0.01 * width) | (local.x >= upper - 0.01 * width)
    open_axis = ~np.isfinite(system.domain.lower) | ~np.isfinite(system.domain.upper)
    return bool(np.any(edge & open_axis))


def _stationarity_or_nan(system, x):
    try:
        return stationarity_residual(system, x).residual
    except (EmptyActiveSet, DegenerateWeight, DomainViolation):
        return float("nan")


def solve_maxmin(system: ParametricSystem, config: SolveConfig = SolveConfig()) -> SolveResult:
    if config.strategy is Strategy.GRID_ORACLE:
        return grid_oracle(system, resolution=config.resolution)

    starts = [x for x in starting_points(system, config) if np.isfinite(lambda_of(system, x))]
    if not starts:
        raise InfeasibleStart(f"{system.name}: no start point has a defined ratio")

    local_solver = LOCAL_SOLVERS[config.strategy]

    def run(x0):
        local = local_solver(system, x0, config)
        if config.polish:
            local = _polish(system, local)
        return local

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run, starts))

    stationarities = [_stationarity_or_nan(system, r.x) for r in results]
    ranked = sorted(
        range(len(results)),
        key=lambda i: _rank_key(results[i], np.nan_to_num(stationarities[i], nan=np.inf)),
    )
    best_index = ranked[0]
    best = results[best_index]
    converged = sum(r.converged for r in results)
    if config.strict and converged == 0:
        raise IterationCap(f"{system.name}: no start converged in {config.max_iters} iterations")

    summaries = [
        StartSummary(i, r.initial_lambda, r.lam, r.reason, r.iterations, r.polished)
        for i, r in enumerate(results)
    ]
    unbounded = _unbounded_suspected(system, best)
    if unbounded:
        _log.warning("%s: lambda still increasing at the sampling box boundary", system.name)

    profile = ratio_profile(system, best.x)
    _log.info(
        "%s: lambda* = %.12g (%s, %d/%d starts converged)",
        system.name,
        profile.lambda_of_x,
        config.strategy.value,
        converged,
        len(results),
    )
    return SolveResult(
        best.x,
        profile.lambda_of_x,
        profile,
        stationarities[best_index],
        converged,
        best_index,
        best.trace,
        config.strategy,
        best.reason,
        summaries,
        unbounded,
    )


def grid_oracle(
    system: ParametricSystem,
    box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    resolution: Union[int, Sequence[int]] = 200,
    chunk: int = 100_000,
) -> SolveResult:
    """Exhaustive argmax of lambda(x) over a uniform grid of the box.

    Grid points are enumerated in lexicographic order, so ties resolve to
    the lexicographically smallest x.
    """
    n = system.n
    if n > GRID_MAX_DIM:
        raise DimensionTooLarge(f"grid oracle supports n <= {GRID_MAX_DIM}, got {n}")
    if box is None:
        lower, upper = system.sampling_bounds()
    else:
        lower, upper = (np.asarray(b, dtype=float) for b in box)
    counts = np.broadcast_to(np.asarray(resolution, dtype=int), (n,))
    if np.any(counts < 2):
        raise UsageError("grid resolution must be at least 2 per axis")

    axes = [np.linspace(lo, hi, int(c)) for lo, hi, c in zip(lower, upper, counts)]
    shape = tuple(int(c) for c in counts)

    def grid_points(flat):
        # C order of the flat index is the lexicographic order of the grid
        return np.stack([axis[i] for axis, i in zip(axes, np.unravel_index(flat, shape))])

    best, best_value = 0, -np.inf
    for start in range(0, int(np.prod(shape)), chunk):
        flat = np.arange(start, min(start + chunk, int(np.prod(shape))))
        values = bifurcation_functional(system, grid_points(flat))
        k = int(np.argmax(values))
        if values[k] > best_value:
            best, best_value = int(flat[k]), float(values[k])
    if not np.isfinite(best_value):
        raise InfeasibleStart(f"{system.name}: lambda is undefined on the whole grid")

    x = grid_points(np.array([best]))[:, 0].copy()
    profile = ratio_profile(system, x)
    _log.info("grid oracle on %s points: lambda = %.12g", "x".join(map(str, counts)), profile.lambda_of_x)
    return SolveResult(
        x,
        profile.lambda_of_x,
        profile,
        _stationarity_or_nan(system, x),
        1,
        0,
        [TraceEntry(profile.lambda_of_x, float(np.max((upper - lower) / (counts - 1))))],
        Strategy.GRID_ORACLE,
        "grid",
    )
