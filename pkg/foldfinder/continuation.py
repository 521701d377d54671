"""
Pseudo-arclength continuation of solution branches of f(x, lambda) = 0.

Branch points live in R^(n+1) as y = (x, lambda). The tracer is a
generator of accepted points; `trace_branch` collects them into a Branch
and marks the places where the lambda-component of the tangent changes
sign. Those are refined into fold points by bisection.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Generator, List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from .constants import (
    CONTINUATION_STEP,
    CORRECTOR_MAX_ITERS,
    CORRECTOR_TOL,
    FOLD_TOL,
    MAX_HALVINGS,
    MAX_POINTS,
)
from .core import ParametricSystem, damped_newton, fd_jacobian
from .errors import CorrectorDivergence, NoConvergence, StartInfeasible, UsageError

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationConfig:
    step: float = CONTINUATION_STEP
    corrector_tol: float = CORRECTOR_TOL
    max_points: int = MAX_POINTS
    direction: int = 1
    max_halvings: int = MAX_HALVINGS
    corrector_max_iters: int = CORRECTOR_MAX_ITERS

    def __post_init__(self):
        if self.step <= 0 or self.corrector_tol <= 0:
            raise UsageError("step and corrector tolerance must be positive")
        if self.direction not in (-1, 1):
            raise UsageError("direction must be +1 or -1")


class BranchPoint(NamedTuple):
    x: np.ndarray
    lam: float
    s: float
    tangent: np.ndarray


class Fold(NamedTuple):
    x: np.ndarray
    lam: float
    kind: str  # "max" or "min"
    index: int
    tangent_lambda: float


def _extended_jacobian(system, y):
    x, lam = y[:-1], y[-1]
    return np.column_stack([system.jac_x(x, lam), system.f_lambda(x)])


def _residual(system, y):
    return system.f(y[:-1], y[-1])


def tangent(system: ParametricSystem, y, reference=None) -> np.ndarray:
    """Unit kernel vector of [J_x f, f_lambda], oriented along `reference`."""
    DF = _extended_jacobian(system, y)
    kernel = scipy.linalg.null_space(DF)
    if kernel.shape[1] != 1:
        # rank-deficient: take the weakest direction
        kernel = scipy.linalg.svd(DF)[2][-1:].T
    t = kernel[:, 0]
    t = t / np.linalg.norm(t)
    if reference is not None and t @ reference < 0:
        t = -t
    return t


def _correct(system, y_pred, normal, tol, max_iters):
    """Newton on f(y) = 0, <normal, y - y_pred> = 0.

    Returns the corrected point and the iteration count, or None when the
    corrector diverges or leaves Q.
    """
    y = y_pred.copy()
    settled = False
    for it in range(1, max_iters + 1):
        F = _residual(system, y)
        if np.max(np.abs(F)) <= tol:
            if settled:
                return y, it
            settled = True
        M = np.vstack([_extended_jacobian(system, y), normal])
        rhs = -np.append(F, normal @ (y - y_pred))
        try:
            delta = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(M, rhs, rcond=None)[0]
        y = y + delta
        if not system.domain.contains(y[:-1]) or not np.all(np.isfinite(y)):
            return None
    F = _residual(system, y)
    if np.max(np.abs(F)) <= tol:
        return y, max_iters
    return None


def polish_start(system: ParametricSystem, x0, lam0, tol=CORRECTOR_TOL, max_iters=20):
    """Gauss-Newton on f = 0 in (x, lambda); works at folds as well."""
    x0 = np.asarray(x0, dtype=float)
    if not system.domain.contains(x0):
        raise StartInfeasible(f"start {x0.tolist()} lies outside Q")
    y = np.append(x0, float(lam0))
    F = _residual(system, y)
    if np.max(np.abs(F)) > 1e3 * tol * (1 + np.max(np.abs(system.h_of(x0)))):
        raise StartInfeasible(
            f"start residual {np.max(np.abs(F)):.3e} is too large to polish"
        )
    for _ in range(max_iters):
        if np.max(np.abs(F)) <= tol * 1e-3:
            break
        delta = np.linalg.lstsq(_extended_jacobian(system, y), -F, rcond=None)[0]
        if not system.domain.contains((y + delta)[:-1]):
            break
        y = y + delta
        F = _residual(system, y)
    return y


def initial_point(system: ParametricSystem, seed: Optional[Tuple[np.ndarray, float]] = None):
    """A branch start: Newton at fixed small lambda from the problem seed."""
    seed = seed or system.branch_seed
    if seed is None:
        raise StartInfeasible(f"{system.name} has no branch seed")
    x, lam = np.asarray(seed[0], dtype=float), float(seed[1])
    result = damped_newton(system, lam, x, tol=CORRECTOR_TOL * 1e-2)
    if not result.converged:
        raise StartInfeasible(
            f"Newton from the seed of {system.name} stopped at residual {result.residual:.3e}"
        )
    return result.x, lam


def branch_points(
    system: ParametricSystem, start, config: ContinuationConfig = ContinuationConfig()
) -> Generator[BranchPoint, None, str]:
    """Accepted branch points, one at a time. The return value is the stop reason."""
    y = polish_start(system, start[0], start[1], config.corrector_tol)
    n1 = y.size
    reference = np.zeros(n1)
    reference[-1] = config.direction
    t = tangent(system, y, reference)
    if abs(t[-1]) < FOLD_TOL:
        # Starting on a fold (or a vertical branch): orient by x.
        t = tangent(system, y)
        if config.direction < 0:
            t = -t
    s = 0.0
    yield BranchPoint(y[:-1], float(y[-1]), s, t)

    previous = None
    ds = config.step
    for count in range(1, config.max_points):
        if previous is None:
            direction = t
        else:
            direction = y - previous
            direction = direction / np.linalg.norm(direction)

        left_q = False
        for _ in range(config.max_halvings + 1):
            y_pred = y + ds * direction
            corrected = None
            left_q = left_q or not system.domain.contains(y_pred[:-1])
            if system.domain.contains(y_pred[:-1]):
                corrected = _correct(
                    system, y_pred, direction, config.corrector_tol, config.corrector_max_iters
                )
            if corrected is not None:
                break
            ds /= 2
        else:
            if left_q:
                _log.debug("branch leaves Q after %d points", count)
                return "domain-exit"
            if previous is None:
                raise CorrectorDivergence(
                    f"corrector failed after {config.max_halvings} halvings at the start"
                )
            _log.debug("step underflow after %d points", count)
            return "step-underflow"

        y_new, iterations = corrected
        t = tangent(system, y_new, t)
        s += float(np.linalg.norm(y_new - y))
        previous, y = y, y_new
        yield BranchPoint(y[:-1], float(y[-1]), s, t)

        if left_q and ds < config.step / 16:
            _log.debug("branch reaches the boundary of Q after %d points", count)
            return "domain-exit"
        if iterations <= 4:
            ds = min(2 * ds, config.step)
    return "max-points"


@dataclass
class Branch:
    xs: np.ndarray
    lambdas: np.ndarray
    s: np.ndarray
    tangents: np.ndarray
    fold_indices: List[int]
    stop_reason: str
    system: Optional[ParametricSystem] = field(default=None, repr=False)
    config: ContinuationConfig = ContinuationConfig()

    def __len__(self):
        return self.lambdas.size

    @property
    def points(self) -> List[Tuple[np.ndarray, float, float]]:
        return [(x, float(lam), float(s)) for x, lam, s in zip(self.xs, self.lambdas, self.s)]

    def summary(self):
        return {
            "points": len(self),
            "stop_reason": self.stop_reason,
            "lambda_range": [float(self.lambdas.min()), float(self.lambdas.max())],
            "arclength": float(self.s[-1]),
            "fold_indices": list(self.fold_indices),
        }

    def to_csv(self, path):
        n = self.xs.shape[1]
        with Path(path).open("w", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["s", "lambda"] + [f"x_{i + 1}" for i in range(n)] + ["tangent_lambda"])
            for x, lam, s, t in zip(self.xs, self.lambdas, self.s, self.tangents):
                writer.writerow([repr(float(s)), repr(float(lam))] + [repr(float(v)) for v in x] + [repr(float(t[-1]))])


def detect_folds(tangent_lambdas, tol=FOLD_TOL) -> List[int]:
    """Indices k such that the tangent lambda-component changes sign between
    k and the next point where it is clearly nonzero."""
    nonzero = [k for k, t in enumerate(tangent_lambdas) if abs(t) > tol]
    return [
        k
        for k, nxt in zip(nonzero, nonzero[1:])
        if np.sign(tangent_lambdas[k]) != np.sign(tangent_lambdas[nxt])
    ]


def trace_branch(
    system: ParametricSystem, start, config: ContinuationConfig = ContinuationConfig()
) -> Branch:
    points = []
    walker = branch_points(system, start, config)
    while True:
        try:
            points.append(next(walker))
        except StopIteration as stop:
            reason = stop.value
            break

    tangents = np.array([p.tangent for p in points])
    branch = Branch(
        np.array([p.x for p in points]),
        np.array([p.lam for p in points]),
        np.array([p.s for p in points]),
        tangents,
        detect_folds(tangents[:, -1]),
        reason,
        system,
        config,
    )
    _log.info(
        "traced %d points (%s), %d fold candidates", len(branch), reason, len(branch.fold_indices)
    )
    return branch


def _bisect_fold(system, y0, t0, sigma_hi, config, max_bisections=100):
    """Corrected points on the hyperplanes <t0, y - y0> = sigma; bisect on
    the sign of the tangent lambda-component."""

    def point(sigma):
        corrected = _correct(
            system, y0 + sigma * t0, t0, config.corrector_tol, config.corrector_max_iters + 8
        )
        if corrected is None:
            raise NoConvergence(f"corrector failed during fold bisection at sigma={sigma:g}")
        y = corrected[0]
        return y, tangent(system, y, t0)

    lo, hi = 0.0, sigma_hi
    sign_lo = np.sign(t0[-1])
    y, t = y0, t0
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        y, t = point(mid)
        if abs(t[-1]) <= FOLD_TOL or hi - lo <= 1e-15 * (1 + abs(mid)):
            break
        if np.sign(t[-1]) == sign_lo:
            lo = mid
        else:
            hi = mid
    return y, t


def fold_from_branch(branch: Branch) -> List[Fold]:
    """Refine every fold candidate of the branch to |d lambda / ds| <= FOLD_TOL."""
    if len(branch) < 3 or branch.system is None:
        return []
    system, config = branch.system, branch.config
    folds = []
    for k in branch.fold_indices:
        nxt = k + 1
        while nxt < len(branch) - 1 and abs(branch.tangents[nxt][-1]) <= FOLD_TOL:
            nxt += 1
        y0 = np.append(branch.xs[k], branch.lambdas[k])
        y1 = np.append(branch.xs[nxt], branch.lambdas[nxt])
        t0 = branch.tangents[k]
        try:
            y, t = _bisect_fold(system, y0, t0, float(t0 @ (y1 - y0)), config)
        except NoConvergence as error:
            _log.warning("fold near point %d not refined: %s", k, error)
            continue

        lam = float(y[-1])
        lo, hi = max(0, k - 2), min(len(branch), nxt + 3)
        window = branch.lambdas[lo:hi]
        kind = "max" if np.all(window <= lam + config.corrector_tol) else "min"
        folds.append(Fold(y[:-1], lam, kind, k, float(t[-1])))
        _log.info("fold (%s) at lambda=%.12g", kind, lam)
    return folds


def refine_fold(system: ParametricSystem, x, lam, tol=1e-13, max_iters=30):
    """Newton on the extended fold system

        f(x, lam) = 0,  J_x f(x, lam) phi = 0,  <l, phi> = 1

    with l the initial kernel guess. Second derivatives come from central
    differences of x -> J_x f(x, lam) phi. Returns (x, lam, phi).
    """
    x = np.array(x, dtype=float)
    lam = float(lam)
    n = x.size
    J = system.jac_x(x, lam)
    phi = scipy.linalg.svd(J)[2][-1]
    if phi.sum() < 0:
        phi = -phi
    ell = phi.copy()

    for _ in range(max_iters):
        J = system.jac_x(x, lam)
        F = np.concatenate([system.f(x, lam), J @ phi, [ell @ phi - 1]])
        # rounding in g - lam h and J phi grows with the entries of g, h and J
        scale = (
            1
            + np.max(np.abs(system.g_of(x)))
            + abs(lam) * np.max(np.abs(system.h_of(x)))
            + np.linalg.norm(J, np.inf) * max(1.0, np.max(np.abs(phi)))
        )
        if np.max(np.abs(F)) <= tol * scale:
            return x, lam, phi

        second = fd_jacobian(lambda z: system.jac_x(z, lam) @ phi, x)
        J_h = system.jacobian_h(x)
        M = np.zeros((2 * n + 1, 2 * n + 1))
        M[:n, :n] = J
        M[:n, 2 * n] = system.f_lambda(x)
        M[n:2 * n, :n] = second
        M[n:2 * n, n:2 * n] = J
        M[n:2 * n, 2 * n] = -J_h @ phi
        M[2 * n, n:2 * n] = ell
        delta = np.linalg.lstsq(M, -F, rcond=None)[0]

        x_new = x + delta[:n]
        if not system.domain.contains(x_new):
            raise NoConvergence("fold refinement left Q")
        x, phi, lam = x_new, phi + delta[n:2 * n], lam + float(delta[2 * n])

    raise NoConvergence(f"fold refinement did not converge in {max_iters} steps")


def trace_through(
    system: ParametricSystem,
    start,
    config: ContinuationConfig = ContinuationConfig(),
    workers: Optional[int] = None,
) -> Branch:
    """Trace both directions from `start` in parallel and join them into
    one branch passing through it, oriented along direction +1."""
    configs = [replace(config, direction=d) for d in (-1, 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        backward, forward = pool.map(lambda c: trace_branch(system, start, c), configs)

    back = slice(len(backward) - 1, 0, -1)
    branch = Branch(
        np.concatenate([backward.xs[back], forward.xs]),
        np.concatenate([backward.lambdas[back], forward.lambdas]),
        np.concatenate([-backward.s[back], forward.s]),
        np.concatenate([-backward.tangents[back], forward.tangents]),
        [],
        f"{backward.stop_reason}/{forward.stop_reason}",
        system,
        config,
    )
    branch.fold_indices = detect_folds(branch.tangents[:, -1])
    return branch
