"""
Fold certificates.

A maximizer x* of lambda(x) is a maximal saddle-node point when, at
(x*, lambda*): the system is solved, every index is active, x* is
stationary, the Jacobian satisfies (R), its kernel is one-dimensional with
strictly positive left and right vectors, and <h(x*), xi*> != 0.
Every clause is checked separately and reported.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from .constants import (
    HULL_MAX_ITERS,
    HULL_TOL,
    POSITIVITY_TOL,
    PROBE_MAX_STEPS,
    PROBE_TOL,
    RANK_TOL,
    TOL_STATIONARITY,
)
from .core import (
    ParametricSystem,
    damped_newton,
    ratio_profile,
    sample_points,
    subdifferential,
)
from .matrix import (
    Evidence,
    PerronCertificate,
    PerronMode,
    RCheckReport,
    check_matrix_R,
    perron_pair,
)

_log = logging.getLogger(__name__)


def _support_polish(G, weights):
    """Minimum-norm point of the affine hull of the support, if it stays
    inside the simplex."""
    support = np.flatnonzero(weights > 0)
    k = support.size
    if k < 2:
        return None
    Gs = G[support]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = Gs @ Gs.T
    kkt[:k, k] = 1
    kkt[k, :k] = 1
    rhs = np.zeros(k + 1)
    rhs[k] = 1
    try:
        solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    ws = solution[:k]
    if np.any(ws < 0):
        return None
    polished = np.zeros_like(weights)
    polished[support] = ws / ws.sum()
    return polished


def _frank_wolfe(G, w, tol, max_iters):
    """Frank-Wolfe with away steps and exact line search on 1/2 ||G^T w||^2
    over the unit simplex, from the weights w."""
    z = G.T @ w
    iterations = 0
    for iterations in range(1, max_iters + 1):
        norm = np.linalg.norm(z)
        if norm <= tol:
            break
        scores = G @ z
        toward = int(np.argmin(scores))
        support = np.flatnonzero(w > 0)
        away = int(support[np.argmax(scores[support])])
        zz = z @ z
        gap = zz - scores[toward]
        if gap <= tol * norm:
            break

        away_step = not (gap >= scores[away] - zz or w[away] >= 1)
        if not away_step:
            d = G[toward] - z
            step_max = 1.0
            direction = -w
            direction[toward] += 1
        else:
            d = z - G[away]
            step_max = w[away] / (1 - w[away])
            direction = w.copy()
            direction[away] -= 1

        dd = d @ d
        if dd == 0:
            break
        step = min(max(-(z @ d) / dd, 0.0), step_max)
        w = w + step * direction
        if away_step and step == step_max:
            w[away] = 0.0
        w = np.maximum(w, 0.0)
        w /= w.sum()
        z = G.T @ w
    return w, iterations


def _active_set_weights(G) -> Optional[np.ndarray]:
    """Simplex weights from nonnegative least squares on [G^T; M 1^T] w = [0; M]."""
    k, d = G.shape
    M = max(1.0, float(np.max(np.linalg.norm(G, axis=1))))
    A = np.vstack([G.T, np.full((1, k), M)])
    b = np.zeros(d + 1)
    b[-1] = M
    try:
        w = scipy.optimize.nnls(A, b)[0]
    except RuntimeError as error:
        _log.debug("nnls gave up on the hull problem: %s", error)
        return None
    if not np.isfinite(w).all() or w.sum() <= 0:
        return None
    return w / w.sum()


def _optimality_gap(G, w) -> float:
    """z.z - min_i g_i.z; zero exactly at the minimum-norm point."""
    z = G.T @ w
    return float(z @ z - np.min(G @ z))


def min_norm_in_hull(G, tol=HULL_TOL, max_iters=HULL_MAX_ITERS) -> Tuple[np.ndarray, np.ndarray, int]:
    """Minimum-norm point of the convex hull of the rows of G.

    An active-set solve (nonnegative least squares) picks the support, the
    affine minimum on that support is then solved exactly. Frank-Wolfe with
    away steps continues from there only if the optimality gap is still
    open. Returns (weights, point, Frank-Wolfe iterations).
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    k = G.shape[0]
    w = np.zeros(k)
    w[np.argmin(np.linalg.norm(G, axis=1))] = 1.0
    if k == 1:
        return w, G.T @ w, 0

    candidate = _active_set_weights(G)
    if candidate is not None:
        polished = _support_polish(G, candidate)
        if polished is not None and np.linalg.norm(G.T @ polished) <= np.linalg.norm(G.T @ candidate):
            candidate = polished
        w = candidate

    scale = 1.0 + float(np.max(np.linalg.norm(G, axis=1)))
    norm = float(np.linalg.norm(G.T @ w))
    iterations = 0
    if norm > tol * scale and _optimality_gap(G, w) > tol * scale * norm:
        w, iterations = _frank_wolfe(G, w, tol, max_iters)
        polished = _support_polish(G, w)
        if polished is not None and np.linalg.norm(G.T @ polished) <= np.linalg.norm(G.T @ w):
            w = polished
    return w, G.T @ w, iterations


@dataclass(frozen=True)
class StationarityResult:
    residual: float
    zeta: np.ndarray
    xi: np.ndarray
    active: Tuple[int, ...]
    point: np.ndarray
    iterations: int = 0

    def to_dict(self):
        return {
            "residual": self.residual,
            "zeta": self.zeta.tolist(),
            "xi": self.xi.tolist(),
            "active": list(self.active),
            "iterations": self.iterations,
        }


def stationarity_residual(system: ParametricSystem, x, profile=None) -> StationarityResult:
    """Distance from 0 to the hull of active ratio gradients, and the weights
    attaining it mapped to xi_i = zeta_i / h_i(x)."""
    profile = ratio_profile(system, x) if profile is None else profile
    sub = subdifferential(system, profile)
    zeta, point, iterations = min_norm_in_hull(sub.gradients)
    xi = np.zeros(profile.n)
    xi[list(sub.active)] = zeta / profile.weights[list(sub.active)]
    return StationarityResult(
        float(np.linalg.norm(point)), zeta, xi, sub.active, point, iterations
    )


class Verdict(Enum):
    CERTIFIED = "certified-fold"
    DEGENERATE = "stationary-but-degenerate"
    NOT_STATIONARY = "not-stationary"
    FAILED = "failed-solution"


class CheckItem(NamedTuple):
    name: str
    passed: bool
    value: float
    tolerance: float


MAXIMALITY_NOTE = (
    "maximal relative to evidence: no larger lambda was found by the "
    "multistart solve or the root probe; global maximality over Q is not "
    "decided numerically"
)


@dataclass(frozen=True)
class FoldCertificate:
    x: np.ndarray
    lam: float
    solution_residual: float
    tol_res: float
    active_full: bool
    stationarity: StationarityResult
    tol_stationarity: float
    r_check: RCheckReport
    kernel: PerronCertificate
    right_positive: bool
    left_positive: bool
    transversality: float
    tol_trans: float
    fredholm_residual: float
    xi_alignment: float
    verdict: Verdict
    checklist: List[CheckItem] = field(default_factory=list)
    note: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "lambda": self.lam,
            "verdict": self.verdict.value,
            "solution_residual": self.solution_residual,
            "tol_res": self.tol_res,
            "active_full": self.active_full,
            "stationarity": self.stationarity.to_dict(),
            "tol_stationarity": self.tol_stationarity,
            "r_check": self.r_check.to_dict(),
            "kernel": self.kernel.to_dict(),
            "right_positive": self.right_positive,
            "left_positive": self.left_positive,
            "transversality": self.transversality,
            "tol_trans": self.tol_trans,
            "fredholm_residual": self.fredholm_residual,
            "xi_alignment": self.xi_alignment,
            "checklist": [item._asdict() for item in self.checklist],
            "note": self.note,
        }

    def report(self) -> str:
        lines = [
            f"verdict: {self.verdict.value}",
            f"lambda = {self.lam:.12g}",
            f"x = {np.array2string(self.x, precision=10)}",
        ]
        for item in self.checklist:
            mark = "ok  " if item.passed else "FAIL"
            lines.append(
                f"  [{mark}] {item.name:<22} value={item.value:.3e}  tol={item.tolerance:.3e}"
            )
        lines.append(f"  Fredholm residual of J y = h: {self.fredholm_residual:.3e}")
        lines.append(f"  alignment of stationarity xi with left kernel: {self.xi_alignment:.6f}")
        if self.r_check.caveat:
            lines.append(f"  caveat: {self.r_check.caveat}")
        if self.note:
            lines.append(self.note)
        return "\n".join(lines)


def _kernel_scale(system, x, lam, J):
    scale = max(
        np.linalg.norm(system.jacobian_g(x), 2),
        abs(lam) * np.linalg.norm(system.jacobian_h(x), 2),
        np.linalg.norm(J, 2),
    )
    return scale or 1.0


def certify_saddle_node(
    system: ParametricSystem,
    x,
    lam,
    tol_stationarity=TOL_STATIONARITY,
    positivity_tol=POSITIVITY_TOL,
    evidence: str = "",
) -> FoldCertificate:
    x = np.asarray(x, dtype=float)
    lam = float(lam)
    system.domain.check(x)
    n = system.n

    profile = ratio_profile(system, x)
    h = profile.weights
    solution_residual = float(np.max(np.abs(profile.values - lam * h)))
    tol_res = 1e-8 * (1 + abs(lam)) * float(np.max(np.abs(h)))
    stationarity = stationarity_residual(system, x, profile)

    J = system.jac_x(x, lam)
    r_check = check_matrix_R(J)
    r_check = replace(
        r_check,
        evidence=Evidence.STRUCTURAL if system.structural_r else Evidence.SAMPLED,
        caveat=system.r_caveat,
    )
    scale = _kernel_scale(system, x, lam, J)
    kernel = perron_pair(J, PerronMode.KERNEL, scale=scale)
    right_positive = bool(kernel.right_vec.min() > positivity_tol)
    left_positive = bool(kernel.left_vec.min() > positivity_tol)

    transversality = float(h @ kernel.left_vec)
    h_norm = float(np.linalg.norm(h))
    tol_trans = 1e-6 * h_norm * float(np.linalg.norm(kernel.left_vec))

    s_max = kernel.singular_values[0] if kernel.singular_values[0] > 0 else 1.0
    y = np.linalg.lstsq(J, h, rcond=n * RANK_TOL * scale / s_max)[0]
    fredholm_residual = float(np.linalg.norm(J @ y - h)) / (h_norm or 1.0)
    xi_norm = np.linalg.norm(stationarity.xi)
    xi_alignment = (
        float(abs(stationarity.xi @ kernel.left_vec) / xi_norm) if xi_norm > 0 else 0.0
    )

    checklist = [
        CheckItem("solution residual", solution_residual <= tol_res, solution_residual, tol_res),
        CheckItem("full active set", profile.full_active, len(profile.active), n),
        CheckItem(
            "stationarity",
            stationarity.residual <= tol_stationarity,
            stationarity.residual,
            tol_stationarity,
        ),
        CheckItem("condition (R)", r_check.passed, r_check.scc_count, 1),
        CheckItem("kernel dimension", kernel.kernel_dim_estimate == 1, kernel.kernel_dim_estimate, 1),
        CheckItem("right vector positive", right_positive, float(kernel.right_vec.min()), positivity_tol),
        CheckItem("left vector positive", left_positive, float(kernel.left_vec.min()), positivity_tol),
        CheckItem("transversality", abs(transversality) > tol_trans, abs(transversality), tol_trans),
    ]

    if not checklist[0].passed:
        verdict = Verdict.FAILED
    elif not checklist[2].passed:
        verdict = Verdict.NOT_STATIONARY
    elif all(item.passed for item in checklist):
        verdict = Verdict.CERTIFIED
    else:
        verdict = Verdict.DEGENERATE

    note = ""
    if verdict is Verdict.CERTIFIED:
        note = MAXIMALITY_NOTE + (f" ({evidence})" if evidence else "")
    _log.info("certificate at lambda=%.12g: %s", lam, verdict.value)
    return FoldCertificate(
        x,
        lam,
        solution_residual,
        tol_res,
        profile.full_active,
        stationarity,
        tol_stationarity,
        r_check,
        kernel,
        right_positive,
        left_positive,
        transversality,
        tol_trans,
        fredholm_residual,
        xi_alignment,
        verdict,
        checklist,
        note,
    )


# ---- root probe ---- #


@dataclass(frozen=True)
class ProbeReport:
    lam: float
    attempts: int
    converged_in_Q: List[np.ndarray]
    max_residual_drop: float
    skipped: int = 0

    def distinct_roots(self, tol=1e-6) -> List[np.ndarray]:
        roots: List[np.ndarray] = []
        for x in self.converged_in_Q:
            if all(np.max(np.abs(x - r)) > tol * (1 + np.max(np.abs(r))) for r in roots):
                roots.append(x)
        return roots

    def to_dict(self):
        return {
            "lambda": self.lam,
            "attempts": self.attempts,
            "skipped": self.skipped,
            "converged_in_Q": [x.tolist() for x in self.converged_in_Q],
            "distinct_roots": [x.tolist() for x in self.distinct_roots()],
            "max_residual_drop": self.max_residual_drop,
        }


def probe_starts(system: ParametricSystem, count, seed=0) -> List[np.ndarray]:
    return sample_points(system, count, np.random.default_rng(seed))


def probe_no_solutions_above(
    system: ParametricSystem,
    lam,
    starts: Sequence[np.ndarray],
    tol=PROBE_TOL,
    max_steps=PROBE_MAX_STEPS,
    workers: Optional[int] = None,
) -> ProbeReport:
    """Damped Newton at fixed lambda from every start.

    An empty `converged_in_Q` is evidence, not proof, that lambda lies
    above every solution in Q.
    """
    lam = float(lam)
    inside = [np.asarray(s, dtype=float) for s in starts if system.domain.contains(s)]
    skipped = len(starts) - len(inside)
    if skipped:
        _log.warning("probe: %d starts outside Q were skipped", skipped)

    def attempt(x0):
        return damped_newton(system, lam, x0, tol, max_steps)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(attempt, inside))

    roots = [
        r.x
        for r in results
        if r.converged
        and system.domain.contains(r.x)
        and not system.domain.near_boundary(r.x)
    ]
    drop = max((r.initial_residual - r.residual for r in results), default=0.0)
    _log.info("probe at lambda=%.12g: %d/%d starts reached a root in Q", lam, len(roots), len(results))
    return ProbeReport(lam, len(results), roots, float(drop), skipped)
