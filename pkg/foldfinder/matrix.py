"""
Condition (R) and Perron structure of Jacobian matrices.

A matrix satisfies (R) when its off-diagonal entries share one weak sign
and its off-diagonal sparsity digraph is strongly connected. Such a matrix
has a simple real eigenvalue with a strictly positive eigenvector, which is
what the fold certificate relies on.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .constants import RANK_TOL, ZERO_TOL
from .core import ParametricSystem
from .errors import NoConvergence, NotSignConstant

_log = logging.getLogger(__name__)


class Sign(Enum):
    NONNEGATIVE = "nonnegative"
    NONPOSITIVE = "nonpositive"
    ZERO = "both-possible-zero"
    MIXED = "mixed"


class Evidence(Enum):
    STRUCTURAL = "structural"
    SAMPLED = "sampled"


class SignCheck(NamedTuple):
    sign_constant: bool
    sign: Optional[Sign]
    violating_entries: List[Tuple[int, int, float]]


class IrreducibilityCheck(NamedTuple):
    irreducible: bool
    scc_count: int


def _off_diagonal(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A, ~np.eye(A.shape[0], dtype=bool)


def check_off_diagonal_sign(A, zero_tol=ZERO_TOL) -> SignCheck:
    """Entries within zero_tol of 0 are compatible with either sign."""
    A, off = _off_diagonal(A)
    positive = off & (A > zero_tol)
    negative = off & (A < -zero_tol)
    if positive.any() and negative.any():
        rows, cols = np.nonzero(positive | negative)
        entries = [(int(i), int(j), float(A[i, j])) for i, j in zip(rows, cols)]
        return SignCheck(False, None, entries)
    if positive.any():
        return SignCheck(True, Sign.NONNEGATIVE, [])
    if negative.any():
        return SignCheck(True, Sign.NONPOSITIVE, [])
    return SignCheck(True, Sign.ZERO, [])


def check_irreducible(A, zero_tol=ZERO_TOL) -> IrreducibilityCheck:
    """Strong connectivity of the digraph i -> j, i != j, |a_ij| > zero_tol.

    By convention a 1x1 matrix is irreducible.
    """
    A, off = _off_diagonal(A)
    n = A.shape[0]
    if n == 1:
        return IrreducibilityCheck(True, 1)
    adjacency = (off & (np.abs(A) > zero_tol)) | np.eye(n, dtype=bool)
    count, _ = connected_components(
        csr_matrix(adjacency.astype(float)), directed=True, connection="strong"
    )
    return IrreducibilityCheck(bool(count == 1), int(count))


@dataclass(frozen=True)
class RCheckReport:
    sign_constant: bool
    sign: Optional[Sign]
    irreducible: bool
    scc_count: int
    violating_entries: List[Tuple[int, int, float]] = field(default_factory=list)
    evidence: Evidence = Evidence.SAMPLED
    witness: Optional[Tuple[List[float], float]] = None
    samples: int = 1
    caveat: str = ""

    @property
    def passed(self) -> bool:
        return self.sign_constant and self.irreducible

    def to_dict(self):
        return {
            "passed": self.passed,
            "sign_constant": self.sign_constant,
            "sign": None if self.sign is None else self.sign.value,
            "irreducible": self.irreducible,
            "scc_count": self.scc_count,
            "violating_entries": [list(e) for e in self.violating_entries],
            "evidence": self.evidence.value,
            "witness": None if self.witness is None else list(self.witness),
            "samples": self.samples,
            "caveat": self.caveat,
        }


def check_matrix_R(A, zero_tol=ZERO_TOL) -> RCheckReport:
    sign = check_off_diagonal_sign(A, zero_tol)
    irreducibility = check_irreducible(A, zero_tol)
    return RCheckReport(
        sign.sign_constant,
        sign.sign,
        irreducibility.irreducible,
        irreducibility.scc_count,
        sign.violating_entries,
    )


def check_condition_R(
    system: ParametricSystem, points: Sequence[Tuple[np.ndarray, float]], zero_tol=ZERO_TOL
) -> RCheckReport:
    """Evaluate (R) on J_x f(x, lambda) at every sample.

    Sampling cannot prove (R) on all of Q: unless the problem builder vouches
    for it structurally the report is labelled as sampled evidence.
    """
    evidence = Evidence.STRUCTURAL if system.structural_r else Evidence.SAMPLED
    signs = set()
    worst = None
    for x, lam in points:
        system.domain.check(x)
        report = check_matrix_R(system.jac_x(x, lam), zero_tol)
        if report.sign is not None and report.sign is not Sign.ZERO:
            signs.add(report.sign)
        if not report.passed and worst is None:
            worst = (report, (np.asarray(x, dtype=float).tolist(), float(lam)))

    if len(signs) > 1:
        sign = Sign.MIXED
    elif signs:
        sign = signs.pop()
    else:
        sign = Sign.ZERO
    caveat = system.r_caveat
    if evidence is Evidence.SAMPLED:
        caveat = (caveat + " " if caveat else "") + "(R) checked on samples only."

    if worst is None:
        return RCheckReport(
            True, sign, True, 1, [], evidence, None, len(points), caveat
        )
    report, witness = worst
    _log.info("condition (R) fails at x=%s, lambda=%g", witness[0], witness[1])
    return RCheckReport(
        report.sign_constant,
        report.sign if report.sign_constant else None,
        report.irreducible,
        report.scc_count,
        report.violating_entries,
        evidence,
        witness,
        len(points),
        caveat,
    )


class PerronMode(Enum):
    DOMINANT = "dominant-structure"
    KERNEL = "kernel"


@dataclass(frozen=True)
class PerronCertificate:
    mode: PerronMode
    eigenvalue: float
    right_vec: np.ndarray
    left_vec: np.ndarray
    kernel_dim_estimate: int
    min_component: float
    singular_values: Optional[np.ndarray] = None
    quotient_bounds: List[Tuple[float, float]] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self):
        return {
            "mode": self.mode.value,
            "eigenvalue": self.eigenvalue,
            "right_vec": self.right_vec.tolist(),
            "left_vec": self.left_vec.tolist(),
            "kernel_dim_estimate": self.kernel_dim_estimate,
            "min_component": self.min_component,
            "singular_values": None
            if self.singular_values is None
            else self.singular_values.tolist(),
        }


def normalize_sign(v) -> np.ndarray:
    """Unit Euclidean length, first nonzero entry positive."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    nonzero = np.flatnonzero(np.abs(v) > ZERO_TOL)
    if nonzero.size and v[nonzero[0]] < 0:
        v = -v
    return v


def _power_iteration(B, tol, max_iter):
    """Power iteration on a nonnegative matrix, with Collatz-Wielandt bounds.

    Quotients are taken over the support of the iterate; for an irreducible
    B with positive diagonal the support is everything.
    """
    n = B.shape[0]
    v = np.full(n, 1 / np.sqrt(n))
    bounds = []
    for it in range(1, max_iter + 1):
        w = B @ v
        support = v > 0
        quotients = w[support] / v[support]
        lo, hi = float(quotients.min()), float(quotients.max())
        bounds.append((lo, hi))
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0, v, bounds, it
        v = w / norm
        if hi - lo <= tol * max(1.0, abs(hi)):
            return 0.5 * (lo + hi), v, bounds, it
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps")


def perron_pair(
    A,
    mode=PerronMode.DOMINANT,
    tol=1e-12,
    max_iter=100_000,
    rank_tol=None,
    scale=None,
) -> PerronCertificate:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    mode = PerronMode(mode)

    U, s, Vh = scipy.linalg.svd(A)
    rank_tol = n * RANK_TOL if rank_tol is None else rank_tol
    scale = s[0] if scale is None else scale
    kernel_dim = int(np.sum(s <= rank_tol * scale))

    if mode is PerronMode.KERNEL:
        right = normalize_sign(Vh[-1])
        left = normalize_sign(U[:, -1])
        eigenvalues = np.linalg.eigvals(A)
        eigenvalue = float(eigenvalues[np.argmin(np.abs(eigenvalues))].real)
        return PerronCertificate(
            mode,
            eigenvalue,
            right,
            left,
            kernel_dim,
            float(min(right.min(), left.min())),
            singular_values=s,
        )

    check = check_off_diagonal_sign(A)
    if not check.sign_constant:
        raise NotSignConstant(
            f"off-diagonal entries of both signs: {check.violating_entries[:4]}"
        )
    flip = -1.0 if check.sign is Sign.NONPOSITIVE else 1.0
    sigma = float(np.max(np.sum(np.abs(A), axis=1))) or 1.0
    B = flip * A + sigma * np.eye(n)

    rho, right, bounds, iterations = _power_iteration(B, tol, max_iter)
    _, left, _, _ = _power_iteration(B.T, tol, max_iter)
    eigenvalue = flip * (rho - sigma)
    right = normalize_sign(right)
    left = normalize_sign(left)
    _log.debug("perron pair: eigenvalue %.12g after %d iterations", eigenvalue, iterations)
    return PerronCertificate(
        mode,
        eigenvalue,
        right,
        left,
        kernel_dim,
        float(min(right.min(), left.min())),
        singular_values=s,
        quotient_bounds=bounds,
        iterations=iterations,
    )
