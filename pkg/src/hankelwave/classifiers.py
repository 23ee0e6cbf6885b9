"""Minimum-residual classification against a class-blocked dictionary.

Both classifiers represent an observation ``y`` over all dictionary atoms
and label it by the class whose atoms alone reconstruct ``y`` best. CRC
uses a ridge representation whose operator is computed once; SRC solves an
l1-regularized least squares problem per observation and is kept as a slow
reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from .errors import ParameterError, ShapeError, StaleOperatorError
from .subspace_trainer import LabeledDictionary


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """``P = (A'A + lambda I)^-1 A'`` for one dictionary."""

    P: NDArray
    lam: float
    fingerprint: str


@dataclass(frozen=True, eq=False)
class ClassificationResult:
    label: int
    residuals: NDArray
    coefficients: NDArray
    margin: float
    converged: bool = True
    iterations: int = 0


def crc_precompute(dictionary: LabeledDictionary, lam: float = 0.01) -> ProjectionOperator:
    A = dictionary.A
    if A.size == 0:
        raise ParameterError("empty dictionary")
    if lam < 0 or not math.isfinite(lam):
        raise ParameterError(f"ridge weight must be positive, got {lam}")
    G = A.T @ A
    if lam == 0:
        cond = np.linalg.cond(G)
        if not cond < 1e8:
            raise ParameterError(f"lambda=0 needs a well-conditioned A'A (condition {cond:.3g})")
    G[np.diag_indices_from(G)] += lam
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise ParameterError(f"A'A + lambda I not positive definite: {exc}") from None
    P = linalg.cho_solve(factor, A.T)
    return ProjectionOperator(P, float(lam), dictionary.fingerprint())


def _check_shapes(dictionary: LabeledDictionary, y: NDArray) -> NDArray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != dictionary.A.shape[0]:
        raise ShapeError(f"window of length {y.shape[0]}, dictionary rows {dictionary.A.shape[0]}")
    return y


def class_residuals(dictionary: LabeledDictionary, y: NDArray, x: NDArray) -> NDArray:
    """``r_i = ||y - A delta_i(x)||`` for every class id."""
    A = dictionary.A
    r = np.empty(dictionary.n_classes)
    for cid, start, stop in dictionary.blocks:
        r[cid] = np.linalg.norm(y - A[:, start:stop] @ x[start:stop])
    return r


def _decide(residuals: NDArray) -> tuple[int, float]:
    label = int(np.argmin(residuals))  # first index wins ties
    if len(residuals) < 2:
        return label, 0.0
    others = np.delete(residuals, label)
    return label, float(others.min() - residuals[label])


def crc_classify(P: ProjectionOperator, dictionary: LabeledDictionary, y) -> ClassificationResult:
    y = _check_shapes(dictionary, y)
    if P.P.shape != dictionary.A.T.shape:
        raise ShapeError(f"operator shape {P.P.shape} does not fit dictionary {dictionary.A.shape}")
    if P.fingerprint != dictionary.fingerprint():
        raise StaleOperatorError("projection operator was built for a different dictionary")
    x = P.P @ y
    r = class_residuals(dictionary, y, x)
    label, margin = _decide(r)
    return ClassificationResult(label, r, x, margin)


def lasso_ista(A: NDArray, y: NDArray, lam: float, max_iter: int = 5000, tol: float = 1e-7,
               x0: NDArray | None = None) -> tuple[NDArray, bool, int]:
    """FISTA with backtracking for ``min 1/2 ||y - Ax||^2 + lam ||x||_1``.

    Returns ``(x, converged, iterations)``. Convergence is declared when the
    relative change of ``x`` drops below ``tol``.
    """
    n = A.shape[1]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    z, t = x.copy(), 1.0
    L = 1.0
    AtA = A.T @ A
    Aty = A.T @ y

    for it in range(1, max_iter + 1):
        grad = AtA @ z - Aty
        while True:
            x_new = z - grad / L
            x_new = np.sign(x_new) * np.maximum(np.abs(x_new) - lam / L, 0.0)
            d = x_new - z
            # for a quadratic loss the sufficient-decrease test reduces to
            # ||A d||^2 <= L ||d||^2, free of cancellation between objectives
            if d @ (AtA @ d) <= L * (d @ d):
                break
            L *= 2.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        step = np.linalg.norm(x_new - x)
        x, t = x_new, t_new
        if step <= tol * max(1.0, np.linalg.norm(x)):
            return x, True, it
    return x, False, max_iter


def src_classify(dictionary: LabeledDictionary, y, lam: float = 0.01,
                 max_iter: int = 5000, tol: float = 1e-7) -> ClassificationResult:
    """Sparse-representation label via an l1-regularized fit."""
    y = _check_shapes(dictionary, y)
    if lam < 0:
        raise ParameterError(f"l1 weight must be nonnegative, got {lam}")
    x, converged, it = lasso_ista(dictionary.A, y, lam, max_iter, tol)
    r = class_residuals(dictionary, y, x)
    label, margin = _decide(r)
    return ClassificationResult(label, r, x, margin, converged, it)


def results_to_rows(results, t_end) -> list[list]:
    """CSV rows ``t_end, label, r_0..r_{k-1}, margin, converged``."""
    rows = []
    for t, res in zip(t_end, results):
        rows.append([repr(float(t)), res.label, *(repr(float(v)) for v in res.residuals),
                     repr(res.margin), int(res.converged)])
    return rows
