"""Sparse recovery of clean trajectories against a learned binary dictionary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dictlearn import PathletDictionary, clip_unit_interval, round_binary
from .errors import DenoiseError, ShapeError
from .generator import reconstruct, repair_connectivity
from .spatial import Trajectory


@dataclass
class SparseCodeResult:
    r: np.ndarray  # binary atom-selection vector
    fractional: np.ndarray
    objective: float  # ||x - D r||^2 + lam * ||r||_1 at the binary r
    converged: bool
    iterations: int


def code_objective(x: np.ndarray, D: np.ndarray, r: np.ndarray, lam: float) -> float:
    residual = x - D @ r
    return float(residual @ residual + lam * np.abs(r).sum())


def _polish(x: np.ndarray, D: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Greedy single-bit improvement of the binary objective (deterministic)."""
    r = r.copy()
    residual = x - D @ r
    col_sq = np.einsum("ij,ij->j", D, D)
    for _ in range(5 * max(1, r.size)):
        corr = D.T @ residual
        # delta objective for flipping each bit
        delta_on = -2.0 * corr + col_sq + lam
        delta_off = 2.0 * corr + col_sq - lam
        deltas = np.where(r > 0.0, delta_off, delta_on)
        j = int(np.argmin(deltas))
        if deltas[j] >= -1e-12:
            break
        if r[j] > 0.0:
            r[j] = 0.0
            residual = residual + D[:, j]
        else:
            r[j] = 1.0
            residual = residual - D[:, j]
    return r


def sparse_code(
    x: np.ndarray,
    D: PathletDictionary,
    lam: float,
    max_iters: int = 500,
    tol: float = 1e-8,
    rng: Optional[np.random.Generator] = None,
    rounding_draws: int = 8,
) -> SparseCodeResult:
    """min_{r in [0,1]^n} ||x - D r||^2 + lam ||r||_1 by projected gradient.

    Starts from r = 0 (deterministic, sparse-biased), steps with 1/(2 L)
    where L bounds the quadratic curvature, clips to [0, 1], then rounds the
    fractional solution with theta = 1 (probabilities are not inflated at
    inference time). Because a single rounding draw can split the weight an
    overlapping-atom optimum shares across columns, the best of a few draws
    is kept and polished by greedy single-bit flips.
    """
    x = np.asarray(x, dtype=np.float64)
    Dm = D.matrix
    if x.shape != (Dm.shape[0],):
        raise ShapeError(f"x must have length {Dm.shape[0]}, got shape {x.shape}")
    if rng is None:
        rng = np.random.default_rng(0)

    # curvature bound: 2 * largest eigenvalue of D^T D
    sigma = np.linalg.norm(Dm, 2) if Dm.size else 1.0
    step = 1.0 / max(2.0 * sigma * sigma, 1e-12)

    r = np.zeros(Dm.shape[1], dtype=np.float64)
    prev_obj = code_objective(x, Dm, r, lam)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        grad = -2.0 * Dm.T @ (x - Dm @ r) + lam * (r > 0.0)
        r = clip_unit_interval(r - step * grad)
        obj = code_objective(x, Dm, r, lam)
        if abs(prev_obj - obj) < tol:
            converged = True
            break
        prev_obj = obj

    best_r = None
    best_obj = np.inf
    for _ in range(max(1, rounding_draws)):
        candidate = _polish(x, Dm, round_binary(r, theta=1.0, rng=rng), lam)
        obj = code_objective(x, Dm, candidate, lam)
        if obj < best_obj:
            best_obj, best_r = obj, candidate
    return SparseCodeResult(
        r=best_r,
        fractional=r,
        objective=best_obj,
        converged=converged,
        iterations=iterations,
    )


def denoise(
    x_noisy: np.ndarray,
    model,
    lam: Optional[float] = None,
    max_iters: int = 500,
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Recover a clean connected trajectory from a noisy/incomplete bit vector.

    Pipeline: sparse_code against the model's binary dictionary, reconstruct
    the atom union, then connectivity repair. Raises DenoiseError when no
    atom explains the observation.
    """
    if lam is None:
        lam = model.config.lambda2
    result = sparse_code(x_noisy, model.dictionary, lam, max_iters=max_iters, rng=rng)
    x_hat = reconstruct(result.r, model.dictionary, 0.5)
    if not x_hat.any():
        raise DenoiseError("observation is unexplainable by the dictionary")
    return repair_connectivity(x_hat, model.domain)
