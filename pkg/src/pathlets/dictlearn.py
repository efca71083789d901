"""MDL-derived dictionary loss, subgradients, projection, and probabilistic rounding.

The loss over a binary trajectory matrix X (|E| x N), dictionary D (|E| x n)
and representation R (n x N) is

    ||X - D R||_F^2 + lambda1 * sum_j max_i R[j, i] + lambda2 * ||R||_1

where the row-max term counts effective atoms and the L1 term counts
representation bits; both regularizers are description-length costs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import ConfigError, ShapeError

FRACTIONAL = "fractional"
BINARY = "binary"


@dataclass
class PathletDictionary:
    """|E| x n matrix whose columns are pathlet atoms."""

    matrix: np.ndarray
    phase: str = FRACTIONAL

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise ShapeError("dictionary must be a 2-D matrix with >= 1 column")
        _check_phase(self.matrix, self.phase)

    @property
    def num_units(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_atoms(self) -> int:
        return self.matrix.shape[1]


@dataclass
class RepresentationMatrix:
    """n x N matrix; column i is trajectory i's atom-selection vector."""

    matrix: np.ndarray
    phase: str = FRACTIONAL

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError("representation must be a 2-D matrix")
        _check_phase(self.matrix, self.phase)

    @property
    def num_atoms(self) -> int:
        return self.matrix.shape[0]


@dataclass
class MdlLossBreakdown:
    recon: float
    dict_term: float
    sparsity_term: float
    total: float
    lambda1: float
    lambda2: float


MatrixLike = Union[np.ndarray, PathletDictionary, RepresentationMatrix]


def _mat(M: MatrixLike) -> np.ndarray:
    if isinstance(M, (PathletDictionary, RepresentationMatrix)):
        return M.matrix
    return np.asarray(M, dtype=np.float64)


def _check_phase(M: np.ndarray, phase: str) -> None:
    if phase not in (FRACTIONAL, BINARY):
        raise ShapeError(f"unknown phase {phase!r}")
    if M.size and (M.min() < 0.0 or M.max() > 1.0):
        raise ShapeError("entries must lie in [0, 1]")
    if phase == BINARY and M.size and not np.all((M == 0.0) | (M == 1.0)):
        raise ShapeError("binary phase requires all entries in {0, 1}")


def _check_shapes(X: np.ndarray, D: np.ndarray, R: np.ndarray) -> None:
    if X.ndim != 2 or D.ndim != 2 or R.ndim != 2:
        raise ShapeError("X, D, R must all be 2-D")
    if D.shape[0] != X.shape[0]:
        raise ShapeError(f"D has {D.shape[0]} rows, X has {X.shape[0]}")
    if R.shape[0] != D.shape[1]:
        raise ShapeError(f"R has {R.shape[0]} rows, D has {D.shape[1]} columns")
    if R.shape[1] != X.shape[1]:
        raise ShapeError(f"R has {R.shape[1]} columns, X has {X.shape[1]}")


def mdl_loss(
    X: MatrixLike,
    D: MatrixLike,
    R: MatrixLike,
    lambda1: float,
    lambda2: float,
) -> MdlLossBreakdown:
    """Evaluate the reconstruction + description-length loss and its terms."""
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError("lambda1 and lambda2 must be nonnegative")
    X, D, R = _mat(X), _mat(D), _mat(R)
    _check_shapes(X, D, R)
    residual = X - D @ R
    recon = float(np.sum(residual * residual))
    dict_term = float(np.sum(R.max(axis=1))) if R.size else 0.0
    sparsity_term = float(np.sum(np.abs(R)))
    total = recon + lambda1 * dict_term + lambda2 * sparsity_term
    return MdlLossBreakdown(recon, dict_term, sparsity_term, total, lambda1, lambda2)


def effective_atoms(R: MatrixLike) -> Tuple[int, np.ndarray]:
    """Count atoms used by at least one trajectory (max over the atom's row > 0)."""
    R = _mat(R)
    mask = R.max(axis=1) > 0.0 if R.size else np.zeros(R.shape[0], dtype=bool)
    return int(mask.sum()), mask


def mdl_gradients(
    X: MatrixLike,
    D: MatrixLike,
    R: MatrixLike,
    lambda1: float,
    lambda2: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Subgradients of the loss w.r.t. D and R.

    The row-max term places its full lambda1 on one argmax entry per row
    (ties broken by lowest column index); the L1 subgradient is lambda2 on
    strictly positive entries and 0 at exactly zero, so zeros are never
    pushed negative ahead of clipping.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError("lambda1 and lambda2 must be nonnegative")
    X, D, R = _mat(X), _mat(D), _mat(R)
    _check_shapes(X, D, R)
    residual = X - D @ R
    gradD = -2.0 * residual @ R.T
    gradR = -2.0 * D.T @ residual
    if lambda1 > 0 and R.size:
        argmax = R.argmax(axis=1)  # numpy argmax takes the first max: lowest index
        rows = np.arange(R.shape[0])
        active = R[rows, argmax] > 0.0
        gradR[rows[active], argmax[active]] += lambda1
    if lambda2 > 0:
        gradR = gradR + lambda2 * (R > 0.0)
    return gradD, gradR


def clip_unit_interval(M: np.ndarray) -> np.ndarray:
    """Project every entry onto [0, 1]."""
    return np.clip(np.asarray(M, dtype=np.float64), 0.0, 1.0)


def round_binary(M: np.ndarray, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Probabilistic rounding: entry -> 1 with probability min(1, theta * entry)."""
    if theta < 1.0:
        raise ConfigError(f"rounding scale theta must be >= 1, got {theta}")
    M = np.asarray(M, dtype=np.float64)
    if M.size and (M.min() < 0.0 or M.max() > 1.0):
        raise ShapeError("round_binary requires entries in [0, 1]")
    probs = np.minimum(1.0, theta * M)
    return (rng.random(M.shape) < probs).astype(np.float64)
