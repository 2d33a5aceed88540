"""
Value-error metrics.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ShapeError

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class WeightedNorm:
    """Strictly positive probability weights d for the ||.||_d norm."""
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 1:
            raise ShapeError(f"weights must be a vector, got shape {weights.shape}")
        if np.any(weights <= 0):
            raise InputError("weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InputError(f"weights must sum to 1, got {weights.sum()!r}")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    def norm(self, x):
        return float(np.sqrt(np.dot(self.weights, np.square(x))))


def _difference(v, v_ref, d: WeightedNorm):
    v = np.asarray(v, dtype=np.float64)
    v_ref = np.asarray(v_ref, dtype=np.float64)
    if v.shape != v_ref.shape or v.shape != d.weights.shape:
        raise ShapeError(
            f"length mismatch: v {v.shape}, v_ref {v_ref.shape}, weights {d.weights.shape}"
        )
    return v - v_ref


def rmsve_tvr(v, v_ref, d: WeightedNorm) -> float:
    """
    inf_c ||v - (v_ref + c e)||_d, attained at the d-weighted mean of v - v_ref.
    """
    diff = _difference(v, v_ref, d)
    offset = np.dot(d.weights, diff)
    return d.norm(diff - offset)


def weighted_rmsve(v, v_ref, d: WeightedNorm) -> float:
    return d.norm(_difference(v, v_ref, d))
