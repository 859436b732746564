"""Weighted-sum and Tchebycheff scalarization, plus ideal-point tracking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problems import validate_preference


def weighted_sum(f, lam) -> float:
    f = np.asarray(f, dtype=float)
    lam = np.asarray(lam, dtype=float)
    validate_preference(lam)
    return float(np.dot(lam, f))


def tchebycheff(f, lam, z_star) -> float:
    """max_i lam_i |f_i - z*_i| (absolute value keeps the form usable when the
    running ideal point is not yet a true lower bound)."""
    f = np.asarray(f, dtype=float)
    lam = np.asarray(lam, dtype=float)
    validate_preference(lam)
    return float(np.max(lam * np.abs(f - np.asarray(z_star, dtype=float))))


def update_ideal(z_star, f) -> np.ndarray:
    return np.minimum(np.asarray(z_star, dtype=float), np.asarray(f, dtype=float))


@dataclass
class IdealPoint:
    """Running componentwise minimum of observed objective vectors.

    The true per-instance minimum is unavailable during training, so this is
    the standard running-min surrogate, reset per epoch.
    """

    values: np.ndarray | None = None
    policy: str = "running-min"

    def observe(self, objectives: np.ndarray) -> None:
        pts = np.atleast_2d(np.asarray(objectives, dtype=float))
        lo = pts.min(axis=0)
        self.values = lo if self.values is None else update_ideal(self.values, lo)

    def get(self, m: int) -> np.ndarray:
        return np.zeros(m) if self.values is None else self.values
