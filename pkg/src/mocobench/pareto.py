"""Pareto dominance, nondominated filtering and exact hypervolume (2D/3D)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def dominates(u, v) -> bool:
    """True iff u <= v componentwise with at least one strict inequality."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"objective length mismatch: {u.shape} vs {v.shape}")
    return bool(np.all(u <= v) and np.any(u < v))


def nondominated_filter(points) -> np.ndarray:
    """Maximal mutually-nondominated subset; duplicate rows collapse to one.

    Returns rows in the order they first appear in the input.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 0)
    _, first_idx = np.unique(pts, axis=0, return_index=True)
    pts = pts[np.sort(first_idx)]
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        le = np.all(pts[i] <= pts, axis=1)
        lt = np.any(pts[i] < pts, axis=1)
        dominated = le & lt
        dominated[i] = False
        keep &= ~dominated
    return pts[keep]


def hv_gap(hv_ref: float, hv_model: float) -> float:
    """Signed relative hypervolume shortfall vs a reference solver, percent.

    Negative when the model hypervolume exceeds the reference.
    """
    if hv_ref <= 0:
        raise ValueError(f"reference hypervolume must be positive, got {hv_ref}")
    return (hv_ref - hv_model) / hv_ref * 100.0


def _hv2d(pts: np.ndarray, r: np.ndarray) -> float:
    # Sweep over f1 ascending; each nondominated point contributes a strip.
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    hv = 0.0
    y_prev = r[1]
    for x, y in pts:
        if y < y_prev:
            hv += (r[0] - x) * (y_prev - y)
            y_prev = y
    return hv


def _hv3d(pts: np.ndarray, r: np.ndarray) -> float:
    # Dimension sweep: slabs along f3, each weighted by the 2D area of the
    # points introduced so far.
    order = np.argsort(pts[:, 2], kind="stable")
    pts = pts[order]
    zs = np.append(pts[:, 2], r[2])
    hv = 0.0
    for i in range(len(pts)):
        dz = zs[i + 1] - zs[i]
        if dz > 0:
            area = _hv2d(nondominated_filter(pts[: i + 1, :2]), r[:2])
            hv += area * dz
    return hv


def hypervolume(points, r, *, return_dropped: bool = False):
    """Lebesgue measure of the region dominated by `points` up to `r`.

    Points with any coordinate beyond r are dropped (with a warning); points
    touching r contribute zero measure. Exact for 2 and 3 objectives.
    """
    r = np.asarray(r, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, r.shape[0]) if np.size(points) else np.empty((0, r.shape[0]))
    m = r.shape[0]
    if m not in (2, 3):
        raise ValueError(f"hypervolume supports 2 or 3 objectives, got {m}")
    inside = np.all(pts <= r, axis=1) if len(pts) else np.array([], dtype=bool)
    dropped = int(len(pts) - inside.sum())
    if dropped:
        warnings.warn(f"hypervolume: dropped {dropped} point(s) beyond the reference point")
    pts = pts[inside]
    if len(pts) == 0:
        value = 0.0
    else:
        pts = nondominated_filter(pts)
        value = _hv2d(pts, r) if m == 2 else _hv3d(pts, r)
    if return_dropped:
        return value, dropped
    return value


def reference_point(fronts, pad: float = 0.1) -> np.ndarray:
    """Shared reference point: nadir of the union padded by `pad` x |nadir|.

    Equals 1.1 x nadir for positive objectives; for negated (negative)
    objectives the pad still moves the point away from the front. A zero
    nadir component is padded by the absolute pad instead.
    """
    stacked = np.vstack([np.asarray(f, dtype=float) for f in fronts if np.size(f)])
    nadir = stacked.max(axis=0)
    step = pad * np.abs(nadir)
    step[step == 0] = pad
    return nadir + step


@dataclass
class Front:
    """Objective vectors of mutually nondominated solutions plus the
    reference point they are measured against."""

    points: np.ndarray
    r: np.ndarray

    def hypervolume(self) -> float:
        return hypervolume(self.points, self.r)


def write_front_csv(path, front: Front) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("r," + ",".join(repr(float(v)) for v in front.r) + "\n")
        for row in np.atleast_2d(front.points):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_front_csv(path) -> Front:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "r":
            raise ValueError("front CSV must start with a reference-point row")
        r = np.array([float(v) for v in header[1:]])
        rows = [
            [float(v) for v in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    pts = np.array(rows) if rows else np.empty((0, r.size))
    return Front(points=pts, r=r)
