"""Finitely supported probability measures and observation samples.

Measures are immutable after construction: solvers always build new ones.
Atoms are points in R^d stored as a (k, d) float array; weights are a
(k,) array on the probability simplex.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidMeasureError

WEIGHT_TOL = 1e-12


def _as_points(atoms, dim: int | None = None) -> np.ndarray:
    pts = np.asarray(atoms, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise InvalidMeasureError(f"atoms must be a (k, d) array, got shape {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise DimensionMismatchError(f"atoms have dimension {pts.shape[1]}, expected {dim}")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability measure with finitely many atoms in R^d.

    Parameters
    ----------
    atoms : array-like, shape (k, d) or (k,)
        Atom locations; a 1-d array is treated as k points in R^1.
    weights : array-like, shape (k,)
        Nonnegative weights summing to 1 (within 1e-12). Normalization is
        enforced here, never silently repaired on read.
    """

    atoms: np.ndarray
    weights: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        pts = _as_points(self.atoms)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise InvalidMeasureError(
                f"got {pts.shape[0]} atoms but {w.shape} weights"
            )
        if pts.shape[0] == 0:
            raise InvalidMeasureError("a measure needs at least one atom")
        if np.any(w < 0):
            raise InvalidMeasureError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InvalidMeasureError(f"weights sum to {total!r}, not 1")
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def canonicalize(self) -> "DiscreteMeasure":
        """Merge duplicate atoms (bitwise-equal coordinates) by summing weights.

        Atom order follows first occurrence; idempotent.
        """
        index: dict[bytes, int] = {}
        order: list[int] = []
        merged: list[float] = []
        for i in range(len(self)):
            key = self.atoms[i].tobytes()
            if key in index:
                merged[index[key]] += self.weights[i]
            else:
                index[key] = len(order)
                order.append(i)
                merged.append(float(self.weights[i]))
        if len(order) == len(self):
            return self
        return DiscreteMeasure(self.atoms[order], np.asarray(merged))

    def as_dict(self) -> dict[bytes, float]:
        """Map atom-bytes -> weight, duplicates merged."""
        out: dict[bytes, float] = {}
        for i in range(len(self)):
            key = self.atoms[i].tobytes()
            out[key] = out.get(key, 0.0) + float(self.weights[i])
        return out

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "DiscreteMeasure":
        try:
            dim = int(obj["dim"])
            atoms = _as_points(obj["atoms"], dim)
            weights = obj["weights"]
        except (KeyError, TypeError) as exc:
            raise InvalidMeasureError(f"malformed measure object: missing/bad field {exc}") from exc
        return DiscreteMeasure(atoms, np.asarray(weights, dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path) -> "DiscreteMeasure":
        with open(path, "r", encoding="utf-8") as fh:
            return DiscreteMeasure.from_json_dict(json.load(fh))


def dirac(point) -> DiscreteMeasure:
    """The point mass at ``point``."""
    pts = _as_points([point] if np.ndim(point) == 0 else point)
    if pts.shape[0] != 1:
        pts = _as_points(point).reshape(1, -1)
    return DiscreteMeasure(pts, np.array([1.0]))


def measure_from_pairs(pairs, dim: int | None = None) -> DiscreteMeasure:
    """Build a measure from (atom, weight) pairs."""
    atoms = [p for p, _ in pairs]
    weights = [w for _, w in pairs]
    return DiscreteMeasure(_as_points(atoms, dim), np.asarray(weights, dtype=np.float64))


@dataclass(frozen=True)
class Sample:
    """Observations y_1..y_n in R^d."""

    points: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[0] < 1:
            raise InvalidMeasureError("a sample needs at least one observation")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", pts.shape[1])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def save_csv(self, path) -> None:
        # one row per observation, d columns, no header, '.' decimal separator
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])

    @staticmethod
    def load_csv(path) -> "Sample":
        rows: list[list[float]] = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise InvalidMeasureError(f"bad value in {path} line {lineno}: {exc}") from exc
        if not rows:
            raise InvalidMeasureError(f"sample file {path} is empty")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise InvalidMeasureError(f"inconsistent column counts in {path}: {sorted(widths)}")
        return Sample(np.asarray(rows, dtype=np.float64))


def empirical_measure(sample: Sample) -> DiscreteMeasure:
    """Uniform measure on the sample points, duplicate atoms merged."""
    n = sample.n
    raw = DiscreteMeasure(sample.points, np.full(n, 1.0 / n))
    return raw.canonicalize()


def second_moment(m: DiscreteMeasure) -> float:
    """E ||X||^2 under the measure."""
    return float(np.dot(m.weights, np.einsum("ij,ij->i", m.atoms, m.atoms)))


def total_variation_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """(1/2) sum over the union of atoms of |a(x) - b(x)|; lies in [0, 1]."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    da, db = a.as_dict(), b.as_dict()
    keys = set(da) | set(db)
    raw = 0.5 * sum(abs(da.get(k, 0.0) - db.get(k, 0.0)) for k in keys)
    return min(max(raw, 0.0), 1.0)
