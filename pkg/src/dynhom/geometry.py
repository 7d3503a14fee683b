"""Reference cell, hole family and periodically perforated domains.

The reference cell is ``Y = [0, 1]^2`` and ``|Y| = 1`` throughout, so the
volume fraction equals ``area_Ystar`` and the surface density equals
``perimeter_dF``.  Curved holes are polygonalized once here; every mesh and
every measure downstream uses that same polygon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

SHAPES = ("disc", "square", "ellipse")

_TILE_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid hole, cell or tiling parameters."""


@dataclass(frozen=True)
class HoleSpec:
    """Hole ``F`` inside the unit cell.

    ``size`` is the radius for a disc, the half-width for a square and the
    pair of semi-axes for an ellipse, all as fractions of the cell side.
    """

    shape: str = "disc"
    size: float | tuple[float, float] = 0.25
    center: tuple[float, float] = (0.5, 0.5)
    polygon_segments: int = 16

    def semi_axes(self) -> tuple[float, float]:
        if self.shape == "ellipse":
            a, b = self.size  # type: ignore[misc]
            return float(a), float(b)
        return float(self.size), float(self.size)  # type: ignore[arg-type]

    def polygon(self) -> np.ndarray:
        """Counterclockwise vertices of the polygonal hole, shape (n, 2)."""
        n = self.polygon_segments
        cx, cy = self.center
        a, b = self.semi_axes()
        if self.shape in ("disc", "ellipse"):
            # first vertex points at the (0, 0) corner so that a 4k-gon
            # shares the cell's mirror symmetries
            t = -0.75 * math.pi + 2.0 * math.pi * np.arange(n) / n
            return np.column_stack([cx + a * np.cos(t), cy + b * np.sin(t)])
        if self.shape == "square":
            if n % 4:
                raise GeometryError("square holes need polygon_segments divisible by 4")
            k = n // 4
            s = np.arange(k) / k
            corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
            pts = []
            for c0, c1 in zip(corners, np.roll(corners, -1, axis=0)):
                pts.append(c0 + s[:, None] * (c1 - c0))
            return np.array([cx, cy]) + a * np.vstack(pts)
        raise GeometryError(f"unknown hole shape {self.shape!r}")

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise GeometryError(f"unknown hole shape {self.shape!r}")
        if self.polygon_segments < 8:
            raise GeometryError("polygon_segments must be >= 8")
        a, b = self.semi_axes()
        if a <= 0 or b <= 0:
            raise GeometryError("hole size must be positive")
        poly = self.polygon()
        if clearance(poly) <= 0:
            raise GeometryError("hole must lie strictly inside the open unit cell")
        if polygon_area(poly) <= 0:
            raise GeometryError("hole polygon must be counterclockwise")


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_perimeter(poly: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)))


def clearance(poly: np.ndarray) -> float:
    """Smallest distance from a polygon vertex to the boundary of the unit cell."""
    return float(min(poly.min(), (1.0 - poly).min()))


@dataclass(frozen=True)
class UnitCell:
    hole: HoleSpec | None
    area_Ystar: float
    perimeter_dF: float
    polygon: np.ndarray = field(repr=False, compare=False)

    @property
    def has_hole(self) -> bool:
        return self.hole is not None

    @property
    def theta_star(self) -> float:
        return self.area_Ystar

    @property
    def sigma(self) -> float:
        return self.perimeter_dF


def make_unit_cell(hole: HoleSpec | None) -> UnitCell:
    """Build the reference cell ``Y* = Y \\ closure(F)`` with exact polygon measures."""
    if hole is None:
        return UnitCell(None, 1.0, 0.0, np.zeros((0, 2)))
    hole.validate()
    poly = hole.polygon()
    return UnitCell(hole, 1.0 - polygon_area(poly), polygon_perimeter(poly), poly)


@dataclass(frozen=True)
class Rectangle:
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains_open(self, pts: np.ndarray) -> bool:
        pts = np.atleast_2d(pts)
        return bool(
            np.all(pts[:, 0] > self.x0)
            and np.all(pts[:, 0] < self.x1)
            and np.all(pts[:, 1] > self.y0)
            and np.all(pts[:, 1] < self.y1)
        )


def tile_counts(outer: Rectangle, epsilon: float) -> tuple[int, int, int, int]:
    """Integer cell-index ranges ``(i0, i1, j0, j1)`` of an exact tiling by ``epsilon``.

    Raises if the rectangle sides are not integer multiples of ``epsilon``.
    """
    if not epsilon > 0:
        raise GeometryError("epsilon must be positive")
    out = []
    for v in (outer.x0, outer.x1, outer.y0, outer.y1):
        r = v / epsilon
        k = round(r)
        if abs(r - k) > _TILE_TOL * max(1.0, abs(r)):
            raise GeometryError(f"epsilon={epsilon!r} does not tile the outer rectangle exactly")
        out.append(int(k))
    i0, i1, j0, j1 = out
    if i1 <= i0 or j1 <= j0:
        raise GeometryError("degenerate outer rectangle")
    return i0, i1, j0, j1


@dataclass(frozen=True)
class PerforatedDomain:
    outer: Rectangle
    epsilon: float
    cell: UnitCell
    holes: tuple[tuple[int, int], ...]
    """Cell indices ``k`` whose hole ``eps*k + eps*F`` lies in the open domain."""

    @property
    def n_holes(self) -> int:
        return len(self.holes)

    def hole_polygon(self, k: tuple[int, int]) -> np.ndarray:
        return self.epsilon * (np.asarray(k, dtype=float) + self.cell.polygon)


def enumerate_holes(outer: Rectangle, cell: UnitCell, epsilon: float) -> PerforatedDomain:
    """Collect the holes ``eps*k + eps*F`` whose closures lie inside the open ``outer``."""
    i0, i1, j0, j1 = tile_counts(outer, epsilon)
    holes: list[tuple[int, int]] = []
    if cell.has_hole:
        for i in range(i0, i1):
            for j in range(j0, j1):
                if outer.contains_open(epsilon * (np.array([i, j], dtype=float) + cell.polygon)):
                    holes.append((i, j))
    return PerforatedDomain(outer, float(epsilon), cell, tuple(sorted(holes)))


def measures(domain: PerforatedDomain) -> tuple[float, float]:
    """Return ``(|Omega_eps|, |dF_eps|)``."""
    eps, cell = domain.epsilon, domain.cell
    n = domain.n_holes
    area = domain.outer.area - n * eps**2 * (1.0 - cell.area_Ystar)
    perim = n * eps * cell.perimeter_dF
    return area, perim


def epsilon_from_string(text: str | float) -> float:
    """Parse ``"1/8"`` or ``0.125`` into a float."""
    if isinstance(text, (int, float)):
        return float(text)
    return float(Fraction(text.strip()))
