"""Admissible domains, k-symmetry, and the Dirichlet Green's function.

``G(x, y) = (1/2pi) ln(1/|x - y|) + H(x, y)``.  Only ``H(., 0)`` is ever
needed because every bubble is centred at the origin.  On the unit disk
it vanishes identically; on polygons it is the P1 harmonic extension of
the boundary trace ``(1/2pi) ln|x|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DomainError, ResourceError

__all__ = [
    "Domain",
    "RegularPart",
    "disk_green",
    "disk_regular_part",
    "regular_part_at_zero",
    "check_k_symmetry",
    "regular_polygon",
    "square",
]

SYMMETRY_TOL = 1e-12


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(r, s, p), orient(r, s, q)
    d3, d4 = orient(p, q, r), orient(p, q, s)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class Domain:
    """Unit disk or a simple polygon containing the origin.

    Polygon vertices are stored counter-clockwise.  ``symmetry_order`` k
    asserts invariance under rotation by ``pi/k`` and is verified.
    """

    kind: str
    symmetry_order: int = 1
    vertices: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("disk", "polygon"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if int(self.symmetry_order) != self.symmetry_order or self.symmetry_order < 1:
            raise DomainError(f"symmetry order must be a positive integer, got {self.symmetry_order}")
        if self.kind == "disk":
            if self.vertices:
                raise DomainError("the disk takes no vertices")
            return
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DomainError("a polygon needs at least three 2D vertices")
        signed = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if signed == 0:
            raise DomainError("degenerate polygon")
        if signed < 0:
            v = v[::-1]
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        m = len(v)
        for i in range(m):
            for j in range(i + 1, m):
                if j == i + 1 or (i == 0 and j == m - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % m], v[j], v[(j + 1) % m]):
                    raise DomainError("polygon is self-intersecting")
        if not self.contains(np.zeros((1, 2)))[0]:
            raise DomainError("origin must lie in the interior of the domain")
        if not check_k_symmetry(self, self.symmetry_order):
            raise DomainError(f"polygon is not invariant under rotation by pi/{self.symmetry_order}")

    @classmethod
    def disk(cls, k: int = 1) -> "Domain":
        return cls("disk", k)

    @classmethod
    def polygon(cls, vertices, k: int) -> "Domain":
        return cls("polygon", k, tuple(map(tuple, np.asarray(vertices, dtype=float).tolist())))

    @property
    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    def scaled(self, factor: float) -> "Domain":
        if self.kind == "disk":
            raise DomainError("only the unit disk is supported; scale a polygon instead")
        return Domain.polygon(self.vertex_array * factor, self.symmetry_order)

    def contains(self, x) -> np.ndarray:
        """Strict interior test for an array of points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "disk":
            return np.hypot(x[:, 0], x[:, 1]) < 1.0
        v = self.vertex_array
        inside = np.zeros(len(x), dtype=bool)
        on_edge = np.zeros(len(x), dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cross = (b[0] - a[0]) * (x[:, 1] - a[1]) - (b[1] - a[1]) * (x[:, 0] - a[0])
            within = ((x - a) @ (b - a) >= 0) & ((x - b) @ (a - b) >= 0)
            on_edge |= (np.abs(cross) < 1e-14 * (1 + np.abs(a).max())) & within
            crosses = (a[1] > x[:, 1]) != (b[1] > x[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (x[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= crosses & (x[:, 0] < xint)
        return inside & ~on_edge

    def is_star_shaped(self) -> bool:
        """Every edge faces the origin, i.e. the origin is in the kernel."""
        if self.kind == "disk":
            return True
        v = self.vertex_array
        w = np.roll(v, -1, axis=0)
        return bool(np.all(v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0] > 0))

    def boundary_radius(self, theta) -> np.ndarray:
        """Distance from the origin to the boundary along direction ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "disk":
            return np.ones_like(theta)
        d = np.stack([np.cos(theta), np.sin(theta)], -1).reshape(-1, 2)
        v = self.vertex_array
        w = np.roll(v, -1, axis=0)
        best = np.full(len(d), np.inf)
        for a, b in zip(v, w):
            e = b - a
            denom = d[:, 0] * (-e[1]) - d[:, 1] * (-e[0])
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (a[0] * (-e[1]) - a[1] * (-e[0])) / denom
                u = (d[:, 0] * a[1] - d[:, 1] * a[0]) / denom
            ok = (np.abs(denom) > 1e-15) & (s > 0) & (u >= -1e-12) & (u <= 1 + 1e-12)
            best = np.where(ok, np.minimum(best, s), best)
        if not np.all(np.isfinite(best)):
            raise ResourceError("ray from the origin misses the polygon boundary")
        return best.reshape(theta.shape)

    def corner_angles(self) -> list:
        if self.kind == "disk":
            return []
        v = self.vertex_array
        return sorted(float(np.mod(np.arctan2(p[1], p[0]), 2 * math.pi)) for p in v)

    def max_radius(self) -> float:
        if self.kind == "disk":
            return 1.0
        return float(np.max(np.hypot(*self.vertex_array.T)))

    def min_radius(self) -> float:
        """Distance from the origin to the nearest boundary point."""
        if self.kind == "disk":
            return 1.0
        v = self.vertex_array
        best = np.inf
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            e = b - a
            s = np.clip(-(a @ e) / (e @ e), 0.0, 1.0)
            best = min(best, float(np.hypot(*(a + s * e))))
        return best


def regular_polygon(m: int, circumradius: float = 1.0, k: int | None = None, phase: float = 0.0) -> Domain:
    """Regular m-gon centred at 0; default symmetry order k = m / 2 when m is even."""
    ang = phase + 2 * math.pi * np.arange(m) / m
    verts = circumradius * np.stack([np.cos(ang), np.sin(ang)], -1)
    if k is None:
        k = m // 2 if m % 2 == 0 else 1
    return Domain.polygon(verts, k)


def square(half_side: float = 1.0) -> Domain:
    """The square (-a, a)^2, which is invariant under rotation by pi/2."""
    a = half_side
    return Domain.polygon([(a, a), (-a, a), (-a, -a), (a, -a)], 2)


def check_k_symmetry(domain: Domain, k: int) -> bool:
    """True iff the domain is invariant under rotation by pi/k."""
    if domain.kind == "disk":
        return True
    if int(k) != k or k < 1:
        return False
    v = domain.vertex_array
    c, s = math.cos(math.pi / k), math.sin(math.pi / k)
    rot = v @ np.array([[c, s], [-s, c]])
    dist = np.abs(rot[:, None, :] - v[None, :, :]).max(-1)
    return bool(np.all(dist.min(1) <= SYMMETRY_TOL * max(1.0, np.abs(v).max())))


def _check_disk_points(*pts):
    for p in pts:
        if np.any(np.hypot(p[..., 0], p[..., 1]) > 1.0):
            raise DomainError("point outside the closed unit disk")


def disk_green(x, y) -> np.ndarray:
    """Dirichlet Green's function of the unit disk (image-charge formula)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_disk_points(x, y)
    d2 = np.sum((x - y) ** 2, axis=-1)
    if np.any(d2 == 0):
        raise DomainError("Green's function is singular at coincident points")
    num = 1.0 - 2.0 * np.sum(x * y, axis=-1) + np.sum(x * x, axis=-1) * np.sum(y * y, axis=-1)
    return np.log(num / d2) / (4 * math.pi)


def disk_regular_part(x, y) -> np.ndarray:
    """``H(x, y) = (1/4pi) ln(1 - 2 x.y + |x|^2 |y|^2)`` on the unit disk."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_disk_points(x, y)
    num = 1.0 - 2.0 * np.sum(x * y, axis=-1) + np.sum(x * x, axis=-1) * np.sum(y * y, axis=-1)
    return np.log(num) / (4 * math.pi)


@dataclass(frozen=True, eq=False)
class RegularPart:
    """``H(., 0)`` together with its value at the origin."""

    h_at_zero: float
    source: str
    _evaluate: Callable = field(repr=False)
    mesh: object = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def evaluate(self, x) -> np.ndarray:
        return self._evaluate(np.atleast_2d(np.asarray(x, dtype=float)))

    def scaled(self, alpha: float) -> Callable:
        """The map ``x -> 4 pi alpha H(x, 0)``."""
        return lambda x: 4 * math.pi * alpha * self.evaluate(x)

    def h_values(self, alphas) -> list:
        return [4 * math.pi * a * self.h_at_zero for a in alphas]


def regular_part_at_zero(domain: Domain, mesh_resolution: int = 40) -> RegularPart:
    """``H(., 0)`` for the domain.

    For polygons the harmonic problem is solved with P1 elements on the
    fundamental sector (``H(., 0)`` inherits the domain's symmetry); the
    mesh width is ``max|vertex| / mesh_resolution``.
    """
    if domain.kind == "disk":
        return RegularPart(0.0, "analytic", lambda x: np.zeros(len(x)))
    from .mesh import build_sector_mesh

    if not domain.contains(np.zeros((1, 2)))[0]:
        raise DomainError("origin is not interior")
    if mesh_resolution < 4:
        raise DomainError("mesh_resolution must be at least 4")
    h = 1.0 / mesh_resolution
    mesh = build_sector_mesh(domain, domain.symmetry_order, h, r_min=h * domain.min_radius())
    values = np.zeros(mesh.n)
    b = mesh.boundary
    values[b] = np.log(mesh.radii[b]) / (2 * math.pi)
    free = mesh.free
    K = mesh.stiffness
    rhs = -K[free][:, b] @ values[b]
    values[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    origin = int(np.argmin(mesh.radii))
    return RegularPart(
        float(values[origin]),
        f"numeric:{mesh.mesh_id}",
        lambda x: mesh.interpolate(values, x),
        mesh=mesh,
        values=values,
    )
