"""Discretizations, discrete Laplacians and quadrature.

Two mesh kinds share one interface so that every solver works on either:

* ``log_radial``: nodes uniform in ``t = ln r`` on ``[ln r_min, ln r_max]``.
  Used for radial fields on the unit disk (and on R^2 for improper
  integrals).  The inner end carries a zero-flux condition, the outer end
  is Dirichlet.
* ``sector``: P1 triangulation of the fundamental sector of angle ``pi/k``
  of a k-symmetric domain, log-graded toward the origin.  Nodes on the edge
  ``theta = pi/k`` are identified with their images on ``theta = 0``.

Both expose a symmetric ``stiffness`` matrix ``K`` and ``lumped`` node
weights ``m`` such that ``-Laplace(u) ~ (K u) / m`` at free nodes, and
``quad_weights`` integrating a node field over the whole domain.

Fields are plain arrays: a grid function is shape ``(n,)``, a field vector
with k components is shape ``(k, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import bernoulli

from .errors import DomainError, PreconditionError, ResourceError

__all__ = [
    "Mesh",
    "BlockOperator",
    "build_log_radial_mesh",
    "build_sector_mesh",
    "assemble_radial_laplacian",
    "gregory_weights",
    "quad_radial",
    "lp_norm",
    "h1_norm",
]

_LOG_FLOOR = math.log(np.finfo(float).tiny) / 2


@dataclass(frozen=True, eq=False)
class Mesh:
    kind: str
    points: np.ndarray
    radii: np.ndarray
    boundary: np.ndarray
    stiffness: sp.csr_matrix
    lumped: np.ndarray
    quad_weights: np.ndarray
    sym_factor: float
    symmetry_order: int
    r_min: float
    r_max: float
    mesh_id: str
    # sector-only structure
    cells: np.ndarray | None = None
    all_points: np.ndarray | None = None
    dof_map: np.ndarray | None = None
    theta_nodes: np.ndarray | None = None
    rho_levels: np.ndarray | None = None
    _boundary_radius: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def free(self) -> np.ndarray:
        return ~self.boundary

    @property
    def t(self) -> np.ndarray:
        """Log-radii of the nodes (log-radial meshes only)."""
        if self.kind != "log_radial":
            raise DomainError("t-coordinates exist only on log-radial meshes")
        return np.log(self.radii)

    @property
    def dt(self) -> float:
        t = self.t
        return float(t[1] - t[0])

    @cached_property
    def residual_scale(self) -> np.ndarray:
        """Per-node factor r^2 turning a physical residual into t-form units.

        The origin node of a sector mesh uses the innermost ring radius.
        """
        r = self.radii.copy()
        if np.any(r == 0):
            r[r == 0] = np.min(r[r > 0])
        return r * r

    def refined(self) -> "Mesh":
        """Log-radial mesh with half the spacing on the same interval."""
        if self.kind != "log_radial":
            raise DomainError("refined() is defined for log-radial meshes")
        return build_log_radial_mesh(self.r_min, self.r_max, 2 * self.n - 1)

    def interpolate(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate a node field at arbitrary points.

        Log-radial meshes interpolate linearly in ``t`` (``x`` holds radii).
        Sector meshes fold each 2D point into the fundamental sector and use
        the P1 interpolant.
        """
        values = np.asarray(values, dtype=float)
        if self.kind == "log_radial":
            r = np.asarray(x, dtype=float)
            return np.interp(np.log(np.maximum(r, self.r_min)), self.t, values)
        return _sector_interpolate(self, values, np.asarray(x, dtype=float))

    def symmetric_extension(self, values: np.ndarray):
        """Copies of a sector field rotated to cover the whole domain.

        Returns ``(points, values)`` with ``2k`` rotated copies of every
        sector node.
        """
        if self.kind != "sector":
            raise DomainError("symmetric_extension needs a sector mesh")
        beta = math.pi / self.symmetry_order
        vals = np.asarray(values)[self.dof_map]
        pts, out = [], []
        for m in range(2 * self.symmetry_order):
            c, s = math.cos(m * beta), math.sin(m * beta)
            rot = np.array([[c, -s], [s, c]])
            pts.append(self.all_points @ rot.T)
            out.append(vals)
        return np.vstack(pts), np.concatenate(out)


# ----------------------------------------------------------------------------
# quadrature


def gregory_weights(n: int, order: int = 8) -> np.ndarray:
    """Endpoint-corrected trapezoid weights on ``n`` unit-spaced nodes.

    Exact for polynomials of degree < ``order``; on integrands that decay at
    both ends the corrections vanish and the rule keeps the spectral accuracy
    of the plain trapezoid rule.
    """
    if n < 2 * order:
        order = max(1, n // 2)
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    if order <= 1:
        return w
    j = np.arange(order, dtype=float)
    vander = np.vander(j, order, increasing=True).T
    vander[0, 0] = 1.0
    b = bernoulli(order + 1)
    rhs = np.zeros(order)
    for d in range(1, order, 2):
        rhs[d] = b[d + 1] / (d + 1)
    a = np.linalg.solve(vander, rhs)
    w[:order] += a
    w[n - order:] += a[::-1]
    return w


def _values(f, mesh: Mesh) -> np.ndarray:
    if callable(f):
        return np.asarray(f(mesh.radii), dtype=float)
    return np.asarray(f, dtype=float)


def quad_radial(f, mesh: Mesh, improper: bool = False, tail_exponent: float | None = None) -> float:
    """Integral of a node field (or callable of r) over the meshed region.

    On a log-radial mesh the integral is ``2 pi int f(r) r dr``, evaluated
    in ``t`` with the Jacobian ``e^{2t}``; the core disk ``r < r_min``
    contributes ``pi r_min^2 f(r_min)``.  With ``improper=True`` the region
    is R^2 and the tail beyond ``r_max`` is added analytically assuming
    ``f ~ f(r_max) (r_max / r)^tail_exponent``.
    """
    v = _values(f, mesh)
    if improper:
        if mesh.kind != "log_radial":
            raise DomainError("improper integrals need a log-radial mesh")
        if tail_exponent is None:
            raise PreconditionError("improper quadrature needs the integrand's decay exponent")
        if tail_exponent <= 2:
            raise PreconditionError(f"tail exponent {tail_exponent} <= 2: integral over R^2 diverges")
    total = float(np.dot(mesh.quad_weights, v))
    if improper:
        total += 2 * math.pi * v[-1] * mesh.r_max**2 / (tail_exponent - 2)
    return total


def lp_norm(u, p: float, mesh: Mesh) -> float:
    """L^p norm; a field vector's norm is the sum of its component norms."""
    if not 1 <= p <= 8:
        raise DomainError(f"p = {p} outside [1, 8]")
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        return float(sum(lp_norm(ui, p, mesh) for ui in u))
    integral = quad_radial(np.abs(u) ** p, mesh)
    return max(integral, 0.0) ** (1.0 / p)


def h1_norm(u, mesh: Mesh) -> float:
    """H^1_0 norm (Dirichlet energy)^{1/2}, summed over components."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        return float(sum(h1_norm(ui, mesh) for ui in u))
    energy = mesh.sym_factor * float(u @ (mesh.stiffness @ u))
    return math.sqrt(max(energy, 0.0))


# ----------------------------------------------------------------------------
# log-radial meshes


def build_log_radial_mesh(r_min: float, r_max: float, n: int) -> Mesh:
    """Mesh uniform in ``t = ln r``; resolves scales down to ``~100 r_min``."""
    if not (r_min > 0 and r_max > r_min):
        raise DomainError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    if n < 16:
        raise DomainError(f"need at least 16 nodes, got {n}")
    if math.log(r_min) < _LOG_FLOOR:
        raise DomainError(f"r_min = {r_min} too small: r_min^2 underflows")
    t = np.linspace(math.log(r_min), math.log(r_max), n)
    dt = float(t[1] - t[0])
    r = np.exp(t)
    r[-1] = r_max

    # finite-volume form of -u_tt: K = tridiag(-1, 2, -1) / dt, zero flux at ends
    diag = np.full(n, 2.0 / dt)
    diag[0] = diag[-1] = 1.0 / dt
    off = np.full(n - 1, -1.0 / dt)
    K = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    cell = np.ones(n)
    cell[0] = cell[-1] = 0.5
    lumped = dt * r * r * cell
    lumped[0] += 0.5 * r_min**2  # the core disk r < r_min joins the first control volume

    quad = 2 * math.pi * dt * gregory_weights(n) * r * r
    quad[0] += math.pi * r_min**2

    boundary = np.zeros(n, dtype=bool)
    boundary[-1] = True
    return Mesh(
        kind="log_radial",
        points=r,
        radii=r,
        boundary=boundary,
        stiffness=K,
        lumped=lumped,
        quad_weights=quad,
        sym_factor=2 * math.pi,
        symmetry_order=0,
        r_min=float(r_min),
        r_max=float(r_max),
        mesh_id=f"log_radial:{r_min:.6g}:{r_max:.6g}:{n}",
    )


def assemble_radial_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Matrix of the discrete Laplacian ``Delta_h``; the Dirichlet row is zero.

    Interior rows are ``e^{-2t} (u_{m+1} - 2u_m + u_{m-1}) / dt^2``.  The
    first row is the flux balance over the disk of radius ``r_{1/2}`` (core
    plus half cell), i.e. a zero-derivative condition at the origin; this
    is an ``O(r_min)`` commitment valid for fields smooth at 0.
    Works for sector meshes too (lumped-mass FEM Laplacian).
    """
    inv = np.where(mesh.boundary, 0.0, 1.0 / mesh.lumped)
    return (-sp.diags(inv) @ mesh.stiffness).tocsr()


# ----------------------------------------------------------------------------
# block operators


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """k x k block operator on free nodes, in weak (scaled) form.

    Row block i acts as ``K phi_i + m * sum_j coupling[i, j] * phi_j`` where
    ``K`` is the mesh stiffness and ``m`` the lumped weights restricted to
    free nodes.  Dividing by ``m`` gives the strong form
    ``-Laplace(phi_i) + sum_j coupling[i, j] phi_j``.  Off-diagonal blocks
    are diagonal by construction.
    """

    mesh: Mesh
    coupling: np.ndarray  # shape (k, k, n_free)

    @property
    def k(self) -> int:
        return self.coupling.shape[0]

    @cached_property
    def matrix(self) -> sp.csc_matrix:
        free = self.mesh.free
        K = self.mesh.stiffness[free][:, free]
        m = self.mesh.lumped[free]
        blocks = [[None] * self.k for _ in range(self.k)]
        for i in range(self.k):
            for j in range(self.k):
                d = sp.diags(m * self.coupling[i, j])
                blocks[i][j] = K + d if i == j else d
        return sp.bmat(blocks, format="csc")

    @cached_property
    def factorization(self):
        from scipy.sparse.linalg import splu

        from .errors import ConditioningError

        try:
            lu = splu(self.matrix)
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise ConditioningError(f"block factorization failed: {exc}", smallest_pivot=0.0) from exc
        pivots = np.abs(lu.U.diagonal())
        smallest = float(pivots.min())
        if not np.isfinite(smallest) or smallest <= 1e-14 * float(pivots.max()):
            raise ConditioningError("block operator is numerically singular", smallest_pivot=smallest)
        return lu

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """Weak-form action on a (k, n_free) array."""
        x = np.asarray(phi, dtype=float).reshape(-1)
        return (self.matrix @ x).reshape(self.k, -1)

    def apply_strong(self, phi: np.ndarray) -> np.ndarray:
        return self.apply(phi) / self.mesh.lumped[self.mesh.free]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the weak-form system; ``rhs`` shape (k, n_free)."""
        b = np.asarray(rhs, dtype=float).reshape(-1)
        return self.factorization.solve(b).reshape(self.k, -1)


# ----------------------------------------------------------------------------
# sector meshes


def _p1_assemble(points: np.ndarray, cells: np.ndarray, dof: np.ndarray, n_dof: int):
    p0, p1, p2 = (points[cells[:, i]] for i in range(3))
    e1, e2 = p1 - p0, p2 - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    if np.any(area <= 0):
        raise ResourceError("sector mesh has degenerate or inverted cells")
    # gradients of barycentric coordinates
    grads = np.empty((len(cells), 3, 2))
    grads[:, 1, 0] = e2[:, 1] / det
    grads[:, 1, 1] = -e2[:, 0] / det
    grads[:, 2, 0] = -e1[:, 1] / det
    grads[:, 2, 1] = e1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    local = area[:, None, None] * np.einsum("cad,cbd->cab", grads, grads)
    d = dof[cells]
    rows = np.repeat(d, 3, axis=1).ravel()
    cols = np.tile(d, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_dof, n_dof)).tocsr()
    lumped = np.bincount(d.ravel(), weights=np.repeat(area / 3, 3), minlength=n_dof)
    return K, lumped


def build_sector_mesh(domain, k: int, target_h: float, r_min: float | None = None) -> Mesh:
    """Log-polar triangulation of the sector ``0 <= theta <= pi/k``.

    A node at level ``rho`` and angle ``theta`` sits at ``rho R(theta)`` where
    ``R`` is the boundary distance along the ray, so polygon corners lying on
    angular nodes are reproduced exactly.  Levels are geometric with ratio
    ``1 + target_h`` from the boundary down to ``r_min`` (default
    ``target_h^2``); a fan of triangles closes the mesh at the origin.
    """
    from .geometry import check_k_symmetry

    if not check_k_symmetry(domain, k):
        raise PreconditionError(f"domain is not invariant under rotation by pi/{k}")
    if not 0 < target_h < 1:
        raise DomainError(f"target_h = {target_h} outside (0, 1)")
    if domain.kind == "polygon" and not domain.is_star_shaped():
        raise ResourceError("polar sector meshing needs a polygon star-shaped about the origin")
    beta = math.pi / k
    r_outer = domain.max_radius()
    if r_min is None:
        r_min = target_h**2 * r_outer
    if not 0 < r_min < domain.min_radius():
        raise DomainError(f"r_min = {r_min} must lie inside the domain")

    n_theta = max(2, math.ceil(beta / target_h))
    theta = np.linspace(0.0, beta, n_theta + 1)
    corners = [a for a in domain.corner_angles() if 1e-12 < a < beta - 1e-12]
    for a in corners:
        i = int(np.argmin(np.abs(theta - a)))
        if 0 < i < n_theta and abs(theta[i] - a) < 0.25 * (beta / n_theta):
            theta[i] = a
        else:
            theta = np.sort(np.append(theta, a))
    R = domain.boundary_radius(theta)
    R[-1] = R[0]  # identified edge: R(pi/k) = R(0) by symmetry

    ratio = 1.0 + target_h
    n_levels = max(2, math.ceil(math.log(domain.min_radius() / r_min) / math.log(ratio)) + 1)
    rho = ratio ** -np.arange(n_levels, dtype=float)

    nt = len(theta)
    ring_pts = rho[:, None, None] * (R[None, :, None] * np.stack([np.cos(theta), np.sin(theta)], -1)[None])
    all_points = np.vstack([ring_pts.reshape(-1, 2), [[0.0, 0.0]]])
    center = len(all_points) - 1

    def idx(j, a):
        return j * nt + a

    cells = []
    for j in range(n_levels - 1):
        for a in range(nt - 1):
            o0, o1 = idx(j, a), idx(j, a + 1)
            i0, i1 = idx(j + 1, a), idx(j + 1, a + 1)
            cells.append((i0, o0, o1))
            cells.append((i0, o1, i1))
    jl = n_levels - 1
    for a in range(nt - 1):
        cells.append((center, idx(jl, a), idx(jl, a + 1)))
    cells = np.asarray(cells, dtype=np.int64)

    # identify theta = beta nodes with theta = 0 nodes
    keep = np.ones(len(all_points), dtype=bool)
    keep[[idx(j, nt - 1) for j in range(n_levels)]] = False
    dof = -np.ones(len(all_points), dtype=np.int64)
    dof[keep] = np.arange(int(keep.sum()))
    for j in range(n_levels):
        dof[idx(j, nt - 1)] = dof[idx(j, 0)]
    n_dof = int(keep.sum())

    K, lumped = _p1_assemble(all_points, cells, dof, n_dof)
    points = all_points[keep]
    boundary = np.zeros(n_dof, dtype=bool)
    boundary[dof[[idx(0, a) for a in range(nt)]]] = True
    return Mesh(
        kind="sector",
        points=points,
        radii=np.hypot(points[:, 0], points[:, 1]),
        boundary=boundary,
        stiffness=K,
        lumped=lumped,
        quad_weights=2 * k * lumped,
        sym_factor=2.0 * k,
        symmetry_order=k,
        r_min=float(r_min),
        r_max=float(r_outer),
        mesh_id=f"sector:k={k}:h={target_h:.6g}:rmin={r_min:.6g}:n={n_dof}",
        cells=cells,
        all_points=all_points,
        dof_map=dof,
        theta_nodes=theta,
        rho_levels=rho,
        _boundary_radius=domain.boundary_radius,
    )


def _sector_interpolate(mesh: Mesh, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    beta = math.pi / mesh.symmetry_order
    r = np.hypot(x[:, 0], x[:, 1])
    th = np.mod(np.arctan2(x[:, 1], x[:, 0]), beta)
    R = mesh._boundary_radius(th)
    rho = r / R
    if np.any(rho > 1 + 1e-12):
        raise DomainError("interpolation point outside the domain")
    pts = np.stack([r * np.cos(th), r * np.sin(th)], -1)
    theta, levels = mesh.theta_nodes, mesh.rho_levels
    nt, nl = len(theta), len(levels)
    ratio = levels[0] / levels[1]
    a = np.clip(np.searchsorted(theta, th, side="right") - 1, 0, nt - 2)
    with np.errstate(divide="ignore"):
        j = np.floor(-np.log(np.maximum(rho, 1e-300)) / math.log(ratio)).astype(np.int64)
    j = np.clip(j, 0, nl - 1)
    vals = values[mesh.dof_map]
    out = np.empty(len(x))
    center = len(mesh.all_points) - 1
    P = mesh.all_points

    def bary(p, tri):
        p0, p1, p2 = P[tri[0]], P[tri[1]], P[tri[2]]
        m = np.array([p1 - p0, p2 - p0]).T
        l12 = np.linalg.solve(m, p - p0)
        return np.array([1 - l12.sum(), l12[0], l12[1]])

    for q in range(len(x)):
        jj, aa = int(j[q]), int(a[q])
        if jj >= nl - 1:
            tris = [(center, (nl - 1) * nt + aa, (nl - 1) * nt + aa + 1)]
        else:
            o0, o1 = jj * nt + aa, jj * nt + aa + 1
            i0, i1 = (jj + 1) * nt + aa, (jj + 1) * nt + aa + 1
            tris = [(i0, o0, o1), (i0, o1, i1)]
        best, best_min = None, -np.inf
        for tri in tris:
            lam = bary(pts[q], tri)
            if lam.min() > best_min:
                best, best_min = (tri, lam), lam.min()
        tri, lam = best
        out[q] = float(lam @ vals[list(tri)])
    return out
