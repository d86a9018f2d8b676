"""Linearization around the bubbles, kernel checks and moment integrals.

The linearized operator acts on a k-tuple of fields as

    L^i(phi) = -Laplace(phi_i) - V_i phi_i + (1/2) sum_{j != i} V_j phi_j,

with ``V_j = |x|^(alpha_j - 2) e^{w_j}`` the bubble weights.  It is stored
as a :class:`~toda_bloom.mesh.BlockOperator` whose coupling matrix is
``-V_i`` on the diagonal and ``+V_j / 2`` off it.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import PreconditionError
from .mesh import BlockOperator, Mesh, build_log_radial_mesh, h1_norm, lp_norm, quad_radial
from .profiles import Bubble, ParameterCascade, ansatz_weights, bubble_weight

__all__ = [
    "LinearizedSystem",
    "assemble_linearized",
    "solve_linearized",
    "kernel_element",
    "kernel_residual",
    "kernel_symmetry",
    "moment_integrals",
    "projected_kernel_disk",
    "weighted_l2_norm",
    "weighted_h_norm",
    "sigma_diagnostic",
]


def _innermost_radius(mesh: Mesh) -> float:
    r = mesh.radii
    return float(np.min(r[r > 0]))


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    cascade: ParameterCascade
    mesh: Mesh
    weights: np.ndarray  # V_j at every node, shape (k, n)
    operator: BlockOperator

    @property
    def k(self) -> int:
        return self.cascade.k

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """Strong-form action on a (k, n) field; boundary rows are zero."""
        free = self.mesh.free
        out = np.zeros_like(np.asarray(phi, dtype=float))
        out[:, free] = self.operator.apply_strong(np.asarray(phi)[:, free])
        return out

    def solve(self, psi: np.ndarray) -> np.ndarray:
        """Solve ``L phi = psi`` with ``phi = 0`` on the boundary."""
        free = self.mesh.free
        psi = np.atleast_2d(np.asarray(psi, dtype=float))
        phi = np.zeros((self.k, self.mesh.n))
        phi[:, free] = self.operator.solve(psi[:, free] * self.mesh.lumped[free])
        return phi


def coupling_matrix(k: int) -> np.ndarray:
    """Coefficients of the linearization in units of ``V_j``: 1 on the diagonal, -1/2 off it."""
    return 1.5 * np.eye(k) - 0.5 * np.ones((k, k))


def assemble_linearized(cascade: ParameterCascade, mesh: Mesh) -> LinearizedSystem:
    delta_min = float(np.exp(min(cascade.log_deltas)))
    if delta_min < 10 * _innermost_radius(mesh):
        raise PreconditionError(
            f"delta_1 = {delta_min:.3g} unresolved: innermost mesh radius must be <= {delta_min / 10:.3g}"
        )
    V = ansatz_weights(cascade, mesh.radii)
    Vf = V[:, mesh.free]
    C = coupling_matrix(cascade.k)
    coupling = -C[:, :, None] * Vf[None, :, :]
    return LinearizedSystem(cascade, mesh, V, BlockOperator(mesh, coupling))


def solve_linearized(system: LinearizedSystem, psi: np.ndarray, p: float = 2.0):
    """Return ``(phi, ratio)`` with ``ratio = ||phi||_{H^1_0} / ||psi||_p``."""
    phi = system.solve(psi)
    denom = lp_norm(psi, p, system.mesh)
    ratio = h1_norm(phi, system.mesh) / denom if denom > 0 else math.nan
    return phi, ratio


# ----------------------------------------------------------------------------
# kernel of the single-bubble operator


def kernel_element(alpha: float, delta: float, r) -> np.ndarray:
    """``Z(r) = (delta^alpha - r^alpha) / (delta^alpha + r^alpha)``, written as ``tanh``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        s = alpha * (np.log(r) - math.log(delta))
    return -np.tanh(0.5 * s)


def kernel_residual(alpha: float, delta: float = 1.0, mesh: Mesh | None = None) -> float:
    """Max interior residual of ``(-Laplace - V) Z`` on a mesh.

    ``V = 2 alpha^2 delta^alpha |x|^(alpha-2) / (delta^alpha + |x|^alpha)^2``.
    The residual is reported in t-form units (multiplied by ``r^2``), where
    the truncation error is uniform across scales.  Only interior nodes are
    examined (the first and last are excluded).
    """
    if mesh is None:
        mesh = build_log_radial_mesh(1e-4 * delta, 1e4 * delta, 801)
    r = mesh.radii
    Z = kernel_element(alpha, delta, r)
    V = bubble_weight(Bubble(alpha, delta), r)
    KZ = mesh.stiffness @ Z
    res = (KZ / mesh.lumped - V * Z) * mesh.residual_scale
    return float(np.max(np.abs(res[1:-1])))


def _phi_angular(alpha: float, which: int, pts: np.ndarray) -> np.ndarray:
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    amp = r ** (alpha / 2) / (1 + r**alpha)
    return amp * (np.cos(alpha * th / 2) if which == 1 else np.sin(alpha * th / 2))


def kernel_symmetry(alpha: float, k: int, n_samples: int = 200, seed: int = 0, tol: float = 1e-10) -> dict:
    """Whether the kernel functions are invariant under rotation by ``pi/k``.

    ``phi_0`` is radial.  ``phi_1, phi_2 = |y|^(a/2) (cos, sin)(a theta / 2) / (1 + |y|^a)``
    are invariant exactly when ``alpha / (4k)`` is an integer; the check is
    made numerically on seeded random points.
    """
    rng = np.random.default_rng(seed)
    rr = rng.uniform(0.1, 3.0, n_samples)
    th = rng.uniform(0.0, 2 * math.pi, n_samples)
    pts = np.stack([rr * np.cos(th), rr * np.sin(th)], -1)
    c, s = math.cos(math.pi / k), math.sin(math.pi / k)
    rot = pts @ np.array([[c, s], [-s, c]])
    out = {"phi0": bool(np.allclose(kernel_element(alpha, 1.0, np.hypot(*rot.T)),
                                    kernel_element(alpha, 1.0, rr), atol=tol, rtol=0))}
    for which in (1, 2):
        diff = np.abs(_phi_angular(alpha, which, rot) - _phi_angular(alpha, which, pts))
        out[f"phi{which}"] = bool(diff.max() <= tol)
    return out


def moment_integrals(alpha: float, n: int = 4001, r_span: float = 1e6) -> tuple:
    """The three integrals of ``V Z`` against ``1``, ``ln((1+|y|^a)^2)`` and ``ln|y|``.

    ``V`` and ``Z`` are taken at ``delta = 1``.  The integrand decays like
    ``|y|^(-alpha-2)`` up to logarithms; the mesh reaches far enough that
    the analytic power-law tail is below 1e-9 of the result.
    """
    if alpha < 2:
        raise PreconditionError(f"alpha = {alpha} < 2")
    span = r_span ** (2.0 / alpha)
    mesh = build_log_radial_mesh(1.0 / span, span, n)
    r = mesh.radii
    vz = bubble_weight(Bubble(alpha, 1.0), r) * kernel_element(alpha, 1.0, r)
    lr = np.log(r)
    g2 = 2.0 * np.logaddexp(0.0, alpha * lr)
    tail = alpha + 2.0
    return (
        quad_radial(vz, mesh, improper=True, tail_exponent=tail),
        quad_radial(vz * g2, mesh, improper=True, tail_exponent=tail),
        quad_radial(vz * lr, mesh, improper=True, tail_exponent=tail),
    )


def projected_kernel_disk(alpha: float, delta: float, r) -> np.ndarray:
    """Exact projection on the unit disk: ``PZ = Z + (1 - d^a) / (1 + d^a)``."""
    da = delta**alpha
    return kernel_element(alpha, delta, r) + (1 - da) / (1 + da)


# ----------------------------------------------------------------------------
# weighted norms and the sigma diagnostic


def _weight(alpha: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return r ** (alpha - 2) / (1 + r**alpha) ** 2


def weighted_l2_norm(u: np.ndarray, alpha: float, mesh: Mesh) -> float:
    """``|| |y|^((a-2)/2) u / (1 + |y|^a) ||_{L^2}`` over the meshed region."""
    return math.sqrt(max(quad_radial(_weight(alpha, mesh.radii) * np.asarray(u) ** 2, mesh), 0.0))


def weighted_h_norm(u: np.ndarray, alpha: float, mesh: Mesh) -> float:
    """Dirichlet energy plus the weighted L^2 part, square-rooted."""
    return math.hypot(h1_norm(u, mesh), weighted_l2_norm(u, alpha, mesh))


def sigma_diagnostic(cascade: ParameterCascade, phi: np.ndarray, mesh: Mesh) -> np.ndarray:
    """``sigma_i = ln(lambda) * int V_i phi_i`` for a correction ``phi``.

    This equals the rescaled integral of the bubble weight against
    ``phi_i(delta_i y)``.
    """
    V = ansatz_weights(cascade, mesh.radii)
    return np.array([math.log(cascade.lam) * quad_radial(V[i] * phi[i], mesh) for i in range(cascade.k)])
