"""Newton solver, lambda-continuation and the fixed-point iteration.

The discrete problem is: find U with U = 0 on the boundary and

    F_i(U) = -Laplace_h(U_i) - 2 lam e^{U_i} + lam sum_{j != i} e^{U_j} = 0

at free nodes.  Newton works on the correction ``phi = U - W`` around the
ansatz ``W``; the discrete Laplacian of ``W`` is computed once, so the
round-off of ``K W`` (large, since ``W`` reaches ``|ln lambda|``-size values)
is a fixed bias instead of noise that would stall convergence.

Residual norms are sup-norms in t-form units, ``r^2 F`` (on a log-radial
mesh this is the residual of the system written in ``t = ln r``).  The
physical residual near the origin carries a factor ``1/r^2`` that no
double-precision iterate can push below 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np

from .errors import ConditioningError, DivergenceError, PreconditionError, StagnationError
from .geometry import Domain, regular_part_at_zero
from .linops import assemble_linearized
from .mesh import BlockOperator, Mesh, build_log_radial_mesh, build_sector_mesh, h1_norm, quad_radial
from .profiles import ParameterCascade, ansatz, ansatz_weights, delta_cascade

__all__ = [
    "SolveReport",
    "full_residual",
    "jacobian",
    "newton_step",
    "build_mesh",
    "solve_from_ansatz",
    "continuation",
    "fixed_point_iterate",
    "estimate_concentration",
    "EXP_CAP",
    "DEFAULT_TOL",
]

log = logging.getLogger(__name__)

EXP_CAP = 700.0
DEFAULT_TOL = 1e-10
MAX_HALVINGS = 20
# update norms below this (relative) are round-off and excluded from contraction estimates
CONTRACTION_FLOOR = 1e-10


def toda_matrix(k: int) -> np.ndarray:
    """Coefficients of the exponentials: 2 on the diagonal, -1 off it."""
    return 3.0 * np.eye(k) - np.ones((k, k))


def _guarded_exp(U: np.ndarray):
    clamped = U > EXP_CAP
    return np.exp(np.minimum(U, EXP_CAP)), bool(clamped.any())


def full_residual(U: np.ndarray, lam: float, mesh: Mesh, scaled: bool = False) -> np.ndarray:
    """Strong residual of the system at free nodes (zero on the boundary).

    With ``scaled=True`` the residual is multiplied by ``r^2`` (t-form units).
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    big = np.argwhere(U > EXP_CAP)
    if len(big):
        comp, node = (int(v) for v in big[0])
        raise DivergenceError(f"exp overflow: U[{comp}] = {U[comp, node]:.4g} at node {node}", node=node)
    free = mesh.free
    E = lam * np.exp(U[:, free])
    lap = np.array([mesh.stiffness[free] @ u for u in U]) / mesh.lumped[free]
    out = np.zeros_like(U)
    out[:, free] = lap - toda_matrix(len(U)) @ E
    if scaled:
        out *= mesh.residual_scale
    return out


def jacobian(U: np.ndarray, lam: float, mesh: Mesh) -> BlockOperator:
    """Derivative of :func:`full_residual` as a weak-form block operator.

    Row i: ``-Laplace(v_i) - 2 lam e^{U_i} v_i + lam sum_{j != i} e^{U_j} v_j``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    E, _ = _guarded_exp(U[:, mesh.free])
    C = toda_matrix(len(U))
    return BlockOperator(mesh, -C[:, :, None] * (lam * E)[None, :, :])


class _Problem:
    """Residual and Jacobian of the correction ``phi`` around a base field."""

    def __init__(self, mesh: Mesh, lam: float, base: np.ndarray):
        self.mesh = mesh
        self.lam = lam
        self.free = mesh.free
        self.base = np.asarray(base, dtype=float)[:, self.free]
        self.k = len(self.base)
        self.K = mesh.stiffness[self.free][:, self.free].tocsr()
        self.m = mesh.lumped[self.free]
        self.scale = mesh.residual_scale[self.free] / self.m
        self.KW = np.array([self.K @ w for w in self.base])
        self.C = toda_matrix(self.k)

    def weak(self, phi):
        E, clamped = _guarded_exp(self.base + phi)
        Kphi = np.array([self.K @ p for p in phi])
        return self.KW + Kphi - self.m * (self.C @ (self.lam * E)), clamped

    def tform(self, phi):
        G, clamped = self.weak(phi)
        return G * self.scale, clamped

    def norm(self, phi):
        F, clamped = self.tform(phi)
        return float(np.abs(F).max()), clamped

    def jacobian(self, phi) -> BlockOperator:
        E, _ = _guarded_exp(self.base + phi)
        return BlockOperator(self.mesh, -self.C[:, :, None] * (self.lam * E)[None, :, :])

    def step(self, phi, strict: bool = True):
        """One damped Newton step; returns (phi_new, info)."""
        r0, _ = self.norm(phi)
        G, _ = self.weak(phi)
        d = self.jacobian(phi).solve(G)
        s = 1.0
        for halvings in range(MAX_HALVINGS + 1):
            trial = phi - s * d
            r1, clamped = self.norm(trial)
            if not clamped and r1 < r0:
                return trial, {"residual_before": r0, "residual_after": r1, "damping": s, "halvings": halvings}
            s *= 0.5
        if strict:
            raise StagnationError(f"no damping in {MAX_HALVINGS} halvings reduced the residual {r0:.3e}")
        return phi, {"residual_before": r0, "residual_after": r0, "damping": 0.0, "halvings": MAX_HALVINGS}


def newton_step(U: np.ndarray, lam: float, mesh: Mesh, base: np.ndarray | None = None):
    """One damped Newton step ``U - s J^{-1} F`` with Armijo halving.

    ``base`` (default zero) is the field whose discrete Laplacian is
    precomputed; passing the ansatz gives the correction form.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    base = np.zeros_like(U) if base is None else np.asarray(base, dtype=float)
    prob = _Problem(mesh, lam, base)
    phi = (U - base)[:, mesh.free]
    phi_new, info = prob.step(phi)
    out = np.zeros_like(U)
    out[:, mesh.free] = base[:, mesh.free] + phi_new
    return out, info


# ----------------------------------------------------------------------------
# reports and mass extraction


@dataclass
class SolveReport:
    k: int
    lam: float
    iterations: int
    residual_history: list
    masses: list
    delta_fits: list
    cascade_deltas: list
    correction_h1: float
    converged: bool
    wall_time: float
    message: str = ""
    start: str = "cold"
    U: np.ndarray | None = field(default=None, repr=False)
    W: np.ndarray | None = field(default=None, repr=False)
    mesh: Mesh | None = field(default=None, repr=False)

    @property
    def mass_targets(self) -> list:
        return [2.0 ** (i + 2) * math.pi for i in range(self.k)]

    @property
    def mass_errors(self) -> list:
        """Relative deviations of the masses from ``2^{i+1} pi``."""
        return [(m - t) / t for m, t in zip(self.masses, self.mass_targets)]

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.inf


def estimate_concentration(density: np.ndarray, mesh: Mesh) -> float:
    """Half-mass radius of a nonnegative density.

    For the bubble density ``|x|^(alpha-2) e^{w}`` on R^2 the enclosed mass
    is ``4 pi alpha r^a / (d^a + r^a)``, so the half-mass radius is exactly
    ``delta``.  Interpolation is linear in ``ln r``.
    """
    order = np.argsort(mesh.radii, kind="stable")
    r = mesh.radii[order]
    w = (mesh.quad_weights * density)[order]
    cum = np.cumsum(w) - 0.5 * w
    total = float(w.sum())
    pos = r > 0
    return float(np.exp(np.interp(0.5 * total, cum[pos], np.log(r[pos]))))


def masses(U: np.ndarray, lam: float, mesh: Mesh) -> list:
    """``lam * int e^{u_i}`` per component."""
    return [lam * quad_radial(np.exp(np.minimum(u, EXP_CAP)), mesh) for u in np.atleast_2d(U)]


# ----------------------------------------------------------------------------
# solves


def build_mesh(cascade: ParameterCascade, domain: Domain, n: int = 1601, r_min_factor: float = 0.01,
               sector_h: float = 0.1) -> Mesh:
    """Mesh resolving the finest scale: ``r_min = min(r_min_factor * delta_1, 1e-10)``."""
    delta_1 = math.exp(min(cascade.log_deltas))
    if domain.kind == "disk":
        return build_log_radial_mesh(min(r_min_factor * delta_1, 1e-10), 1.0, n)
    return build_sector_mesh(domain, domain.symmetry_order, sector_h, r_min=r_min_factor * delta_1)


def _cascade_for(k: int, lam: float, domain: Domain, h_resolution: int = 40) -> ParameterCascade:
    if domain.kind == "disk":
        return delta_cascade(k, lam)
    reg = regular_part_at_zero(domain, h_resolution)
    return delta_cascade(k, lam, reg.h_values([2.0 ** (i + 1) for i in range(k)]))


def solve_from_ansatz(k: int, lam: float, domain: Domain | None = None, n: int = 1601,
                      r_min_factor: float = 0.01, tol: float = DEFAULT_TOL, max_iter: int = 60,
                      mesh: Mesh | None = None, U0: np.ndarray | None = None,
                      cascade: ParameterCascade | None = None, sector_h: float = 0.1) -> SolveReport:
    """Build cascade and ansatz, then run damped Newton to ``tol`` (t-form sup-norm).

    ``U0`` overrides the starting field (default: the ansatz).  After the
    tolerance is met one extra full step is taken, which costs little and
    drives the iterate to the round-off floor.
    """
    t0 = time.perf_counter()
    domain = Domain.disk(1) if domain is None else domain
    cascade = _cascade_for(k, lam, domain) if cascade is None else cascade
    if mesh is None:
        mesh = build_mesh(cascade, domain, n, r_min_factor, sector_h)
    W = ansatz(cascade, domain, mesh)
    prob = _Problem(mesh, lam, W)
    free = mesh.free
    phi = np.zeros((k, int(free.sum()))) if U0 is None else (np.asarray(U0) - W)[:, free]

    history, converged, message, iters = [], False, "", 0
    try:
        for iters in range(max_iter + 1):
            r, clamped = prob.norm(phi)
            history.append(r)
            if r <= tol and not clamped:
                polished, info = prob.step(phi, strict=False)
                if info["residual_after"] < r:
                    phi = polished
                    history.append(info["residual_after"])
                converged = True
                break
            if iters == max_iter:
                message = f"max_iter={max_iter} reached"
                break
            phi, _ = prob.step(phi)
    except (StagnationError, ConditioningError, DivergenceError) as exc:
        message = f"{type(exc).__name__}: {exc}"
        log.warning("k=%d lam=%.3g: %s", k, lam, message)

    U = W.copy()
    U[:, free] += phi
    corr = U - W
    dens = lam * np.exp(np.minimum(U, EXP_CAP))
    return SolveReport(
        k=k,
        lam=lam,
        iterations=iters,
        residual_history=history,
        masses=masses(U, lam, mesh),
        delta_fits=[estimate_concentration(d, mesh) for d in dens],
        cascade_deltas=cascade.deltas.tolist(),
        correction_h1=h1_norm(corr, mesh),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        message=message,
        U=U,
        W=W,
        mesh=mesh,
    )


def lambda_schedule(lam_start: float, lam_end: float, steps_per_decade: int) -> np.ndarray:
    """Geometric schedule including both endpoints (either direction)."""
    if not (lam_start > 0 and lam_end > 0):
        raise PreconditionError("lambda values must be positive")
    if steps_per_decade < 1:
        raise PreconditionError("steps_per_decade must be >= 1")
    decades = abs(math.log10(lam_end / lam_start))
    n = max(1, round(decades * steps_per_decade))
    return np.geomspace(lam_start, lam_end, n + 1)


def continuation(k: int, lam_start: float, lam_end: float, steps_per_decade: int = 4,
                 domain: Domain | None = None, n: int = 1601, r_min_factor: float = 0.01,
                 tol: float = DEFAULT_TOL, mesh: Mesh | None = None, lambdas=None) -> list:
    """Warm-started solves along a geometric lambda schedule.

    All solves share one mesh, sized for the smallest lambda.  The guess for
    each new lambda is ``U_prev + W_new - W_prev``; a non-converged warm
    start is retried from the ansatz.  Two consecutive failed steps end the
    sweep and the partial list is returned.
    """
    if lambdas is None:
        if not lam_start > lam_end > 0:
            raise PreconditionError("need lambda_start > lambda_end > 0")
        lambdas = lambda_schedule(lam_start, lam_end, steps_per_decade)
    lambdas = [float(x) for x in lambdas]
    domain = Domain.disk(1) if domain is None else domain
    if mesh is None:
        finest = _cascade_for(k, min(lambdas), domain)
        mesh = build_mesh(finest, domain, n, r_min_factor)
    reports, prev, failures = [], None, 0
    for lam in lambdas:
        rep = None
        if prev is not None and prev.converged:
            cas = _cascade_for(k, lam, domain)
            W_new = ansatz(cas, domain, mesh)
            guess = prev.U + W_new - prev.W
            rep = solve_from_ansatz(k, lam, domain, mesh=mesh, U0=guess, tol=tol, cascade=cas)
            rep.start = "warm"
        if rep is None or not rep.converged:
            cold = solve_from_ansatz(k, lam, domain, mesh=mesh, tol=tol)
            cold.start = "cold" if rep is None else "cold-fallback"
            rep = cold
        reports.append(rep)
        if rep.converged:
            failures = 0
            prev = rep
        else:
            failures += 1
            if failures >= 2:
                log.warning("continuation aborted at lambda=%.3g after two failures", lam)
                break
    return reports


# ----------------------------------------------------------------------------
# fixed-point iteration


def fixed_point_iterate(cascade: ParameterCascade, mesh: Mesh, max_iter: int = 200, tol: float = 1e-13,
                        domain: Domain | None = None, history: list | None = None):
    """Iterate ``phi <- L^{-1}(N(phi) + S(phi) - R)`` from ``phi = 0``.

    With ``V_j`` the bubble weights and ``E_j = lam e^{W_j}``:

    * ``S_i(phi) = (2 E_i - V_i) phi_i + sum_{j != i} (V_j / 2 - E_j) phi_j``
    * ``N_i(phi) = 2 E_i (e^{phi_i} - 1 - phi_i) - sum_{j != i} E_j (e^{phi_j} - 1 - phi_j)``
    * ``R = F(W)``, the discrete residual of the ansatz.

    A fixed point satisfies ``F(W + phi) = 0`` exactly (same discrete
    equations as Newton).  Returns ``(phi, contraction)`` where
    ``contraction`` is the largest ratio of successive update norms
    observed above the round-off floor.
    """
    domain = Domain.disk(1) if domain is None else domain
    k, lam = cascade.k, cascade.lam
    W = ansatz(cascade, domain, mesh)
    lin = assemble_linearized(cascade, mesh)
    free = mesh.free
    m = mesh.lumped[free]
    prob = _Problem(mesh, lam, W)
    R_weak, _ = prob.weak(np.zeros((k, int(free.sum()))))
    Wf = W[:, free]
    E = lam * np.exp(Wf)
    V = ansatz_weights(cascade, mesh.radii)[:, free]
    A = toda_matrix(k)  # 2 on diagonal, -1 off
    Ccoef = 1.5 * np.eye(k) - 0.5 * np.ones((k, k))  # 1 on diagonal, -1/2 off

    phi = np.zeros((k, int(free.sum())))
    prev_diff, contraction, bad = None, 0.0, 0
    for it in range(max_iter):
        ephi = np.expm1(phi) - phi
        S = np.einsum("ij,jn->in", A, E * phi) - np.einsum("ij,jn->in", Ccoef, V * phi)
        N = np.einsum("ij,jn->in", A, E * ephi)
        new = lin.operator.solve(m * (N + S) - R_weak)
        if not np.all(np.isfinite(new)) or new.max() + Wf.max() > EXP_CAP:
            raise DivergenceError(f"fixed-point iterate left the representable range at step {it}")
        diff = h1_norm(_pad(new - phi, mesh), mesh)
        size = max(1.0, h1_norm(_pad(new, mesh), mesh))
        phi = new
        if history is not None:
            history.append(diff)
        if prev_diff is not None and prev_diff > CONTRACTION_FLOOR * size:
            ratio = diff / prev_diff
            contraction = max(contraction, ratio)
            bad = bad + 1 if ratio >= 1.0 else 0
            if bad >= 5:
                raise DivergenceError(f"contraction factor >= 1 for 5 consecutive steps (last {ratio:.3g})")
        prev_diff = diff
        if diff <= tol * size:
            break
    else:
        log.warning("fixed-point iteration hit max_iter=%d", max_iter)
    return _pad(phi, mesh), contraction


def _pad(phi_free: np.ndarray, mesh: Mesh) -> np.ndarray:
    out = np.zeros((len(phi_free), mesh.n))
    out[:, mesh.free] = phi_free
    return out
