"""Bubbles, the (alpha, delta) cascade, projections, the ansatz and Theta.

The bubble of exponent alpha and scale delta is

    w(r) = ln(2 alpha^2 delta^alpha / (delta^alpha + r^alpha)^2),

a solution of ``-Laplace(w) = |x|^(alpha-2) e^w`` on R^2 with total mass
``4 pi alpha``.  Everything below works with ``ln delta`` rather than
``delta``: at k = 3 the cascade already produces ``delta_1^alpha_1`` far
below the double-precision range for moderate lambda.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import CascadeOverflowError, DomainError, PreconditionError

__all__ = [
    "MAX_K",
    "ParameterCascade",
    "Bubble",
    "AnnulusSystem",
    "alpha_cascade",
    "delta_cascade",
    "cascade_exponents",
    "scale_separation_threshold",
    "bubble_value",
    "bubble_weight",
    "bubble_mass",
    "project_bubble_disk",
    "project_bubble_numeric",
    "ansatz",
    "ansatz_weights",
    "ansatz_residual",
    "ansatz_residual_disk",
    "theta",
    "annuli",
]

MAX_K = 31


def alpha_cascade(k: int) -> list:
    """Exponents ``[2, 4, ..., 2^k]``, the unique solution of
    ``alpha_j - 2 = sum_{i<j} alpha_i`` with ``alpha_1 = 2``."""
    if int(k) != k or not 1 <= k <= MAX_K:
        raise DomainError(f"k = {k} outside [1, {MAX_K}]")
    alphas = [2.0]
    for _ in range(k - 1):
        alphas.append(2.0 * alphas[-1])
    return alphas


def cascade_exponents(k: int) -> list:
    """Exponents ``2^(k - 2i)`` in ``delta_i = d_i lambda^(2^(k - 2i))``."""
    return [2.0 ** (k - 2 * i) for i in range(1, k + 1)]


@dataclass(frozen=True)
class ParameterCascade:
    k: int
    lam: float
    alphas: tuple
    log_deltas: tuple
    h_values: tuple

    @property
    def deltas(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_deltas))

    @property
    def log_d_constants(self) -> np.ndarray:
        return np.asarray(self.log_deltas) - np.asarray(cascade_exponents(self.k)) * math.log(self.lam)

    @property
    def d_constants(self) -> np.ndarray:
        return np.exp(self.log_d_constants)

    def bubble(self, i: int) -> "Bubble":
        """Bubble of component ``i`` (0-based)."""
        return Bubble(self.alphas[i], log_delta=self.log_deltas[i])

    def balance_residuals(self) -> np.ndarray:
        """Left-hand sides of the balancing equations; zero for a valid cascade."""
        a = np.asarray(self.alphas)
        ld = np.asarray(self.log_deltas)
        h = np.asarray(self.h_values)
        out = np.empty(self.k)
        for j in range(self.k):
            out[j] = (
                -a[j] * ld[j]
                + np.dot(a[j + 1:], ld[j + 1:])
                - math.log(2 * a[j] ** 2)
                + h[j]
                - 0.5 * (h.sum() - h[j])
                + math.log(2 * self.lam)
            )
        return out

    def is_separated(self) -> bool:
        ld = np.asarray(self.log_deltas)
        return bool(np.all(np.diff(ld) > 0))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "alphas": list(self.alphas),
            "deltas": self.deltas.tolist(),
            "log_deltas": list(self.log_deltas),
            "d_constants": self.d_constants.tolist(),
            "h_values": list(self.h_values),
        }


def delta_cascade(k: int, lam: float, h_values=None) -> ParameterCascade:
    """Concentration scales from the balancing equations.

    ``alpha_k ln delta_k = c_k + ln lambda`` and, going down,
    ``alpha_j ln delta_j = c_j + sum_{i>j} alpha_i ln delta_i + ln lambda``
    with ``c_j = h_j(0) - (1/2) sum_{i != j} h_i(0) - 2 ln alpha_j``.
    """
    alphas = alpha_cascade(k)
    if not lam > 0 or not math.isfinite(lam):
        raise DomainError(f"lambda must be positive and finite, got {lam}")
    h = np.zeros(k) if h_values is None else np.asarray(h_values, dtype=float)
    if h.shape != (k,):
        raise DomainError(f"need {k} h-values, got {h.shape}")
    log_lam = math.log(lam)
    a = np.asarray(alphas)
    ld = np.zeros(k)
    for j in range(k - 1, -1, -1):
        with np.errstate(over="ignore", invalid="ignore"):
            c = h[j] - 0.5 * (h.sum() - h[j]) - 2 * math.log(a[j])
            rhs = c + np.dot(a[j + 1:], ld[j + 1:]) + log_lam
            ld[j] = rhs / a[j]
        if not math.isfinite(ld[j]):
            raise CascadeOverflowError(f"ln delta_{j + 1} is not representable", index=j + 1)
    return ParameterCascade(k, float(lam), tuple(alphas), tuple(ld.tolist()), tuple(h.tolist()))


def scale_separation_threshold(k: int, h_values=None) -> float:
    """Largest lambda below which ``delta_1 < ... < delta_k`` holds.

    ``ln(delta_i / delta_{i+1})`` is affine in ``ln lambda`` with positive
    slope, so the threshold is the smallest of the k - 1 root crossings.
    """
    if k == 1:
        return math.inf
    ref = delta_cascade(k, 1.0, h_values)
    ld = np.asarray(ref.log_deltas)  # equals ln d_i at lambda = 1
    s = np.asarray(cascade_exponents(k))
    roots = [(ld[i + 1] - ld[i]) / (s[i] - s[i + 1]) for i in range(k - 1)]
    return float(math.exp(min(roots)))


@dataclass(frozen=True)
class Bubble:
    alpha: float
    delta: float | None = None
    log_delta: float | None = None

    def __post_init__(self):
        if self.alpha < 2:
            raise DomainError(f"alpha = {self.alpha} < 2")
        if self.log_delta is None:
            if self.delta is None or not self.delta > 0:
                raise DomainError("bubble needs a positive delta")
            object.__setattr__(self, "log_delta", math.log(self.delta))
        elif self.delta is None:
            object.__setattr__(self, "delta", math.exp(self.log_delta))

    @property
    def log_delta_alpha(self) -> float:
        return self.alpha * self.log_delta


def _log_den(b: Bubble, r) -> np.ndarray:
    """ln(delta^alpha + r^alpha), stable for r = 0 and extreme scales."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        lr = b.alpha * np.log(r)
    return np.logaddexp(b.log_delta_alpha, lr)


def bubble_value(b: Bubble, r) -> np.ndarray:
    """``w(r) = ln(2 alpha^2 delta^alpha / (delta^alpha + r^alpha)^2)``."""
    return math.log(2 * b.alpha**2) + b.log_delta_alpha - 2 * _log_den(b, r)


def bubble_weight(b: Bubble, r) -> np.ndarray:
    """``|x|^(alpha - 2) e^{w}``, the right-hand side of the bubble equation."""
    r = np.asarray(r, dtype=float)
    expo = bubble_value(b, r)
    if b.alpha != 2:
        with np.errstate(divide="ignore"):
            expo = expo + (b.alpha - 2) * np.log(r)
    return np.exp(expo)


def bubble_mass(alpha: float, delta: float = 1.0, n: int = 4001, span: float = 1e8) -> float:
    """``int_{R^2} |y|^(alpha-2) e^{w}`` by log-radial quadrature with an analytic tail.

    The mesh covers ``[delta / s, delta * s]`` with ``s = span^(2/alpha)``,
    so the neglected core and tail are both ``O(1/span^2)`` relative.
    """
    from .mesh import build_log_radial_mesh, quad_radial

    s = span ** (2.0 / alpha)
    mesh = build_log_radial_mesh(delta / s, delta * s, n)
    b = Bubble(alpha, delta)
    return quad_radial(bubble_weight(b, mesh.radii), mesh, improper=True, tail_exponent=alpha + 2.0)


def project_bubble_disk(b: Bubble, r) -> np.ndarray:
    """Exact projection on the unit disk, ``2 ln((1 + d^a) / (d^a + r^a))``."""
    r = np.asarray(r, dtype=float)
    if np.any(r > 1.0):
        raise DomainError("projection on the unit disk needs r <= 1")
    return 2.0 * (np.logaddexp(0.0, b.log_delta_alpha) - _log_den(b, r))


def project_bubble_numeric(domain, b: Bubble, mesh) -> np.ndarray:
    """Discrete projection: ``K Pw = m V`` at free nodes, ``Pw = 0`` on the boundary."""
    import scipy.sparse.linalg as spla

    inner = mesh.r_min if mesh.kind == "log_radial" else float(np.min(mesh.radii[mesh.radii > 0]))
    if b.delta < 10 * inner:
        raise PreconditionError(
            f"delta = {b.delta:.3g} unresolved: need innermost mesh radius <= {b.delta / 10:.3g}"
        )
    if mesh.kind == "log_radial" and domain.kind != "disk":
        raise PreconditionError("log-radial meshes discretize the unit disk only")
    free = mesh.free
    rhs = mesh.lumped[free] * bubble_weight(b, mesh.radii[free])
    out = np.zeros(mesh.n)
    out[free] = spla.spsolve(mesh.stiffness[free][:, free].tocsc(), rhs)
    return out


def _projections(cascade: ParameterCascade, domain, mesh) -> np.ndarray:
    if domain.kind == "disk":
        r = np.minimum(mesh.radii, 1.0)
        return np.array([project_bubble_disk(cascade.bubble(i), r) for i in range(cascade.k)])
    return np.array([project_bubble_numeric(domain, cascade.bubble(i), mesh) for i in range(cascade.k)])


def ansatz(cascade: ParameterCascade, domain, mesh) -> np.ndarray:
    """``W^i = Pw_i - (1/2) sum_{j != i} Pw_j``, shape (k, n)."""
    P = _projections(cascade, domain, mesh)
    if domain.kind == "disk" and np.any(cascade.h_values):
        raise PreconditionError("a disk cascade must have zero h-values")
    return 1.5 * P - 0.5 * P.sum(axis=0)


def ansatz_weights(cascade: ParameterCascade, r) -> np.ndarray:
    """Bubble weights ``V_j = |x|^(alpha_j - 2) e^{w_j}`` at radii ``r``, shape (k, n)."""
    return np.array([bubble_weight(cascade.bubble(j), r) for j in range(cascade.k)])


def ansatz_residual(cascade: ParameterCascade, W: np.ndarray, r) -> np.ndarray:
    """Pointwise error of the ansatz using its exact Laplacian.

    ``-Laplace(W^i) = V_i - (1/2) sum_{j != i} V_j`` holds on any domain,
    so ``R^i = V_i - (1/2) sum_{j != i} V_j - 2 lam e^{W^i} + lam sum_{j != i} e^{W^j}``
    needs no discrete Laplacian.
    """
    V = ansatz_weights(cascade, r)
    E = cascade.lam * np.exp(np.asarray(W))
    return (1.5 * V - 0.5 * V.sum(0)) - (3.0 * E - E.sum(0))


def ansatz_residual_disk(cascade: ParameterCascade, r) -> np.ndarray:
    """Cancellation-free form of :func:`ansatz_residual` on the unit disk.

    Since ``2 lam e^{W^j} = V_j e^{Theta_j}``, the residual is
    ``-V_i expm1(Theta_i) + (1/2) sum_{j != i} V_j expm1(Theta_j)``; the
    terms are small where ``V`` is large, so no digits are lost to
    cancellation even for tiny lambda.
    """
    r = np.asarray(r, dtype=float)
    V = ansatz_weights(cascade, r)
    T = np.empty_like(V)
    for j in range(cascade.k):
        with np.errstate(invalid="ignore"):
            g = V[j] * np.expm1(theta(cascade, j, r * math.exp(-cascade.log_deltas[j])))
        T[j] = np.where(V[j] > 0, g, 0.0)
    return -(1.5 * T - 0.5 * T.sum(0))


def theta(cascade: ParameterCascade, j: int, y) -> np.ndarray:
    """Interaction term of component ``j`` (0-based) at rescaled radius ``|y|``.

    Unit disk only (exact projections).  At ``y = 0`` with ``alpha_j > 2``
    the value is ``+inf``; every consumer integrates it against
    ``|y|^(alpha_j - 2)``.
    """
    if np.any(cascade.h_values):
        raise DomainError("theta is evaluated with exact disk projections; h-values must vanish")
    y = np.abs(np.asarray(y, dtype=float))
    ld_j = cascade.log_deltas[j]
    with np.errstate(divide="ignore"):
        lx = np.log(y) + ld_j
    if np.any(lx > 1e-12):
        raise DomainError("delta_j y must lie in the unit disk")
    x = np.exp(np.minimum(lx, 0.0))
    bj = cascade.bubble(j)
    # Pw_j - w_j is constant on the disk: 2 ln(1 + d^a) - ln(2 a^2 d^a)
    out = 2 * np.logaddexp(0.0, bj.log_delta_alpha) - math.log(2 * bj.alpha**2) - bj.log_delta_alpha
    out = out + np.zeros_like(x)
    for i in range(cascade.k):
        if i != j:
            out = out - 0.5 * project_bubble_disk(cascade.bubble(i), x)
    with np.errstate(invalid="ignore"):
        log_term = np.where(np.isneginf(lx), -np.inf, lx)
        if bj.alpha > 2:
            out = out - (bj.alpha - 2) * log_term
    return out + math.log(2 * cascade.lam)


@dataclass(frozen=True)
class AnnulusSystem:
    """Break radii ``sqrt(delta_i delta_{i+1})`` splitting the domain into A_1..A_k."""

    radii: tuple
    log_deltas: tuple

    @property
    def k(self) -> int:
        return len(self.radii) + 1

    def classify(self, x) -> np.ndarray:
        """1-based annulus index of points (radii or 2D points)."""
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1]) if x.ndim >= 1 and x.shape[-1:] == (2,) else np.abs(x)
        return np.searchsorted(np.asarray(self.radii), r, side="right") + 1

    def rescaled_bounds(self, j: int) -> tuple:
        """Bounds of ``A_j / delta_j`` (0-based j); upper bound inf means the domain edge."""
        ld = self.log_deltas[j]
        lo = 0.0 if j == 0 else self.radii[j - 1] / math.exp(ld)
        hi = math.inf if j == len(self.radii) else self.radii[j] / math.exp(ld)
        return lo, hi


def annuli(cascade: ParameterCascade) -> AnnulusSystem:
    ld = np.asarray(cascade.log_deltas)
    if np.any(np.diff(ld) <= 0):
        raise PreconditionError("scales are not separated (need delta_1 < ... < delta_k)")
    radii = tuple(float(np.exp(0.5 * (ld[i] + ld[i + 1]))) for i in range(cascade.k - 1))
    return AnnulusSystem(radii, tuple(ld.tolist()))
