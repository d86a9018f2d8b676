import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from toda_bloom.errors import ConditioningError, DomainError, PreconditionError
from toda_bloom.geometry import Domain, regular_polygon, square
from toda_bloom.mesh import (
    BlockOperator,
    assemble_radial_laplacian,
    build_log_radial_mesh,
    build_sector_mesh,
    gregory_weights,
    h1_norm,
    lp_norm,
    quad_radial,
)


def poisson(mesh, f):
    free = mesh.free
    u = np.zeros(mesh.n)
    u[free] = spla.spsolve(mesh.stiffness[free][:, free].tocsc(), mesh.lumped[free] * f[free])
    return u


def square_torsion_center():
    """u(0) for -Laplace u = 1 on (-1,1)^2, u = 0 on the boundary (Fourier series)."""
    n = np.arange(1, 80, 2)
    return 0.5 - np.sum(16 * (-1.0) ** ((n - 1) // 2) / (math.pi**3 * n**3 * np.cosh(n * math.pi / 2)))


@pytest.mark.parametrize("n,order", [(40, 8), (100, 6), (17, 4)])
def test_gregory_weights_exact_on_polynomials(n, order):
    w = gregory_weights(n, order)
    x = np.arange(n, dtype=float)
    for d in range(order):
        assert np.dot(w, x**d) == pytest.approx((n - 1) ** (d + 1) / (d + 1), rel=1e-10)


def test_log_radial_quadrature():
    mesh = build_log_radial_mesh(1e-6, 1.0, 801)
    assert quad_radial(np.ones(mesh.n), mesh) == pytest.approx(math.pi, rel=1e-10)
    assert quad_radial(lambda r: r**2, mesh) == pytest.approx(math.pi / 2, rel=1e-10)
    wide = build_log_radial_mesh(1e-4, 1e4, 2001)
    val = quad_radial(lambda r: (1 + r**2) ** -2.0, wide, improper=True, tail_exponent=4.0)
    assert val == pytest.approx(math.pi, rel=1e-8)
    with pytest.raises(PreconditionError):
        quad_radial(np.ones(wide.n), wide, improper=True)
    with pytest.raises(PreconditionError):
        quad_radial(np.ones(wide.n), wide, improper=True, tail_exponent=2.0)


def test_norms_on_the_unit_disk():
    mesh = build_log_radial_mesh(1e-6, 1.0, 1601)
    for p in (1.0, 1.5, 2.0):
        assert lp_norm(np.ones(mesh.n), p, mesh) == pytest.approx(math.pi ** (1 / p), rel=1e-10)
    # energy of 1 - r^2 is 2 pi int (2r)^2 r dr = 2 pi
    assert h1_norm(1 - mesh.radii**2, mesh) == pytest.approx(math.sqrt(2 * math.pi), rel=5e-5)
    two = np.vstack([np.ones(mesh.n), 2 * np.ones(mesh.n)])
    assert lp_norm(two, 2.0, mesh) == pytest.approx(3 * math.sqrt(math.pi), rel=1e-10)
    with pytest.raises(DomainError):
        lp_norm(np.ones(mesh.n), 0.5, mesh)


def test_radial_laplacian_consistency():
    errs = []
    for n in (401, 801):
        mesh = build_log_radial_mesh(1e-4, 1.0, n)
        lap = assemble_radial_laplacian(mesh) @ (1 - mesh.radii**2)
        assert lap[-1] == 0.0
        errs.append(np.abs(lap[:-1] + 4).max())
    assert errs[1] < 1e-3
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_radial_poisson_solution_second_order():
    errs = []
    for n in (401, 801, 1601):
        mesh = build_log_radial_mesh(1e-4, 1.0, n)
        u = poisson(mesh, 4 * np.ones(mesh.n))
        errs.append(np.abs(u - (1 - mesh.radii**2)).max())
    assert errs[-1] < 2e-5
    rates = np.log2(np.asarray(errs[:-1]) / np.asarray(errs[1:]))
    assert np.all(rates > 1.9)


def test_log_radial_mesh_validation():
    with pytest.raises(DomainError):
        build_log_radial_mesh(0.0, 1.0, 100)
    with pytest.raises(DomainError):
        build_log_radial_mesh(1.0, 0.5, 100)
    with pytest.raises(DomainError):
        build_log_radial_mesh(1e-3, 1.0, 10)
    with pytest.raises(DomainError):
        build_log_radial_mesh(1e-200, 1.0, 100)


def test_refined_mesh():
    mesh = build_log_radial_mesh(1e-3, 1.0, 101)
    fine = mesh.refined()
    assert fine.n == 201
    np.testing.assert_allclose(fine.radii[::2], mesh.radii, rtol=1e-13)
    assert fine.dt == pytest.approx(mesh.dt / 2)


def test_sector_mesh_areas():
    for dom, k, area in [
        (square(), 2, 4.0),
        (regular_polygon(6), 3, 1.5 * math.sqrt(3)),
        (Domain.disk(), 1, None),
    ]:
        mesh = build_sector_mesh(dom, k, 0.05)
        total = quad_radial(np.ones(mesh.n), mesh)
        if area is None:
            # the inscribed polygon of the disk converges to pi
            assert total == pytest.approx(math.pi, rel=2e-3)
        else:
            assert total == pytest.approx(area, rel=1e-12)


def test_sector_laplacian_on_disk_interior():
    errs = []
    for h in (0.1, 0.05):
        mesh = build_sector_mesh(Domain.disk(), 1, h)
        lap = assemble_radial_laplacian(mesh) @ (1 - mesh.radii**2)
        band = mesh.free & (mesh.radii > 0.01)
        errs.append(np.abs(lap[band] + 4).max())
    assert errs[1] < 2e-3
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_sector_poisson_on_square_converges():
    oracle = square_torsion_center()
    errs = []
    for h in (0.1, 0.05):
        mesh = build_sector_mesh(square(), 2, h)
        u = poisson(mesh, np.ones(mesh.n))
        errs.append(abs(mesh.interpolate(u, np.zeros((1, 2)))[0] - oracle))
    assert errs[1] < 2e-3
    assert errs[1] < 0.5 * errs[0]


def test_sector_interpolation_and_extension():
    mesh = build_sector_mesh(regular_polygon(6), 3, 0.1)
    f = lambda p: 1.0 + 0.3 * p[..., 0] - 0.2 * p[..., 1]  # noqa: E731
    # linear fields are reproduced exactly inside the fundamental sector
    pts = np.array([[0.3, 0.1], [0.5, 0.4], [0.0, 0.0], [0.6, 0.05]])
    np.testing.assert_allclose(mesh.interpolate(f(mesh.points), pts), f(pts), atol=1e-12)
    pts_ext, vals = mesh.symmetric_extension(mesh.radii)
    assert len(pts_ext) == 6 * len(mesh.all_points)
    np.testing.assert_allclose(np.hypot(*pts_ext.T), vals, atol=1e-12)
    with pytest.raises(DomainError):
        mesh.interpolate(mesh.radii, np.array([[2.0, 0.0]]))
    with pytest.raises(DomainError):
        _ = mesh.t


def test_sector_mesh_validation():
    with pytest.raises(PreconditionError):
        build_sector_mesh(square(), 3, 0.1)
    with pytest.raises(DomainError):
        build_sector_mesh(square(), 2, 1.5)
    with pytest.raises(DomainError):
        build_sector_mesh(square(), 2, 0.1, r_min=2.0)


def test_block_operator_roundtrip():
    mesh = build_log_radial_mesh(1e-3, 1.0, 201)
    nf = int(mesh.free.sum())
    rng = np.random.default_rng(3)
    coupling = rng.uniform(0.0, 1.0, (2, 2, nf))
    op = BlockOperator(mesh, coupling)
    phi = rng.standard_normal((2, nf))
    np.testing.assert_allclose(op.solve(op.apply(phi)), phi, rtol=1e-8, atol=1e-10)
    # strong form: -Laplace(phi_i) + sum_j c_ij phi_j at interior nodes
    full = np.zeros((2, mesh.n))
    full[:, mesh.free] = phi
    lap = assemble_radial_laplacian(mesh)
    strong = np.array([-(lap @ full[i])[mesh.free] + (coupling[i] * phi).sum(0) for i in range(2)])
    np.testing.assert_allclose(op.apply_strong(phi), strong, rtol=1e-10, atol=1e-8)


def test_block_operator_singular():
    mesh = build_log_radial_mesh(1e-3, 1.0, 101)
    nf = int(mesh.free.sum())
    coupling = np.full((1, 1, nf), np.nan)
    with pytest.raises(ConditioningError):
        BlockOperator(mesh, coupling).factorization
