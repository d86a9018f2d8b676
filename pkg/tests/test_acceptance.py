"""The eleven acceptance criteria, each at its stated tolerance and time budget."""

import math
import time

import numpy as np

from toda_bloom.cli import main
from toda_bloom.diagnostics import lambda_grid, residual_scaling_study, theta_study
from toda_bloom.geometry import Domain
from toda_bloom.linops import kernel_residual, moment_integrals
from toda_bloom.mesh import build_log_radial_mesh
from toda_bloom.profiles import ansatz, bubble_mass, delta_cascade
from toda_bloom.solver import (
    build_mesh,
    continuation,
    fixed_point_iterate,
    full_residual,
    jacobian,
    solve_from_ansatz,
)

CASCADE_LAMBDAS = [10.0**-e for e in range(2, 9)]


def test_criterion_01_bubble_mass(record):
    t0 = time.perf_counter()
    errs = {a: abs(bubble_mass(a) - 4 * math.pi * a) / (4 * math.pi * a) for a in (2, 4, 8)}
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-6 and dt < 1.0
    record(1, ok, f"max rel error {max(errs.values()):.2e} (tol 1e-6), {dt:.2f}s")
    assert ok


def test_criterion_02_moment_integrals(record):
    t0 = time.perf_counter()
    worst = 0.0
    for a in (2.0, 4.0, 8.0):
        for v, e in zip(moment_integrals(a), (0.0, -4 * math.pi * a, -4 * math.pi)):
            worst = max(worst, abs(v - e) / (1 + abs(e)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 1.0
    record(2, ok, f"max scaled error {worst:.2e} (tol 1e-6), {dt:.2f}s")
    assert ok


def test_criterion_03_cascade(record):
    t0 = time.perf_counter()
    worst_balance, worst_slope, raw = 0.0, 0.0, []
    for k in (1, 2, 3):
        for lam in CASCADE_LAMBDAS:
            worst_balance = max(worst_balance, float(np.abs(delta_cascade(k, lam).balance_residuals()).max()))
        # exponent at lambda = 1e-8 from the local log-log slope of delta_i(lambda)
        lo, hi = delta_cascade(k, 1e-8 / 1.01), delta_cascade(k, 1e-8 * 1.01)
        slopes = (np.asarray(hi.log_deltas) - np.asarray(lo.log_deltas)) / math.log(1.01**2)
        theory = np.asarray([2.0 ** (k - 2 * i) for i in range(1, k + 1)])
        worst_slope = max(worst_slope, float(np.abs(slopes - theory).max()))
        ratios = np.asarray(delta_cascade(k, 1e-8).log_deltas) / math.log(1e-8)
        raw.append(float(np.abs(ratios - theory).max()))
    dt = time.perf_counter() - t0
    ok = worst_balance <= 1e-12 and worst_slope <= 1e-3 and dt < 1.0
    record(
        3, ok,
        f"balance {worst_balance:.1e} (tol 1e-12), exponent error {worst_slope:.1e} (tol 1e-3); "
        f"raw ln(delta)/ln(lambda) gap {max(raw):.3g}, {dt:.2f}s",
    )
    assert ok


def test_criterion_04_theta(record):
    t0 = time.perf_counter()
    s1 = theta_study(1, [1e-3, 1e-4, 1e-5])
    closed = max(
        abs(v - 2 * math.log1p(lam / 4)) for lam, v in zip([1e-3, 1e-4, 1e-5], s1.values("theta_sup", 1))
    )
    s2 = theta_study(2, [1e-3, 1e-4, 1e-5])
    spread = s2.values("normalized_sup_spread")[0]
    dt = time.perf_counter() - t0
    ok = closed <= 1e-12 and spread < 2.0 and dt < 10.0
    record(4, ok, f"k=1 closed-form error {closed:.1e}, k=2 normalized spread {spread:.3f} (< 2), {dt:.2f}s")
    assert ok


def test_criterion_05_residual_scaling(record):
    t0 = time.perf_counter()
    lambdas = lambda_grid(1e-2, 1e-6, 3)
    parts, ok = [], True
    for k in (1, 2):
        study = residual_scaling_study(k, p=1.0, lambdas=lambdas, n=1601)
        slope, theory = study.fits[0]["slope"], 1.0 / 2**k
        ok &= abs(slope - theory) <= 0.1 * theory
        parts.append(f"k={k} slope {slope:.4f} vs {theory:g}")
    dt = time.perf_counter() - t0
    ok &= dt < 60.0
    record(5, ok, ", ".join(parts) + f" (tol 10%), {dt:.2f}s")
    assert ok


def test_criterion_06_kernel_residual(record):
    t0 = time.perf_counter()
    orders = []
    for a in (2.0, 4.0):
        res = [kernel_residual(a, 1.0, build_log_radial_mesh(1e-4, 1e4, n)) for n in (401, 801, 1601)]
        orders += [math.log2(res[i] / res[i + 1]) for i in range(2)]
    dt = time.perf_counter() - t0
    ok = min(orders) >= 1.9 and dt < 30.0
    record(6, ok, f"min observed order {min(orders):.3f} (>= 1.9), {dt:.2f}s")
    assert ok


def test_criterion_07_jacobian(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in (1, 2, 3):
        c = delta_cascade(k, 1e-4)
        mesh = build_mesh(c, Domain.disk(), n=801)
        U = ansatz(c, Domain.disk(), mesh)
        J = jacobian(U, c.lam, mesh)
        free = mesh.free
        scale = mesh.residual_scale[free]
        for _ in range(10):
            v = np.zeros_like(U)
            v[:, free] = rng.standard_normal((k, int(free.sum())))
            h = 1e-6
            fd = (full_residual(U + h * v, c.lam, mesh, True) - full_residual(U - h * v, c.lam, mesh, True)) / (2 * h)
            Jv = J.apply_strong(v[:, free]) * scale
            worst = max(worst, float(np.abs(fd[:, free] - Jv).max() / np.abs(Jv).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 30.0
    record(7, ok, f"max relative mismatch {worst:.2e} over 30 directions (tol 1e-6), {dt:.2f}s")
    assert ok


def test_criterion_08_mass_quantization(record):
    t0 = time.perf_counter()
    r1 = solve_from_ansatz(1, 1e-4)
    r2 = solve_from_ansatz(2, 1e-5)
    e1 = max(abs(e) for e in r1.mass_errors)
    e2 = max(abs(e) for e in r2.mass_errors)
    monotone = True
    for k, hi, lo in ((1, 1e-2, 1e-4), (2, 1e-3, 1e-5)):
        reps = continuation(k, hi, lo, steps_per_decade=2)
        monotone &= all(r.converged for r in reps) and len(reps) == 5
        for i in range(k):
            errs = [abs(r.mass_errors[i]) for r in reps]
            monotone &= all(b < a for a, b in zip(errs, errs[1:]))
    dt = time.perf_counter() - t0
    ok = r1.converged and r2.converged and e1 <= 0.05 and e2 <= 0.05 and monotone and dt < 300.0
    record(8, ok, f"k=1 error {e1:.2e}, k=2 error {e2:.2e} (tol 5%), decreasing along continuation: {monotone}, {dt:.2f}s")
    assert ok


def test_criterion_09_k3_conservation(record):
    t0 = time.perf_counter()
    rep = solve_from_ansatz(3, 1e-4)
    total = float(np.abs(rep.U.sum(axis=0)).max())
    dt = time.perf_counter() - t0
    ok = rep.converged and total <= 1e-8 and dt < 120.0
    record(9, ok, f"sup |u1+u2+u3| = {total:.2e} (tol 1e-8), {dt:.2f}s")
    assert ok


def test_criterion_10_fixed_point(record):
    t0 = time.perf_counter()
    c = delta_cascade(1, 1e-4)
    mesh = build_mesh(c, Domain.disk())
    phi, rate = fixed_point_iterate(c, mesh)
    rep = solve_from_ansatz(1, 1e-4, mesh=mesh)
    gap = float(np.abs(phi - (rep.U - rep.W)).max())
    dt = time.perf_counter() - t0
    ok = rep.converged and rate < 1.0 and gap <= 1e-8 and dt < 60.0
    record(10, ok, f"contraction {rate:.2e} (< 1), distance to Newton {gap:.1e} (tol 1e-8), {dt:.2f}s")
    assert ok


def test_criterion_11_determinism(record, tmp_path):
    t0 = time.perf_counter()
    runs = [
        ("theta-study", "--k", "2"),
        ("residual-scaling", "--k", "2", "--lambda-range", "1e-2:1e-4"),
        ("mass-study", "--k", "1", "--lambda-range", "1e-2:1e-3"),
        ("solve", "--k", "2", "--lambda", "1e-4"),
    ]
    same = True
    for args in runs:
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{args[0]}_{rep}"
            main([*args, "--jobs", str(1 + 2 * rep), "--out", str(out)])
            blobs.append((out / f"{args[0].replace('-', '_')}.csv").read_bytes())
        same &= blobs[0] == blobs[1]
    dt = time.perf_counter() - t0
    record(11, same, f"{len(runs)} studies rerun with identical CSV bytes: {same}, {dt:.2f}s")
    assert same
