"""Command-line front end.

Every subcommand writes three files into the output directory: a CSV
(first line ``# config-hash: ...``, then a header row), a plain-text
summary and a gnuplot script that plots the CSV.  Exit codes: 0 when every
verdict passes or every solve converges, 2 on a failing verdict, 1 on any
error (including invalid configuration).

Configuration comes from flags, a ``key=value`` file (``--config``), or
both.  A key given in both places with different values is an error.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, fields
import hashlib
import logging
import math
import os
from pathlib import Path
import sys

from .errors import TodaError

log = logging.getLogger("toda_bloom")

COMMANDS = (
    "ansatz",
    "solve",
    "sweep",
    "residual-scaling",
    "theta-study",
    "mass-study",
    "kernel-check",
    "integrals",
)

DEFAULT_RANGES = {
    "sweep": "1e-2:1e-5",
    "residual-scaling": "1e-2:1e-6",
    "theta-study": "1e-3:1e-5",
    "mass-study": "1e-3:1e-5",
}

ENV_OUT = "TODA_BLOOM_OUT"


class ConfigError(TodaError, ValueError):
    """Invalid, unknown or conflicting configuration."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    k: int = 1
    lam: float = 1e-4
    lambda_range: str = ""
    points_per_decade: int = 3
    steps_per_decade: int = 4
    domain: str = "disk"
    vertices: str = ""
    symmetry_order: int = 0
    mesh_n: int = 1601
    mesh_r_min_factor: float = 0.01
    mesh_kind: str = "log_radial"
    mesh_h: float = 0.1
    p: float = 1.0
    alpha: float = 2.0
    samples: int = 400
    seed: int = 42
    jobs: int = max(1, os.cpu_count() or 1)
    out: str = "toda_bloom_out"

    # fields that never change the numbers in the CSV
    _NON_RESULT = ("out", "jobs")

    def config_hash(self) -> str:
        items = sorted((k, v) for k, v in asdict(self).items() if k not in self._NON_RESULT)
        text = "\n".join(f"{k}={v!r}" for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def lambdas(self) -> list:
        from .diagnostics import lambda_grid

        hi, lo = _parse_range(self.lambda_range or DEFAULT_RANGES.get(self.command, "1e-2:1e-5"))
        return lambda_grid(hi, lo, self.points_per_decade)

    def make_domain(self):
        from .geometry import Domain

        if self.domain == "disk":
            return Domain.disk(max(1, self.symmetry_order))
        pts = _parse_vertices(self.vertices)
        return Domain.polygon(pts, self.symmetry_order)


# config-file key -> RunConfig field
FILE_KEYS = {
    "command": "command",
    "k": "k",
    "lambda": "lam",
    "lambda_range": "lambda_range",
    "points_per_decade": "points_per_decade",
    "steps_per_decade": "steps_per_decade",
    "domain": "domain",
    "vertices": "vertices",
    "symmetry_order": "symmetry_order",
    "mesh.n": "mesh_n",
    "mesh.r_min_factor": "mesh_r_min_factor",
    "mesh.kind": "mesh_kind",
    "mesh.h": "mesh_h",
    "p": "p",
    "alpha": "alpha",
    "samples": "samples",
    "seed": "seed",
    "jobs": "jobs",
    "out": "out",
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}
_KEY_OF = {v: k for k, v in FILE_KEYS.items()}
_CASTS = {"int": int, "float": float, "str": str}


def _cast(field_name: str, raw):
    kind = _TYPES[field_name]
    try:
        if kind == "int":
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        return _CASTS[kind](raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{_KEY_OF[field_name]}: cannot parse {raw!r} as {kind}") from None


def _parse_range(text: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"lambda range must look like 1e-3:1e-5, got {text!r}")
    try:
        a, b = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"bad lambda range {text!r}") from None
    if not (a > 0 and b > 0) or a == b:
        raise ConfigError(f"lambda range needs two distinct positive values, got {text!r}")
    return max(a, b), min(a, b)


def _parse_vertices(text: str) -> list:
    try:
        pts = [tuple(float(c) for c in p.split(",")) for p in text.split(";") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad vertex list {text!r}; expected 'x,y;x,y;...'") from None
    if len(pts) < 3 or any(len(p) != 2 for p in pts):
        raise ConfigError("a polygon needs at least three 'x,y' vertices")
    return pts


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        value = value.strip("\"'")
        if key not in FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if not 1 <= cfg.k <= 31:
        raise ConfigError(f"k must lie in [1, 31], got {cfg.k}")
    if not (cfg.lam > 0 and math.isfinite(cfg.lam)):
        raise ConfigError(f"lambda must be positive, got {cfg.lam}")
    if cfg.lambda_range:
        _parse_range(cfg.lambda_range)
    if cfg.points_per_decade < 1 or cfg.steps_per_decade < 1:
        raise ConfigError("points_per_decade and steps_per_decade must be >= 1")
    if cfg.domain not in ("disk", "polygon"):
        raise ConfigError(f"domain must be 'disk' or 'polygon', got {cfg.domain!r}")
    if cfg.domain == "polygon":
        _parse_vertices(cfg.vertices)
        if cfg.symmetry_order < 1:
            raise ConfigError("a polygon domain needs symmetry_order >= 1")
        if cfg.mesh_kind != "sector":
            raise ConfigError("polygon domains need mesh.kind = sector")
    elif cfg.vertices:
        raise ConfigError("vertices given for the disk")
    elif cfg.mesh_kind != "log_radial":
        raise ConfigError("the disk is discretized radially: mesh.kind must be log_radial")
    if cfg.mesh_n < 16:
        raise ConfigError(f"mesh.n must be >= 16, got {cfg.mesh_n}")
    if not cfg.mesh_r_min_factor > 0:
        raise ConfigError("mesh.r_min_factor must be positive")
    if cfg.mesh_kind not in ("log_radial", "sector"):
        raise ConfigError(f"mesh.kind must be log_radial or sector, got {cfg.mesh_kind!r}")
    if not 0 < cfg.mesh_h < 1:
        raise ConfigError("mesh.h must lie in (0, 1)")
    if cfg.command == "residual-scaling" and not 1.0 <= cfg.p <= 1.5:
        raise ConfigError(f"p must lie in [1, 1.5], got {cfg.p}")
    if cfg.alpha < 2:
        raise ConfigError(f"alpha must be >= 2, got {cfg.alpha}")
    if cfg.samples < 10:
        raise ConfigError("samples must be >= 10")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toda-bloom", description="Blow-up ansatz and Newton solver for the Toda system on symmetric domains.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key=value configuration file")
        s.add_argument("--k", dest="k")
        s.add_argument("--lambda", dest="lam")
        s.add_argument("--lambda-range", dest="lambda_range", help="hi:lo, e.g. 1e-3:1e-5")
        s.add_argument("--points-per-decade", dest="points_per_decade")
        s.add_argument("--steps-per-decade", dest="steps_per_decade")
        s.add_argument("--domain", dest="domain", choices=("disk", "polygon"))
        s.add_argument("--vertices", dest="vertices", help="'x,y;x,y;...'")
        s.add_argument("--symmetry-order", dest="symmetry_order")
        s.add_argument("--mesh-n", dest="mesh_n")
        s.add_argument("--mesh-r-min-factor", dest="mesh_r_min_factor")
        s.add_argument("--mesh-kind", dest="mesh_kind")
        s.add_argument("--mesh-h", dest="mesh_h")
        s.add_argument("--p", dest="p")
        s.add_argument("--alpha", dest="alpha")
        s.add_argument("--samples", dest="samples")
        s.add_argument("--seed", dest="seed")
        s.add_argument("--jobs", dest="jobs")
        s.add_argument("--out", dest="out")
    return p


def parse_config(argv=None, environ=None) -> RunConfig:
    """Merge flags and an optional config file into a validated :class:`RunConfig`."""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            name = FILE_KEYS[key]
            if name == "command":
                if raw != args.command:
                    raise ConfigError(f"config file command {raw!r} conflicts with {args.command!r}")
                continue
            values[name] = _cast(name, raw)
    for name in _TYPES:
        raw = getattr(args, name, None)
        if name == "command" or raw is None:
            continue
        val = _cast(name, raw)
        if name in values and values[name] != val:
            raise ConfigError(
                f"{_KEY_OF[name]}: flag value {val!r} conflicts with config file value {values[name]!r}"
            )
        values[name] = val
    if values.get("domain") == "polygon" and "mesh_kind" not in values:
        values["mesh_kind"] = "sector"
    if environ.get(ENV_OUT):
        values["out"] = environ[ENV_OUT]
    return validate(RunConfig(command=args.command, **values))


# ----------------------------------------------------------------------------
# commands


def _cmd_ansatz(cfg):
    from .diagnostics import ScalingStudy, PASS
    from .mesh import lp_norm
    from .profiles import ansatz_residual, ansatz
    from .solver import _cascade_for, build_mesh

    dom = cfg.make_domain()
    cas = _cascade_for(cfg.k, cfg.lam, dom)
    st = ScalingStudy("ansatz", cfg.k, [cfg.lam])
    for i in range(cfg.k):
        st.add(cfg.lam, "alpha", i + 1, cas.alphas[i])
        st.add(cfg.lam, "delta", i + 1, cas.deltas[i])
        st.add(cfg.lam, "d_constant", i + 1, cas.d_constants[i])
        st.add(cfg.lam, "balance_residual", i + 1, cas.balance_residuals()[i], 0.0)
    mesh = build_mesh(cas, dom, cfg.mesh_n, cfg.mesh_r_min_factor, cfg.mesh_h)
    W = ansatz(cas, dom, mesh)
    R = ansatz_residual(cas, W, mesh.radii)
    for i in range(cfg.k):
        st.add(cfg.lam, "ansatz_max", i + 1, float(W[i].max()))
        st.add(cfg.lam, "ansatz_residual_l1", i + 1, lp_norm(R[i], 1.0, mesh))
    st.verdict = PASS
    return st


def _cmd_solve(cfg):
    from .diagnostics import ScalingStudy, PASS, FAIL
    from .solver import solve_from_ansatz

    dom = cfg.make_domain()
    rep = solve_from_ansatz(cfg.k, cfg.lam, dom, n=cfg.mesh_n, r_min_factor=cfg.mesh_r_min_factor,
                            sector_h=cfg.mesh_h)
    st = ScalingStudy("solve", cfg.k, [cfg.lam])
    _report_rows(st, rep)
    st.verdict = PASS if rep.converged else FAIL
    st.notes.append(f"converged: {rep.converged} after {rep.iterations} iterations {rep.message}".rstrip())
    return st


def _report_rows(st, rep):
    for i in range(rep.k):
        st.add(rep.lam, "mass", i + 1, rep.masses[i], rep.mass_targets[i])
        st.add(rep.lam, "delta_fit", i + 1, rep.delta_fits[i], rep.cascade_deltas[i])
    st.add(rep.lam, "newton_residual", 0, rep.final_residual)
    st.add(rep.lam, "iterations", 0, rep.iterations)
    st.add(rep.lam, "correction_h1", 0, rep.correction_h1)


def _cmd_sweep(cfg):
    from .diagnostics import ScalingStudy, PASS, FAIL
    from .solver import continuation, lambda_schedule

    hi, lo = _parse_range(cfg.lambda_range or DEFAULT_RANGES["sweep"])
    schedule = lambda_schedule(hi, lo, cfg.steps_per_decade)
    reps = continuation(cfg.k, hi, lo, cfg.steps_per_decade, cfg.make_domain(),
                        n=cfg.mesh_n, r_min_factor=cfg.mesh_r_min_factor)
    st = ScalingStudy("sweep", cfg.k, [r.lam for r in reps])
    for rep in reps:
        _report_rows(st, rep)
    complete = len(reps) == len(schedule) and all(r.converged for r in reps)
    st.verdict = PASS if complete else FAIL
    if not complete:
        st.notes.append(f"continuation stopped after {len(reps)} of {len(schedule)} steps or a solve failed")
    return st


def _cmd_residual(cfg):
    from .diagnostics import residual_scaling_study

    return residual_scaling_study(cfg.k, cfg.p, cfg.lambdas(), cfg.mesh_n, cfg.mesh_r_min_factor, cfg.jobs)


def _cmd_theta(cfg):
    from .diagnostics import theta_study

    return theta_study(cfg.k, cfg.lambdas(), cfg.samples, cfg.seed)


def _cmd_mass(cfg):
    from .diagnostics import mass_quantization_study

    return mass_quantization_study(cfg.k, cfg.lambdas(), cfg.mesh_n, cfg.mesh_r_min_factor, cfg.jobs)


def _cmd_kernel(cfg):
    from .diagnostics import ScalingStudy, PASS, FAIL
    from .linops import kernel_residual, kernel_symmetry
    from .mesh import build_log_radial_mesh

    st = ScalingStudy("kernel-check", cfg.k, [])
    n0 = max(201, (cfg.mesh_n - 1) // 4 + 1)
    ns = [n0, 2 * n0 - 1, 4 * n0 - 3]
    res = [kernel_residual(cfg.alpha, 1.0, build_log_radial_mesh(1e-4, 1e4, n)) for n in ns]
    for n, r in zip(ns, res):
        st.add(None, f"kernel_residual_n{n}", 0, r)
    orders = [math.log2(res[i] / res[i + 1]) for i in range(len(res) - 1)]
    for o in orders:
        st.add(None, "observed_order", 0, o, 2.0)
    sym = kernel_symmetry(cfg.alpha, cfg.k, seed=cfg.seed)
    for i, key in enumerate(("phi0", "phi1", "phi2")):
        st.add(None, f"symmetric_{key}", i, float(sym[key]))
    st.verdict = PASS if min(orders) >= 1.9 and sym["phi0"] else FAIL
    st.notes.append(f"alpha={cfg.alpha:g} k={cfg.k}: symmetric under pi/k rotation: {sym}")
    return st


def _cmd_integrals(cfg):
    from .diagnostics import ScalingStudy, PASS, FAIL
    from .linops import moment_integrals

    a = cfg.alpha
    vals = moment_integrals(a)
    expected = (0.0, -4 * math.pi * a, -4 * math.pi)
    st = ScalingStudy("integrals", 0, [])
    ok = True
    for i, (v, e) in enumerate(zip(vals, expected)):
        st.add(None, "moment", i + 1, v, e)
        ok &= abs(v - e) <= 1e-6 * (1 + abs(e))
    st.verdict = PASS if ok else FAIL
    st.notes.append("moments: (" + ", ".join(f"{v:.10g}" for v in vals) + ")")
    return st


HANDLERS = {
    "ansatz": _cmd_ansatz,
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "residual-scaling": _cmd_residual,
    "theta-study": _cmd_theta,
    "mass-study": _cmd_mass,
    "kernel-check": _cmd_kernel,
    "integrals": _cmd_integrals,
}


def plot_script(cfg: RunConfig, csv_name: str) -> str:
    stem = csv_name.rsplit(".", 1)[0]
    return "\n".join([
        f"# gnuplot script for {csv_name} (config-hash {cfg.config_hash()})",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set logscale xy",
        "set xlabel 'lambda'",
        "set ylabel 'value'",
        "set terminal pngcairo size 900,600",
        f"set output '{stem}.png'",
        f"plot '{csv_name}' using 1:(abs($4)) every ::1 with linespoints title '{cfg.command}'",
        "",
    ])


def write_outputs(cfg: RunConfig, study) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.command.replace("-", "_")
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(study.to_csv(cfg.config_hash()))
    (out / f"{stem}_summary.txt").write_text(f"config-hash: {cfg.config_hash()}\n" + study.summary())
    (out / f"{stem}.gp").write_text(plot_script(cfg, csv_path.name))
    return csv_path


def run(cfg: RunConfig) -> int:
    """Execute a validated configuration; returns the process exit code."""
    from .diagnostics import PASS

    study = HANDLERS[cfg.command](cfg)
    path = write_outputs(cfg, study)
    print(study.summary(), end="")
    print(f"csv: {path}")
    return 0 if study.verdict == PASS else 2


def main(argv=None) -> int:
    try:
        args = sys.argv[1:] if argv is None else argv
        verbose = "-v" in args or "--verbose" in args
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = parse_config(argv)
        return run(cfg)
    except (TodaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
