"""Command-line front end for the range-separated tensor toolkit.

Subcommands: ``kernel``, ``assemble``, ``energy``, ``forces``, ``svals``,
``interp``, ``gen``.  Every option can also come from a ``key = value``
config file (``#`` comments allowed); command-line flags override file
values.  All floating output is printed with 17 significant digits and the
main CSV/JSON artifacts are byte-deterministic for a fixed config and seed;
wall-clock timings go to a separate file.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 capacity error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import container
from .assembly import AssemblyConfig, build_rs, reference_for
from .errors import (
    CapacityError,
    ConfigError,
    NumericalError,
    RsTensorError,
)
from .formats import storage_report
from .kernels import (
    DEFAULT_R_RANGE,
    RadialKernel,
    build_quadrature,
    effective_support,
    eval_expansion,
    project_kernel,
    split_rank,
    split_tensor,
)
from .observables import (
    EnergyReport,
    direct_energy,
    direct_force,
    force_fd,
    reference_energy,
)
from .particles import (
    Box3,
    Grid3,
    generate_lattice,
    generate_random_cluster,
    load_particles,
    save_particles,
    separation_distance,
    snap_to_grid,
)
from .rankred import ReductionConfig, side_svd
from .scattered import InterpolationProblem, build_rs_operator, solve_interpolation


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _json_value(obj) -> str:
    if isinstance(obj, dict):
        inner = ", ".join(f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in obj.items())
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_value(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return f"{v:.17g}"
        return json.dumps(str(v))
    return json.dumps(str(obj))


def write_json(path, obj) -> None:
    Path(path).write_text(_json_value(obj) + "\n", encoding="ascii")


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


class Opts:
    """Merged view over CLI flags and a config file (flags win)."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._file = {}
        cfg = self._args.get("config")
        if cfg:
            self._file = parse_config_file(cfg)

    def _raw(self, key: str):
        flag = self._args.get(key.replace("-", "_"))
        if flag is not None:
            return flag
        return self._file.get(key)

    def get(self, key: str, default=None, kind=str):
        raw = self._raw(key)
        if raw is None:
            return default
        if isinstance(raw, str):
            try:
                if kind is bool:
                    return raw.lower() in ("1", "true", "yes", "on")
                return kind(raw)
            except ValueError as exc:
                raise ConfigError(f"option {key!r}: cannot parse {raw!r}") from exc
        return kind(raw) if kind in (int, float) else raw

    def require(self, key: str, kind=str):
        value = self.get(key, None, kind)
        if value is None:
            raise ConfigError(f"missing required option {key!r}")
        return value


def _outdir(opts: Opts) -> Path:
    out = Path(opts.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(opts: Opts, b: float) -> Grid3:
    n = opts.require("n", int)
    return Grid3(n, Box3(b))


def _kernel(opts: Opts) -> RadialKernel:
    kind = opts.get("kernel", "newton")
    lam = opts.get("lam", 1.0, float)
    return RadialKernel(kind, lam)


def _load_system(opts: Opts):
    particles = opts.get("particles")
    if particles:
        return load_particles(particles)
    lattice = opts.get("lattice")
    if lattice:
        dims = [int(v) for v in str(lattice).split(",")]
        if len(dims) == 1:
            dims = dims * 3
        b = opts.get("b", None, float)
        return generate_lattice(
            dims,
            spacing=opts.get("spacing", 1.0, float),
            charge_law=opts.get("charges", "random_sign"),
            seed=opts.get("seed", 0, int),
            box=Box3(b) if b is not None else None,
        )
    cluster = opts.get("cluster", None, int)
    if cluster:
        b = opts.require("b", float)
        return generate_random_cluster(
            cluster,
            Box3(b),
            min_sep=opts.get("min-sep", 0.8, float),
            seed=opts.get("seed", 0, int),
            charge_law=opts.get("charges", "random_sign"),
        )
    raise ConfigError("no input system: pass --particles, --lattice, or --cluster")


def cmd_gen(opts: Opts) -> int:
    out = _outdir(opts)
    system = _load_system(opts)
    path = out / opts.get("name", "particles.txt")
    save_particles(system, path)
    print(f"wrote {path} ({system.count} particles, b={_fmt(system.box.half_width)})")
    return 0


def cmd_kernel(opts: Opts) -> int:
    out = _outdir(opts)
    kernel = _kernel(opts)
    b = opts.get("b", 20.0, float)
    grid = _grid(opts, b)
    m = opts.get("M", 25, int)
    c0 = opts.get("C0", 3.0, float)
    r_lo = opts.get("r-lo", DEFAULT_R_RANGE[0], float)
    r_hi = opts.get("r-hi", DEFAULT_R_RANGE[1], float)
    sigma = opts.get("sigma", 0.9, float)
    delta = opts.get("delta", 1e-4, float)
    criterion = opts.get("criterion", "max_norm")
    entry_rule = opts.get("entry-rule", "integral")

    rule = build_quadrature(kernel, m, c0, r_range=(r_lo, r_hi))
    ref = project_kernel(rule, grid, doubled=False, entry_rule=entry_rule)
    r_l = split_rank(ref, sigma, delta, criterion)
    ref = dataclasses.replace(ref, split_index=r_l)
    short, _ = split_tensor(ref, r_l)
    gamma = effective_support(short, delta, grid.h) if short.rank else 0

    container.write_reference(ref, out / "kernel_reference.bin")

    # canonical vectors along the first axis, pointwise scale
    coords = grid.coords()
    u = ref.tensor.factors[0]
    scale = np.cbrt(ref.tensor.weights) / grid.h
    rows = [[coords[i]] + list(u[i] * scale) for i in range(grid.n)]
    write_csv(out / "vectors.csv", ["x"] + [f"p{k}" for k in range(ref.R)], rows)

    radii = np.geomspace(r_lo, r_hi, opts.get("table-points", 400, int))
    approx = eval_expansion(rule, radii)
    exact = kernel(radii)
    rel = np.abs(approx - exact) / np.abs(exact)
    write_csv(
        out / "expansion_error.csv",
        ["r", "expansion", "exact", "rel_err"],
        zip(radii, approx, exact, rel),
    )
    summary = {
        "kernel": kernel.kind,
        "M": m,
        "C0": c0,
        "h_M": rule.h_M,
        "R": ref.R,
        "R_l": r_l,
        "R_s": ref.R - r_l - 1,
        "sigma": sigma,
        "delta": delta,
        "criterion": criterion,
        "gamma": gamma,
        "max_rel_err": float(rel.max()),
    }
    write_json(out / "kernel_summary.json", summary)
    print(f"R={ref.R} R_l={r_l} R_s={ref.R - r_l - 1} max_rel_err={_fmt(float(rel.max()))}")
    return 0


def _assembly_config(opts: Opts, grid: Grid3) -> AssemblyConfig:
    reduction = ReductionConfig(
        eps=opts.get("eps", 1e-5, float),
        max_sweeps=opts.get("max-sweeps", 3, int),
        eps_c2t=opts.get("eps-c2t", 1e-5, float),
        eps_t2c=opts.get("eps-t2c", 1e-6, float),
    )
    reduce_map = {"auto": None, "always": True, "never": False}
    reduce_key = opts.get("reduce", "auto")
    if reduce_key not in reduce_map:
        raise ConfigError(f"reduce must be auto|always|never, got {reduce_key!r}")
    return AssemblyConfig(
        grid=grid,
        kernel=_kernel(opts),
        M=opts.get("M", 25, int),
        C0=opts.get("C0", 3.0, float),
        split_index=opts.get("Rl", None, int),
        sigma=opts.get("sigma", None, float),
        delta=opts.get("delta", 1e-4, float),
        criterion=opts.get("criterion", "max_norm"),
        overlap_policy=opts.get("policy", "soft"),
        max_overlap=opts.get("cap", 8, int),
        reduction=reduction,
        long_format=opts.get("format", "canonical"),
        entry_rule=opts.get("entry-rule", "integral"),
        reduce_long=reduce_map[reduce_key],
    )


def cmd_assemble(opts: Opts) -> int:
    out = _outdir(opts)
    system = _load_system(opts)
    grid = _grid(opts, system.box.half_width)
    cfg = _assembly_config(opts, grid)
    timings = {}
    start = time.perf_counter()
    result = build_rs(system, cfg)
    timings["build_rs_s"] = time.perf_counter() - start
    container.write_rs(result.rs, out / "rs_tensor.bin")
    sto = storage_report(result.rs)
    report = dict(result.report)
    report["storage"] = {
        "long_floats": sto.long_floats,
        "short_floats": sto.short_floats,
        "particle_floats": sto.particle_floats,
        "total": sto.total,
        "bound": sto.bound,
    }
    write_json(out / "assemble_summary.json", report)
    with open(out / "runlog.jsonl", "a", encoding="ascii") as fh:
        fh.write(_json_value({"command": "assemble", "report": report}) + "\n")
    write_json(out / "timings.json", timings)
    print(
        f"assembled N={result.system.count} R_l={result.split_index} "
        f"gamma={result.gamma} storage={sto.total} (bound {sto.bound})"
    )
    return 0


def _energy_pipeline(opts: Opts):
    system = _load_system(opts)
    grid = _grid(opts, system.box.half_width)
    cfg = _assembly_config(opts, grid)
    indexed = snap_to_grid(system, grid)
    ref = reference_for(cfg)
    if cfg.split_index is not None:
        r_l = cfg.split_index
    else:
        sigma = cfg.sigma if cfg.sigma is not None else separation_distance(indexed.base)
        r_l = split_rank(ref, sigma, cfg.delta, cfg.criterion)
    ref = dataclasses.replace(ref, split_index=r_l)
    return indexed, ref, r_l


def cmd_energy(opts: Opts) -> int:
    out = _outdir(opts)
    timings = {}
    start = time.perf_counter()
    indexed, ref, r_l = _energy_pipeline(opts)
    timings["setup_s"] = time.perf_counter() - start
    start = time.perf_counter()
    e_rs = reference_energy(indexed, ref)
    timings["tensor_energy_s"] = time.perf_counter() - start
    start = time.perf_counter()
    e_direct = direct_energy(indexed.base)
    timings["direct_energy_s"] = time.perf_counter() - start
    report = EnergyReport.with_oracle(e_rs, e_direct)
    write_json(
        out / "energy.json",
        {
            "E_N": report.energy,
            "E_exact": report.exact,
            "abs_err": report.abs_error,
            "rel_err": report.rel_error,
            "N": indexed.count,
            "n": indexed.grid.n,
            "R_l": r_l,
        },
    )
    write_json(out / "timings.json", timings)
    print(
        f"E_N={_fmt(report.energy)} E_exact={_fmt(report.exact)} "
        f"rel_err={_fmt(report.rel_error)}"
    )
    return 0


def cmd_forces(opts: Opts) -> int:
    out = _outdir(opts)
    indexed, ref, r_l = _energy_pipeline(opts)
    rows = []
    for j in range(indexed.count):
        f = force_fd(indexed, j, ref)
        rows.append([j, f.force[0], f.force[1], f.force[2]])
    write_csv(out / "forces.csv", ["j", "Fx", "Fy", "Fz"], rows)
    if opts.get("oracle", False, bool):
        orows = []
        worst = 0.0
        for j in range(indexed.count):
            f = direct_force(indexed.base, j)
            orows.append([j, f.force[0], f.force[1], f.force[2]])
            num = np.max(np.abs(np.asarray(rows[j][1:]) - f.force))
            den = max(np.max(np.abs(f.force)), 1e-300)
            worst = max(worst, num / den)
        write_csv(out / "forces_direct.csv", ["j", "Fx", "Fy", "Fz"], orows)
        write_json(out / "forces_summary.json", {"max_rel_component_err": worst})
        print(f"forces written; max component error vs oracle {_fmt(worst)}")
    else:
        print("forces written")
    return 0


def cmd_svals(opts: Opts) -> int:
    out = _outdir(opts)
    counts = [int(v) for v in str(opts.require("N")).split(",")]
    b = opts.get("b", 20.0, float)
    grid = _grid(opts, b)
    cfg = _assembly_config(opts, grid)
    seed = opts.get("seed", 0, int)
    min_sep = opts.get("min-sep", 0.8, float)
    from .assembly import assemble_long

    ref = reference_for(cfg)
    r_l = cfg.split_index if cfg.split_index is not None else 12
    paths = []
    for count in counts:
        system = generate_random_cluster(count, Box3(b), min_sep, seed=seed)
        indexed = snap_to_grid(system, grid)
        long = assemble_long(dataclasses.replace(ref, split_index=r_l), indexed, r_l)
        spectrum = side_svd(long)
        rows = []
        for mode, s in enumerate(spectrum.values):
            rows.extend([mode + 1, k + 1, val] for k, val in enumerate(s))
        path = out / f"svals_N{count}.csv"
        write_csv(path, ["mode", "k", "sigma"], rows)
        paths.append(str(path))
    print("wrote " + " ".join(paths))
    return 0


def cmd_interp(opts: Opts) -> int:
    out = _outdir(opts)
    samples_path = opts.require("samples")
    system = load_particles(samples_path)
    grid = _grid(opts, system.box.half_width)
    kernel = _kernel(opts)
    if kernel.kind == "newton":
        kernel = RadialKernel("gaussian", opts.get("lam", 1.0, float))
    indexed = snap_to_grid(system, grid)
    rule = build_quadrature(
        kernel, opts.get("M", 25, int), opts.get("C0", 3.0, float),
        r_range=(grid.h / 2, 2 * math.sqrt(3) * system.box.half_width),
    )
    ref = project_kernel(rule, grid, doubled=True, entry_rule="collocation")
    r_l = opts.get("Rl", ref.R - 1, int)
    gamma = opts.get("gamma", 2, int)
    op = build_rs_operator(ref, r_l, gamma, points=indexed.indices)
    problem = InterpolationProblem(
        samples=indexed.charges,
        kernel=kernel,
        tol=opts.get("tol", 1e-8, float),
        max_iter=opts.get("max-iter", 1000, int),
    )
    coeffs, history = solve_interpolation(op, problem)
    write_csv(out / "coefficients.csv", ["j", "c"], [[j, c] for j, c in enumerate(coeffs)])
    write_csv(
        out / "residuals.csv", ["iter", "rel_residual"],
        [[i, r] for i, r in enumerate(history)],
    )
    print(f"solved in {history.size - 1} iterations, final residual {_fmt(float(history[-1]))}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "kernel": cmd_kernel,
    "assemble": cmd_assemble,
    "energy": cmd_energy,
    "forces": cmd_forces,
    "svals": cmd_svals,
    "interp": cmd_interp,
}

_FLAGS = {
    "gen": ["lattice", "cluster", "spacing", "charges", "seed", "b", "min-sep", "name"],
    "kernel": [
        "n", "b", "M", "C0", "kernel", "lam", "sigma", "delta", "criterion",
        "entry-rule", "r-lo", "r-hi", "table-points",
    ],
    "assemble": [
        "particles", "lattice", "cluster", "spacing", "charges", "seed", "b",
        "min-sep", "n", "M", "C0", "kernel", "lam", "Rl", "sigma", "delta",
        "criterion", "policy", "cap", "format", "eps", "eps-c2t", "eps-t2c",
        "max-sweeps", "reduce", "entry-rule",
    ],
    "energy": [
        "particles", "lattice", "cluster", "spacing", "charges", "seed", "b",
        "min-sep", "n", "M", "C0", "kernel", "lam", "Rl", "sigma", "delta",
        "criterion", "policy", "cap", "format", "eps", "eps-c2t", "eps-t2c",
        "max-sweeps", "reduce", "entry-rule",
    ],
    "forces": [
        "particles", "lattice", "cluster", "spacing", "charges", "seed", "b",
        "min-sep", "n", "M", "C0", "kernel", "lam", "Rl", "sigma", "delta",
        "criterion", "policy", "cap", "format", "eps", "eps-c2t", "eps-t2c",
        "max-sweeps", "reduce", "entry-rule", "oracle",
    ],
    "svals": [
        "N", "b", "n", "M", "C0", "kernel", "lam", "Rl", "sigma", "delta",
        "criterion", "policy", "cap", "format", "eps", "eps-c2t", "eps-t2c",
        "max-sweeps", "reduce", "entry-rule", "seed", "min-sep",
    ],
    "interp": ["samples", "n", "M", "C0", "kernel", "lam", "Rl", "gamma", "tol", "max-iter"],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rstensor",
        description="Range-separated tensor summation of particle potentials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--threads", help="worker thread cap (default: all cores)")
        for flag in flags:
            if flag == "oracle":
                p.add_argument("--oracle", action="store_const", const="true")
            else:
                p.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
    return parser


def _apply_threads(opts: Opts) -> None:
    threads = opts.get("threads", os.environ.get("RS_TENSOR_THREADS"))
    if threads is None:
        return
    try:
        value = str(int(threads))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"threads must be an integer, got {threads!r}") from exc
    # best effort: caps BLAS pools spawned after this point; the package's
    # own code is sequential and deterministic regardless
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = value


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        opts = Opts(args)
        _apply_threads(opts)
        return _COMMANDS[args.command](opts)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"numerical error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except RsTensorError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
