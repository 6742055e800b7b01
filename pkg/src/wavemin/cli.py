"""Command-line orchestration: configs in, tables and summaries out.

Subcommands
-----------
solve
    Minimize the functional for the configured problem, cross-check
    against the direct complex solve, and write the complex solution
    tables, the convergence history, and a summary record.
validate
    Check the configuration (schema, geometry, media passivity,
    boundary data) without solving; exit 2 listing every violation.
tomography
    Evaluate the boundary-measurement bound: the surface formula from
    measured data, the volume functional of a trial field, and their
    slack.
hs-bound
    Polarization-scheme run: exact-polarization equality check, bound
    classification, and the condensed stationary solve.
greens-table
    Tabulate the infinite-body comparison kernel at the configured
    points.

Configuration
-------------
Structured key-value text (TOML).  Complex numbers are two-element
``[re, im]`` arrays; matrices are nested row lists whose entries are
such pairs (bare numbers are taken as purely real).  Example::

    run_id = "rod"
    units = "SI"
    physics = "elastic"
    omega = 2.0

    [geometry]
    kind = "interval"        # or "rectangle"
    n_cells = 100
    length = 1.0
    # region_splits = [0.5]  # optional multi-region split coordinates

    [media.0]
    primal = [1.0, 0.5]      # stiffness / compressibility / permittivity
    dual = [1.0, -0.2]       # density / inverse density / inverse mu

    [boundary.left]
    kind = "primary"         # essential field value
    value = [0.0, 0.0]

    [boundary.right]
    kind = "flux"            # flux trace value
    value = [1.0, 0.0]

    [source]
    f = 0.0                  # uniform or per-entity body force

    [solver]
    tolerance = 1e-10
    max_iterations = 2000

Subcommand-specific tables: ``[tomography]`` with ``trial_field`` (a
field-table prefix) and optional ``measurements`` (a solve-output
prefix; omitted means the config's own direct solve supplies the
data); ``[hs]`` with ``scale`` or explicit ``primal``/``dual``
comparison moduli; ``[greens]`` with the medium (``kind = "scalar"``
with ``d``, ``q`` or ``kind = "isotropic"`` with ``lam``, ``mu``,
``q``), ``points``, and quadrature ``order``.

The environment variable WAVEMIN_THREADS pins the BLAS thread count;
it must be set before the process first imports numpy, so this module
imports the numeric stack lazily.  Summaries exclude wall-clock times
so that identical configurations produce identical records.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "BLIS_NUM_THREADS")


class ConfigError(ValueError):
    """Configuration problem; the message starts with the key path."""


def _pin_threads(environ=os.environ):
    value = environ.get("WAVEMIN_THREADS")
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        raise ConfigError(
            f"WAVEMIN_THREADS: expected a positive integer, got {value!r}")
    for var in _THREAD_VARS:
        environ.setdefault(var, value)


def _modules():
    # deferred so that thread pinning precedes the first numpy import
    import numpy as np

    from wavemin import fields, functional, greens, hs, moduli, solver
    return SimpleNamespace(np=np, fields=fields, functional=functional,
                           greens=greens, hs=hs, moduli=moduli,
                           solver=solver)


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: malformed TOML: {exc}")


# ----------------------------------------------------------------------
# schema helpers


def _need(table, key, path):
    if key not in table:
        raise ConfigError(f"{path}{key}: required key missing")
    return table[key]


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _is_pair(value):
    return (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in value))


def _complex_value(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if _is_pair(value):
        return complex(value[0], value[1])
    raise ConfigError(f"{path}: expected a number or [re, im] pair, "
                      f"got {value!r}")


def _complex_matrix(value, path):
    """Complex scalar or square matrix from nested row lists."""
    if isinstance(value, list) and not _is_pair(value):
        return [[_complex_value(entry, f"{path}[{i}][{j}]")
                 for j, entry in enumerate(row)]
                for i, row in enumerate(value)]
    return _complex_value(value, path)


def _complex_components(value, path):
    """Complex scalar or per-component vector for boundary data."""
    if isinstance(value, list) and not _is_pair(value):
        return [_complex_value(entry, f"{path}[{i}]")
                for i, entry in enumerate(value)]
    return _complex_value(value, path)


# ----------------------------------------------------------------------
# problem construction


def _build_mesh(cfg, lib):
    geom = _need(cfg, "geometry", "")
    kind = _need(geom, "kind", "geometry.")
    splits = geom.get("region_splits", [])
    if splits:
        cuts = sorted(_number(s, "geometry.region_splits") for s in splits)

        def region_of(x):
            coord = x if lib.np.ndim(x) == 0 else x[0]
            return sum(coord > c for c in cuts)
    else:
        region_of = None
    if kind == "interval":
        n = int(_number(_need(geom, "n_cells", "geometry."), "geometry.n_cells"))
        return lib.fields.Mesh.interval(
            n, length=_number(geom.get("length", 1.0), "geometry.length"),
            origin=_number(geom.get("origin", 0.0), "geometry.origin"),
            region_of=region_of)
    if kind == "rectangle":
        nx = int(_number(_need(geom, "nx", "geometry."), "geometry.nx"))
        ny = int(_number(_need(geom, "ny", "geometry."), "geometry.ny"))
        origin = geom.get("origin", [0.0, 0.0])
        return lib.fields.Mesh.rectangle(
            nx, ny, lx=_number(geom.get("lx", 1.0), "geometry.lx"),
            ly=_number(geom.get("ly", 1.0), "geometry.ly"),
            origin=tuple(_number(v, "geometry.origin") for v in origin),
            region_of=region_of)
    raise ConfigError(f"geometry.kind: unknown geometry {kind!r}")


def _build_media(cfg, physics, omega, lib):
    media_cfg = _need(cfg, "media", "")
    if not isinstance(media_cfg, dict) or not media_cfg:
        raise ConfigError("media: at least one region table is required")
    media = {}
    for tag, entry in media_cfg.items():
        path = f"media.{tag}."
        try:
            itag = int(tag)
        except ValueError:
            raise ConfigError(f"media.{tag}: region tags must be integers")
        primal = _complex_matrix(_need(entry, "primal", path), path + "primal")
        dual = _complex_matrix(_need(entry, "dual", path), path + "dual")
        try:
            if physics == "electromagnetic":
                media[itag] = lib.moduli.ComplexModuli.electromagnetic(
                    primal, dual, omega,
                    time_convention=entry.get("time_convention", "-"))
            else:
                media[itag] = lib.moduli.ComplexModuli(physics, primal,
                                                       dual, omega)
        except ValueError as exc:
            raise ConfigError(f"media.{tag}: {exc}")
    return media


def _build_boundary(cfg, mesh, physics, lib):
    bc = lib.fields.BoundarySpec(mesh, physics)
    for tag, entry in cfg.get("boundary", {}).items():
        path = f"boundary.{tag}."
        kind = _need(entry, "kind", path)
        value = _complex_components(_need(entry, "value", path),
                                    path + "value")
        if isinstance(value, list):
            value = lib.np.asarray(value)
        try:
            if kind == "primary":
                bc.set_dirichlet(tag, value)
            elif kind == "flux":
                bc.set_neumann(tag, value)
            else:
                raise ConfigError(f"{path}kind: expected 'primary' or "
                                  f"'flux', got {kind!r}")
        except ValueError as exc:
            raise ConfigError(f"boundary.{tag}: {exc}")
    return bc


def _build_force(cfg, lib):
    raw = cfg.get("source", {}).get("f", 0.0)
    if isinstance(raw, list) and not _is_pair(raw):
        return lib.np.asarray([_complex_value(v, f"source.f[{i}]")
                               for i, v in enumerate(raw)])
    return _complex_value(raw, "source.f")


def _solver_options(cfg, args, lib):
    sv = cfg.get("solver", {})
    tol = args.tolerance if args.tolerance is not None else \
        _number(sv.get("tolerance", 1e-10), "solver.tolerance")
    iters = args.max_iters if args.max_iters is not None else \
        int(_number(sv.get("max_iterations", 2000), "solver.max_iterations"))
    seed = args.seed if args.seed is not None else sv.get("seed")
    try:
        return lib.solver.SolveOptions(
            max_iterations=iters, relative_residual_tolerance=tol,
            preconditioner=sv.get("preconditioner", "block_jacobi"),
            seed=seed)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}")


def _build_problem(cfg, args, lib):
    physics = _need(cfg, "physics", "")
    if physics not in lib.moduli.PHYSICS:
        raise ConfigError(f"physics: unknown physics {physics!r}")
    omega = _number(_need(cfg, "omega", ""), "omega")
    mesh = _build_mesh(cfg, lib)
    media = _build_media(cfg, physics, omega, lib)
    try:
        material = lib.fields.MaterialField(mesh, media)
    except ValueError as exc:
        raise ConfigError(f"media: {exc}")
    bc = _build_boundary(cfg, mesh, physics, lib)
    f = _build_force(cfg, lib)
    try:
        src = lib.fields.build_source_data(f, bc, mesh, omega)
    except ValueError as exc:
        raise ConfigError(f"source: {exc}")
    opts = _solver_options(cfg, args, lib)
    return lib.solver.Problem(material, src), opts


def _passivity_findings(material):
    """(errors, notes) naming each tensor and region, key-path style."""
    errors, notes = [], []
    for tag, report in sorted(material.passivity().items()):
        for part in (report.primal, report.dual):
            if part.classification == "violated":
                errors.append(
                    f"media.{tag}: {part.name} imaginary part violates "
                    f"passivity in region {tag} (min signed eigenvalue "
                    f"{part.min_eigenvalue:.6g})")
            elif part.classification == "semidefinite":
                notes.append(
                    f"media.{tag}: {part.name} is lossless in region "
                    f"{tag}; the reduced path applies when the dual "
                    "tensor is lossless")
    return errors, notes


# ----------------------------------------------------------------------
# artifact helpers


def _run_id(cfg, config_path):
    rid = cfg.get("run_id")
    if rid is None:
        rid = Path(config_path).stem
    rid = str(rid)
    if not rid or any(c in rid for c in "/\\"):
        raise ConfigError(f"run_id: not a usable file stem: {rid!r}")
    return rid


def _write_complex_tables(out_dir, stem, lib, **fields):
    paths = {}
    for name, values in fields.items():
        for part, array in (("re", values.real), ("im", values.imag)):
            path = out_dir / f"{stem}_{name}_{part}.csv"
            lib.fields.write_field_table(path, array, "entity")
            paths[f"{name}_{part}"] = path.name
    return paths


def _jsonable(value):
    """Plain-python copy of a summary tree (numpy scalars demoted)."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    for kind, cast in ((bool, bool), (int, int), (float, float)):
        try:
            if isinstance(value, kind) or (
                    hasattr(value, "item") and
                    isinstance(value.item(), kind)):
                return cast(value)
        except (TypeError, ValueError):
            pass
    return value


def _write_summary(out_dir, rid, subcommand, payload):
    payload = {"run_id": rid, "subcommand": subcommand, **payload}
    path = out_dir / f"{rid}_{subcommand}_summary.json"
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _base_record(cfg, problem):
    return {
        "units": str(cfg.get("units", "unspecified")),
        "physics": problem.physics,
        "omega": problem.omega,
        "n_nodes": problem.mesh.n_nodes,
        "n_cells": problem.mesh.n_cells,
    }


# ----------------------------------------------------------------------
# subcommands


def _cmd_solve(cfg, args, out_dir, rid, lib):
    problem, opts = _build_problem(cfg, args, lib)
    errors, notes = _passivity_findings(problem.material)
    if errors:
        raise ConfigError("; ".join(errors))

    F, report = lib.solver.minimize_cg(problem, opts)
    oracle = lib.solver.solve_direct_complex(problem)
    check = lib.solver.cross_validate((F, report), oracle)
    sol = lib.solver.recover_complex(F, problem)

    diss = lib.functional.dissipation_rate(sol.grad_like, sol.primary,
                                           problem.material)
    working = lib.functional.boundary_working_rate(
        sol.primary, sol.trace, problem.mesh, problem.physics,
        problem.omega, f=problem.src.f, flux=sol.flux)
    balance_gap = abs(diss.mean_power - working) / max(
        abs(diss.mean_power), abs(working), 1e-300)

    tables = _write_complex_tables(out_dir, f"{rid}_solve", lib,
                                   primary=sol.primary, flux=sol.flux,
                                   trace=sol.trace)
    history_path = out_dir / f"{rid}_solve_history.csv"
    report.write_history(history_path)

    summary = {
        **_base_record(cfg, problem),
        "functional_value": report.functional_value,
        "iterations": report.iterations,
        "final_residual": report.final_residual,
        "converged": report.converged,
        "seed": opts.seed,
        "oracle": {
            "primary_error": check.primary_error,
            "flux_error": check.flux_error,
            "trace_error": check.trace_error,
            "functional_gap": check.functional_gap,
            "boundary_identity_gap": check.boundary_identity_gap,
        },
        "dissipation": {
            "mean_power": diss.mean_power,
            "stiffness_part": diss.stiffness_part,
            "inertial_part": diss.inertial_part,
            "boundary_working_rate": working,
            "power_balance_gap": balance_gap,
        },
        "notes": notes,
        "artifacts": {**tables, "history": history_path.name},
    }
    code = EXIT_OK if report.converged else EXIT_NO_CONVERGENCE
    if code != EXIT_OK:
        print(f"solver did not converge within {opts.max_iterations} "
              f"iterations (residual {report.final_residual:.3e})",
              file=sys.stderr)
    return code, summary


def _cmd_validate(cfg, args, out_dir, rid, lib):
    errors, notes = [], []
    problem = None
    try:
        problem, _ = _build_problem(cfg, args, lib)
    except ConfigError as exc:
        errors.append(str(exc))
    if problem is not None:
        perr, pnotes = _passivity_findings(problem.material)
        errors.extend(perr)
        notes.extend(pnotes)
        if not (problem.bc.sel1.any() or problem.bc.sel2.any()
                or abs(lib.np.abs(problem.src.f).max()) > 0):
            notes.append("boundary: no essential data and zero force; "
                         "the solution is identically zero")
    summary = {
        "units": str(cfg.get("units", "unspecified")),
        "status": "invalid" if errors else "valid",
        "errors": errors,
        "notes": notes,
    }
    for line in errors:
        print(line, file=sys.stderr)
    return (EXIT_INVALID if errors else EXIT_OK), summary


def _measured_surface(cfg, problem, out_dir, lib):
    """Complex boundary primary and trace, measured or self-generated."""
    tomo = cfg.get("tomography", {})
    prefix = tomo.get("measurements")
    mesh = problem.mesh
    if prefix is None:
        oracle = lib.solver.solve_direct_complex(problem)
        mp = oracle.primary[mesh.boundary_nodes]
        mt = oracle.trace
        return mp, mt, "direct solve of this configuration"
    base = Path(prefix)
    if not base.is_absolute():
        base = out_dir / base

    def table(name):
        path = Path(f"{base}_{name}.csv")
        if not path.exists():
            raise ConfigError(f"tomography.measurements: missing table "
                              f"{path}")
        return lib.fields.read_field_table(path)

    mp = table("primary_re") + 1j * table("primary_im")
    mt = table("trace_re") + 1j * table("trace_im")
    if mp.shape[0] == mesh.n_nodes:
        mp = mp[mesh.boundary_nodes]
    return mp, mt, str(base)


def _cmd_tomography(cfg, args, out_dir, rid, lib):
    problem, _ = _build_problem(cfg, args, lib)
    errors, _ = _passivity_findings(problem.material)
    if errors:
        raise ConfigError("; ".join(errors))
    if lib.np.abs(problem.src.f).max() > 0.0:
        raise ConfigError("tomography: the boundary bound requires zero "
                          "body force")
    mesh, physics, omega = problem.mesh, problem.physics, problem.omega
    mp, mt, origin = _measured_surface(cfg, problem, out_dir, lib)

    # trial fields are completed against the measured natural targets
    bc = lib.fields.BoundarySpec(mesh, physics)
    bc.val1[:] = mt.imag if physics == "elastic" else mt.real
    bc.val2[:] = mp.imag
    src0 = lib.fields.build_source_data(0.0, bc, mesh, omega)

    tomo = cfg.get("tomography", {})
    prefix = tomo.get("trial_field")
    if prefix is None:
        trial = lib.solver.solve_direct_complex(problem).to_field_state()
        trial_origin = "direct solve of this configuration"
    else:
        base = Path(prefix)
        if not base.is_absolute():
            base = out_dir / base
        parts = []
        for name in ("primary", "flux", "trace"):
            path = Path(f"{base}_{name}.csv")
            if not path.exists():
                raise ConfigError(
                    f"tomography.trial_field: missing table {path}")
            parts.append(lib.fields.read_field_table(path))
        trial = lib.fields.complete_trial_field(tuple(parts), src0)
        trial_origin = str(base)

    slack = lib.functional.tomography_slack(trial, mp, mt,
                                            problem.material)
    bound = lib.functional.minimum_value_surface(mp, mt, src0)
    scale = max(abs(bound), abs(bound + slack), 1e-300)
    summary = {
        **_base_record(cfg, problem),
        "measurements": origin,
        "trial_field": trial_origin,
        "bound_value": bound,
        "trial_value": bound + slack,
        "slack": slack,
        "slack_relative": slack / scale,
        "slack_nonnegative": bool(slack >= -1e-10 * scale),
    }
    return EXIT_OK, summary


def _comparison_medium(cfg, problem, lib):
    hs_cfg = cfg.get("hs", {})
    physics, omega = problem.physics, problem.omega
    if "primal" in hs_cfg or "dual" in hs_cfg:
        primal = _complex_matrix(_need(hs_cfg, "primal", "hs."), "hs.primal")
        dual = _complex_matrix(_need(hs_cfg, "dual", "hs."), "hs.dual")
        try:
            m0 = lib.moduli.ComplexModuli(physics, primal, dual, omega)
            return lib.hs.ComparisonMedium.from_moduli(m0)
        except ValueError as exc:
            raise ConfigError(f"hs: {exc}")
    scale = _number(hs_cfg.get("scale", 2.0), "hs.scale")
    try:
        blocks = problem.material.block_arrays()
    except ValueError as exc:
        raise ConfigError(f"hs: {exc}")
    cg = lib.moduli.CGBlock
    ref = [cg(scale * blk[0][:m, :m], scale * blk[0][:m, m:],
              scale * blk[0][m:, m:])
           for blk in blocks
           for m in [blk.shape[1] // 2]]
    op = lib.moduli.OperatorL(ref[0], ref[1])
    try:
        return lib.hs.ComparisonMedium.from_operator(op, physics, omega)
    except ValueError as exc:
        raise ConfigError(f"hs.scale: {exc}")


def _cmd_hs_bound(cfg, args, out_dir, rid, lib):
    problem, opts = _build_problem(cfg, args, lib)
    errors, _ = _passivity_findings(problem.material)
    if errors:
        raise ConfigError("; ".join(errors))
    material, src = problem.material, problem.src
    cm = _comparison_medium(cfg, problem, lib)

    F, report = lib.solver.minimize_cg(problem, opts)
    if not report.converged:
        print("primal minimization did not converge", file=sys.stderr)
        return EXIT_NO_CONVERGENCE, {
            **_base_record(cfg, problem),
            "converged": False,
            "iterations": report.iterations,
        }
    exact_T = lib.hs.exact_polarization(F, material, cm)
    hs_value = lib.hs.evaluate_hs(F, exact_T, material, cm, src)
    label = lib.hs.classify_bound(material, cm)
    primal_value = report.functional_value
    equality_gap = abs(hs_value - primal_value) / max(abs(primal_value),
                                                      1e-300)

    h0 = lib.hs.bounded_h0_applier(cm, src)
    start = lib.hs.Polarization.zeros(problem.mesh, problem.physics,
                                      problem.omega)
    result = lib.hs.condense_and_solve(
        start, h0.comparison_field, h0, material, cm, src, solve=True,
        tolerance=opts.relative_residual_tolerance,
        max_iterations=opts.max_iterations)
    converged = result.iterations < opts.max_iterations
    residual = result.residual_norm()

    prefix = out_dir / f"{rid}_hs-bound_polarization"
    result.polarization.write_tables(prefix)

    summary = {
        **_base_record(cfg, problem),
        "classification": label,
        "primal_value": primal_value,
        "hs_value_at_exact_polarization": hs_value,
        "equality_gap": equality_gap,
        "condensed_value": result.value,
        "condensed_residual": residual,
        "condensed_iterations": result.iterations,
        "condensed_converged": converged,
        "artifacts": {"polarization_a": prefix.name + "_a.csv",
                      "polarization_b": prefix.name + "_b.csv"},
    }
    if not converged:
        print("condensed solve did not converge", file=sys.stderr)
        return EXIT_NO_CONVERGENCE, summary
    return EXIT_OK, summary


def _cmd_greens_table(cfg, args, out_dir, rid, lib):
    g = cfg.get("greens")
    if g is None:
        raise ConfigError("greens: required table missing")
    kind = g.get("kind", "scalar")
    if kind == "scalar":
        cm = lib.greens.InfiniteComparisonMedium.scalar_surrogate(
            _number(_need(g, "d", "greens."), "greens.d"),
            _number(_need(g, "q", "greens."), "greens.q"))
    elif kind == "isotropic":
        cm = lib.greens.InfiniteComparisonMedium.isotropic_elastic(
            _number(_need(g, "lam", "greens."), "greens.lam"),
            _number(_need(g, "mu", "greens."), "greens.mu"),
            q=_number(g.get("q", 1.0), "greens.q"))
    else:
        raise ConfigError(f"greens.kind: unknown medium {kind!r}")
    omega = _number(g.get("omega", cfg.get("omega", 1.0)), "greens.omega")
    points = g.get("points")
    if not points:
        raise ConfigError("greens.points: at least one point is required")
    if args.quadrature_order is not None:
        order = (args.quadrature_order, 2 * args.quadrature_order)
    else:
        raw = g.get("order", [32, 64])
        if not (isinstance(raw, list) and len(raw) == 2):
            raise ConfigError("greens.order: expected [polar, azimuth]")
        order = (int(raw[0]), int(raw[1]))

    evaluations = []
    for i, pt in enumerate(points):
        if not (isinstance(pt, list) and len(pt) == 3):
            raise ConfigError(f"greens.points[{i}]: expected [x, y, z]")
        x = lib.np.asarray([_number(v, f"greens.points[{i}]") for v in pt])
        try:
            evaluations.append(lib.greens.greens_evaluate(x, omega, cm,
                                                          order))
        except ValueError as exc:
            raise ConfigError(f"greens.points[{i}]: {exc}")

    table_path = out_dir / f"{rid}_greens-table.csv"
    lib.greens.write_greens_table(table_path, evaluations)
    summary = {
        "units": str(cfg.get("units", "unspecified")),
        "medium": kind,
        "omega": omega,
        "order": list(order),
        "n_points": len(evaluations),
        "max_imaginary_residue": max(e.imaginary_residue
                                     for e in evaluations),
        "artifacts": {"table": table_path.name},
    }
    return EXIT_OK, summary


_COMMANDS = {
    "solve": _cmd_solve,
    "validate": _cmd_validate,
    "tomography": _cmd_tomography,
    "hs-bound": _cmd_hs_bound,
    "greens-table": _cmd_greens_table,
}


def _parser():
    parser = argparse.ArgumentParser(
        prog="wavemin",
        description="Variational solvers for time-harmonic waves in "
                    "dissipative media.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, handler in _COMMANDS.items():
        p = sub.add_parser(name, help=handler.__doc__)
        p.add_argument("--config", required=True,
                       help="TOML run configuration")
        p.add_argument("--out-dir", default=".",
                       help="directory for tables and summaries")
        p.add_argument("--tolerance", type=float, default=None,
                       help="override the solver tolerance")
        p.add_argument("--max-iters", type=int, default=None,
                       help="override the iteration budget")
        p.add_argument("--quadrature-order", type=int, default=None,
                       help="polar quadrature order for kernel tables "
                            "(azimuth uses twice this)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for the randomized solver start")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        _pin_threads()
        lib = _modules()
        cfg = _load_toml(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config: top level must be a table")
        rid = _run_id(cfg, args.config)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        code, summary = _COMMANDS[args.subcommand](cfg, args, out_dir,
                                                   rid, lib)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    path = _write_summary(out_dir, rid, args.subcommand, summary)
    print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
