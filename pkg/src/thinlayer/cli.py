"""Batch front-end: geometry reports, one-shot spectra, convergence sweeps.

Exit codes: 0 ok, 2 config error, 3 solver error, 4 acceptance violation.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    ambient_dim_of,
    build_electric,
    build_family,
    build_field,
    load_config,
)
from .convergence import SweepSpec, run_sweep, sweep_acceptance
from .eigensolve import lowest_eigenpairs
from .errors import ConfigError, SolverError, ThinLayerError
from .geometry import (
    build_patch,
    check_embedding,
    curvature_regularity_report,
    layer_geometry,
    v_eff,
)
from .magnetics import effective_field, gauge_fix, pullback, zero_layer_potential
from .operators import (
    assemble_comparison,
    assemble_effective,
    assemble_full,
    renormalize,
)

log = logging.getLogger("thinlayer")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json_dump(obj) -> str:
    import json

    return json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n"


def _solver_args(cfg: RunConfig, seed_override):
    return {
        "tol": cfg.solver_opt("tol", 1e-10),
        "seed": seed_override if seed_override is not None else cfg.solver_opt("seed", 42),
        "dense_cutoff": cfg.solver_opt("dense_threshold", None),
    }


def _build_layer_potential(field, layer):
    if field.kind == "zero":
        return zero_layer_potential(layer)
    return gauge_fix(pullback(field, layer))


def cmd_geometry(cfg: RunConfig, out: Path, args) -> int:
    family, grid = build_family(cfg)
    patch = build_patch(family, grid)
    dim = patch.ambient_dim
    has_field = "field" in cfg.raw
    eff = None
    if has_field:
        field = build_field(cfg, dim)
        eff = effective_field(field, patch)

    naxes = len(patch.axes)
    header = [f"i{k + 1}" for k in range(naxes)]
    header += [ax.name for ax in patch.axes]
    header += ["x", "y", "z"][:dim]
    header += [f"kappa_{m + 1}" for m in range(patch.dim)]
    header += [f"K_{m + 1}" for m in range(patch.dim)]
    header += ["v_eff"]
    if eff is not None and dim == 3:
        header += ["b_eff"]
    rows = [",".join(header)]
    gshape = patch.grid_shape
    veff = v_eff(patch.kappa)
    for flat in range(patch.n_nodes):
        idx = np.unravel_index(flat, gshape)
        rec = [str(int(i)) for i in idx]
        rec += [_fmt(patch.axes[k].nodes[idx[k]]) for k in range(naxes)]
        rec += [_fmt(c) for c in patch.x[idx]]
        rec += [_fmt(c) for c in patch.kappa[idx]]
        rec += [_fmt(c) for c in patch.mean_curv[idx]]
        rec += [_fmt(veff[idx])]
        if eff is not None and dim == 3:
            rec += [_fmt(eff.b_eff[idx])]
        rows.append(",".join(rec))

    outs = cfg.raw.get("geometry_outputs", {})
    csv_path = out / outs.get("csv", "geometry.csv")
    json_path = out / outs.get("json", "geometry_summary.json")
    _atomic_write(csv_path, "\n".join(rows) + "\n")

    summary = {
        "family": patch.family.kind,
        "params": patch.family.params,
        "grid": list(gshape),
        "closures": list(patch.closures),
        "rho_m": patch.rho_m,
        "curvature_regularity": curvature_regularity_report(patch),
    }
    if eff is not None:
        summary["field"] = cfg.field.get("kind")
        if dim == 2:
            summary["flux"] = eff.flux
            summary["gauged_out"] = eff.gauged_out
    emb_eps = cfg.geometry.get("embedding_epsilon")
    if emb_eps is not None:
        rep = check_embedding(patch, float(emb_eps))
        summary["embedding"] = {
            "eps": rep.eps,
            "passed": rep.passed,
            "rho_ok": rep.rho_ok,
            "injectivity_ok": rep.injectivity_ok,
            "clearance": rep.clearance,
            "margin": rep.margin,
            "offending_pair": None
            if rep.offending_pair is None
            else [list(map(int, p)) for p in rep.offending_pair],
            "reason": rep.reason,
        }
    _atomic_write(json_path, _json_dump(summary))
    log.info("geometry report: %s, %s", csv_path, json_path)
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path, args) -> int:
    family, grid = build_family(cfg)
    patch = build_patch(family, grid)
    dim = patch.ambient_dim
    field = build_field(cfg, dim)
    electric = build_electric(cfg, dim)
    spec_cfg = cfg.spectrum
    kind = spec_cfg.get("operator", "h-eff")
    order = cfg.solver_opt("scheme_order", None)

    if kind == "h-eff":
        eff = effective_field(field, patch)
        op = assemble_effective(patch, eff, electric, order)
    else:
        eps = spec_cfg.get("epsilon")
        if eps is None:
            raise ConfigError("spectrum of a layer operator needs spectrum.epsilon")
        m_u = spec_cfg.get("m_u", 17)
        layer = layer_geometry(patch, float(eps), int(m_u))
        pot = _build_layer_potential(field, layer)
        if kind in ("full-H", "full-H-renormalized"):
            op = assemble_full(layer, pot, electric, order=order)
            if kind == "full-H-renormalized":
                op = renormalize(op)
        elif kind in ("H0+", "H0-"):
            op, _ = assemble_comparison(
                layer, pot, 1 if kind == "H0+" else -1, electric, order=order
            )
        else:
            raise ConfigError(f"unknown operator kind {kind!r}")

    n_pairs = cfg.solver_opt("n_eigenpairs", 6)
    spectrum = lowest_eigenpairs(op, n_pairs, **_solver_args(cfg, args.seed))

    outs = spec_cfg.get("outputs", {})
    csv_path = out / outs.get("csv", "spectrum.csv")
    lines = ["n,eigenvalue,residual"]
    for i, (v, r) in enumerate(zip(spectrum.values, spectrum.residuals), start=1):
        lines.append(f"{i},{_fmt(v)},{_fmt(r)}")
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    log.info("spectrum: %s", csv_path)

    if spec_cfg.get("dump_eigenvectors"):
        vec_path = out / outs.get("eigenvectors", "eigenvectors.npz")
        vec_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            vec_path,
            values=spectrum.values,
            vectors=spectrum.vectors,
            weights=op.weights,
            grid_shape=np.asarray(op.dofmap.grid_shape),
            m_u=op.dofmap.m_u,
        )
    if spec_cfg.get("dump_operator"):
        base = out / outs.get("matrix", "operator")
        out.mkdir(parents=True, exist_ok=True)
        op.export_matrix_market(base)
    return EXIT_OK


def cmd_converge(cfg: RunConfig, out: Path, args) -> int:
    family, grid = build_family(cfg)
    dim = ambient_dim_of(family.kind) if family.kind != "user-sampled" else (
        family.samples.shape[-1]
    )
    field = build_field(cfg, dim)
    electric = build_electric(cfg, dim)
    sw = cfg.sweep
    if "epsilons" not in sw:
        raise ConfigError("converge needs a sweep.epsilons list")
    spec = SweepSpec(
        family=family,
        grid=grid,
        field=field,
        electric=electric,
        epsilons=tuple(sorted((float(e) for e in sw["epsilons"]), reverse=True)),
        m_u=int(sw.get("m_u", 17)),
        n_pairs=cfg.solver_opt("n_eigenpairs", 1),
        tol=cfg.solver_opt("tol", 1e-11),
        seed=args.seed if args.seed is not None else cfg.solver_opt("seed", 42),
        dense_cutoff=cfg.solver_opt("dense_threshold", None),
        k_override=sw.get("k"),
        order=cfg.solver_opt("scheme_order", None),
        slope_window=tuple(sw.get("slope_window", (0.9, 2.3))),
        slope_min=float(sw.get("slope_min", 0.9)),
        grid_doubling=bool(sw.get("grid_doubling", True)),
        resolvent_iters=int(sw.get("resolvent_iters", 60)),
        threads=args.threads if args.threads else 1,
    )
    report = run_sweep(spec)
    outs = sw.get("outputs", {})
    csv_path = out / outs.get("csv", "converge.csv")
    json_path = out / outs.get("json", "converge_summary.json")
    ok, problems = sweep_acceptance(report)
    summary = report.summary()
    summary["acceptance"] = {"passed": ok, "problems": problems}
    _atomic_write(csv_path, report.to_csv())
    _atomic_write(json_path, _json_dump(summary))
    log.info("sweep report: %s, %s", csv_path, json_path)
    if not ok:
        for p in problems:
            log.warning("acceptance: %s", p)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinlayer",
        description="Magnetic layer operators on curves and surfaces: geometry "
        "reports, spectra and shrinking-width convergence sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("geometry", cmd_geometry, "emit curvature and effective-potential tables"),
        ("spectrum", cmd_spectrum, "assemble one operator and solve lowest pairs"),
        ("converge", cmd_converge, "run a shrinking-width convergence sweep"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="./out", help="output directory")
        p.add_argument(
            "--threads", type=int, default=0, help="worker threads (0 = all cores)"
        )
        p.add_argument("--seed", type=int, default=None, help="override solver seed")
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads == 0:
        args.threads = os.cpu_count() or 1
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        return args.func(cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ThinLayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
