"""Command line harness for adaptive runs.

Writes a fixed set of files into the output directory:

  run.csv         one row per adaptive level (schema in schema.txt); the
                  wall_ms column is always 0 so that identical inputs give
                  byte-identical output, real timings go to timings.csv
  timings.csv     wall-clock timings of the harness phases, milliseconds
  decay.dat       n_dofs and estimator totals, whitespace separated, for
                  quick plotting
  schema.txt      column documentation for run.csv
  elements_NNN.csv / vertices_NNN.csv
                  per-level local indicators (element and vertex families)
  hypotheses.csv  localisation ratios between consecutive levels (with
                  --hypotheses on)
  mesh_final.tri / mesh_final.vtk, flux_delta.txt / flux_total.txt
                  optional exports of the final level

A key=value config file can preset any option; explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .afem import AfemConfig, check_hypotheses, run
from .problems import REGISTRY

_RUN_COLUMNS = [
    "level", "n_elements", "n_dofs", "energy_error", "eta_delta",
    "eta_star", "eta_star_singlecount", "eta_res", "eta_res_patch",
    "osc", "osc_star", "n_marked", "theta", "b", "wall_ms",
]

_SCHEMA_NOTES = {
    "level": "adaptive loop index, starting at 0",
    "n_elements": "triangles in the level mesh",
    "n_dofs": "dimension of the finite element space",
    "energy_error": "energy norm error against the exact solution, "
                    "nan when no closed form is registered",
    "eta_delta": "guaranteed elementwise flux estimator, total",
    "eta_star": "starwise flux estimator, element-major double-count total",
    "eta_star_singlecount": "starwise flux estimator, plain root sum "
                            "of squares over vertices",
    "eta_res": "classical residual estimator, total",
    "eta_res_patch": "hat-weighted patchwise residual estimator, "
                     "double-count total",
    "osc": "elementwise data oscillation, total",
    "osc_star": "patchwise data oscillation, double-count total",
    "n_marked": "elements selected by the bulk criterion",
    "theta": "bulk marking parameter",
    "b": "bisections applied to each marked element",
    "wall_ms": "always 0; see timings.csv for real timings",
}

_DEFAULTS = {
    "problem": "lshape_one",
    "degree": 1,
    "estimator": "delta",
    "theta": 0.5,
    "bisections": "auto",
    "max_dofs": 10_000,
    "max_levels": 40,
    "out": "afem_out",
    "export_mesh": "none",
    "export_flux": False,
    "hypotheses": "off",
}

_CASTS = {
    "degree": int, "theta": float, "max_dofs": int, "max_levels": int,
    "export_flux": lambda s: str(s).lower() in ("1", "true", "yes", "on"),
}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="afemflux",
        description="adaptive Poisson solver with equilibrated flux "
                    "error control")
    p.add_argument("--problem", choices=sorted(REGISTRY),
                   help="registered model problem")
    p.add_argument("--degree", type=int, choices=[1, 2, 3, 4],
                   help="polynomial degree of the trial space")
    p.add_argument("--estimator",
                   choices=["delta", "star", "residual", "residual_star"],
                   help="indicator family driving the marking")
    p.add_argument("--theta", type=float,
                   help="bulk marking parameter in (0, 1]")
    p.add_argument("--bisections",
                   help="bisections per marked element, or 'auto' for the "
                        "interior-node depth of the initial mesh")
    p.add_argument("--max-dofs", type=int, dest="max_dofs",
                   help="stop once the space reaches this many unknowns")
    p.add_argument("--max-levels", type=int, dest="max_levels",
                   help="maximum number of adaptive levels")
    p.add_argument("--out", help="output directory")
    p.add_argument("--export-mesh", choices=["none", "tri", "vtk"],
                   dest="export_mesh", help="write the final mesh")
    p.add_argument("--export-flux", action="store_true", default=None,
                   dest="export_flux",
                   help="write the reconstructed flux of the final level")
    p.add_argument("--hypotheses", choices=["on", "off"],
                   help="evaluate localisation ratios between levels")
    p.add_argument("--config",
                   help="key=value file supplying defaults for any option")
    return p


def parse_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, "
                                 f"got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
            out[key] = _CASTS.get(key, str)(value)
    return out


def _merge_options(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if args.config:
        cfg.update(parse_config_file(args.config))
    for key in _DEFAULTS:
        cli_val = getattr(args, key)
        if cli_val is not None:
            cfg[key] = cli_val
    return cfg


def write_run_csv(path, records) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_RUN_COLUMNS) + "\n")
        for r in records:
            row = [str(r.level), str(r.n_elements), str(r.n_dofs),
                   _fmt(r.energy_error), _fmt(r.eta_delta), _fmt(r.eta_star),
                   _fmt(r.eta_star_single), _fmt(r.eta_res),
                   _fmt(r.eta_res_star), _fmt(r.osc), _fmt(r.osc_star),
                   str(r.n_marked), _fmt(r.theta), str(r.b), "0"]
            fh.write(",".join(row) + "\n")


def write_schema(path) -> None:
    with open(path, "w") as fh:
        fh.write("run.csv columns, in order\n\n")
        for name in _RUN_COLUMNS:
            fh.write(f"{name}: {_SCHEMA_NOTES[name]}\n")


def write_decay(path, records, estimator: str) -> None:
    key = {"delta": "eta_delta", "star": "eta_star",
           "residual": "eta_res", "residual_star": "eta_res_star"}[estimator]
    with open(path, "w") as fh:
        fh.write(f"# n_dofs {key} energy_error\n")
        for r in records:
            fh.write(f"{r.n_dofs} {_fmt(getattr(r, key))} "
                     f"{_fmt(r.energy_error)}\n")


def write_level_indicators(outdir, levels) -> None:
    for i, state in enumerate(levels):
        rep = state.report
        with open(os.path.join(outdir, f"elements_{i:03d}.csv"), "w") as fh:
            fh.write("element,eta_delta,eta_res,osc\n")
            for t in range(rep.mesh.n_triangles):
                fh.write(f"{t},{_fmt(rep.eta_delta[t])},"
                         f"{_fmt(rep.eta_res[t])},{_fmt(rep.osc[t])}\n")
        with open(os.path.join(outdir, f"vertices_{i:03d}.csv"), "w") as fh:
            fh.write("vertex,eta_star,eta_res_star,osc_star\n")
            for v in range(rep.mesh.n_vertices):
                fh.write(f"{v},{_fmt(rep.eta_star[v])},"
                         f"{_fmt(rep.eta_res_star[v])},"
                         f"{_fmt(rep.osc_star[v])}\n")


def write_hypotheses(path, report) -> None:
    with open(path, "w") as fh:
        fh.write(f"# j_star = {report.j_star}\n")
        fh.write("level_coarse,level_fine,h1,h2,h3,h4,lam1,lam2\n")
        for row in report.rows:
            fh.write(f"{row.level_coarse},{row.level_fine},"
                     f"{_fmt(row.h1)},{_fmt(row.h2)},{_fmt(row.h3)},"
                     f"{_fmt(row.h4)},{_fmt(row.lam1)},{_fmt(row.lam2)}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _merge_options(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))

    bis = opts["bisections"]
    if bis != "auto":
        try:
            bis = int(bis)
        except ValueError:
            parser.error(f"--bisections must be an integer or 'auto', "
                         f"got {opts['bisections']!r}")
    if not 0.0 < opts["theta"] <= 1.0:
        parser.error(f"--theta must be in (0, 1], got {opts['theta']}")

    config = AfemConfig(
        problem=opts["problem"], degree=opts["degree"],
        estimator=opts["estimator"], theta=opts["theta"], bisections=bis,
        max_dofs=opts["max_dofs"], max_levels=opts["max_levels"],
        keep_levels=True,
    )

    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    timings = []
    t0 = time.perf_counter()

    try:
        result = run(config)
    except ValueError as exc:
        parser.error(str(exc))
    t1 = time.perf_counter()
    timings.append(("adaptive_run", (t1 - t0) * 1e3))

    for r in result.records:
        print(f"level {r.level:3d}  elements {r.n_elements:7d}  "
              f"dofs {r.n_dofs:7d}  estimator {getattr(r, 'eta_delta'):.6e}  "
              f"marked {r.n_marked}")
    print(f"stopped: {result.stop_reason} after {len(result.records)} levels "
          f"(b={result.b})")

    write_run_csv(os.path.join(outdir, "run.csv"), result.records)
    write_schema(os.path.join(outdir, "schema.txt"))
    write_decay(os.path.join(outdir, "decay.dat"), result.records,
                opts["estimator"])
    write_level_indicators(outdir, result.levels)

    if opts["hypotheses"] == "on":
        th = time.perf_counter()
        if len(result.levels) >= 2:
            write_hypotheses(os.path.join(outdir, "hypotheses.csv"),
                             check_hypotheses(result))
        timings.append(("hypotheses", (time.perf_counter() - th) * 1e3))

    te = time.perf_counter()
    final = result.levels[-1]
    if opts["export_mesh"] == "tri":
        final.mesh.save_tri(os.path.join(outdir, "mesh_final.tri"))
    elif opts["export_mesh"] == "vtk":
        final.mesh.save_vtk(os.path.join(outdir, "mesh_final.vtk"))
    if opts["export_flux"]:
        flux = final.report.flux
        flux.q_delta.save_txt(os.path.join(outdir, "flux_delta.txt"))
        flux.total_flux().save_txt(os.path.join(outdir, "flux_total.txt"))
    timings.append(("exports", (time.perf_counter() - te) * 1e3))
    timings.append(("total", (time.perf_counter() - t0) * 1e3))

    with open(os.path.join(outdir, "timings.csv"), "w") as fh:
        fh.write("phase,wall_ms\n")
        for name, ms in timings:
            fh.write(f"{name},{ms:.3f}\n")

    print(f"wrote {outdir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
