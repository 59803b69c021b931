"""Command-line entry point and report writers."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .mesh import InterfaceTopology, StructuredMesh
from .problem import Problem, ProblemSpec
from .solver import SolveReport
from .topopt import run_topopt

log = logging.getLogger("ddelastic")

ITERATION_COLUMNS = ("h", "N", "theta", "precond", "task", "outer_iters", "avg_inner_pcg",
                     "inner_pcg_per_step", "fixed_point", "status")
ESTIMATE_COLUMNS = ("h", "N", "theta", "precond", "outer_iterations", "subdomain_seconds",
                    "pcg_iterations", "precond_apply_seconds", "faces",
                    "per_iteration_seconds", "total_seconds")


@dataclass(frozen=True)
class TimeEstimate:
    outer_iterations: int
    subdomain_seconds: float
    pcg_iterations: float
    precond_apply_seconds: float
    faces: int

    @property
    def per_iteration_seconds(self) -> float:
        return (self.subdomain_seconds
                + self.pcg_iterations * self.precond_apply_seconds / self.faces)

    @property
    def total_seconds(self) -> float:
        return self.outer_iterations * self.per_iteration_seconds


def time_estimate(outer_iterations, subdomain_seconds, pcg_iterations, precond_apply_seconds,
                  faces) -> TimeEstimate:
    if faces <= 0:
        raise ValueError("parallel time estimate needs at least one interface face")
    return TimeEstimate(int(outer_iterations), float(subdomain_seconds), float(pcg_iterations),
                        float(precond_apply_seconds), int(faces))


def estimate_parallel_time(report: SolveReport, topology: InterfaceTopology) -> TimeEstimate:
    """Parallel time from measured parts: subdomain solves run concurrently and the
    face-block preconditioner work is shared between the faces."""
    return time_estimate(report.outer_iterations, report.subdomain_seconds,
                         report.avg_inner_pcg, report.precond_apply_seconds, topology.n_faces)


def _g(x) -> str:
    return format(float(x), ".17g")


def emit_fields(mesh: StructuredMesh, u, path, rho=None, vtk=True) -> list[Path]:
    """Write nodal displacements (and element densities) into directory ``path``.

    ``u`` holds both components of every node, interleaved (x, y).
    """
    path = Path(path)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (2 * mesh.n_nodes,):
        raise ValueError(f"expected {2 * mesh.n_nodes} displacement entries, got {u.shape}")
    xy = mesh.node_coords()
    ux, uy = u[0::2], u[1::2]
    written = []
    try:
        path.mkdir(parents=True, exist_ok=True)
        out = path / "fields.csv"
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "ux", "uy", "x_deformed", "y_deformed"])
            for i in range(mesh.n_nodes):
                w.writerow([i, _g(xy[i, 0]), _g(xy[i, 1]), _g(ux[i]), _g(uy[i]),
                            _g(xy[i, 0] + ux[i]), _g(xy[i, 1] + uy[i])])
        written.append(out)
        if rho is not None:
            rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (mesh.n_elements,))
            out = path / "density.csv"
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["element", "rho"])
                w.writerows([e, _g(r)] for e, r in enumerate(rho))
            written.append(out)
        if vtk:
            out = path / "fields.vtk"
            with open(out, "w") as fh:
                fh.write("# vtk DataFile Version 3.0\ndisplacement field\nASCII\n")
                fh.write("DATASET STRUCTURED_GRID\n")
                fh.write(f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1\n")
                fh.write(f"POINTS {mesh.n_nodes} double\n")
                for x, y in xy:
                    fh.write(f"{_g(x)} {_g(y)} 0\n")
                fh.write(f"POINT_DATA {mesh.n_nodes}\nVECTORS displacement double\n")
                for a, b in zip(ux, uy):
                    fh.write(f"{_g(a)} {_g(b)} 0\n")
                if rho is not None:
                    fh.write(f"CELL_DATA {mesh.n_elements}\nSCALARS density double 1\n"
                             "LOOKUP_TABLE default\n")
                    fh.writelines(f"{_g(r)}\n" for r in rho)
            written.append(out)
    except OSError as exc:
        raise OSError(f"cannot write fields to {path}: {exc.strerror or exc}") from exc
    return written


def read_fields_csv(path):
    """Inverse of the fields.csv writer: returns (coords, u interleaved)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    u = np.empty(2 * len(data))
    u[0::2], u[1::2] = data[:, 3], data[:, 4]
    return data[:, 1:3], u


def _h_label(h) -> str:
    f = Fraction(h).limit_denominator(1 << 20)
    return str(f)


def _problem(cfg: RunConfig, h, n) -> Problem:
    px, py = cfg.partition(n)
    return Problem(ProblemSpec(h=h, px=px, py=py, material=cfg.material(), load=cfg.load()))


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _solve_one(cfg: RunConfig, h, n, theta, precond):
    problem = _problem(cfg, h, n)
    u, report, sys_, _ = problem.solve(precond, norm_cfg=cfg.norm(theta), krylov_cfg=cfg.krylov(),
                                       workers=cfg.workers)
    row = {"h": _h_label(h), "N": n, "theta": theta if precond == "hnorm" else "",
           "precond": precond, "task": "solve", "outer_iters": report.outer_iterations,
           "avg_inner_pcg": f"{np.mean(report.pcg_per_solve) if report.pcg_per_solve else 0:.2f}",
           "inner_pcg_per_step": f"{report.avg_inner_pcg:.2f}", "fixed_point": "",
           "status": "ok" if report.stats.converged else "not_converged"}
    estimate = None
    if problem.topology.n_faces:
        estimate = estimate_parallel_time(report, problem.topology)
    return problem, u, report, row, estimate


def _estimate_row(row, est: TimeEstimate):
    out = {k: row[k] for k in ("h", "N", "theta", "precond")}
    out.update(outer_iterations=est.outer_iterations, subdomain_seconds=_g(est.subdomain_seconds),
               pcg_iterations=_g(est.pcg_iterations),
               precond_apply_seconds=_g(est.precond_apply_seconds), faces=est.faces,
               per_iteration_seconds=_g(est.per_iteration_seconds),
               total_seconds=_g(est.total_seconds))
    return out


def run_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h, n, theta, precond = cfg.grid()[0]
    problem, u, report, row, est = _solve_one(cfg, h, n, theta, precond)
    _write_rows(out / "iterations.csv", ITERATION_COLUMNS, [row])
    report.stats.write_csv(out / "residuals.csv")
    if est is not None:
        _write_rows(out / "estimate.csv", ESTIMATE_COLUMNS, [_estimate_row(row, est)])
    emit_fields(problem.mesh, problem.dofmap.to_global(u), out)
    log.info("%s: %d iterations, true residual %.2e", precond, report.outer_iterations,
             report.true_residual)
    return 0 if report.stats.converged else 1


def _topopt_one(cfg: RunConfig, h, n, theta, precond):
    problem = _problem(cfg, h, n)
    rep = run_topopt(problem, cfg.oc(), precond, cfg.norm(theta),
                     volume_fraction=cfg.volume_fraction, warm_start=cfg.warm_start,
                     weighted_norm=cfg.weighted_norm)
    row = {"h": _h_label(h), "N": n, "theta": theta if precond == "hnorm" else "",
           "precond": precond, "task": "topopt", "outer_iters": f"{rep.avg_gmres:.2f}",
           "avg_inner_pcg": "", "inner_pcg_per_step": "", "fixed_point": rep.summary(),
           "status": "ok" if rep.converged else "not_converged"}
    return problem, rep, row


def run_topopt_cmd(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h, n, theta, precond = cfg.grid()[0]
    problem, rep, row = _topopt_one(cfg, h, n, theta, precond)
    rep.write_csv(out / "iterations.csv")
    _write_rows(out / "summary.csv", ITERATION_COLUMNS, [row])
    emit_fields(problem.mesh, problem.dofmap.to_global(rep.u), out, rho=rep.density.rho)
    log.info("topopt: %s fixed-point iterations (avg GMRES), converged=%s",
             rep.summary(), rep.converged)
    return 0 if rep.converged else 1


def run_sweep(cfg: RunConfig) -> list[dict]:
    """Run every grid cell; failures become rows with status ``failed: ...``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, estimates = [], []
    for h, n, theta, precond in cfg.grid():
        try:
            if cfg.sweep_task == "topopt":
                _, _, row = _topopt_one(cfg, h, n, theta, precond)
            else:
                _, _, _, row, est = _solve_one(cfg, h, n, theta, precond)
                if est is not None:
                    estimates.append(_estimate_row(row, est))
        except Exception as exc:  # one bad cell must not stop the sweep
            log.warning("run h=%s N=%d theta=%s %s failed: %s", _h_label(h), n, theta, precond, exc)
            row = {"h": _h_label(h), "N": n, "theta": theta, "precond": precond,
                   "task": cfg.sweep_task, "status": f"failed: {type(exc).__name__}: {exc}"}
        log.info("%s", row)
        rows.append(row)
    _write_rows(out / "iterations.csv", ITERATION_COLUMNS, rows)
    if estimates:
        _write_rows(out / "estimate.csv", ESTIMATE_COLUMNS, estimates)
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="ddelastic", parents=[common],
                                     description="Domain-decomposed elasticity solver.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("solve", "topopt", "sweep"):
        p = sub.add_parser(mode, parents=[common])
        lists = mode == "sweep"
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--h", help="mesh size, e.g. 1/32" + (" (comma list)" if lists else ""))
        p.add_argument("--domains", help="number of subdomains" + (" (comma list)" if lists else ""))
        p.add_argument("--theta", help="fractional index in [0, 1]")
        p.add_argument("--precond", help="identity, hnorm or exact-schur")
        p.add_argument("--tol", help="relative residual tolerance")
        p.add_argument("--k", help="Lanczos basis size")
        p.add_argument("--workers", help="threads for subdomain solves")
        p.add_argument("--out", help="output directory")
        if lists:
            p.add_argument("--task", dest="sweep_task", help="solve or topopt")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {"mode": args.mode}
    for key in ("h", "domains", "theta", "precond", "tol", "k", "workers", "out", "sweep_task"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    return parse_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        parser.error(str(exc))
    try:
        if cfg.mode == "sweep":
            run_sweep(cfg)
            return 0
        return run_solve(cfg) if cfg.mode == "solve" else run_topopt_cmd(cfg)
    except Exception as exc:
        log.error("%s failed: %s", cfg.mode, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
