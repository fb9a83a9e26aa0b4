"""Command-line interface.

Subcommands: sinkhorn, relaxed, mle, project, certify, generate. Reports
are JSON (stdout or --out); samples are CSV. ``--figures DIR`` renders
matplotlib panels plus their underlying series as CSV next to the report.
The env var ENTROPIC_DECONV_LOG sets diagnostic verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import figures
from .costs import cost_from_spec, noise_from_spec
from .deconvolution import (
    ExplicitFiniteClass,
    GridClass,
    KAtomClass,
    mle_estimate,
    project_entropic,
    project_relaxed,
)
from .entropic_ot import SolverConfig, mutual_information, sinkhorn, transport_cost
from .errors import ConvergenceError, EntropicDeconvError
from .measures import DiscreteMeasure, Sample, empirical_measure, second_moment
from .relaxed_ot import relaxed_transport
from .report import Report, RunConfig
from .sampling import generate_sample
from .verification import DEFAULTS, exploratory_consistency, run_certificates

log = logging.getLogger("entropic_deconv")


def _parse_spec(text: str, what: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EntropicDeconvError(f"bad {what} spec (JSON): {exc}") from exc
    if not isinstance(obj, dict) or "kind" not in obj:
        raise EntropicDeconvError(f"{what} spec must be a JSON object with a 'kind' field")
    return obj


def _load_class(spec: dict, dim: int):
    kind = spec.get("kind")
    if kind == "grid":
        atoms = np.asarray(spec["atoms"], dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        return GridClass(atoms)
    if kind == "k-atom":
        return KAtomClass(
            int(spec["k"]),
            seed=int(spec.get("seed", 0)),
            restarts=int(spec.get("restarts", 10)),
        )
    if kind == "explicit":
        return ExplicitFiniteClass(tuple(DiscreteMeasure.load(p) for p in spec["files"]))
    raise EntropicDeconvError(f"unknown class kind {kind!r}")


def _solver_cfg(params) -> SolverConfig | None:
    tol, max_iter = params.get("tol"), params.get("max_iter")
    if tol is None and max_iter is None:
        return None
    return SolverConfig(
        tolerance=tol if tol is not None else 1e-10,
        max_iterations=max_iter if max_iter is not None else 100_000,
    )


def _decimate_trace(trace, limit: int = 200):
    if len(trace) <= limit:
        return [[int(i), float(v)] for i, v in trace]
    idx = np.unique(np.linspace(0, len(trace) - 1, limit).astype(int))
    return [[int(trace[i][0]), float(trace[i][1])] for i in idx]


def _estimator_payload(res) -> dict:
    return {
        "estimate": res.estimate.to_json_dict(),
        "objective_value": res.objective_value,
        "objective_kind": res.objective_kind,
        "converged": res.converged,
        "trace": _decimate_trace(res.trace),
        "note": res.note,
    }


def _run_sinkhorn(cfg: RunConfig) -> dict:
    p = cfg.params
    mu = DiscreteMeasure.load(p["mu"])
    nu = DiscreteMeasure.load(p["nu"])
    cost = cost_from_spec(_parse_spec(p["cost"], "cost"), mu.dim)
    sol = sinkhorn(mu, nu, cost, p["sigma2"], _solver_cfg(p))
    payload = {
        "objective": sol.objective,
        "iterations": sol.iterations,
        "marginal_error": sol.marginal_error,
        "transport_cost": transport_cost(sol.coupling, cost),
        "mutual_information": mutual_information(sol.coupling),
    }
    if p.get("emit_coupling"):
        payload["coupling"] = {
            "row_atoms": sol.coupling.row_atoms.tolist(),
            "col_atoms": sol.coupling.col_atoms.tolist(),
            "mass": sol.coupling.mass.tolist(),
        }
    if p.get("figures"):
        os.makedirs(p["figures"], exist_ok=True)
        payload["figures"] = figures.sinkhorn_trace_figure(sol.error_trace, p["figures"])
    return payload


def _run_relaxed(cfg: RunConfig) -> dict:
    p = cfg.params
    prior = DiscreteMeasure.load(p["p"])
    nu = DiscreteMeasure.load(p["nu"])
    cost = cost_from_spec(_parse_spec(p["cost"], "cost"), prior.dim)
    sol = relaxed_transport(prior, nu, cost, p["sigma2"])
    return {
        "value": sol.value,
        "x_marginal": sol.x_marginal.to_json_dict(),
        "per_row_values": sol.per_row_values.tolist(),
    }


def _run_mle(cfg: RunConfig) -> dict:
    p = cfg.params
    sample = Sample.load_csv(p["sample"])
    noise = noise_from_spec(_parse_spec(p["noise"], "noise"), sample.dim)
    cls = _load_class(_parse_spec(p["class"], "class"), sample.dim)
    res = mle_estimate(sample, cls, noise, _solver_cfg(p))
    return _estimator_payload(res)


def _run_project(cfg: RunConfig) -> dict:
    p = cfg.params
    sample = Sample.load_csv(p["sample"])
    nu = empirical_measure(sample)
    cost = cost_from_spec(_parse_spec(p["cost"], "cost"), sample.dim)
    cls = _load_class(_parse_spec(p["class"], "class"), sample.dim)
    fn = project_entropic if p["mode"] == "entropic" else project_relaxed
    res = fn(cls, nu, cost, p["sigma2"], _solver_cfg(p))
    return _estimator_payload(res)


def _run_certify(cfg: RunConfig) -> dict:
    p = cfg.params
    seeds = None
    if p.get("seeds_file"):
        with open(p["seeds_file"], "r", encoding="utf-8") as fh:
            seeds = json.load(fh)
    reports = run_certificates(
        claims=(p.get("claim", "all"),), seeds=seeds, threads=cfg.threads
    )
    payload = {
        "defaults_version": DEFAULTS.version,
        "reports": [r.to_dict() for r in reports],
        "all_pass": all(r.passed for r in reports),
    }
    if p.get("exploratory"):
        payload["exploratory"] = exploratory_consistency(cfg.seed)
    if p.get("figures"):
        written = []
        for r in payload["reports"]:
            written += figures.certificate_figures(r, p["figures"])
        payload["figures"] = written
    return payload


def _run_generate(cfg: RunConfig) -> dict:
    p = cfg.params
    pstar = DiscreteMeasure.load(p["pstar"])
    noise = noise_from_spec(_parse_spec(p["noise"], "noise"), pstar.dim)
    sample = generate_sample(pstar, noise, p["n"], cfg.seed)
    out = cfg.out or "sample.csv"
    sample.save_csv(out)
    emp = empirical_measure(sample)
    return {
        "n": sample.n,
        "dim": sample.dim,
        "output": out,
        "empirical_mean": sample.points.mean(axis=0).tolist(),
        "empirical_second_moment": second_moment(emp),
    }


_DISPATCH = {
    "sinkhorn": _run_sinkhorn,
    "relaxed": _run_relaxed,
    "mle": _run_mle,
    "project": _run_project,
    "certify": _run_certify,
    "generate": _run_generate,
}


def run(cfg: RunConfig) -> Report:
    """Execute one command; the report payload is deterministic in cfg."""
    if cfg.command not in _DISPATCH:
        raise EntropicDeconvError(f"unknown command {cfg.command!r}")
    start = time.perf_counter()
    payload = _DISPATCH[cfg.command](cfg)
    wall = time.perf_counter() - start
    return Report(config=cfg.to_dict(), payload=payload, wall_time_seconds=wall)


def _add_common(sp, figures_flag=False):
    sp.add_argument("--seed", type=int, default=0, help="64-bit stream seed")
    sp.add_argument("--threads", type=int, default=1,
                    help="opt-in parallelism for independent instances (default 1)")
    sp.add_argument("--out", type=str, default=None, help="report path (default stdout)")
    sp.add_argument("--tol", type=float, default=None, help="solver tolerance override")
    sp.add_argument("--max-iter", type=int, default=None, help="solver iteration cap override")
    if figures_flag:
        sp.add_argument("--figures", type=str, default=None,
                        help="directory for PNG figures + CSV series")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entropic-deconv",
        description="entropic optimal transport and maximum-likelihood deconvolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sinkhorn", help="balanced entropic transport between two measures")
    sp.add_argument("--mu", required=True)
    sp.add_argument("--nu", required=True)
    sp.add_argument("--cost", required=True, help='JSON, e.g. {"kind":"gaussian","sigma2":1.0}')
    sp.add_argument("--sigma2", type=float, required=True)
    sp.add_argument("--emit-coupling", action="store_true")
    _add_common(sp, figures_flag=True)

    sp = sub.add_parser("relaxed", help="relaxed transport of a prior to a target")
    sp.add_argument("--p", required=True)
    sp.add_argument("--nu", required=True)
    sp.add_argument("--cost", required=True)
    sp.add_argument("--sigma2", type=float, required=True)
    _add_common(sp)

    sp = sub.add_parser("mle", help="maximum-likelihood deconvolution")
    sp.add_argument("--sample", required=True)
    sp.add_argument("--class", dest="cls", required=True,
                    help='JSON, e.g. {"kind":"grid","atoms":[...]}')
    sp.add_argument("--noise", required=True)
    _add_common(sp)

    sp = sub.add_parser("project", help="project the empirical measure onto a class")
    sp.add_argument("--sample", required=True)
    sp.add_argument("--class", dest="cls", required=True)
    sp.add_argument("--cost", required=True)
    sp.add_argument("--sigma2", type=float, required=True)
    sp.add_argument("--mode", choices=("entropic", "relaxed"), required=True)
    _add_common(sp)

    sp = sub.add_parser("certify", help="run numerical certificates")
    sp.add_argument("--claim", default="all",
                    choices=("theorem1", "counterexample", "general-noise",
                             "kmeans", "lemma1", "all"))
    sp.add_argument("--seeds", type=str, default=None,
                    help="JSON seed list or {claim: seeds} object")
    sp.add_argument("--exploratory", action="store_true",
                    help="attach the informational consistency study (no pass/fail)")
    _add_common(sp, figures_flag=True)

    sp = sub.add_parser("generate", help="draw a seeded sample Y = X + Z (CSV)")
    sp.add_argument("--pstar", required=True)
    sp.add_argument("--noise", required=True)
    sp.add_argument("--n", type=int, required=True)
    _add_common(sp)
    return parser


def _config_from_args(args) -> RunConfig:
    params: dict = {}
    mapping = {
        "sinkhorn": ("mu", "nu", "cost", "sigma2", "emit_coupling", "figures"),
        "relaxed": ("p", "nu", "cost", "sigma2"),
        "mle": ("sample", "cls", "noise"),
        "project": ("sample", "cls", "cost", "sigma2", "mode"),
        "certify": ("claim", "seeds", "exploratory", "figures"),
        "generate": ("pstar", "noise", "n"),
    }
    rename = {"cls": "class", "seeds": "seeds_file"}
    for name in mapping[args.command]:
        params[rename.get(name, name)] = getattr(args, name)
    if getattr(args, "tol", None) is not None:
        params["tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        params["max_iter"] = args.max_iter
    return RunConfig(
        command=args.command,
        params=params,
        seed=args.seed,
        threads=args.threads,
        out=args.out,
    )


def main(argv=None) -> int:
    level = os.environ.get("ENTROPIC_DECONV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    cfg = _config_from_args(args)
    try:
        report = run(cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EntropicDeconvError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.out:
        report.save(cfg.out)
    else:
        print(report.to_json())
    if cfg.command == "certify" and not report.payload["all_pass"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
