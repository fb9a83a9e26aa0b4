"""Figure rendering for the report path.

Every figure writes a PNG next to a CSV holding the exact series plotted,
so the numbers behind each panel stay machine-readable. Rendering is
opt-in from the CLI (``--figures DIR``); reports themselves remain JSON.
"""
from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (int, float)) else v for v in row])


def _finish(fig, outdir, stem):
    png = os.path.join(outdir, f"{stem}.png")
    fig.tight_layout()
    fig.savefig(png, dpi=150)
    plt.close(fig)
    return png


def sinkhorn_trace_figure(error_trace, outdir, stem="sinkhorn_trace"):
    """Marginal-error convergence of one solve, semilog."""
    trace = np.asarray(error_trace, dtype=float)
    its = np.arange(1, len(trace) + 1)
    _write_csv(os.path.join(outdir, f"{stem}.csv"), ["iteration", "marginal_error"],
               zip(its.tolist(), trace.tolist()))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(its, np.maximum(trace, 1e-300), lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("L1 marginal error")
    ax.set_title("Sinkhorn convergence")
    return [_finish(fig, outdir, stem), os.path.join(outdir, f"{stem}.csv")]


def counterexample_figure(sigma, outdir, stem=None):
    """Transport values and log-likelihoods of the two candidates over the
    disagreement interval; recomputed from the closed forms."""
    stem = stem or f"counterexample_sigma{sigma:g}"
    ys = np.arange(round(101 * sigma), round(300 * sigma)) / 100.0
    w1 = 0.25 * (ys**2 + (ys - 4 * sigma) ** 2)
    w2 = 0.25 * ((ys - 2 * sigma) ** 2 + (ys - 6 * sigma) ** 2)
    s2 = sigma * sigma

    def ll(centers):
        dens = sum(0.5 * np.exp(-((ys - c) ** 2) / (2 * s2)) for c in centers)
        return np.log(dens) - 0.5 * math.log(2 * math.pi * s2)

    l1 = ll((0.0, 4.0 * sigma))
    l2 = ll((2.0 * sigma, 6.0 * sigma))
    _write_csv(
        os.path.join(outdir, f"{stem}.csv"),
        ["y", "w_p1", "w_p2", "loglik_p1", "loglik_p2"],
        zip(ys, w1, w2, l1, l2),
    )
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(ys, w1, label="candidate 1")
    ax1.plot(ys, w2, label="candidate 2")
    ax1.set_xlabel("y")
    ax1.set_ylabel("entropic transport value")
    ax1.legend(fontsize=8)
    ax2.plot(ys, l1, label="candidate 1")
    ax2.plot(ys, l2, label="candidate 2")
    ax2.set_xlabel("y")
    ax2.set_ylabel("log-likelihood")
    ax2.legend(fontsize=8)
    fig.suptitle(f"projection vs likelihood disagreement (sigma={sigma:g})", fontsize=10)
    return [_finish(fig, outdir, stem), os.path.join(outdir, f"{stem}.csv")]


def agreement_figure(details, outdir, stem):
    """Per-seed TV and value-gap residuals of an agreement certificate."""
    recs = [d for d in details if "tv" in d]
    seeds = list(range(len(recs)))
    tv = [max(d["tv"], 1e-18) for d in recs]
    gaps = [max(d["value_gap"], 1e-18) for d in recs]
    _write_csv(
        os.path.join(outdir, f"{stem}.csv"),
        ["instance", "seed", "tv", "value_gap"],
        [(i, d["seed"], d["tv"], d["value_gap"]) for i, d in zip(seeds, recs)],
    )
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.semilogy(seeds, tv, "o", ms=4, label="TV(argmin EM, argmin projection)")
    ax.semilogy(seeds, gaps, "s", ms=4, label="|min V - min W|")
    ax.set_xlabel("instance")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    ax.set_title(stem.replace("_", " "))
    return [_finish(fig, outdir, stem), os.path.join(outdir, f"{stem}.csv")]


def kmeans_figure(detail, outdir, stem="kmeans_annealing"):
    """Gap between the entropic projection objective and the k-means optimum
    along the vanishing-regularization sequence."""
    s2 = detail["sigma2_sequence"]
    gaps = [max(g, 1e-18) for g in detail["entropic_gaps"]]
    _write_csv(os.path.join(outdir, f"{stem}.csv"), ["sigma2", "gap"], zip(s2, gaps))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.loglog(s2, gaps, "o-")
    ax.invert_xaxis()
    ax.set_xlabel("sigma2")
    ax.set_ylabel("objective gap to hard k-means")
    ax.set_title("annealing toward hard clustering")
    return [_finish(fig, outdir, stem), os.path.join(outdir, f"{stem}.csv")]


def lemma1_figure(details, outdir, stem="lemma1_residuals"):
    seeds = [d["seed"] for d in details]
    resid = [max(d["max_residual"], 1e-18) for d in details]
    _write_csv(os.path.join(outdir, f"{stem}.csv"), ["seed", "max_residual"],
               zip(seeds, resid))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(seeds, resid, "o")
    ax.set_xlabel("seed")
    ax.set_ylabel("max |LHS - RHS|")
    ax.set_title("KL product decomposition residuals")
    return [_finish(fig, outdir, stem), os.path.join(outdir, f"{stem}.csv")]


def certificate_figures(report_dict, outdir):
    """Render the figures appropriate to one certificate report dict."""
    os.makedirs(outdir, exist_ok=True)
    claim = report_dict["claim_id"]
    details = report_dict["details"]
    if claim == "theorem1":
        return agreement_figure(details, outdir, "theorem1_agreement")
    if claim == "general-noise":
        return agreement_figure(details, outdir, "general_noise_agreement")
    if claim == "counterexample":
        written = []
        for d in details:
            written += counterexample_figure(d["sigma"], outdir)
        return written
    if claim == "kmeans":
        return kmeans_figure(details[0], outdir)
    if claim == "lemma1":
        return lemma1_figure(details, outdir)
    return []
