"""Maximum-likelihood deconvolution and projection estimators.

Three searchable families are supported: free weights on a fixed grid,
k free atoms with free weights, and an explicit finite list of candidate
measures. The likelihood side is solved by EM (fixed grid) or by an
alternating scheme (k atoms); the projection side minimizes the balanced
entropic transport value directly, by exhaustive evaluation or by
exponentiated-gradient descent on the weight simplex driven by the
solver's dual potentials. The two sides are kept algorithmically
independent so their agreement is evidence, not tautology.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .costs import CostModel, GaussianHalfSq, NoiseModel, neg_log_density_matrix
from .entropic_ot import SolverConfig, logsumexp_masked, sinkhorn, sinkhorn_core
from .errors import EntropicDeconvError
from .measures import DiscreteMeasure, Sample
from .relaxed_ot import relaxed_transport
from .rng import make_generator, uniform_open01

log = logging.getLogger("entropic_deconv")

NEG_LOG_LIKELIHOOD = "neg_log_likelihood"
ENTROPIC_PROJECTION = "entropic_projection"
RELAXED_PROJECTION = "relaxed_projection"

# objective-gain stopping tolerance shared by EM and the alternating solvers
GAIN_TOL = 1e-14


@dataclass(frozen=True)
class GridClass:
    """Free weights on a fixed atom grid; closed under domination."""

    atoms: np.ndarray
    closed_under_domination: bool = True

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise EntropicDeconvError("grid needs a (g, d) atom array")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "atoms", pts)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True)
class KAtomClass:
    """Measures with at most k atoms, free locations and weights.

    ``seed`` keys the k-means++-style initialization; ``restarts`` runs the
    alternating solver from that many seeded starts and keeps the best.
    Closed under domination.
    """

    k: int
    seed: int = 0
    restarts: int = 1
    closed_under_domination: bool = True

    def __post_init__(self):
        if self.k < 1 or self.restarts < 1:
            raise EntropicDeconvError("k and restarts must be >= 1")


@dataclass(frozen=True)
class ExplicitFiniteClass:
    """A finite list of candidate measures; not closed under domination."""

    candidates: tuple[DiscreteMeasure, ...]
    closed_under_domination: bool = False

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise EntropicDeconvError("class needs at least one candidate")
        object.__setattr__(self, "candidates", cands)


MixtureClass = GridClass | KAtomClass | ExplicitFiniteClass


@dataclass(frozen=True)
class EstimatorResult:
    estimate: DiscreteMeasure
    objective_value: float
    objective_kind: str
    trace: tuple[tuple[int, float], ...]
    converged: bool
    note: str | None = None


def _default_cfg(cfg: SolverConfig | None) -> SolverConfig:
    return cfg or SolverConfig(tolerance=GAIN_TOL, max_iterations=100_000)


def _log_kernel(c: CostModel, atoms: np.ndarray, points: np.ndarray) -> np.ndarray:
    """-cost/sigma2_effective, the shared log kernel of likelihood and Gibbs."""
    C = c.pairwise(atoms, points)
    return np.where(np.isfinite(C), -C / c.sigma2_effective, -np.inf)


def log_likelihood(P: DiscreteMeasure, sample: Sample, noise: NoiseModel) -> float:
    """Sum over observations of log of the convolution density at y_i.

    Returns -inf (after logging the first offending row) when some
    observation has zero density under every atom.
    """
    D = neg_log_density_matrix(noise, P.atoms, sample.points)
    T = np.where(P.weights[:, None] > 0, np.log(np.maximum(P.weights[:, None], 1e-300)) - D, -np.inf)
    lse = logsumexp_masked(T, axis=0)
    dead = ~np.isfinite(lse)
    if np.any(dead):
        row = int(np.nonzero(dead)[0][0])
        log.warning("observation %d is unreachable under the given measure", row)
        return -np.inf
    return float(lse.sum())


def _em_core(logK: np.ndarray, nu_w: np.ndarray, cfg: SolverConfig):
    """Fixed-grid EM on the mean log kernel value.

    logK[j, i] = -c(x_j, y_i)/sigma2_eff; observations weighted by nu_w.
    Returns (weights, mean_lse trace, converged).
    """
    g = logK.shape[0]
    log_w = np.full(g, -np.log(g))
    trace: list[float] = []
    converged = False

    def eval_at(log_w):
        T = log_w[:, None] + logK
        lse = logsumexp_masked(T, axis=0)
        if np.any(~np.isfinite(lse) & (nu_w > 0)):
            row = int(np.nonzero(~np.isfinite(lse) & (nu_w > 0))[0][0])
            raise EntropicDeconvError(f"observation {row} unreachable from the grid")
        mean_lse = float(np.dot(nu_w, np.where(np.isfinite(lse), lse, 0.0)))
        return T, lse, mean_lse

    T, lse, mean_lse = eval_at(log_w)
    trace.append(mean_lse)
    for _ in range(cfg.max_iterations):
        R = np.exp(T - np.where(np.isfinite(lse), lse, 0.0)[None, :])
        w = R @ nu_w
        w = w / w.sum()
        log_w = np.where(w > 0, np.log(np.maximum(w, 1e-300)), -np.inf)
        T, lse, mean_lse = eval_at(log_w)
        trace.append(mean_lse)
        if trace[-1] - trace[-2] < cfg.tolerance:
            converged = True
            break
    return np.exp(np.where(np.isfinite(log_w), log_w, -np.inf)), trace, converged


def mle_em_grid(
    sample: Sample,
    cls: GridClass,
    noise: NoiseModel,
    cfg: SolverConfig | None = None,
) -> EstimatorResult:
    """Fixed-support EM for the maximum-likelihood mixing weights.

    E-step: Gibbs posterior of each observation over the grid.
    M-step: average the posteriors. The likelihood trace is monotone.
    """
    cfg = _default_cfg(cfg)
    n = sample.n
    logK = _log_kernel(noise.cost_model(), cls.atoms, sample.points)
    nu_w = np.full(n, 1.0 / n)
    w, mean_trace, converged = _em_core(logK, nu_w, cfg)
    shift = n * noise.log_normalizer()
    nll_trace = tuple((i, -(shift + n * v)) for i, v in enumerate(mean_trace))
    if not converged:
        log.warning("EM hit the iteration cap before the likelihood plateaued")
    return EstimatorResult(
        estimate=DiscreteMeasure(cls.atoms, w / w.sum()),
        objective_value=nll_trace[-1][1],
        objective_kind=NEG_LOG_LIKELIHOOD,
        trace=nll_trace,
        converged=converged,
    )


def _balanced_objective(log_w, lnu, C, sigma2, tol, max_iter, warm):
    log_gamma, f, gdual, _, _, _ = sinkhorn_core(
        np.exp(log_w), np.exp(lnu), C, sigma2,
        tolerance=tol, max_iterations=max_iter,
        warm_start=warm, log_mu=log_w, log_nu=lnu,
        accelerate=True,
    )
    gamma = np.exp(log_gamma)
    mask = gamma > 0
    cost = float(np.sum(gamma[mask] * C[mask]))
    # mutual information in log domain: tiny marginals must not underflow
    log_r = logsumexp_masked(log_gamma, axis=1)
    log_s = logsumexp_masked(log_gamma, axis=0)
    lr = np.broadcast_to(log_r[:, None], gamma.shape)[mask]
    ls = np.broadcast_to(log_s[None, :], gamma.shape)[mask]
    mi = float(np.sum(gamma[mask] * (log_gamma[mask] - lr - ls)))
    return cost + sigma2 * mi, f, gdual


def _project_grid(
    cls: GridClass,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig,
) -> EstimatorResult:
    """Minimize W_{sigma2}(P, nu) over the grid-weight simplex.

    The value is convex in the weights and its gradient is the row dual
    potential of the balanced solve (envelope theorem), so a
    simplex-constrained quasi-Newton iteration with exact gradients drives
    it to a KKT point; every inner solve warm-starts from the previous
    duals. The trace records the running best objective per evaluation.
    """
    from scipy.optimize import minimize

    C = c.pairwise(cls.atoms, nu.atoms)
    lnu = np.where(nu.weights > 0, np.log(np.maximum(nu.weights, 1e-300)), -np.inf)
    g = cls.size
    sink_tol, sink_iter = 1e-10, 100_000
    state: dict = {"warm": None, "best": []}

    def value_and_grad(w):
        w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
        total = w.sum()
        wn = w / total
        log_w = np.where(wn > 0, np.log(np.maximum(wn, 1e-300)), -np.inf)
        val, f, gd = _balanced_objective(log_w, lnu, C, sigma2, sink_tol, sink_iter, state["warm"])
        state["warm"] = (f, gd)
        best = state["best"]
        best.append(val if not best else min(val, best[-1]))
        grad = (f - float(np.dot(wn, f))) / total
        return val, grad

    res = minimize(
        value_and_grad,
        np.full(g, 1.0 / g),
        jac=True,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * g,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0,
                      "jac": lambda w: np.ones(g)}],
        options={"maxiter": min(cfg.max_iterations, 500), "ftol": cfg.tolerance},
    )
    w = np.maximum(res.x, 0.0)
    w = w / w.sum()
    value, _ = value_and_grad(w)
    trace = tuple(enumerate(state["best"]))
    return EstimatorResult(
        estimate=DiscreteMeasure(cls.atoms, w),
        objective_value=float(value),
        objective_kind=ENTROPIC_PROJECTION,
        trace=trace,
        converged=bool(res.status == 0),
    )


def _kmeanspp_seeds(points: np.ndarray, weights: np.ndarray, k: int, gen) -> np.ndarray:
    """k-means++-style seeding over weighted support points."""
    cum = np.cumsum(weights)
    cum = cum / cum[-1]
    first = int(np.searchsorted(cum, uniform_open01(gen), side="right"))
    centers = [points[min(first, len(points) - 1)]]
    for _ in range(k - 1):
        diffs = points[:, None, :] - np.asarray(centers)[None, :, :]
        d2 = np.min(np.einsum("ijk,ijk->ij", diffs, diffs), axis=1)
        scores = weights * d2
        total = scores.sum()
        if total <= 0:
            probs = weights / weights.sum()
        else:
            probs = scores / total
        cumprob = np.cumsum(probs)
        cumprob = cumprob / cumprob[-1]
        idx = int(np.searchsorted(cumprob, uniform_open01(gen), side="right"))
        centers.append(points[min(idx, len(points) - 1)])
    return np.asarray(centers)


def _katom_alternate_once(
    nu: DiscreteMeasure, sigma2: float, atoms0: np.ndarray, cfg: SolverConfig
):
    """One run of the k-atom alternation under the Gaussian cost.

    Alternates Gibbs posterior rows (coupling step), weight update to the
    coupling's first marginal, and atom moves to coupling-weighted means.
    The monitored objective is the relaxed value, which the alternation
    decreases monotonically.
    """
    atoms = np.array(atoms0, dtype=np.float64)
    k = atoms.shape[0]
    log_w = np.full(k, -np.log(k))
    trace: list[float] = []
    prev = np.inf
    converged = False
    for _ in range(cfg.max_iterations):
        diff = atoms[:, None, :] - nu.atoms[None, :, :]
        C = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
        T = log_w[:, None] - C / sigma2
        lse = logsumexp_masked(T, axis=0)
        value = -sigma2 * float(np.dot(nu.weights, lse))
        trace.append(value)
        if prev - value < cfg.tolerance:
            converged = True
            break
        prev = value
        gamma = np.exp(T - lse[None, :]) * nu.weights[None, :]
        w = gamma.sum(axis=1)
        alive = w > 0
        moved = gamma @ nu.atoms
        atoms[alive] = moved[alive] / w[alive, None]
        total = w.sum()
        log_w = np.where(w > 0, np.log(np.maximum(w / total, 1e-300)), -np.inf)
    return DiscreteMeasure(atoms, np.exp(log_w) / np.exp(log_w).sum()), trace, converged


def _project_katom(
    cls: KAtomClass,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig,
    relaxed_units: bool,
) -> EstimatorResult:
    if not isinstance(c, GaussianHalfSq):
        raise EntropicDeconvError("k-atom projection implements the Gaussian cost only")
    gen = make_generator(cls.seed)
    best = None
    for _ in range(cls.restarts):
        atoms0 = _kmeanspp_seeds(nu.atoms, nu.weights, cls.k, gen)
        est, tr, conv = _katom_alternate_once(nu, sigma2, atoms0, cfg)
        if best is None or tr[-1] < best[1][-1]:
            best = (est, tr, conv)
    est, tr, conv = best
    if relaxed_units:
        value = tr[-1]
        kind = RELAXED_PROJECTION
    else:
        value = sinkhorn(est, nu, c, sigma2).objective
        kind = ENTROPIC_PROJECTION
    return EstimatorResult(
        estimate=est,
        objective_value=float(value),
        objective_kind=kind,
        trace=tuple(enumerate(tr)),
        converged=conv,
        note="alternating solver; chosen from "
        f"{cls.restarts} seeded starts, may be a local minimum",
    )


def project_entropic(
    cls: MixtureClass,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig | None = None,
) -> EstimatorResult:
    """argmin over the class of the balanced entropic transport value to nu.

    Explicit classes are evaluated exhaustively (ties: lowest candidate
    index). Grid classes run exponentiated-gradient descent on the weight
    simplex; k-atom classes alternate coupling solves with barycentric atom
    moves. sigma2 = 0 is rejected here; the hard clustering limit lives in
    ``kmeans_hard``.
    """
    if sigma2 <= 0:
        raise EntropicDeconvError("project_entropic needs sigma2 > 0; use kmeans_hard for 0")
    cfg = _default_cfg(cfg)
    if isinstance(cls, ExplicitFiniteClass):
        values = [sinkhorn(P, nu, c, sigma2, SolverConfig()).objective for P in cls.candidates]
        idx = int(np.argmin(values))
        running = np.minimum.accumulate(values)
        return EstimatorResult(
            estimate=cls.candidates[idx],
            objective_value=float(values[idx]),
            objective_kind=ENTROPIC_PROJECTION,
            trace=tuple(enumerate(running)),
            converged=True,
        )
    if isinstance(cls, GridClass):
        return _project_grid(cls, nu, c, sigma2, cfg)
    if isinstance(cls, KAtomClass):
        return _project_katom(cls, nu, c, sigma2, cfg, relaxed_units=False)
    raise EntropicDeconvError(f"unknown class {cls!r}")


def project_relaxed(
    cls: MixtureClass,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig | None = None,
) -> EstimatorResult:
    """argmin over the class of the relaxed transport value to nu.

    The relaxed value is an affine transform of the negative log-likelihood,
    so grid and k-atom classes delegate to the likelihood solvers and only
    re-report the objective in relaxed-transport units; explicit classes use
    the exact closed form per candidate.
    """
    if sigma2 <= 0:
        raise EntropicDeconvError("project_relaxed needs sigma2 > 0")
    cfg = _default_cfg(cfg)
    if isinstance(cls, ExplicitFiniteClass):
        values = [relaxed_transport(P, nu, c, sigma2).value for P in cls.candidates]
        idx = int(np.argmin(values))
        running = np.minimum.accumulate(values)
        return EstimatorResult(
            estimate=cls.candidates[idx],
            objective_value=float(values[idx]),
            objective_kind=RELAXED_PROJECTION,
            trace=tuple(enumerate(running)),
            converged=True,
        )
    if isinstance(cls, GridClass):
        logK = _log_kernel(c, cls.atoms, nu.atoms) * (c.sigma2_effective / sigma2)
        w, mean_trace, converged = _em_core(logK, nu.weights, cfg)
        trace = tuple((i, -sigma2 * v) for i, v in enumerate(mean_trace))
        return EstimatorResult(
            estimate=DiscreteMeasure(cls.atoms, w / w.sum()),
            objective_value=trace[-1][1],
            objective_kind=RELAXED_PROJECTION,
            trace=trace,
            converged=converged,
        )
    if isinstance(cls, KAtomClass):
        return _project_katom(cls, nu, c, sigma2, cfg, relaxed_units=True)
    raise EntropicDeconvError(f"unknown class {cls!r}")


def mle_estimate(
    sample: Sample,
    cls: MixtureClass,
    noise: NoiseModel,
    cfg: SolverConfig | None = None,
) -> EstimatorResult:
    """Maximum-likelihood estimate over the class; reports total NLL."""
    cfg = _default_cfg(cfg)
    if isinstance(cls, GridClass):
        return mle_em_grid(sample, cls, noise, cfg)
    if isinstance(cls, ExplicitFiniteClass):
        lls = [log_likelihood(P, sample, noise) for P in cls.candidates]
        idx = int(np.argmax(lls))
        running = np.minimum.accumulate([-v for v in lls])
        return EstimatorResult(
            estimate=cls.candidates[idx],
            objective_value=float(-lls[idx]),
            objective_kind=NEG_LOG_LIKELIHOOD,
            trace=tuple(enumerate(running)),
            converged=True,
        )
    if isinstance(cls, KAtomClass):
        from .measures import empirical_measure

        cm = noise.cost_model()
        if not isinstance(cm, GaussianHalfSq):
            raise EntropicDeconvError("k-atom MLE implements Gaussian noise only")
        nu = empirical_measure(sample)
        res = _project_katom(cls, nu, cm, cm.sigma2, cfg, relaxed_units=True)
        n = sample.n
        nll = n * (res.objective_value / cm.sigma2 - noise.log_normalizer())
        return EstimatorResult(
            estimate=res.estimate,
            objective_value=float(nll),
            objective_kind=NEG_LOG_LIKELIHOOD,
            trace=tuple((i, n * (v / cm.sigma2 - noise.log_normalizer())) for i, v in res.trace),
            converged=res.converged,
            note=res.note,
        )
    raise EntropicDeconvError(f"unknown class {cls!r}")


def relaxed_nll_affine(noise: NoiseModel, n: int) -> tuple[float, float]:
    """(slope, intercept) with  relaxed value = slope * NLL + intercept.

    NLL is the total negative log-likelihood of an n-point sample and the
    relaxed value is taken against its empirical measure.
    """
    s2 = noise.sigma2_effective
    return s2 / n, s2 * noise.log_normalizer()


def kmeans_hard(
    nu: DiscreteMeasure,
    k: int,
    restarts: int = 10,
    seed: int = 0,
    max_iterations: int = 1_000,
) -> EstimatorResult:
    """Lloyd iterations with hard assignments: the sigma2 = 0 projection.

    Objective is sum_i nu_i * (1/2) ||y_i - nearest center||^2, matching the
    unregularized transport value of a k-atom measure. Best of ``restarts``
    k-means++-seeded runs.
    """
    gen = make_generator(seed)
    pts, w = nu.atoms, nu.weights
    best: tuple | None = None
    for _ in range(restarts):
        centers = _kmeanspp_seeds(pts, w, k, gen)
        trace: list[float] = []
        assign = None
        for _ in range(max_iterations):
            diffs = pts[:, None, :] - centers[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
            new_assign = np.argmin(d2, axis=1)
            obj = 0.5 * float(np.dot(w, d2[np.arange(len(pts)), new_assign]))
            trace.append(obj)
            for j in range(k):
                mask = new_assign == j
                mass = w[mask].sum()
                if mass > 0:
                    centers[j] = (w[mask] @ pts[mask]) / mass
                else:
                    # relocate an empty cluster to the worst-served point
                    worst = int(np.argmax(w * d2[np.arange(len(pts)), new_assign]))
                    centers[j] = pts[worst]
            if assign is not None and np.array_equal(assign, new_assign):
                break
            assign = new_assign
        diffs = pts[:, None, :] - centers[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
        assign = np.argmin(d2, axis=1)
        obj = 0.5 * float(np.dot(w, d2[np.arange(len(pts)), assign]))
        masses = np.array([w[assign == j].sum() for j in range(k)])
        if best is None or obj < best[0]:
            best = (obj, centers.copy(), masses, trace)
    obj, centers, masses, trace = best
    return EstimatorResult(
        estimate=DiscreteMeasure(centers, masses / masses.sum()),
        objective_value=obj,
        objective_kind=ENTROPIC_PROJECTION,
        trace=tuple(enumerate(trace)),
        converged=True,
        note="hard-assignment Lloyd path (sigma2 = 0)",
    )
