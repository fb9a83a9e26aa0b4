"""One-sided relaxed entropic transport and its closed-form evaluation.

The relaxed problem pins only the second marginal and charges
sigma2 * D(pi_X gamma || mu) for deviating on the first. Its optimal rows
are Gibbs posteriors, so the value has a closed form: one log-sum-exp per
column atom. The variational problem is kept only as a test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostModel, NoiseModel, neg_log_density_cost
from .entropic_ot import (
    Coupling,
    SinkhornSolution,
    SolverConfig,
    kl_divergence,
    logsumexp_masked,
    mutual_information,
    sinkhorn,
    transport_cost,
)
from .errors import DimensionMismatchError, EmptyGibbsSupportError, EntropicDeconvError
from .measures import DiscreteMeasure


@dataclass(frozen=True)
class RelaxedSolution:
    """Optimal value and posterior coupling of the relaxed problem.

    ``posterior_rows`` has pi_Y pinned to nu by construction; its first
    marginal ``x_marginal`` is absolutely continuous with respect to the
    prior but generally differs from it. ``per_row_values`` holds each
    column atom's Gibbs objective, so  value = sum(nu_i * per_row_values_i).
    """

    value: float
    posterior_rows: Coupling
    x_marginal: DiscreteMeasure
    per_row_values: np.ndarray


def _gibbs_log_posteriors(
    log_p: np.ndarray, C: np.ndarray, sigma2: float, nu_w: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """Log posteriors (atoms x observations) and per-column log partition."""
    T = log_p[:, None] + np.where(np.isfinite(C), -C / sigma2, -np.inf)
    lse = logsumexp_masked(T, axis=0)
    dead = ~np.isfinite(lse)
    if np.any(dead):
        if nu_w is None or np.any(nu_w[dead] > 0):
            i = int(np.nonzero(dead)[0][0])
            raise EmptyGibbsSupportError(
                f"observation {i} is at infinite cost from every prior atom"
            )
        lse = np.where(dead, 0.0, lse)  # zero-weight rows: posterior unused
        T = np.where(dead[None, :], -np.inf, T)
    return T - lse[None, :], lse


def gibbs_posterior_row(
    P: DiscreteMeasure, y, c: CostModel, sigma2: float
) -> DiscreteMeasure:
    """The minimizer of  E_Q c(x, y) + sigma2 D(Q || P)  over distributions Q.

    Q(x_j) is proportional to p_j exp(-c(x_j, y) / sigma2), computed in the
    log domain.
    """
    if sigma2 <= 0:
        raise EntropicDeconvError("gibbs posterior requires sigma2 > 0")
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    C = c.pairwise(P.atoms, y)
    log_p = np.where(P.weights > 0, np.log(np.maximum(P.weights, 1e-300)), -np.inf)
    log_q, _ = _gibbs_log_posteriors(log_p, C, sigma2, None)
    return DiscreteMeasure(P.atoms, np.exp(log_q[:, 0]))


def relaxed_transport(
    P: DiscreteMeasure, nu: DiscreteMeasure, c: CostModel, sigma2: float
) -> RelaxedSolution:
    """Relaxed entropic transport value and its posterior coupling.

    value = -sigma2 * sum_i nu_i log sum_j p_j exp(-c(x_j, y_i) / sigma2),
    with the coupling assembled from one Gibbs posterior per column atom.
    """
    if P.dim != nu.dim:
        raise DimensionMismatchError(f"dimensions differ: {P.dim} vs {nu.dim}")
    if sigma2 <= 0:
        raise EntropicDeconvError("relaxed transport requires sigma2 > 0")
    C = c.pairwise(P.atoms, nu.atoms)
    log_p = np.where(P.weights > 0, np.log(np.maximum(P.weights, 1e-300)), -np.inf)
    log_q, lse = _gibbs_log_posteriors(log_p, C, sigma2, nu.weights)
    per_row = -sigma2 * lse
    value = float(np.dot(nu.weights, per_row))
    mass = np.exp(log_q) * nu.weights[None, :]
    coupling = Coupling(P.atoms, nu.atoms, mass)
    x_marg = coupling.marginal_x()
    return RelaxedSolution(
        value=value,
        posterior_rows=coupling,
        x_marginal=x_marg,
        per_row_values=per_row,
    )


def vp_objective(
    P: DiscreteMeasure,
    nu: DiscreteMeasure,
    gamma: Coupling,
    c: CostModel,
    sigma2: float,
) -> float:
    """∫c dγ + sigma2 [I(γ) + D(pi_X γ || P)]  at a given coupling.

    This is the inner expression of the joint objective whose minimum over
    couplings with second marginal nu is the relaxed value; +inf when the
    first marginal escapes P's support.
    """
    if not np.array_equal(gamma.col_atoms, nu.atoms):
        raise EntropicDeconvError("coupling columns must be nu's atoms")
    col = gamma.mass.sum(axis=0)
    if float(np.abs(col - nu.weights).sum()) > 1e-10:
        raise EntropicDeconvError("coupling's second marginal does not match nu")
    base = transport_cost(gamma, c) + sigma2 * mutual_information(gamma)
    return float(base + sigma2 * kl_divergence(gamma.marginal_x(), P))


def general_noise_relaxed(
    P: DiscreteMeasure, nu: DiscreteMeasure, noise: NoiseModel
) -> RelaxedSolution:
    """Relaxed transport with ground cost -log f and unit entropic weight."""
    return relaxed_transport(P, nu, neg_log_density_cost(noise), 1.0)


def general_noise_sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    noise: NoiseModel,
    cfg: SolverConfig | None = None,
) -> SinkhornSolution:
    """Balanced transport with ground cost -log f and unit entropic weight."""
    return sinkhorn(mu, nu, neg_log_density_cost(noise), 1.0, cfg)
