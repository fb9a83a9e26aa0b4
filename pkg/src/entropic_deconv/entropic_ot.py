"""Balanced entropic optimal transport between discrete measures.

The solver is a log-domain (stabilized) Sinkhorn iteration: potentials are
kept as logs and every reduction is a max-subtracted log-sum-exp, so tiny
regularization weights cannot underflow. Forbidden routes (infinite cost)
are excluded from the reductions outright; an instance whose row or column
has no finite-cost route raises a structural error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    EntropicDeconvError,
    InfeasibleTransportError,
)
from .measures import DiscreteMeasure, _as_points

MASS_TOL = 1e-10


def logsumexp_masked(a: np.ndarray, axis: int) -> np.ndarray:
    """log sum exp along ``axis`` where -inf entries are genuinely absent.

    All-(-inf) slices reduce to -inf without warnings.
    """
    m = np.max(a, axis=axis, keepdims=True)
    finite = m > -np.inf
    safe_m = np.where(finite, m, 0.0)
    s = np.sum(np.exp(a - safe_m), axis=axis, keepdims=True, where=np.isfinite(a))
    out = np.where(finite, safe_m + np.log(np.maximum(s, 1e-300)), -np.inf)
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Coupling:
    """A joint discrete measure on pairs (row atom, col atom)."""

    row_atoms: np.ndarray
    col_atoms: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        rows = _as_points(self.row_atoms)
        cols = _as_points(self.col_atoms)
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.shape != (rows.shape[0], cols.shape[0]):
            raise EntropicDeconvError(
                f"mass shape {mass.shape} does not match supports "
                f"({rows.shape[0]}, {cols.shape[0]})"
            )
        if np.any(mass < 0):
            raise EntropicDeconvError("coupling mass must be nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise EntropicDeconvError(f"coupling mass sums to {total!r}, not 1")
        rows, cols, mass = rows.copy(), cols.copy(), mass.copy()
        for arr in (rows, cols, mass):
            arr.setflags(write=False)
        object.__setattr__(self, "row_atoms", rows)
        object.__setattr__(self, "col_atoms", cols)
        object.__setattr__(self, "mass", mass)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape

    def marginal_x(self) -> DiscreteMeasure:
        w = self.mass.sum(axis=1)
        return DiscreteMeasure(self.row_atoms, w / w.sum())

    def marginal_y(self) -> DiscreteMeasure:
        w = self.mass.sum(axis=0)
        return DiscreteMeasure(self.col_atoms, w / w.sum())


def product_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    return Coupling(mu.atoms, nu.atoms, np.outer(mu.weights, nu.weights))


def _weights_of(obj) -> np.ndarray:
    if isinstance(obj, DiscreteMeasure):
        return obj.weights
    if isinstance(obj, Coupling):
        return obj.mass
    return np.asarray(obj, dtype=np.float64)


def shannon_entropy(m) -> float:
    """H = sum w log(1/w) over positive weights; 0 log(1/0) contributes 0."""
    w = _weights_of(m).ravel()
    pos = w[w > 0]
    return float(-np.sum(pos * np.log(pos)))


def kl_divergence(a, b) -> float:
    """D(a || b); +inf when a puts mass where b does not.

    Measures are compared over the union of their atoms; couplings must
    share both supports.
    """
    if isinstance(a, DiscreteMeasure) and isinstance(b, DiscreteMeasure):
        if a.dim != b.dim:
            raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
        da, db = a.as_dict(), b.as_dict()
        total = 0.0
        for key, wa in da.items():
            if wa <= 0:
                continue
            wb = db.get(key, 0.0)
            if wb <= 0:
                return np.inf
            total += wa * np.log(wa / wb)
        return float(total)
    if isinstance(a, Coupling) and isinstance(b, Coupling):
        if not (
            np.array_equal(a.row_atoms, b.row_atoms)
            and np.array_equal(a.col_atoms, b.col_atoms)
        ):
            raise EntropicDeconvError("couplings must share supports for KL")
        pa, pb = a.mass, b.mass
    else:
        pa = np.asarray(_weights_of(a), dtype=np.float64)
        pb = np.asarray(_weights_of(b), dtype=np.float64)
        if pa.shape != pb.shape:
            raise EntropicDeconvError("KL operands must have the same shape")
    mask = pa > 0
    if np.any(pb[mask] <= 0):
        return np.inf
    return float(np.sum(pa[mask] * np.log(pa[mask] / pb[mask])))


def mutual_information(g: Coupling) -> float:
    """I(gamma) = D(gamma || pi_X gamma x pi_Y gamma); finite and >= 0."""
    r = g.mass.sum(axis=1)
    s = g.mass.sum(axis=0)
    prod = np.outer(r, s)
    mask = g.mass > 0
    return float(np.sum(g.mass[mask] * np.log(g.mass[mask] / prod[mask])))


def kl_vs_product(g: Coupling, alpha: DiscreteMeasure, beta: DiscreteMeasure) -> float:
    """D(g || alpha ⊗ beta), evaluated by direct summation over the support."""
    da, db = alpha.as_dict(), beta.as_dict()
    total = 0.0
    for i in range(g.shape[0]):
        ax = da.get(g.row_atoms[i].tobytes(), 0.0)
        for j in range(g.shape[1]):
            m = g.mass[i, j]
            if m <= 0:
                continue
            by = db.get(g.col_atoms[j].tobytes(), 0.0)
            if ax <= 0 or by <= 0:
                return np.inf
            total += m * np.log(m / (ax * by))
    return float(total)


def kl_product_decomposition_check(
    g: Coupling, alpha: DiscreteMeasure, beta: DiscreteMeasure
) -> float:
    """|D(g || alpha x beta) - I(g) - D(pi_X g || alpha) - D(pi_Y g || beta)|.

    When both sides are +inf the identity holds and the residual is 0.
    """
    lhs = kl_vs_product(g, alpha, beta)
    rhs = (
        mutual_information(g)
        + kl_divergence(g.marginal_x(), alpha)
        + kl_divergence(g.marginal_y(), beta)
    )
    if np.isinf(lhs) and np.isinf(rhs):
        return 0.0
    return float(abs(lhs - rhs))


def transport_cost(g: Coupling, c: CostModel) -> float:
    """Integral of the cost against the coupling; +inf if mass sits on a
    forbidden route."""
    C = c.pairwise(g.row_atoms, g.col_atoms)
    mask = g.mass > 0
    if np.any(np.isinf(C[mask])):
        return np.inf
    return float(np.sum(g.mass[mask] * C[mask]))


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    epsilon_scaling: bool = False

    def __post_init__(self):
        if self.tolerance <= 0:
            raise EntropicDeconvError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise EntropicDeconvError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SinkhornSolution:
    coupling: Coupling
    dual_row: np.ndarray
    dual_col: np.ndarray
    iterations: int
    marginal_error: float
    objective: float
    error_trace: np.ndarray = field(repr=False, default=None)


def _log_weights(w: np.ndarray) -> np.ndarray:
    out = np.full(w.shape, -np.inf)
    pos = w > 0
    out[pos] = np.log(w[pos])
    return out


def _check_feasible(A: np.ndarray, active_rows: np.ndarray, active_cols: np.ndarray):
    finite = np.isfinite(A)
    ok_rows = finite[:, active_cols].any(axis=1)
    if not np.all(ok_rows[active_rows]):
        i = int(np.nonzero(active_rows & ~ok_rows)[0][0])
        raise InfeasibleTransportError(f"row {i} has no finite-cost route")
    ok_cols = finite[active_rows, :].any(axis=0)
    if not np.all(ok_cols[active_cols]):
        j = int(np.nonzero(active_cols & ~ok_cols)[0][0])
        raise InfeasibleTransportError(f"column {j} has no finite-cost route")


def _dual_newton(lmu, lnu, A, u0, v0, tol, max_steps=60):
    """Damped Newton ascent on the smooth Sinkhorn dual.

    Escapes the slowly mixing regimes (well-separated clusters) where plain
    alternating sweeps contract at a rate exponentially close to 1. The
    dual gradient is exactly the marginal violation and the Hessian is the
    bordered coupling matrix, so each step is one small dense solve;
    backtracking keeps the violation decreasing.
    """
    m, k = A.shape
    mu = np.exp(lmu)
    nu = np.exp(lnu)

    def state(u, v):
        L = lmu[:, None] + lnu[None, :] + u[:, None] + v[None, :] + A
        with np.errstate(over="ignore"):
            gamma = np.exp(L)
        gr = gamma.sum(axis=1) - mu
        gc = gamma.sum(axis=0) - nu
        err = max(float(np.abs(gr).sum()), float(np.abs(gc).sum()))
        return gamma, gr, gc, err

    u = np.where(np.isfinite(u0), u0, 0.0)
    v = np.where(np.isfinite(v0), v0, 0.0)
    gamma, gr, gc, err = state(u, v)
    for _ in range(max_steps):
        if not np.isfinite(err) or err <= tol:
            break
        r = gamma.sum(axis=1)
        s = gamma.sum(axis=0)
        H = np.zeros((m + k, m + k))
        H[:m, :m] = np.diag(r)
        H[:m, m:] = gamma
        H[m:, :m] = gamma.T
        H[m:, m:] = np.diag(s)
        step, *_ = np.linalg.lstsq(H, -np.concatenate([gr, gc]), rcond=None)
        t = 1.0
        improved = False
        while t > 1e-10:
            u2 = u + t * step[:m]
            v2 = v + t * step[m:]
            gamma2, gr2, gc2, err2 = state(u2, v2)
            if np.isfinite(err2) and err2 < err:
                u, v, gamma, gr, gc, err = u2, v2, gamma2, gr2, gc2, err2
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return u, v


def sinkhorn_core(
    mu_w: np.ndarray,
    nu_w: np.ndarray,
    C: np.ndarray,
    sigma2: float,
    tolerance: float = 1e-10,
    max_iterations: int = 100_000,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
    log_mu: np.ndarray | None = None,
    log_nu: np.ndarray | None = None,
    accelerate: bool = False,
):
    """Array-level log-domain Sinkhorn.

    Parameters
    ----------
    mu_w, nu_w : (m,), (k,) nonnegative weight vectors summing to 1.
    C : (m, k) cost matrix; +inf marks forbidden routes.
    sigma2 : entropic weight > 0.
    warm_start : optional (f, g) dual potentials in cost units.
    log_mu, log_nu : optional exact log-weights, overriding log(mu_w); used
        by solvers that maintain weights in log space.
    accelerate : after a budget of plain sweeps, refine the potentials by
        quasi-Newton ascent on the dual and finish with polishing sweeps.
        Off for the public solver, on inside the projection loops.

    Returns
    -------
    (log_gamma, f, g, iterations, marginal_error, error_trace)
    """
    if sigma2 <= 0:
        raise EntropicDeconvError("sinkhorn requires sigma2 > 0")
    lmu = _log_weights(mu_w) if log_mu is None else np.asarray(log_mu, dtype=np.float64)
    lnu = _log_weights(nu_w) if log_nu is None else np.asarray(log_nu, dtype=np.float64)
    active_rows = lmu > -np.inf
    active_cols = lnu > -np.inf
    A = np.where(np.isfinite(C), -C / sigma2, -np.inf)
    _check_feasible(A, active_rows, active_cols)

    if warm_start is None:
        u = np.zeros(len(lmu))
        v = np.zeros(len(lnu))
    else:
        u = np.asarray(warm_start[0], dtype=np.float64) / sigma2
        v = np.asarray(warm_start[1], dtype=np.float64) / sigma2
        u = np.where(np.isfinite(u), u, 0.0)
        v = np.where(np.isfinite(v), v, 0.0)

    def sweep(u, v):
        u = -logsumexp_masked(lnu[None, :] + v[None, :] + A, axis=1)
        u[~np.isfinite(u)] = 0.0  # rows with zero weight and no route
        v = -logsumexp_masked(lmu[:, None] + u[:, None] + A, axis=0)
        v[~np.isfinite(v)] = 0.0
        log_gamma = lmu[:, None] + lnu[None, :] + u[:, None] + v[None, :] + A
        gamma = np.exp(log_gamma)
        row_err = float(np.abs(gamma.sum(axis=1) - np.exp(lmu)).sum())
        col_err = float(np.abs(gamma.sum(axis=0) - np.exp(lnu)).sum())
        return u, v, log_gamma, max(row_err, col_err)

    trace = []
    err = np.inf
    budget = min(max_iterations, 500) if accelerate else max_iterations
    it = 0
    for _ in range(budget):
        it += 1
        u, v, log_gamma, err = sweep(u, v)
        trace.append(err)
        if err <= tolerance:
            return log_gamma, sigma2 * u, sigma2 * v, it, err, np.asarray(trace)
    if accelerate:
        for _ in range(5):
            u, v = _dual_newton(lmu, lnu, A, u, v, tol=tolerance / 10.0)
            for _ in range(3):
                it += 1
                u, v, log_gamma, err = sweep(u, v)
                trace.append(err)
                if err <= tolerance:
                    return log_gamma, sigma2 * u, sigma2 * v, it, err, np.asarray(trace)
    raise ConvergenceError(
        f"sinkhorn did not reach marginal tolerance {tolerance:g} "
        f"in {it} iterations",
        residual=err,
    )


def sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> SinkhornSolution:
    """Solve min over couplings of mu, nu of  ∫c dγ + sigma2 · I(γ).

    Because both marginals are pinned, I(γ) equals D(γ || mu ⊗ nu), which
    is the quantity the log-domain iteration controls. The returned
    objective is recomputed from the coupling as transport cost plus
    sigma2 times mutual information.

    Raises
    ------
    InfeasibleTransportError
        If some row/column of the cost matrix has no finite entry.
    ConvergenceError
        If the marginal error does not reach ``cfg.tolerance`` within
        ``cfg.max_iterations``; carries the last error.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"dimensions differ: {mu.dim} vs {nu.dim}")
    cfg = cfg or SolverConfig()
    C = c.pairwise(mu.atoms, nu.atoms)

    if cfg.epsilon_scaling and warm_start is None:
        finite = C[np.isfinite(C)]
        spread = float(finite.max() - finite.min()) if finite.size else 0.0
        eps, ladder = sigma2, []
        while eps < spread:
            eps *= 10.0
            ladder.append(eps)
        f = g = None
        for eps in reversed(ladder):
            _, f, g, _, _, _ = sinkhorn_core(
                mu.weights, nu.weights, C, eps,
                tolerance=max(cfg.tolerance, 1e-6),
                max_iterations=cfg.max_iterations,
                warm_start=None if f is None else (f, g),
            )
        warm_start = None if f is None else (f, g)

    log_gamma, f, g, iterations, err, trace = sinkhorn_core(
        mu.weights, nu.weights, C, sigma2,
        tolerance=cfg.tolerance,
        max_iterations=cfg.max_iterations,
        warm_start=warm_start,
    )
    mass = np.exp(log_gamma)
    mass = mass / mass.sum()
    coupling = Coupling(mu.atoms, nu.atoms, mass)
    objective = transport_cost(coupling, c) + sigma2 * mutual_information(coupling)
    return SinkhornSolution(
        coupling=coupling,
        dual_row=f,
        dual_col=g,
        iterations=iterations,
        marginal_error=err,
        objective=float(objective),
        error_trace=trace,
    )


def entropic_ot_value(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig | None = None,
) -> float:
    """W_{sigma2}(mu, nu), the optimal value of `sinkhorn`."""
    return sinkhorn(mu, nu, c, sigma2, cfg).objective


def entropy_formulation_offset(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    c: CostModel,
    sigma2: float,
    cfg: SolverConfig | None = None,
) -> tuple[float, float]:
    """Gap between the mutual-information and plain-entropy objectives.

    Both are evaluated at the solved coupling γ*: the first is
    ∫c dγ* + sigma2 I(γ*), the second ∫c dγ* - sigma2 H(γ*). Their
    difference is sigma2 (H(mu) + H(nu)) whenever the marginals match, so
    the two formulations share minimizers; returns
    (offset_measured, offset_predicted).
    """
    sol = sinkhorn(mu, nu, c, sigma2, cfg)
    gamma = sol.coupling
    measured = sigma2 * (mutual_information(gamma) + shannon_entropy(gamma))
    predicted = sigma2 * (shannon_entropy(mu) + shannon_entropy(nu))
    return float(measured), float(predicted)
