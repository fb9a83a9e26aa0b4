"""Shared oracles and instance generators.

The oracles here deliberately avoid the library's solution paths: the
coupling-polytope minimizer runs an exponential-cone interior-point
method, the mixing-weight maximizer runs projected gradient ascent in the
Euclidean geometry, and normalizers come from quadrature.
"""
import numpy as np
import pytest

from entropic_deconv import DiscreteMeasure
from entropic_deconv.rng import make_generator, uniform_open01


def random_weights(gen, k):
    w = -np.log(uniform_open01(gen, k))
    return w / w.sum()


def random_measure(gen, k, d=1, scale=2.0):
    atoms = scale * (2.0 * uniform_open01(gen, (k, d)) - 1.0)
    return DiscreteMeasure(atoms, random_weights(gen, k))


@pytest.fixture
def gen():
    return make_generator(20260810)


def bruteforce_entropic_value(mu_w, nu_w, C, sigma2):
    """Minimize ∫C dγ + sigma2 I(γ) over the coupling polytope with an
    interior-point exponential-cone solver (independent of any Sinkhorn
    iteration)."""
    import cvxpy as cp

    m, k = C.shape
    gamma = cp.Variable((m, k), nonneg=True)
    # on M(mu, nu): I(gamma) = -H(gamma) + H(mu) + H(nu)
    objective = cp.sum(cp.multiply(C, gamma)) - sigma2 * cp.sum(cp.entr(gamma))
    constraints = [
        cp.sum(gamma, axis=1) == mu_w,
        cp.sum(gamma, axis=0) == nu_w,
    ]
    prob = cp.Problem(cp.Minimize(objective), constraints)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"oracle solve failed: {prob.status}")
    def ent(w):
        w = w[w > 0]
        return float(-(w * np.log(w)).sum())
    return float(prob.value) + sigma2 * (ent(np.asarray(mu_w)) + ent(np.asarray(nu_w)))


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def pgd_mle_weights(logK, nu_w, iters=20_000, tol=1e-12):
    """Maximize the mixture log-likelihood over the weight simplex by
    projected gradient ascent with backtracking (Euclidean geometry)."""
    g = logK.shape[0]
    K = np.exp(logK)
    w = np.full(g, 1.0 / g)

    def value(w):
        dens = w @ K
        return float(np.dot(nu_w, np.log(dens)))

    val = value(w)
    step = 1.0
    for _ in range(iters):
        dens = w @ K
        grad = K @ (nu_w / dens)
        step = min(step * 2.0, 1e6)
        improved = False
        for _ in range(200):
            w_new = project_simplex(w + step * grad)
            v_new = value(w_new)
            if v_new > val + 1e-18:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = v_new - val
        w, val = w_new, v_new
        if gain < tol:
            break
    return w, val


def pgd_gibbs_row(costs, log_p, sigma2, iters=50_000):
    """Minimize E_q[c] + sigma2 KL(q || p) over the simplex by projected
    gradient descent; the oracle side of the Gibbs closed form."""
    k = len(costs)
    finite = np.isfinite(costs) & np.isfinite(log_p)
    q = np.where(finite, 1.0, 0.0)
    q = q / q.sum()

    def value(q):
        pos = q > 0
        return float(np.dot(q[pos], costs[pos]) + sigma2 * np.dot(q[pos], np.log(q[pos]) - log_p[pos]))

    val = value(q)
    step = 1.0 / (1.0 + sigma2)
    for _ in range(iters):
        pos = q > 0
        grad = np.where(pos, costs + sigma2 * (np.where(pos, np.log(np.maximum(q, 1e-300)), 0.0) - log_p + 1.0), 0.0)
        grad = np.where(finite, grad, 0.0)
        q_new = project_simplex(np.where(finite, q - step * grad, -1e30))
        v_new = value(q_new)
        if v_new < val - 1e-16:
            q, val = q_new, v_new
        else:
            step *= 0.5
            if step < 1e-12:
                break
    return q, val
