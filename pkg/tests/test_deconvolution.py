import itertools
import math

import numpy as np
import pytest

from entropic_deconv import (
    DiscreteMeasure,
    EntropicDeconvError,
    ExplicitFiniteClass,
    GaussianHalfSq,
    GaussianNoise,
    GridClass,
    KAtomClass,
    Sample,
    dirac,
    empirical_measure,
    generate_sample,
    kl_divergence,
    kmeans_hard,
    log_likelihood,
    mle_em_grid,
    mle_estimate,
    project_entropic,
    project_relaxed,
    relaxed_nll_affine,
    relaxed_transport,
    total_variation_distance,
)
from entropic_deconv.rng import make_generator, uniform_open01

from conftest import pgd_mle_weights, random_weights

NOISE = GaussianNoise(1.0, 1)
COST = GaussianHalfSq(1.0, 1)
P1 = DiscreteMeasure([[0.0], [4.0]], [0.5, 0.5])
P2 = DiscreteMeasure([[2.0], [6.0]], [0.5, 0.5])


# ------------------------------------------------------------- log likelihood

def test_loglik_single_atom_at_observation():
    sample = Sample(np.array([[1.5]]))
    assert log_likelihood(dirac([1.5]), sample, NOISE) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-12
    )


def test_loglik_two_atom_structure():
    sample = Sample(np.array([[2.0]]))
    expected = math.log(0.5 * math.exp(0.0) + 0.5 * math.exp(-8.0)) - 0.5 * math.log(2 * math.pi)
    assert log_likelihood(P2, sample, NOISE) == pytest.approx(expected, abs=1e-12)


def test_loglik_relaxed_affine_identity():
    gen = make_generator(77)
    for _ in range(10):
        n = int(gen.integers(2, 8))
        k = int(gen.integers(1, 5))
        atoms = 3.0 * (2 * uniform_open01(gen, (k, 1)) - 1)
        P = DiscreteMeasure(atoms, random_weights(gen, k))
        sample = Sample(4.0 * (2 * uniform_open01(gen, (n, 1)) - 1))
        nu = DiscreteMeasure(sample.points, np.full(n, 1.0 / n))
        ll = log_likelihood(P, sample, NOISE)
        rel = relaxed_transport(P, nu, COST, 1.0).value
        slope, intercept = relaxed_nll_affine(NOISE, n)
        assert rel == pytest.approx(slope * (-ll) + intercept, abs=1e-9)


def test_loglik_unreachable_is_minus_inf():
    from entropic_deconv import WfrCosineNoise

    sample = Sample(np.array([[0.0], [3.0]]))
    assert log_likelihood(dirac([0.0]), sample, WfrCosineNoise(1)) == -math.inf


# ----------------------------------------------------------------------- EM

def test_em_single_atom_grid():
    sample = generate_sample(dirac([1.0]), NOISE, 5, seed=3)
    res = mle_em_grid(sample, GridClass(np.array([[1.0]])), NOISE)
    assert res.estimate.weights[0] == 1.0
    expected = float(NOISE.log_density(sample.points - 1.0).sum())
    assert res.objective_value == pytest.approx(-expected, abs=1e-10)


def test_em_symmetric_sample_gives_symmetric_weights():
    a = 1.5
    sample = Sample(np.array([[-a], [a]]))
    grid = GridClass(np.array([[-a], [0.0], [a]]))
    res = mle_em_grid(sample, grid, NOISE)
    w = res.estimate.weights
    assert w[0] == pytest.approx(w[2], abs=1e-12)


def test_em_monotone_trace_and_convergence():
    sample = generate_sample(P1, NOISE, 12, seed=21)
    grid = GridClass(np.linspace(sample.points.min(), sample.points.max(), 12).reshape(-1, 1))
    res = mle_em_grid(sample, grid, NOISE)
    vals = [v for _, v in res.trace]
    assert all(vals[i + 1] <= vals[i] + 1e-12 for i in range(len(vals) - 1))
    assert res.converged


def test_em_matches_projected_gradient_oracle():
    gen = make_generator(42)
    sample = generate_sample(P1, NOISE, 10, seed=9)
    grid = np.linspace(sample.points.min(), sample.points.max(), 15).reshape(-1, 1)
    res = mle_em_grid(sample, GridClass(grid), NOISE)
    logK = NOISE.log_density(
        (grid[:, None, :] - sample.points[None, :, :]).reshape(-1, 1)
    ).reshape(15, 10)
    _, val = pgd_mle_weights(logK, np.full(10, 0.1))
    assert -res.objective_value / 10 == pytest.approx(val, abs=1e-6)


def test_em_gibbs_fixed_point_certificate():
    # at the EM fixed point, each observation's posterior beats 1000 random
    # perturbed posteriors in the variational objective
    gen = make_generator(4)
    sample = generate_sample(P1, NOISE, 8, seed=13)
    grid = np.linspace(sample.points.min(), sample.points.max(), 10).reshape(-1, 1)
    res = mle_em_grid(sample, GridClass(grid), NOISE)
    P = res.estimate
    from entropic_deconv import gibbs_posterior_row

    for y in sample.points:
        q = gibbs_posterior_row(P, y, COST, 1.0)
        costs = COST.pairwise(P.atoms, y.reshape(1, -1))[:, 0]
        base = float(q.weights @ costs + kl_divergence(q, P))
        dirichlet = -np.log(uniform_open01(gen, (1000, len(P))))
        dirichlet /= dirichlet.sum(axis=1, keepdims=True)
        for trial in dirichlet:
            cand = DiscreteMeasure(P.atoms, trial)
            val = float(trial @ costs + kl_divergence(cand, P))
            assert base <= val + 1e-12


# ------------------------------------------------------------ projections

def test_project_entropic_explicit_prop1_pick():
    cls = ExplicitFiniteClass((P1, P2))
    res = project_entropic(cls, dirac([1.5]), COST, 1.0)
    assert res.estimate is P1
    # recomputed from the closed forms: 2.125 vs 5.125
    assert res.objective_value == pytest.approx(0.25 * (1.5**2 + 2.5**2), abs=1e-10)
    lls = [log_likelihood(p, Sample(np.array([[1.5]])), NOISE) for p in (P1, P2)]
    assert int(np.argmax(lls)) == 1  # the likelihood prefers the other one


def test_project_relaxed_explicit_matches_mle_everywhere():
    cls = ExplicitFiniteClass((P1, P2))
    gen = make_generator(8)
    for _ in range(10):
        n = int(gen.integers(1, 6))
        sample = Sample(6.0 * uniform_open01(gen, (n, 1)))
        nu = empirical_measure(sample)
        rel = project_relaxed(cls, nu, COST, 1.0)
        mle = mle_estimate(sample, cls, NOISE)
        assert rel.estimate is mle.estimate


def test_project_relaxed_dirac_class_picks_best_grid_point():
    gen = make_generator(10)
    points = np.linspace(-2, 2, 9).reshape(-1, 1)
    cls = ExplicitFiniteClass(tuple(dirac(p) for p in points))
    sample = Sample(np.array([[0.3], [0.5], [1.1]]))
    nu = empirical_measure(sample)
    res = project_relaxed(cls, nu, COST, 1.0)
    lls = [log_likelihood(dirac(p), sample, NOISE) for p in points]
    assert np.allclose(res.estimate.atoms, points[int(np.argmax(lls))])


def test_project_grid_agrees_with_em_seeded():
    sample = generate_sample(P1, NOISE, 10, seed=1)
    U = empirical_measure(sample)
    grid = GridClass(np.linspace(sample.points.min(), sample.points.max(), 15).reshape(-1, 1))
    em = mle_em_grid(sample, grid, NOISE)
    pr = project_entropic(grid, U, COST, 1.0)
    assert total_variation_distance(em.estimate, pr.estimate) < 1e-4
    v = relaxed_transport(em.estimate, U, COST, 1.0).value
    assert abs(v - pr.objective_value) < 1e-6
    best = [v for _, v in pr.trace]
    assert all(best[i + 1] <= best[i] + 1e-15 for i in range(len(best) - 1))


def test_project_grid_large_sigma_smoke():
    sample = generate_sample(P1, NOISE, 6, seed=2)
    U = empirical_measure(sample)
    grid = GridClass(sample.points.copy())
    res = project_entropic(grid, U, GaussianHalfSq(50.0, 1), 50.0)
    assert np.isfinite(res.objective_value)


def test_project_entropic_rejects_sigma0():
    with pytest.raises(EntropicDeconvError):
        project_entropic(KAtomClass(2), empirical_measure(
            Sample(np.array([[0.0], [1.0]]))), GaussianHalfSq(0.0, 1), 0.0)


def test_project_katom_two_separated_pairs():
    # two well-separated pairs: centers at the pair means
    sample = Sample(np.array([[-3.1], [-2.9], [2.9], [3.1]]))
    U = empirical_measure(sample)
    res = kmeans_hard(U, 2, restarts=5, seed=0)
    centers = np.sort(res.estimate.atoms.ravel())
    assert np.allclose(centers, [-3.0, 3.0], atol=1e-12)
    assert res.objective_value == pytest.approx(4 * 0.25 * 0.5 * 0.1**2, abs=1e-12)


def test_kmeans_hard_matches_bruteforce():
    from entropic_deconv.verification import kmeans_bruteforce

    sample = generate_sample(P1, GaussianNoise(0.25, 1), 8, seed=7)
    U = empirical_measure(sample)
    hard = kmeans_hard(U, 2, restarts=10, seed=0)
    brute = kmeans_bruteforce(U, 2)
    assert hard.objective_value == pytest.approx(brute, abs=1e-8)
    assert hard.objective_value >= brute - 1e-8


def test_katom_entropic_objective_decreases_with_sigma():
    sample = generate_sample(P1, GaussianNoise(0.25, 1), 8, seed=7)
    U = empirical_measure(sample)
    vals = []
    for s2 in (1.0, 0.1):
        res = project_entropic(KAtomClass(2, restarts=5), U, GaussianHalfSq(s2, 1), s2)
        vals.append(res.objective_value)
        assert res.note  # local-minimum caveat travels with the result
    assert vals[1] < vals[0]


def test_mle_estimate_katom_matches_grid_on_easy_instance():
    sample = generate_sample(P1, NOISE, 30, seed=15)
    res = mle_estimate(sample, KAtomClass(2, restarts=5), NOISE)
    atoms = np.sort(res.estimate.atoms.ravel())
    assert abs(atoms[0] - 0.0) < 1.2 and abs(atoms[1] - 4.0) < 1.2
    assert res.objective_kind == "neg_log_likelihood"


def test_explicit_tie_break_lowest_index():
    twin = DiscreteMeasure([[0.0], [4.0]], [0.5, 0.5])
    cls = ExplicitFiniteClass((P1, twin))
    res = project_entropic(cls, dirac([1.0]), COST, 1.0)
    assert res.estimate is P1
