"""Seeded data generation for the deconvolution model Y = X + Z.

Atoms X are drawn by inverse CDF over the mixing weights, then noise Z by
the model's inverse-CDF sampler; both consume the same Philox stream in a
fixed order (all X first, then all Z), so a sample is a pure function of
(measure, noise, n, seed).
"""
from __future__ import annotations

import numpy as np

from .costs import NoiseModel
from .errors import EntropicDeconvError
from .measures import DiscreteMeasure, Sample
from .rng import make_generator, uniform_open01


def sample_atoms(m: DiscreteMeasure, gen, n: int) -> np.ndarray:
    """n atom draws from the measure by inverse CDF on its weights."""
    cum = np.cumsum(m.weights)
    cum = cum / cum[-1]
    u = uniform_open01(gen, n)
    idx = np.minimum(np.searchsorted(cum, u, side="right"), len(m) - 1)
    return m.atoms[idx]


def generate_sample(pstar: DiscreteMeasure, noise: NoiseModel, n: int, seed: int) -> Sample:
    """Draw Y_i = X_i + Z_i with X ~ pstar and Z ~ noise, keyed by seed."""
    if n < 1:
        raise EntropicDeconvError("n must be >= 1")
    if pstar.dim != noise.dim:
        raise EntropicDeconvError(
            f"measure dim {pstar.dim} does not match noise dim {noise.dim}"
        )
    gen = make_generator(seed)
    xs = sample_atoms(pstar, gen, n)
    zs = noise.sample(gen, n)
    return Sample(xs + zs)
