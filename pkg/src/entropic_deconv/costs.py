"""Ground costs c(x, y) and the noise models that induce them.

Each built-in noise model with density f pairs with a cost model so that

    log f(z) = log_normalizer - cost(z, 0) / sigma2_effective.

The Gaussian keeps its variance explicit (cost ``0.5 * ||x-y||^2`` with
entropic weight sigma^2); the general-noise costs are pre-divided, so
their effective entropic weight is 1. Infinite costs are genuine IEEE
infinities marking structurally forbidden routes, never large sentinels.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.spatial.distance import cdist
from scipy.special import gammaln, ndtri

from .errors import DimensionMismatchError, EntropicDeconvError
from .rng import uniform_open01

_HALF_PI = math.pi / 2.0


def _check_points(xs, ys, dim: int):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != dim or ys.shape[1] != dim:
        raise DimensionMismatchError(
            f"points of dimension {xs.shape[1]}/{ys.shape[1]}, cost model has dim {dim}"
        )
    return xs, ys


class CostModel:
    """Base class; subclasses implement ``pairwise``."""

    kind: str = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise EntropicDeconvError("dim must be >= 1")
        self.dim = int(dim)

    def pairwise(self, xs, ys) -> np.ndarray:
        """Cost matrix C[i, j] = c(xs[i], ys[j]); entries may be +inf."""
        raise NotImplementedError

    def cost(self, x, y) -> float:
        xs, ys = _check_points(x, y, self.dim)
        return float(self.pairwise(xs, ys)[0, 0])

    def lower_bound(self) -> float:
        """A finite lower bound on every finite cost value."""
        return 0.0

    @property
    def sigma2_effective(self) -> float:
        return 1.0

    def noise_model(self) -> "NoiseModel":
        raise EntropicDeconvError(f"cost model {self.kind!r} has no paired noise model")

    def spec(self) -> dict:
        raise NotImplementedError


class GaussianHalfSq(CostModel):
    """c(x, y) = 0.5 ||x - y||^2, paired with N(0, sigma2) noise."""

    kind = "gaussian"

    def __init__(self, sigma2: float, dim: int = 1):
        super().__init__(dim)
        if sigma2 < 0:
            raise EntropicDeconvError("sigma2 must be >= 0")
        self.sigma2 = float(sigma2)

    def pairwise(self, xs, ys):
        xs, ys = _check_points(xs, ys, self.dim)
        return 0.5 * cdist(xs, ys, "sqeuclidean")

    @property
    def sigma2_effective(self) -> float:
        return self.sigma2

    def noise_model(self) -> "GaussianNoise":
        if self.sigma2 <= 0:
            raise EntropicDeconvError("sigma2 = 0 has no noise density")
        return GaussianNoise(self.sigma2, self.dim)

    def spec(self) -> dict:
        return {"kind": self.kind, "sigma2": self.sigma2}


class PExponential(CostModel):
    """c(x, y) = ||x - y||_p^p, paired with density proportional to exp(-||z||_p^p)."""

    kind = "p-exponential"

    def __init__(self, p: float, dim: int = 1):
        super().__init__(dim)
        if p < 1:
            raise EntropicDeconvError("p must be >= 1")
        self.p = float(p)

    def pairwise(self, xs, ys):
        xs, ys = _check_points(xs, ys, self.dim)
        return cdist(xs, ys, "minkowski", p=self.p) ** self.p

    @property
    def sigma2_effective(self) -> float:
        return 1.0

    def noise_model(self) -> "PExponentialNoise":
        return PExponentialNoise(self.p, self.dim)

    def spec(self) -> dict:
        return {"kind": self.kind, "p": self.p}


class WfrCosine(CostModel):
    """c(x, y) = -log cos^2(||x - y|| ∧ pi/2); +inf from ||x - y|| >= pi/2 on."""

    kind = "wfr-cosine"

    def pairwise(self, xs, ys):
        xs, ys = _check_points(xs, ys, self.dim)
        r = cdist(xs, ys, "euclidean")
        out = np.full(r.shape, np.inf)
        inside = r < _HALF_PI
        out[inside] = -2.0 * np.log(np.cos(r[inside]))
        return out

    def noise_model(self) -> "WfrCosineNoise":
        return WfrCosineNoise(self.dim)

    def spec(self) -> dict:
        return {"kind": self.kind}


class CustomCost(CostModel):
    """Cost given by an arbitrary pairwise function; normalizer must be declared."""

    kind = "custom"

    def __init__(self, fn, dim: int, lower_bound: float = 0.0, normalizer: float | None = None):
        super().__init__(dim)
        self._fn = fn
        self._lower = float(lower_bound)
        self.normalizer = normalizer

    def pairwise(self, xs, ys):
        xs, ys = _check_points(xs, ys, self.dim)
        out = np.asarray(self._fn(xs, ys), dtype=np.float64)
        if out.shape != (xs.shape[0], ys.shape[0]):
            raise EntropicDeconvError("custom cost returned a wrongly shaped matrix")
        return out

    def lower_bound(self) -> float:
        return self._lower

    def spec(self) -> dict:
        return {"kind": self.kind}


@lru_cache(maxsize=None)
def _wfr_log_mass(dim: int) -> float:
    # log of integral of cos^2(||z||) over the ball ||z|| <= pi/2
    if dim == 1:
        return math.log(_HALF_PI)
    surface = 2.0 * math.pi ** (dim / 2.0) / math.exp(gammaln(dim / 2.0))
    radial, _ = integrate.quad(lambda r: math.cos(r) ** 2 * r ** (dim - 1), 0.0, _HALF_PI)
    return math.log(surface * radial)


class NoiseModel:
    """Additive noise with density f; provides log f, a sampler, and the
    constant tying f to the paired cost model."""

    kind: str = "abstract"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def log_density(self, z) -> np.ndarray:
        """log f at each row of z; -inf outside the support."""
        raise NotImplementedError

    def log_normalizer(self) -> float:
        raise NotImplementedError

    def cost_model(self) -> CostModel:
        raise NotImplementedError

    @property
    def sigma2_effective(self) -> float:
        return self.cost_model().sigma2_effective

    def sample(self, gen, n: int) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return self.cost_model().spec()

    def _rows(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise DimensionMismatchError(f"noise model has dim {self.dim}, got {z.shape[1]}")
        return z


class GaussianNoise(NoiseModel):
    kind = "gaussian"

    def __init__(self, sigma2: float, dim: int = 1):
        super().__init__(dim)
        if sigma2 <= 0:
            raise EntropicDeconvError("sigma2 must be > 0")
        self.sigma2 = float(sigma2)

    def log_density(self, z):
        z = self._rows(z)
        sq = np.einsum("ij,ij->i", z, z)
        return self.log_normalizer() - sq / (2.0 * self.sigma2)

    def log_normalizer(self) -> float:
        return -0.5 * self.dim * math.log(2.0 * math.pi * self.sigma2)

    def cost_model(self) -> GaussianHalfSq:
        return GaussianHalfSq(self.sigma2, self.dim)

    def sample(self, gen, n: int) -> np.ndarray:
        u = uniform_open01(gen, (n, self.dim))
        return ndtri(u) * math.sqrt(self.sigma2)


class PExponentialNoise(NoiseModel):
    """f(z) = exp(-||z||_p^p) / (2 Gamma(1 + 1/p))^d; coordinates are iid."""

    kind = "p-exponential"

    def __init__(self, p: float, dim: int = 1):
        super().__init__(dim)
        if p < 1:
            raise EntropicDeconvError("p must be >= 1")
        self.p = float(p)

    def log_density(self, z):
        z = self._rows(z)
        lp = np.sum(np.abs(z) ** self.p, axis=1)
        return self.log_normalizer() - lp

    def log_normalizer(self) -> float:
        # one-dimensional mass 2*Gamma(1+1/p); the p-norm density factorizes
        return -self.dim * (math.log(2.0) + gammaln(1.0 + 1.0 / self.p))

    def cost_model(self) -> PExponential:
        return PExponential(self.p, self.dim)

    def sample(self, gen, n: int) -> np.ndarray:
        from scipy.stats import gennorm

        u = uniform_open01(gen, (n, self.dim))
        return gennorm.ppf(u, self.p)


class WfrCosineNoise(NoiseModel):
    """f(z) proportional to cos^2(||z||) on the ball ||z|| <= pi/2."""

    kind = "wfr-cosine"

    def log_density(self, z):
        z = self._rows(z)
        r = np.sqrt(np.einsum("ij,ij->i", z, z))
        out = np.full(r.shape, -np.inf)
        inside = r < _HALF_PI
        out[inside] = 2.0 * np.log(np.cos(r[inside])) - _wfr_log_mass(self.dim)
        return out

    def log_normalizer(self) -> float:
        return -_wfr_log_mass(self.dim)

    def cost_model(self) -> WfrCosine:
        return WfrCosine(self.dim)

    def sample(self, gen, n: int) -> np.ndarray:
        if self.dim != 1:
            raise EntropicDeconvError("wfr-cosine sampling is implemented for d = 1 only")
        u = uniform_open01(gen, n)

        def cdf(z):
            return (2.0 * z + math.sin(2.0 * z) + math.pi) / (2.0 * math.pi)

        out = np.empty(n)
        for i, ui in enumerate(u):
            out[i] = optimize.brentq(lambda z: cdf(z) - ui, -_HALF_PI, _HALF_PI, xtol=1e-15)
        return out.reshape(n, 1)


def neg_log_density_matrix(noise: NoiseModel, xs, ys) -> np.ndarray:
    """Matrix of -log f(x_i - y_j), the ground cost of the general-noise problem."""
    cm = noise.cost_model()
    return cm.pairwise(xs, ys) / noise.sigma2_effective - noise.log_normalizer()


def neg_log_density_cost(noise: NoiseModel) -> CustomCost:
    """Cost model c(x, y) = -log f(x - y) for the general-noise problem."""
    return CustomCost(
        lambda xs, ys: neg_log_density_matrix(noise, xs, ys),
        noise.dim,
        lower_bound=-noise.log_normalizer(),
    )


def cost_from_spec(obj: dict, dim: int) -> CostModel:
    """Build a cost model from its JSON spec, e.g. {"kind": "gaussian", "sigma2": 1.0}."""
    kind = obj.get("kind")
    if kind == "gaussian":
        return GaussianHalfSq(float(obj["sigma2"]), dim)
    if kind == "p-exponential":
        return PExponential(float(obj["p"]), dim)
    if kind == "wfr-cosine":
        return WfrCosine(dim)
    raise EntropicDeconvError(f"unknown cost kind {kind!r}")


def noise_from_spec(obj: dict, dim: int) -> NoiseModel:
    return cost_from_spec(obj, dim).noise_model()
