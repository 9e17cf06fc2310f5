"""Frozen latent priors: Gaussian, Gaussian mixture, generalized-Gaussian mixture.

Component densities accept either ndarrays or graph tensors, so the same
code serves training (gradients w.r.t. the latent) and evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gradkit as gk

LOG_2PI = math.log(2.0 * math.pi)


def unit_variance_alpha(beta: float) -> float:
    """Scale giving a generalized Gaussian with shape ``beta`` unit variance."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return math.exp(0.5 * (math.lgamma(1.0 / beta) - math.lgamma(3.0 / beta)))


@dataclass(frozen=True)
class GaussianComponent:
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        var = np.broadcast_to(np.asarray(self.var, dtype=np.float64), mu.shape).copy()
        if not np.all(var > 0) or not np.all(np.isfinite(var)):
            raise ValueError("variances must be finite and positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def variance(self) -> np.ndarray:
        return self.var

    def log_pdf(self, z):
        """Per-row log density; returns a Tensor when given one."""
        const = float(-0.5 * np.sum(np.log(self.var) + LOG_2PI))
        if isinstance(z, gk.Tensor):
            d = z - self.mu
            return gk.reduce_sum(d * d * (-0.5 / self.var), axis=-1) + const
        d = np.asarray(z, dtype=np.float64) - self.mu
        return const - 0.5 * np.sum(d * d / self.var, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + np.sqrt(self.var) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class GeneralizedGaussianComponent:
    """Product of univariate densities beta/(2 alpha Gamma(1/beta)) exp(-(|z-mu|/alpha)^beta)."""

    mu: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).ravel())
        for name in ("alpha", "beta"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
            object.__setattr__(self, name, v)

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def variance(self) -> np.ndarray:
        v = self.alpha ** 2 * math.exp(math.lgamma(3.0 / self.beta) - math.lgamma(1.0 / self.beta))
        return np.full(self.dim, v)

    def _log_norm(self) -> float:
        return math.log(self.beta) - math.log(2.0 * self.alpha) - math.lgamma(1.0 / self.beta)

    def log_pdf(self, z):
        const = self.dim * self._log_norm()
        if isinstance(z, gk.Tensor):
            r = gk.absolute(z - self.mu) * (1.0 / self.alpha)
            return const - gk.reduce_sum(gk.power(r, self.beta), axis=-1)
        r = np.abs(np.asarray(z, dtype=np.float64) - self.mu) / self.alpha
        return const - np.sum(r ** self.beta, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # |z - mu|^beta ~ Gamma(1/beta, scale=alpha^beta), random sign
        w = rng.gamma(1.0 / self.beta, self.alpha ** self.beta, size=(n, self.dim))
        sign = np.where(rng.random((n, self.dim)) < 0.5, -1.0, 1.0)
        return self.mu + sign * w ** (1.0 / self.beta)


@dataclass(frozen=True)
class MixturePrior:
    """Uniformly weighted mixture of frozen components (K=1 is a unimodal prior)."""

    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if len({type(c) for c in comps}) != 1:
            raise ValueError("mixture components must all be of one kind")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("mixture components must share a dimension")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mu for c in self.components])

    @property
    def kind(self) -> str:
        return "gaussian" if isinstance(self.components[0], GaussianComponent) else "gen_gaussian"

    def component_log_pdf(self, z, i: int):
        if not 0 <= i < self.k:
            raise IndexError(f"component {i} out of range for K={self.k}")
        return self.components[i].log_pdf(z)

    def mixture_log_pdf(self, z):
        """log((1/K) sum_i p_i(z)) via log-sum-exp."""
        if self.k == 1:
            return self.components[0].log_pdf(z)
        if isinstance(z, gk.Tensor):
            cols = gk.concat([_col(c.log_pdf(z)) for c in self.components], axis=-1)
            return gk.logsumexp(cols, axis=-1) - math.log(self.k)
        lp = np.stack([c.log_pdf(z) for c in self.components], axis=-1)
        m = lp.max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        return np.squeeze(m, -1) + np.log(np.exp(lp - m).sum(axis=-1)) - math.log(self.k)

    def assigned_log_pdf(self, z, assignment):
        """Row n evaluated under its assigned component only (training objective).

        No -ln K term: it would shift the loss without changing gradients.
        """
        assignment = np.asarray(assignment)
        if self.k == 1:
            return self.components[0].log_pdf(z)
        if assignment.shape[0] != z.shape[0]:
            raise ValueError("assignment length does not match batch")
        if assignment.min() < 0 or assignment.max() >= self.k:
            raise IndexError("assignment index out of range")
        onehot = np.eye(self.k)[assignment]
        if isinstance(z, gk.Tensor):
            cols = gk.concat([_col(c.log_pdf(z)) for c in self.components], axis=-1)
            return gk.reduce_sum(cols * onehot, axis=-1)
        lp = np.stack([c.log_pdf(z) for c in self.components], axis=-1)
        return np.sum(lp * onehot, axis=-1)

    def sample(self, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` latents; returns (z, component labels)."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        labels = rng.integers(0, self.k, size=n)
        z = np.empty((n, self.dim))
        for i, c in enumerate(self.components):
            idx = np.flatnonzero(labels == i)
            z[idx] = c.sample(idx.size, rng)
        return z, labels


def _col(t: gk.Tensor) -> gk.Tensor:
    return gk.reshape(t, (t.shape[0], 1))


# ---------------------------------------------------------------- constructors

def standard_gaussian(dim: int) -> MixturePrior:
    return MixturePrior((GaussianComponent(np.zeros(dim), np.ones(dim)),))


def bimodal_means(dim: int, distance: float) -> np.ndarray:
    """Means at [+-d/2, 0, ..., 0]; the negative one first."""
    mu = np.zeros((2, dim))
    mu[0, 0], mu[1, 0] = -distance / 2.0, distance / 2.0
    return mu


def placed_means(k: int, dim: int, distance: float, placement: str = "axes") -> np.ndarray:
    """Component means for K modes.

    ``axes``: K=2 uses [+-d/2, 0, ...]; otherwise mode i sits at d/2 on axis
    i//2 with alternating sign. ``collinear``: [d*i, 0, ...].
    """
    mu = np.zeros((k, dim))
    if placement == "collinear":
        mu[:, 0] = distance * np.arange(k)
    elif placement == "axes":
        if 2 * dim < k:
            raise ValueError(f"cannot place {k} modes on the axes of a {dim}-dim space")
        for i in range(k):
            mu[i, i // 2] = (-1.0 if i % 2 == 0 else 1.0) * distance / 2.0
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return mu


def gaussian_mixture(means, var: float = 1.0) -> MixturePrior:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    return MixturePrior(tuple(GaussianComponent(m, np.full(m.size, var)) for m in means))


def gen_gaussian_mixture(means, beta: float = 4.0, alpha: float | None = None) -> MixturePrior:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    alpha = unit_variance_alpha(beta) if alpha is None else alpha
    return MixturePrior(tuple(GeneralizedGaussianComponent(m, alpha, beta) for m in means))
