"""Second-order likelihood-gap analysis and latent force-out measurements.

Sign convention: ``delta`` approximates E_ood[log p] - E_in[log p], so a
negative value predicts lower likelihood on the out-of-distribution set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import flow as flow_mod
from . import vae as vae_mod
from .priors import GeneralizedGaussianComponent, MixturePrior


def encode_latent(model, x) -> np.ndarray:
    """Flow: z = f(x). VAE: posterior mean."""
    if model.kind == "flow":
        return flow_mod.flow_forward(model, x)[0]
    return vae_mod.vae_encode(model, x)[0]


def decode_latent(model, z) -> np.ndarray:
    if model.kind == "flow":
        return flow_mod.flow_inverse(model, z)
    return vae_mod.vae_decode_mean(model, z)


def nearest_component(z: np.ndarray, means: np.ndarray) -> np.ndarray:
    d2 = ((z[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)  # argmin keeps the lowest index on ties


def allocate_nearest(data, model, prior: MixturePrior, space: str = "latent",
                     mean_images: np.ndarray | None = None) -> np.ndarray:
    """Component index per row: nearest prior mean in latent space.

    ``space="observation"`` instead uses distance to ``mean_images``.
    """
    x = np.asarray(data, dtype=np.float64)
    if prior.k == 1:
        return np.zeros(x.shape[0], dtype=np.int64)
    if space == "latent":
        return nearest_component(encode_latent(model, x), prior.means)
    if space == "observation":
        if mean_images is None:
            raise ValueError("observation-space allocation needs mean images")
        return nearest_component(x, np.asarray(mean_images))
    raise ValueError(f"unknown allocation space {space!r}")


@dataclass
class MeanImage:
    sampled: np.ndarray
    decoded_mean: np.ndarray
    n_samples: int

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.sampled - self.decoded_mean)))


def component_mean_image(model, prior: MixturePrior, i: int, n_samples: int = 10_000,
                         seed=0) -> MeanImage:
    """Elementwise mean of observations generated from component ``i``.

    Also returns the deterministic decode of the component mean.
    """
    comp = prior.components[i]
    rng = np.random.default_rng(seed)
    z = comp.sample(n_samples, rng)
    xs = decode_latent(model, z)
    return MeanImage(xs.mean(axis=0), decode_latent(model, comp.mu[None, :])[0], n_samples)


@dataclass
class ComponentStats:
    """Per-component mean squared deviation from the model's mean image.

    ``sigma2`` rows for empty components are NaN and their weight is 0.
    """

    mean_images: np.ndarray
    sigma2: np.ndarray
    weights: np.ndarray
    counts: np.ndarray

    @property
    def k(self) -> int:
        return self.sigma2.shape[0]

    @property
    def nonempty(self) -> np.ndarray:
        return self.counts > 0

    def to_dict(self) -> dict:
        return {
            "mean_images": self.mean_images.tolist(),
            "sigma2": [None if c == 0 else row.tolist() for row, c in zip(self.sigma2, self.counts)],
            "weights": self.weights.tolist(),
            "counts": self.counts.tolist(),
        }


def component_sigma(data, assignment, mean_images) -> ComponentStats:
    x = np.asarray(data, dtype=np.float64)
    assignment = np.asarray(assignment)
    mean_images = np.atleast_2d(np.asarray(mean_images, dtype=np.float64))
    if assignment.shape != (x.shape[0],):
        raise ValueError("assignment must cover every row")
    k = mean_images.shape[0]
    sigma2 = np.full((k, x.shape[1]), np.nan)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(k):
        rows = x[assignment == i]
        counts[i] = rows.shape[0]
        if counts[i]:
            sigma2[i] = ((rows - mean_images[i]) ** 2).mean(axis=0)
    return ComponentStats(mean_images, sigma2, counts / x.shape[0], counts)


@dataclass
class ChannelFactors:
    """Per-channel multipliers g_c and the channel index of every flat dim."""

    g: np.ndarray
    channel_of_dim: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.channel_of_dim = np.asarray(self.channel_of_dim, dtype=np.int64)
        if np.any(self.g < 0):
            raise ValueError("channel factors must be non-negative")
        if self.channel_of_dim.max(initial=-1) >= self.g.size:
            raise ValueError("channel index out of range")

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "ChannelFactors":
        return cls(np.full(dim, scale), np.arange(dim))

    @classmethod
    def from_kernel_products(cls, u_sums: np.ndarray, channel_of_dim) -> "ChannelFactors":
        """g_c = (prod_l sum_j u[l, c, j])^2 from per-layer row sums of shape (L, C)."""
        return cls(np.prod(np.asarray(u_sums, dtype=np.float64), axis=0) ** 2, channel_of_dim)

    def per_dim(self, dim: int) -> np.ndarray:
        if self.channel_of_dim.size != dim:
            raise ValueError(f"factors cover {self.channel_of_dim.size} dims, stats have {dim}")
        return self.g[self.channel_of_dim]


def _check_pair(in_stats, out_stats, sigma2_psi):
    if in_stats.sigma2.shape[1] != out_stats.sigma2.shape[1]:
        raise ValueError("in/out statistics have different dimensions")
    if sigma2_psi <= 0:
        raise ValueError("sigma2_psi must be positive")


def second_order_delta(in_stats: ComponentStats, out_stats: ComponentStats,
                       factors: ChannelFactors | None = None, sigma2_psi: float = 1.0) -> float:
    _check_pair(in_stats, out_stats, sigma2_psi)
    dim = in_stats.sigma2.shape[1]
    g = (factors or ChannelFactors.identity(dim)).per_dim(dim)
    out_term = np.nansum(out_stats.weights[:, None] * out_stats.sigma2, axis=0)
    in_term = np.nansum(in_stats.weights[:, None] * in_stats.sigma2, axis=0)
    return float(-np.sum(g * (out_term - in_term)) / (2.0 * sigma2_psi))


def second_order_bound(in_stats: ComponentStats, out_stats: ComponentStats,
                       factors: ChannelFactors | None = None, sigma2_psi: float = 1.0,
                       skip_empty: bool = False) -> tuple[float, tuple[int, int]]:
    """Max over (ood component i, in-dist component i') of the single-pair gap.

    Returns the bound and the maximizing pair (D_min, D*_max).
    """
    _check_pair(in_stats, out_stats, sigma2_psi)
    out_ok, in_ok = out_stats.nonempty, in_stats.nonempty
    if not skip_empty and not (out_ok.all() and in_ok.all()):
        raise ValueError("every component must be non-empty on both sides")
    if not (out_ok.any() and in_ok.any()):
        raise ValueError("no non-empty component pair")
    dim = in_stats.sigma2.shape[1]
    g = (factors or ChannelFactors.identity(dim)).per_dim(dim)
    out_s = np.where(out_ok, (out_stats.sigma2 * g).sum(axis=1), np.inf)
    in_s = np.where(in_ok, (in_stats.sigma2 * g).sum(axis=1), -np.inf)
    i, j = int(np.argmin(out_s)), int(np.argmax(in_s))
    return float(-(out_s[i] - in_s[j]) / (2.0 * sigma2_psi)), (i, j)


@dataclass
class SecondOrderReport:
    in_stats: ComponentStats
    out_stats: ComponentStats
    delta: float
    bound: float
    argmax_pair: tuple
    sigma2_psi: float
    factors: ChannelFactors
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.delta > self.bound + 1e-9:
            raise AssertionError(f"delta {self.delta} exceeds bound {self.bound}")

    def ood_exceeds_fraction(self) -> float:
        """Share of (component, dim) cells, over components non-empty on both
        sides, where the OOD statistic is larger than the in-distribution one."""
        both = self.in_stats.nonempty & self.out_stats.nonempty
        if not both.any():
            return float("nan")
        return float(np.mean(self.out_stats.sigma2[both] > self.in_stats.sigma2[both]))

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "bound": self.bound,
            "argmax_pair": {"ood_component": self.argmax_pair[0],
                            "in_component": self.argmax_pair[1]},
            "sigma2_psi": self.sigma2_psi,
            "channel_factors": self.factors.g.tolist(),
            "channel_of_dim": self.factors.channel_of_dim.tolist(),
            "in_stats": self.in_stats.to_dict(),
            "out_stats": self.out_stats.to_dict(),
            "ood_sigma2_exceeds_fraction": self.ood_exceeds_fraction(),
            "notes": list(self.notes),
        }


def build_report(in_stats: ComponentStats, out_stats: ComponentStats,
                 factors: ChannelFactors | None = None, sigma2_psi: float = 1.0,
                 notes=()) -> SecondOrderReport:
    dim = in_stats.sigma2.shape[1]
    factors = factors or ChannelFactors.identity(dim)
    notes = list(notes)
    delta = second_order_delta(in_stats, out_stats, factors, sigma2_psi)
    for side, st in (("in", in_stats), ("ood", out_stats)):
        for i in np.flatnonzero(~st.nonempty):
            notes.append(f"{side} component {i} is empty; excluded from the bound")
    bound, pair = second_order_bound(in_stats, out_stats, factors, sigma2_psi, skip_empty=True)
    return SecondOrderReport(in_stats, out_stats, delta, bound, pair, sigma2_psi, factors, notes)


# ---------------------------------------------------------------- force-out

def within_modes(z: np.ndarray, prior: MixturePrior, n_std: float = 3.0) -> np.ndarray:
    """True where every coordinate lies within ``n_std`` prior std of the nearest mean."""
    means = prior.means
    idx = nearest_component(z, means)
    std = np.sqrt(np.stack([c.variance for c in prior.components]))
    return np.all(np.abs(z - means[idx]) <= n_std * std[idx], axis=1)


def theoretical_within_mass(prior: MixturePrior, n_std: float = 3.0) -> float:
    """Mass of one component inside its n_std box (far-separated limit)."""
    from scipy import special

    comp = prior.components[0]
    if isinstance(comp, GeneralizedGaussianComponent):
        half = n_std * math.sqrt(comp.variance[0])
        per_dim = special.gammainc(1.0 / comp.beta, (half / comp.alpha) ** comp.beta)
    else:
        per_dim = math.erf(n_std / math.sqrt(2.0))
    return float(per_dim ** comp.dim)


@dataclass
class ForceOut:
    fractions: dict
    latents: dict


def latent_forceout(model, prior: MixturePrior, in_data, ood_data, n_std: float = 3.0) -> ForceOut:
    fractions, latents = {}, {}
    for name, x in (("in", in_data), ("ood", ood_data)):
        z = encode_latent(model, np.asarray(x, dtype=np.float64))
        latents[name] = z
        fractions[name] = float(within_modes(z, prior, n_std).mean())
    return ForceOut(fractions, latents)
