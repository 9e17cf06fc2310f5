"""MLP VAE with a frozen (possibly mixture) prior and a diagonal-Gaussian decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradkit as gk
from .priors import GaussianComponent, MixturePrior
from .training import TrainConfig, TrainResult, run_training

LOG_2PI = math.log(2.0 * math.pi)
DEC_LOGVAR_RANGE = (math.log(1e-4), math.log(1e4))
ENC_LOGVAR_RANGE = (-20.0, 20.0)


@dataclass
class VaeModel:
    dim: int
    latent_dim: int
    params: gk.ParamSet
    hidden: tuple = (64, 64)

    kind = "vae"

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


@dataclass
class ElboEstimate:
    """Per-row ELBO pieces; ``total = reconstruction - kl``."""

    reconstruction: np.ndarray
    kl: np.ndarray
    total: np.ndarray
    n_mc: int


def make_vae(dim: int, latent_dim: int | None = None, hidden=(64, 64), seed=0) -> VaeModel:
    latent_dim = dim if latent_dim is None else latent_dim
    rng = np.random.default_rng(seed)
    params = gk.ParamSet()
    gk.init_mlp(params, "enc", [dim, *hidden, 2 * latent_dim], rng, zero_last=True)
    gk.init_mlp(params, "dec", [latent_dim, *hidden, 2 * dim], rng, zero_last=True)
    return VaeModel(dim, latent_dim, params, tuple(hidden))


def _split_stats(h: gk.Tensor, size: int, lo: float, hi: float):
    mean, logvar = gk.split(h, size)
    return mean, gk.clip(logvar, lo, hi)


def encode_graph(model: VaeModel, x):
    h = gk.mlp(model.params, "enc", gk.as_tensor(x), model.n_layers)
    return _split_stats(h, model.latent_dim, *ENC_LOGVAR_RANGE)


def decode_graph(model: VaeModel, z):
    h = gk.mlp(model.params, "dec", gk.as_tensor(z), model.n_layers)
    return _split_stats(h, model.dim, *DEC_LOGVAR_RANGE)


def vae_encode(model: VaeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance."""
    x = _check(model, x, model.dim)
    with gk.no_grad():
        mu, lv = encode_graph(model, x)
    return mu.data, lv.data


def vae_decode_mean(model: VaeModel, z) -> np.ndarray:
    z = _check(model, z, model.latent_dim)
    with gk.no_grad():
        mean, _ = decode_graph(model, z)
    return mean.data


def vae_sample(model: VaeModel, z, seed) -> np.ndarray:
    """One draw from p(x|z) per latent row."""
    z = _check(model, z, model.latent_dim)
    rng = np.random.default_rng(seed)
    with gk.no_grad():
        mean, lv = decode_graph(model, z)
    return mean.data + np.exp(0.5 * lv.data) * rng.standard_normal(mean.shape)


def _check(model, a, width):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != width:
        raise gk.ShapeError(f"expected (n, {width}) array, got {a.shape}")
    return a


def _gauss_log_lik(x, mean, logvar) -> gk.Tensor:
    d = x - mean
    return gk.reduce_sum((d * d * gk.exp(gk.neg(logvar)) + logvar + LOG_2PI) * -0.5, axis=-1)


def _diag_gauss_log_pdf(z, mu, logvar) -> gk.Tensor:
    return _gauss_log_lik(z, mu, logvar)


def elbo_graph(model: VaeModel, prior: MixturePrior, x, assignment, eps: np.ndarray,
               kl_eps: np.ndarray | None = None):
    """ELBO pieces as graph tensors, given standard-normal noise ``eps`` of shape (n_mc, n, L).

    Gaussian components use the closed-form KL to the assigned component;
    generalized-Gaussian ones use the Monte-Carlo estimate log q(z|x) - log p_i(z)
    over ``kl_eps`` (defaults to ``eps``).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    n_mc = eps.shape[0]
    if prior.dim != model.latent_dim:
        raise gk.ShapeError(f"prior dim {prior.dim} != latent dim {model.latent_dim}")
    assignment = np.zeros(n, dtype=int) if prior.k == 1 else np.asarray(assignment)
    mu, lv = encode_graph(model, x)
    rep = np.tile(np.arange(n), n_mc)

    def draw(noise):
        m, l = gk.take(mu, rep, axis=0), gk.take(lv, rep, axis=0)
        return m, l, m + gk.exp(l * 0.5) * noise.reshape(-1, model.latent_dim)

    _, _, z = draw(eps)
    dmean, dlv = decode_graph(model, z)
    rec = _gauss_log_lik(np.tile(x, (n_mc, 1)), dmean, dlv)
    rec = gk.mean(gk.reshape(rec, (n_mc, n)), axis=0)

    if isinstance(prior.components[0], GaussianComponent):
        mu_p = prior.means[assignment]
        var_p = np.stack([c.var for c in prior.components])[assignment]
        d = mu - mu_p
        kl = gk.reduce_sum(
            (gk.exp(lv) + d * d) * (1.0 / var_p) - lv + np.log(var_p) - 1.0, axis=-1) * 0.5
    else:
        kl_eps = eps if kl_eps is None else kl_eps
        m_k = kl_eps.shape[0]
        rep_k = np.tile(np.arange(n), m_k)
        mk, lk = gk.take(mu, rep_k, axis=0), gk.take(lv, rep_k, axis=0)
        zk = mk + gk.exp(lk * 0.5) * kl_eps.reshape(-1, model.latent_dim)
        log_q = _diag_gauss_log_pdf(zk, mk, lk)
        log_p = prior.assigned_log_pdf(zk, np.tile(assignment, m_k))
        kl = gk.mean(gk.reshape(log_q - log_p, (m_k, n)), axis=0)
    return rec, kl


def vae_elbo(model: VaeModel, prior: MixturePrior, x, assigned_component=None, n_mc: int = 1,
             seed=0, kl_mc: int = 100) -> ElboEstimate:
    """Per-row ELBO with ``n_mc`` reparameterized samples for the reconstruction term.

    Generalized-Gaussian KL terms are estimated with ``kl_mc`` samples.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x = _check(model, x, model.dim)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_mc, x.shape[0], model.latent_dim))
    kl_eps = rng.standard_normal((kl_mc, x.shape[0], model.latent_dim))
    if prior.k > 1 and assigned_component is None:
        raise ValueError("a mixture prior requires a component assignment")
    if assigned_component is not None:
        assigned_component = np.broadcast_to(np.asarray(assigned_component), (x.shape[0],))
    with gk.no_grad():
        rec, kl = elbo_graph(model, prior, x, assigned_component, eps, kl_eps)
    return ElboEstimate(rec.data, kl.data, rec.data - kl.data, n_mc)


def vae_iw_log_likelihood(model: VaeModel, prior: MixturePrior, x, S: int = 1000, seed=0,
                          chunk: int = 100) -> np.ndarray:
    """log (1/S) sum_s p(x|z_s) p(z_s) / q(z_s|x), with the full mixture prior."""
    if S < 1:
        raise ValueError("S must be >= 1")
    x = _check(model, x, model.dim)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    mu, lv = vae_encode(model, x)
    terms = np.empty((S, n))
    with gk.no_grad():
        for lo in range(0, S, chunk):
            c = min(chunk, S - lo)
            eps = rng.standard_normal((c, n, model.latent_dim))
            z = (mu + np.exp(0.5 * lv) * eps).reshape(-1, model.latent_dim)
            dmean, dlv = decode_graph(model, z)
            log_px = _gauss_log_lik(np.tile(x, (c, 1)), dmean, dlv).data
            log_q = -0.5 * np.sum(eps * eps + lv + LOG_2PI, axis=-1).reshape(-1)
            log_p = prior.mixture_log_pdf(z)
            terms[lo:lo + c] = (log_px + log_p - log_q).reshape(c, n)
    m = terms.max(axis=0)
    return m + np.log(np.exp(terms - m).sum(axis=0)) - math.log(S)


def train_vae(model: VaeModel, prior: MixturePrior, data, assignment=None,
              config: TrainConfig | None = None) -> TrainResult:
    """Maximize the mean single-sample ELBO; the loss trace is the negative ELBO."""
    config = config or TrainConfig()
    data = _check(model, data, model.dim)
    if prior.k > 1:
        if assignment is None:
            raise ValueError("a mixture prior requires a component assignment")
        assignment = np.asarray(assignment)
        if assignment.shape != (data.shape[0],):
            raise ValueError("assignment must cover every row")
    rng = np.random.default_rng(config.seed)

    def loss_fn(idx, step):
        eps = rng.standard_normal((1, idx.size, model.latent_dim))
        a = None if prior.k == 1 else assignment[idx]
        rec, kl = elbo_graph(model, prior, data[idx], a, eps)
        return gk.neg(gk.mean(rec - kl))

    return run_training(model.params, loss_fn, data.shape[0], config, rng)
