"""Affine-coupling normalizing flow with exact log-likelihood.

Layout: coupling, reverse, coupling, reverse, ..., coupling. Each coupling
keeps the first ``ceil(dim/2)`` features and rescales/shifts the rest with

    s = exp(clamp(s_raw, -7, 7)) + scale_offset

so the scale stays strictly positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradkit as gk
from .priors import MixturePrior
from .training import TrainConfig, TrainResult, run_training

SCALE_CLAMP = 7.0


@dataclass
class AffineCoupling:
    name: str
    dim: int
    split_point: int
    n_layers: int
    scale_offset: float = 0.1

    def _nets(self, params, a):
        s_raw = gk.mlp(params, f"{self.name}.scale", a, self.n_layers)
        t = gk.mlp(params, f"{self.name}.shift", a, self.n_layers)
        s = gk.exp(gk.clip(s_raw, -SCALE_CLAMP, SCALE_CLAMP)) + self.scale_offset
        return s, t

    def forward(self, params, x):
        a, b = gk.split(x, self.split_point)
        s, t = self._nets(params, a)
        return gk.concat([a, b * s + t]), gk.reduce_sum(gk.log(s), axis=-1)

    def inverse(self, params, z):
        a, b = gk.split(z, self.split_point)
        s, t = self._nets(params, a)
        return gk.concat([a, (b - t) / s])


@dataclass
class ReversePermutation:
    dim: int

    def forward(self, params, x):
        return gk.reverse(x), None

    def inverse(self, params, z):
        return gk.reverse(z)


@dataclass
class FlowModel:
    dim: int
    layers: list
    params: gk.ParamSet
    hidden: tuple = (64, 64)

    kind = "flow"

    @property
    def n_couplings(self) -> int:
        return sum(isinstance(l, AffineCoupling) for l in self.layers)


def make_flow(dim: int, n_couplings: int = 4, hidden=(64, 64), scale_offset: float = 0.1,
              seed=0, zero_init: bool = True) -> FlowModel:
    """Build a flow. ``zero_init`` zeroes the output layers (near-identity start)."""
    if dim < 2:
        raise ValueError("coupling flows need dim >= 2")
    rng = np.random.default_rng(seed)
    split = math.ceil(dim / 2)
    params = gk.ParamSet()
    layers = []
    for c in range(n_couplings):
        if c > 0:
            layers.append(ReversePermutation(dim))
        layer = AffineCoupling(f"c{c}", dim, split, len(hidden) + 1, scale_offset)
        sizes = [split, *hidden, dim - split]
        for net in ("scale", "shift"):
            gk.init_mlp(params, f"{layer.name}.{net}", sizes, rng, zero_last=zero_init)
            if not zero_init:
                w = params[f"{layer.name}.{net}.w{len(hidden)}"]
                w.data = w.data * 0.5
        layers.append(layer)
    return FlowModel(dim, layers, params, tuple(hidden))


def _check_input(model, x, what):
    if isinstance(x, gk.Tensor):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise gk.ShapeError(f"{what}: expected (n, {model.dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise gk.NumericFailure(f"{what} input")


def forward_graph(model: FlowModel, x):
    """x -> (z, log_det) as graph tensors."""
    h = gk.as_tensor(x)
    log_det = gk.Tensor(np.zeros(h.shape[0]))
    for layer in model.layers:
        h, ld = layer.forward(model.params, h)
        if ld is not None:
            log_det = log_det + ld
    return h, log_det


def flow_forward(model: FlowModel, x) -> tuple[np.ndarray, np.ndarray]:
    _check_input(model, x, "flow_forward")
    with gk.no_grad():
        z, ld = forward_graph(model, x)
    return z.data, ld.data


def flow_inverse(model: FlowModel, z) -> np.ndarray:
    _check_input(model, z, "flow_inverse")
    with gk.no_grad():
        h = gk.as_tensor(z)
        for layer in reversed(model.layers):
            h = layer.inverse(model.params, h)
    return h.data


def layer_log_dets(model: FlowModel, x) -> list[np.ndarray]:
    """Per-layer log-determinants (zeros for permutations)."""
    out = []
    with gk.no_grad():
        h = gk.as_tensor(np.asarray(x, dtype=np.float64))
        for layer in model.layers:
            h, ld = layer.forward(model.params, h)
            out.append(np.zeros(h.shape[0]) if ld is None else ld.data)
    return out


def flow_log_likelihood(model: FlowModel, prior: MixturePrior, x) -> np.ndarray:
    """log p(x) = log p_prior(z) + log|det dz/dx| with the full mixture prior."""
    if prior.dim != model.dim:
        raise gk.ShapeError(f"prior dim {prior.dim} != model dim {model.dim}")
    z, ld = flow_forward(model, x)
    return prior.mixture_log_pdf(z) + ld


def flow_sample(model: FlowModel, prior: MixturePrior, n: int, seed) -> np.ndarray:
    if n == 0:
        return np.empty((0, model.dim))
    z, _ = prior.sample(n, seed)
    return flow_inverse(model, z)


def flow_nll_graph(model: FlowModel, prior: MixturePrior, x, assignment=None) -> gk.Tensor:
    """Mean training NLL; mixtures score each row under its assigned component."""
    z, ld = forward_graph(model, x)
    if prior.k == 1:
        lp = prior.components[0].log_pdf(z)
    else:
        lp = prior.assigned_log_pdf(z, assignment)
    return gk.neg(gk.mean(lp + ld))


def train_flow(model: FlowModel, prior: MixturePrior, data, assignment=None,
               config: TrainConfig | None = None) -> TrainResult:
    """Minimize mean NLL with Adam. Loss per epoch is the training NLL without -ln K."""
    config = config or TrainConfig()
    data = np.asarray(data, dtype=np.float64)
    _check_input(model, data, "train_flow")
    if prior.dim != model.dim:
        raise gk.ShapeError(f"prior dim {prior.dim} != model dim {model.dim}")
    if prior.k > 1:
        if assignment is None:
            raise ValueError("a mixture prior requires a component assignment")
        assignment = np.asarray(assignment)
        if assignment.shape != (data.shape[0],):
            raise ValueError("assignment must cover every row")
    rng = np.random.default_rng(config.seed)

    def loss_fn(idx, step):
        a = None if prior.k == 1 else assignment[idx]
        return flow_nll_graph(model, prior, data[idx], a)

    return run_training(model.params, loss_fn, data.shape[0], config, rng)
