"""End-to-end pipeline pieces used by the CLI and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import analysis, data as data_mod, dump
from . import flow as flow_mod
from . import vae as vae_mod
from .config import build_prior, config_hash, derive_seed, latent_dim, train_config
from .priors import MixturePrior
from .training import TrainResult

MODEL_KINDS = {"flow": 0.0, "vae": 1.0}


def synthetic_spec(cfg: dict, seed: int, n_per_component: int | None = None):
    d = cfg["data"]
    n = d["n_per_component"] if n_per_component is None else n_per_component
    return data_mod.two_mode_spec(d["dim"], n, seed, d["separation"])


def make_data(cfg: dict, run_index: int = 0):
    """(train, ood, heldout-or-None) generated from the config's synthetic spec."""
    master = cfg["seed"]
    d = cfg["data"]
    train = data_mod.gen_mixture(synthetic_spec(cfg, derive_seed(master, run_index, "data")))
    ood = data_mod.gen_ood(d["dim"], derive_seed(master, run_index, "ood"), d["n_ood"],
                           d["ood_variance"])
    heldout = None
    if d["n_heldout_per_component"]:
        heldout = data_mod.gen_mixture(synthetic_spec(
            cfg, derive_seed(master, run_index, "heldout"), d["n_heldout_per_component"]))
    return train, ood, heldout


def build_model(cfg: dict, seed: int):
    m = cfg["model"]
    dim = cfg["data"]["dim"]
    if m["kind"] == "flow":
        return flow_mod.make_flow(dim, m["n_couplings"], tuple(m["hidden"]), m["scale_offset"], seed)
    return vae_mod.make_vae(dim, latent_dim(cfg), tuple(m["hidden"]), seed)


def assignment_for(cfg: dict, dataset: data_mod.Dataset, prior: MixturePrior, seed: int):
    if prior.k == 1:
        return None
    a = cfg["assignment"]
    if a["mode"] == "labels":
        return data_mod.assign_components(dataset, "labels")
    return data_mod.assign_components(dataset, "kmeans", a["k"], seed)


@dataclass
class FitResult:
    model: object
    prior: MixturePrior
    assignment: np.ndarray | None
    train: TrainResult


def fit(cfg: dict, train: data_mod.Dataset, run_index: int = 0) -> FitResult:
    master = cfg["seed"]
    prior = build_prior(cfg)
    model = build_model(cfg, derive_seed(master, run_index, "init"))
    assignment = assignment_for(cfg, train, prior, derive_seed(master, run_index, "kmeans"))
    tc = train_config(cfg, derive_seed(master, run_index, "train"))
    trainer = flow_mod.train_flow if model.kind == "flow" else vae_mod.train_vae
    result = trainer(model, prior, train.rows, assignment, tc)
    return FitResult(model, prior, assignment, result)


def log_likelihood(model, prior: MixturePrior, x, cfg: dict, seed: int) -> np.ndarray:
    """Exact for flows, importance-weighted for VAEs; always under the full mixture."""
    if model.kind == "flow":
        return flow_mod.flow_log_likelihood(model, prior, x)
    return vae_mod.vae_iw_log_likelihood(model, prior, x, cfg["evaluation"]["iw_samples"], seed)


def describe(values: np.ndarray) -> dict:
    return {"n": int(values.size), "mean": float(values.mean()), "std": float(values.std()),
            "min": float(values.min()), "max": float(values.max())}


def histogram(named: dict, bins: int) -> dict:
    allv = np.concatenate(list(named.values()))
    lo, hi = float(allv.min()), float(allv.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return {"edges": edges.tolist(),
            "counts": {k: np.histogram(v, edges)[0].tolist() for k, v in named.items()}}


def evaluate(model, prior: MixturePrior, datasets: dict, cfg: dict, run_index: int = 0) -> dict:
    """Per-set log-likelihoods (arrays) plus summary statistics and histogram."""
    master = cfg["seed"]
    ll = {name: log_likelihood(model, prior, x, cfg, derive_seed(master, run_index, f"eval:{name}"))
          for name, x in datasets.items()}
    summary = {name: describe(v) for name, v in ll.items()}
    out = {"loglik": ll, "stats": summary, "histogram": histogram(ll, cfg["evaluation"]["bins"])}
    if model.kind == "vae":
        out["elbo_stats"] = {
            name: describe(vae_elbo_nearest(model, prior, x, derive_seed(master, run_index,
                                                                           f"elbo:{name}")))
            for name, x in datasets.items()}
    return out


def vae_elbo_nearest(model, prior: MixturePrior, x, seed: int) -> np.ndarray:
    """ELBO with the component nearest the posterior mean as the assigned one.

    Reported next to the IW estimate, never in place of it.
    """
    assigned = analysis.allocate_nearest(x, model, prior)
    return vae_mod.vae_elbo(model, prior, x, assigned, n_mc=10, seed=seed).total


def analyze(model, prior: MixturePrior, in_x, ood_x, cfg: dict, run_index: int = 0):
    """Allocation -> mean images -> per-component statistics -> delta and bound."""
    if prior.k < 2:
        raise ValueError("second-order analysis needs a mixture prior")
    a = cfg["analysis"]
    master = cfg["seed"]
    means = [analysis.component_mean_image(model, prior, i, a["mean_image_samples"],
                                           derive_seed(master, run_index, f"mean_image:{i}"))
             for i in range(prior.k)]
    mean_images = np.stack([m.sampled for m in means])
    alloc = {}
    for name, x in (("in", in_x), ("ood", ood_x)):
        alloc[name] = analysis.allocate_nearest(x, model, prior, a["space"], mean_images)
    in_stats = analysis.component_sigma(in_x, alloc["in"], mean_images)
    out_stats = analysis.component_sigma(ood_x, alloc["ood"], mean_images)
    dim = in_x.shape[1]
    if a["g"] is not None:
        chan = a["channel_of_dim"] if a["channel_of_dim"] is not None else list(range(dim))
        factors = analysis.ChannelFactors(a["g"], chan)
    else:
        factors = analysis.ChannelFactors.identity(dim)
    sigma2_psi = a["sigma2_psi"]
    if sigma2_psi is None:
        sigma2_psi = float(prior.components[0].variance[0])
    notes = [f"allocation by nearest prior mean in {a['space']} space"
             + (" (VAE: posterior means)" if model.kind == "vae" else "")]
    for i, m in enumerate(means):
        notes.append(f"component {i}: sampled vs decoded-mean image max abs gap {m.gap:.6g}")
    report = analysis.build_report(in_stats, out_stats, factors, sigma2_psi, notes)
    return report, means


# ---------------------------------------------------------------- model dumps

def model_records(model, cfg_hash: str, final_loss: float = math.nan):
    meta = [
        ("meta.kind", MODEL_KINDS[model.kind]),
        ("meta.dim", float(model.dim)),
        ("meta.latent_dim", float(getattr(model, "latent_dim", model.dim))),
        ("meta.hidden", np.asarray(model.hidden, dtype=np.float64)),
        ("meta.n_couplings", float(getattr(model, "n_couplings", 0))),
        ("meta.scale_offset", float(model.layers[0].scale_offset) if model.kind == "flow" else 0.0),
        ("meta.config_hash", float(int(cfg_hash[:12], 16))),
        ("meta.final_train_loss", float(final_loss)),
    ]
    return meta + [(name, t.data) for name, t in model.params.items()]


def write_model(path, model, cfg_hash: str, final_loss: float = math.nan) -> None:
    dump.write_dump(path, model_records(model, cfg_hash, final_loss))


def read_model(path):
    """Returns (model, meta dict)."""
    recs = dump.read_dump(path)
    meta = {k[5:]: v for k, v in recs if k.startswith("meta.")}
    arrays = {k: v for k, v in recs if not k.startswith("meta.")}
    missing = {"kind", "dim", "latent_dim", "hidden", "n_couplings", "scale_offset"} - set(meta)
    if missing:
        raise dump.DumpFormatError(f"{path}: missing metadata {sorted(missing)}")
    kind = {v: k for k, v in MODEL_KINDS.items()}.get(float(meta["kind"]))
    if kind is None:
        raise dump.DumpFormatError(f"{path}: unknown model kind {float(meta['kind'])}")
    hidden = tuple(int(h) for h in np.atleast_1d(meta["hidden"]))
    dim = int(meta["dim"])
    if kind == "flow":
        model = flow_mod.make_flow(dim, int(meta["n_couplings"]), hidden, float(meta["scale_offset"]))
    else:
        model = vae_mod.make_vae(dim, int(meta["latent_dim"]), hidden)
    if set(arrays) != set(model.params):
        raise dump.DumpFormatError(f"{path}: parameter names do not match the architecture")
    try:
        model.params.load(arrays)
    except ValueError as e:
        raise dump.DumpFormatError(f"{path}: {e}") from None
    return model, meta


def hash_prefix(cfg_hash: str) -> float:
    return float(int(cfg_hash[:12], 16))


# ---------------------------------------------------------------- sweep

def sweep_distance(cfg: dict, distances=None, prior_kinds=None, on_row=None) -> list[dict]:
    """One trained model per (prior kind, distance); failures are recorded, not raised."""
    distances = list(cfg["sweep"]["distances"] if distances is None else distances)
    prior_kinds = list(cfg["sweep"]["prior_kinds"] if prior_kinds is None else prior_kinds)
    if len(distances) < 2:
        raise ValueError("a sweep needs at least two distances")
    train, ood, _ = make_data(cfg)
    rows = []
    run_index = 0
    for kind in prior_kinds:
        for d in distances:
            run_index += 1
            run_cfg = {**cfg, "prior": {**cfg["prior"], "kind": kind, "distance": float(d),
                                        "means": None}}
            if run_cfg["assignment"]["mode"] in (None, "none"):
                run_cfg["assignment"] = {**run_cfg["assignment"], "mode": "labels"}
            row = {"prior_kind": kind, "distance": float(d), "mean_ood_ll": math.nan,
                   "mean_in_ll": math.nan, "final_train_loss": math.nan, "status": "ok"}
            try:
                fr = fit(run_cfg, train, run_index)
                ev = evaluate(fr.model, fr.prior, {"in": train.rows, "ood": ood.rows},
                              run_cfg, run_index)
                row.update(mean_ood_ll=ev["stats"]["ood"]["mean"],
                           mean_in_ll=ev["stats"]["in"]["mean"],
                           final_train_loss=fr.train.losses[-1])
            except (FloatingPointError, ValueError) as e:
                row["status"] = f"failed: {e}"
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def input_hash(cfg: dict, *files) -> str:
    extra = b"".join(open(f, "rb").read() for f in files if f is not None)
    return config_hash(cfg, extra)
