"""Experiment configuration: JSON schema, defaults, hashing and seed derivation."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from . import priors
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num}

SCHEMA = _obj({
    "seed": _int,
    "model": _obj({
        "kind": {"enum": ["flow", "vae"]},
        "n_couplings": _posint,
        "hidden": {"type": "array", "items": _posint, "minItems": 1},
        "scale_offset": {"type": "number", "minimum": 0},
        "latent_dim": {"type": ["integer", "null"], "minimum": 1},
    }),
    "prior": _obj({
        "kind": {"enum": ["standard", "gaussian", "gen_gaussian"]},
        "k": _posint,
        "distance": {"type": "number", "minimum": 0},
        "means": {"type": ["array", "null"], "items": _vec},
        "placement": {"enum": ["axes", "collinear"]},
        "variance": _pos,
        "beta": _pos,
        "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }),
    "data": _obj({
        "dim": _posint,
        "n_per_component": _posint,
        "n_heldout_per_component": _int,
        "n_ood": _posint,
        "separation": _num,
        "ood_dim": {"type": ["integer", "null"], "minimum": 1},
        "ood_variance": _pos,
        "train_csv": {"type": ["string", "null"]},
        "ood_csv": {"type": ["string", "null"]},
    }),
    "assignment": _obj({
        "mode": {"enum": ["labels", "kmeans", "none"]},
        "k": _posint,
    }),
    "training": _obj({
        "epochs": _posint,
        "batch_size": _posint,
        "lr": {"type": "number", "minimum": 0},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    }),
    "evaluation": _obj({
        "bins": _posint,
        "iw_samples": _posint,
        "forceout_std": _pos,
    }),
    "analysis": _obj({
        "g": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
        "channel_of_dim": {"type": ["array", "null"], "items": _int},
        "sigma2_psi": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "mean_image_samples": _posint,
        "space": {"enum": ["latent", "observation"]},
    }),
    "sweep": _obj({
        "distances": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
        "prior_kinds": {"type": "array", "items": {"enum": ["gaussian", "gen_gaussian"]},
                        "minItems": 1},
    }),
})

DEFAULTS = {
    "seed": 0,
    "model": {"kind": "flow", "n_couplings": 4, "hidden": [64, 64], "scale_offset": 0.1,
              "latent_dim": None},
    "prior": {"kind": "standard", "k": 2, "distance": 32.0, "means": None, "placement": "axes",
              "variance": 1.0, "beta": 4.0, "alpha": None},
    "data": {"dim": 2, "n_per_component": 10_000, "n_heldout_per_component": 0, "n_ood": 5_000,
             "separation": 3.5, "ood_dim": None, "ood_variance": 0.01,
             "train_csv": None, "ood_csv": None},
    "assignment": {"mode": None, "k": 2},
    "training": {"epochs": 200, "batch_size": 256, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999},
    "evaluation": {"bins": 80, "iw_samples": 1000, "forceout_std": 3.0},
    "analysis": {"g": None, "channel_of_dim": None, "sigma2_psi": None,
                 "mean_image_samples": 10_000, "space": "latent"},
    "sweep": {"distances": [2, 4, 8, 16, 32], "prior_kinds": ["gaussian", "gen_gaussian"]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(raw: dict) -> dict:
    """Schema-check ``raw`` (unknown keys rejected), fill defaults, cross-check."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from None
    cfg = _merge(DEFAULTS, raw)
    d, p = cfg["data"], cfg["prior"]
    ood_dim = d["ood_dim"] if d["ood_dim"] is not None else d["dim"]
    if ood_dim != d["dim"]:
        raise ConfigError(f"in-distribution dim {d['dim']} != OOD dim {ood_dim}")
    if p["kind"] != "standard" and p["k"] > 1 and cfg["assignment"]["mode"] in (None, "none"):
        raise ConfigError("a mixture prior requires an assignment mode (labels or kmeans)")
    if p["means"] is not None:
        if len(p["means"]) != p["k"] or any(len(m) != latent_dim(cfg) for m in p["means"]):
            raise ConfigError("prior.means must hold k vectors of the latent dimension")
    if cfg["assignment"]["mode"] == "kmeans" and cfg["assignment"]["k"] != p["k"]:
        raise ConfigError("assignment.k must equal prior.k")
    return cfg


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate(raw)


def latent_dim(cfg: dict) -> int:
    m = cfg["model"]
    if m["kind"] == "vae" and m["latent_dim"] is not None:
        return m["latent_dim"]
    return cfg["data"]["dim"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict, extra: bytes = b"") -> str:
    h = hashlib.sha256(canonical_json(cfg).encode())
    h.update(extra)
    return h.hexdigest()


def derive_seed(master: int, run_index: int, purpose: str) -> int:
    """Independent 63-bit seed per (master, run, purpose)."""
    digest = hashlib.sha256(f"{master}:{run_index}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def build_prior(cfg: dict) -> priors.MixturePrior:
    p = cfg["prior"]
    dim = latent_dim(cfg)
    if p["kind"] == "standard":
        return priors.standard_gaussian(dim)
    means = p["means"]
    if means is None:
        means = (priors.bimodal_means(dim, p["distance"]) if p["k"] == 2
                 else priors.placed_means(p["k"], dim, p["distance"], p["placement"]))
    if p["kind"] == "gaussian":
        return priors.gaussian_mixture(means, p["variance"])
    return priors.gen_gaussian_mixture(means, p["beta"], p["alpha"])


def train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(t["epochs"], t["batch_size"], t["lr"], t["beta1"], t["beta2"], seed)
