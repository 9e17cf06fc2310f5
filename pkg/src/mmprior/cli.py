"""Command-line entry point: ``mmprior <command> --config cfg.json --out dir``.

Exit codes: 0 success, 1 configuration/input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis, config as config_mod, data as data_mod, experiment as ex
from .dump import DumpFormatError
from .gradkit import NumericFailure

log = logging.getLogger("mmprior")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class InputError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_table(path: Path, header, rows, cfg_hash: str) -> None:
    with path.open("w", newline="") as f:
        f.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _data_paths(cfg: dict, out: Path):
    d = cfg["data"]
    train = Path(d["train_csv"]) if d["train_csv"] else out / "train.csv"
    ood = Path(d["ood_csv"]) if d["ood_csv"] else out / "ood.csv"
    return train, ood


def _load_data(cfg: dict, out: Path):
    train_p, ood_p = _data_paths(cfg, out)
    for p in (train_p, ood_p):
        if not p.exists():
            raise InputError(f"data file {p} not found (run gen-data first)")
    train, ood = data_mod.csv_read(train_p), data_mod.csv_read(ood_p)
    if train.dim != cfg["data"]["dim"] or ood.dim != cfg["data"]["dim"]:
        raise InputError(f"data dims ({train.dim}, {ood.dim}) do not match config dim "
                         f"{cfg['data']['dim']}")
    return train, ood, train_p, ood_p


def _model_path(args, out: Path) -> Path:
    return Path(args.model) if args.model else out / "model.pscp"


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg, args, out: Path) -> None:
    train, ood, heldout = ex.make_data(cfg)
    train_p, ood_p = _data_paths(cfg, out)
    tag = f"config_hash={config_mod.config_hash(cfg)}"
    data_mod.csv_write(train_p, train, tag)
    data_mod.csv_write(ood_p, ood, tag)
    print(f"wrote {len(train)} rows to {train_p}")
    print(f"wrote {len(ood)} rows to {ood_p}")
    if heldout is not None:
        data_mod.csv_write(out / "heldout.csv", heldout, tag)
        print(f"wrote {len(heldout)} rows to {out / 'heldout.csv'}")


def cmd_train(cfg, args, out: Path) -> None:
    train, ood, train_p, ood_p = _load_data(cfg, out)
    h = ex.input_hash(cfg, train_p)
    fr = ex.fit(cfg, train)
    ex.write_model(_model_path(args, out), fr.model, h, fr.train.losses[-1])
    _write_table(out / "loss.csv", ["epoch", "loss"],
                 [(i + 1, repr(v)) for i, v in enumerate(fr.train.losses)], h)
    if fr.assignment is not None:
        _write_table(out / "assignment.csv", ["row", "component"], enumerate(fr.assignment.tolist()), h)
    print(f"trained {fr.model.kind} for {fr.train.steps} steps; final loss {fr.train.losses[-1]:.6f}")
    log.info("training took %.1f CPU-s", fr.train.seconds)


def cmd_eval(cfg, args, out: Path) -> None:
    train, ood, train_p, ood_p = _load_data(cfg, out)
    model, meta = ex.read_model(_model_path(args, out))
    if model.dim != train.dim:
        raise InputError(f"model dim {model.dim} does not match data dim {train.dim}")
    prior = config_mod.build_prior(cfg)
    if prior.dim != getattr(model, "latent_dim", model.dim):
        raise InputError("prior dimension does not match the model latent dimension")
    sets = {"in": train.rows, "ood": ood.rows}
    heldout_p = out / "heldout.csv"
    if heldout_p.exists():
        sets["heldout"] = data_mod.csv_read(heldout_p).rows
    h = ex.input_hash(cfg, train_p, ood_p)
    ev = ex.evaluate(model, prior, sets, cfg)
    fo = analysis.latent_forceout(model, prior, train.rows, ood.rows, cfg["evaluation"]["forceout_std"])
    summary = {
        "config": cfg,
        "input_hash": h,
        "model_config_hash_prefix": int(meta["config_hash"]),
        "final_train_loss": float(meta["final_train_loss"]),
        "loglik": ev["stats"],
        "histogram": ev["histogram"],
        "forceout_fraction": fo.fractions,
    }
    if "elbo_stats" in ev:
        summary["elbo"] = ev["elbo_stats"]
    _write_json(out / "summary.json", summary)
    _write_table(out / "loglik.csv", ["dataset", "row", "loglik"],
                 [(name, i, repr(float(v))) for name, arr in ev["loglik"].items()
                  for i, v in enumerate(arr)], h)
    zdim = next(iter(fo.latents.values())).shape[1]
    _write_table(out / "latents.csv", ["dataset", "row", *[f"z{j}" for j in range(zdim)]],
                 [(name, i, *map(repr, map(float, z))) for name, arr in fo.latents.items()
                  for i, z in enumerate(arr)], h)
    for name, st in ev["stats"].items():
        print(f"{name}: mean log-likelihood {st['mean']:.4f} (n={st['n']})")


def cmd_analyze(cfg, args, out: Path) -> None:
    train, ood, train_p, ood_p = _load_data(cfg, out)
    model, _ = ex.read_model(_model_path(args, out))
    prior = config_mod.build_prior(cfg)
    if prior.k < 2:
        raise InputError("analyze needs a mixture prior (prior.k >= 2)")
    h = ex.input_hash(cfg, train_p, ood_p)
    report, _ = ex.analyze(model, prior, train.rows, ood.rows, cfg)
    doc = {"config_hash": h, **report.to_dict()}
    _write_json(out / "report.json", doc)
    for side, st in (("in", report.in_stats), ("ood", report.out_stats)):
        rows = [(i, j, repr(float(v))) for i in range(st.k) if st.counts[i]
                for j, v in enumerate(st.sigma2[i])]
        _write_table(out / f"sigma2_{side}.csv", ["component", "dim", "sigma2"], rows, h)
    print(f"delta={report.delta:.6g} bound={report.bound:.6g} pair={report.argmax_pair}")


def cmd_sweep(cfg, args, out: Path) -> None:
    distances = [float(d) for d in args.distances.split(",")] if args.distances else None
    h = config_mod.config_hash(cfg)
    path = out / "sweep.csv"
    header = ["prior_kind", "distance", "mean_ood_ll", "mean_in_ll", "final_train_loss", "status"]
    with path.open("w", newline="") as f:
        f.write(f"# config_hash={h}\n")
        w = csv.writer(f)
        w.writerow(header)

        def on_row(row):
            w.writerow([row[k] if isinstance(row[k], str) else repr(row[k]) for k in header])
            f.flush()
            print(f"{row['prior_kind']} d={row['distance']:g}: in={row['mean_in_ll']:.3f} "
                  f"ood={row['mean_ood_ll']:.3f} [{row['status']}]")
        ex.sweep_distance(cfg, distances, on_row=on_row)


def cmd_kmeans(cfg, args, out: Path) -> None:
    train, _, train_p, _ = _load_data(cfg, out)
    k = args.k or cfg["assignment"]["k"]
    res = data_mod.kmeans(train, k, config_mod.derive_seed(cfg["seed"], 0, "kmeans"))
    assign = data_mod.assign_components(train, "kmeans", k,
                                        config_mod.derive_seed(cfg["seed"], 0, "kmeans"))
    h = ex.input_hash(cfg, train_p)
    _write_table(out / "kmeans_assignment.csv", ["row", "component"], enumerate(assign.tolist()), h)
    _write_json(out / "kmeans.json", {"config_hash": h, "k": k, "inertia": res.inertia,
                                      "iterations": res.iterations,
                                      "centroids": res.centroids.tolist()})
    print(f"k={k} inertia={res.inertia:.6g} iterations={res.iterations}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-distance": cmd_sweep,
    "analyze": cmd_analyze,
    "kmeans": cmd_kmeans,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmprior", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--model", help="model dump path (default <out>/model.pscp)")
    p.add_argument("--distances", help="comma-separated distances for sweep-distance")
    p.add_argument("--k", type=int, help="cluster count for kmeans")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_mod.load(args.config) if args.config else config_mod.validate({})
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise config_mod.ConfigError("--seed must be a u64")
            cfg["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (config_mod.ConfigError, InputError, DumpFormatError, data_mod.CsvFormatError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
