"""Command-line entry point: ``stellagen <subcommand> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import ddpm, mlp
from . import pca as pca_mod
from .config import RunConfig, load_config, threads
from .dataset import (
    Dataset,
    fit_normalizer,
    load_condition_rows,
    load_dataset,
    normalize_dataset,
    save_dataset,
    split,
)
from .evaluation import (
    evaluate_surface,
    read_rows,
    summarize,
    synthetic_qs_field,
    write_rows,
    write_summary,
)
from .qsmetrics import run_external_evaluator
from .surface import feature_length, surface_to_dict, unpack
from .synth import synthesize

log = logging.getLogger("stellagen")


class CliError(Exception):
    pass


def _seed(cfg: RunConfig, args) -> int:
    return cfg.seed if args.seed is None else args.seed


def _out(cfg: RunConfig, args, name: str) -> Path:
    path = Path(args.out) if args.out else cfg.path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _n_x(cfg: RunConfig) -> int:
    return feature_length(cfg.surface.m_pol, cfg.surface.n_tor)


def cmd_synth_data(cfg: RunConfig, args) -> None:
    synth_cfg = cfg.synth
    synth_cfg.m_pol, synth_cfg.n_tor = cfg.surface.m_pol, cfg.surface.n_tor
    data = synthesize(synth_cfg, _seed(cfg, args))
    out = _out(cfg, args, "dataset")
    save_dataset(data, out)
    a = data.conditions[:, 1]
    log.info("wrote %d records (n_x=%d, A in [%.3f, %.3f]) to %s", len(data), data.n_x,
             a.min() if len(a) else float("nan"), a.max() if len(a) else float("nan"), out)


def cmd_ingest(cfg: RunConfig, args) -> None:
    source = Path(args.input) if args.input else cfg.path("dataset")
    data = load_dataset(source, _n_x(cfg))
    log.info("%s: %d records, n_x=%d", source, len(data), data.n_x)
    if args.out:
        out = _out(cfg, args, "dataset")
        save_dataset(data, out)
        log.info("wrote canonical copy to %s", out)


def cmd_pca_fit(cfg: RunConfig, args) -> None:
    data = load_dataset(cfg.path("dataset"), _n_x(cfg))
    model = pca_mod.fit(data.features, cfg.n_r)
    out = _out(cfg, args, "pca")
    pca_mod.save(model, out)
    log.info("PCA n_r=%d explains %.6f of the variance; wrote %s", model.n_r,
             model.explained_fraction, out)
    if args.curve:
        curve = pca_mod.explained_variance_curve(data.features)
        Path(args.curve).write_text("n_r,fraction\n" + "".join(f"{k},{f!r}\n" for k, f in curve))


def _load_or_fit_pca(cfg: RunConfig, data: Dataset) -> pca_mod.PcaModel:
    path = cfg.path("pca")
    if path.is_file():
        model = pca_mod.load(path)
        if model.n_x != data.n_x:
            raise CliError(f"{path}: PCA expects n_x={model.n_x}, dataset has {data.n_x}")
        return model
    return pca_mod.fit(data.features, cfg.n_r)


def build_model(cfg: RunConfig, data: Dataset, seed: int):
    """Fit PCA and normalizer, initialize the network; returns (model, encoded data)."""
    pca_model = _load_or_fit_pca(cfg, data)
    codes = data.with_features(pca_mod.encode(pca_model, data.features))
    normalizer = fit_normalizer(codes, cfg.normalizer_floor)
    net_cfg = mlp.NetworkConfig(input_dim=pca_model.n_r, **vars(cfg.network))
    sch = cfg.schedule
    model = ddpm.Ddpm(
        schedule=ddpm.linear_schedule(sch.T, sch.beta_start, sch.beta_end, sch.variance),
        network=mlp.init_network(net_cfg, seed),
        pca=pca_model,
        normalizer=normalizer,
        surface_shape=(cfg.surface.m_pol, cfg.surface.n_tor),
    )
    return model, normalize_dataset(codes, normalizer)


def cmd_train(cfg: RunConfig, args) -> None:
    seed = _seed(cfg, args)
    data = load_dataset(cfg.path("dataset"), _n_x(cfg))
    if cfg.validation_fraction > 0:
        data, _ = split(data, (1.0 - cfg.validation_fraction, cfg.validation_fraction), seed)
    model, encoded = build_model(cfg, data, seed)
    train_cfg = ddpm.TrainConfig(**{**vars(cfg.train), "seed": seed})
    out = _out(cfg, args, "checkpoint")
    result = ddpm.train(
        model, encoded, train_cfg, checkpoint_path=out,
        progress=lambda e, loss: log.debug("epoch %d loss %.6f", e, loss),
    )
    ddpm.save_checkpoint(model, out, adam_state=result.adam_state, rng_state=result.rng_state,
                         history=result.epoch_losses, train_config=train_cfg)
    final = result.epoch_losses[-1] if result.epoch_losses else float("nan")
    log.info("trained %d epochs (final loss %.6f); wrote %s", train_cfg.epochs, final, out)


def cmd_sample(cfg: RunConfig, args) -> None:
    model, _ = ddpm.load_checkpoint(cfg.path("checkpoint"))
    spec = args.conditions
    if spec is None:
        # a file named in the config is relative to the config, like its other paths
        spec = cfg.conditions
        if (Path(cfg.base_dir) / spec).is_file():
            spec = str(Path(cfg.base_dir) / spec)
    rows = load_condition_rows(spec)
    n = cfg.n_samples if args.n is None else args.n
    generated = ddpm.generate_surfaces(model, rows, n, seed=_seed(cfg, args))
    out = _out(cfg, args, "samples")
    with open(out, "w") as fh:
        for g in generated:
            fh.write(json.dumps({
                "id": g.id,
                "nfp": g.condition.nfp,
                "helicity": g.condition.helicity,
                "aspect_ratio": g.condition.aspect_ratio,
                "mean_iota": g.condition.mean_iota,
                "m_pol": g.surface.m_pol,
                "n_tor": g.surface.n_tor,
                "coeffs": g.coeffs.tolist(),
            }) + "\n")
    log.info("wrote %d samples (%d conditions x %d) to %s", len(generated), len(rows), n, out)


def _field_source(cfg: RunConfig):
    src = cfg.evaluation.field_source
    if src in (None, "none"):
        return None
    if src == "synthetic":
        return lambda surface, helicity: (synthetic_qs_field(surface, helicity), None)
    if isinstance(src, list):
        def external(surface, helicity):
            with tempfile.TemporaryDirectory() as tmp:
                spath, opath = Path(tmp) / "surface.json", Path(tmp) / "field.json"
                spath.write_text(json.dumps({**surface_to_dict(surface), "helicity": helicity}))
                field, extras = run_external_evaluator(src, spath, opath)
                return field, extras.get("mean_iota")
        return external
    raise CliError(f"unknown field_source {src!r}")


def read_samples(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CliError(f"{path}:{lineno}: malformed sample ({exc})") from exc


def evaluate_samples(cfg: RunConfig, samples) -> list:
    source = _field_source(cfg)
    ev = cfg.evaluation

    def one(doc):
        surface = unpack(np.asarray(doc["coeffs"], dtype=float), int(doc["nfp"]),
                         int(doc["m_pol"]), int(doc["n_tor"]))
        group = f"nfp={doc['nfp']} N={doc['helicity']} A*={doc['aspect_ratio']:g}"
        return evaluate_surface(str(doc["id"]), group, surface, int(doc["helicity"]),
                                float(doc["aspect_ratio"]), float(doc["mean_iota"]),
                                source, ev.n_phi, ev.n_theta)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        return list(pool.map(one, samples))


def cmd_evaluate(cfg: RunConfig, args) -> None:
    source = Path(args.input) if args.input else cfg.path("samples")
    rows = evaluate_samples(cfg, list(read_samples(source)))
    out = _out(cfg, args, "report")
    write_rows(rows, out)
    summary = summarize(rows, cfg.evaluation.c_threshold, cfg.evaluation.j_qs_threshold)
    summary_path = out.with_name(out.stem + ".summary.csv")
    write_summary(summary, summary_path)
    overall = summary[-1]
    log.info("evaluated %d samples (invalid fraction %.3f); |c_A| median %s; wrote %s and %s",
             overall["n_total"], overall["invalid_fraction"], overall["abs_c_aspect_q50"], out,
             summary_path)


def cmd_report(cfg: RunConfig, args) -> None:
    source = Path(args.input) if args.input else cfg.path("report")
    rows = read_rows(source)
    summary = summarize(rows, cfg.evaluation.c_threshold, cfg.evaluation.j_qs_threshold)
    out = _out(cfg, args, "summary")
    write_summary(summary, out)
    for entry in summary:
        log.info("%-28s n=%4d invalid=%.3f |c_A| q25/50/75 = %s / %s / %s", entry["group"],
                 entry["n_total"], entry["invalid_fraction"], entry["abs_c_aspect_q25"],
                 entry["abs_c_aspect_q50"], entry["abs_c_aspect_q75"])


COMMANDS = {
    "synth-data": cmd_synth_data,
    "ingest": cmd_ingest,
    "pca-fit": cmd_pca_fit,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stellagen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output path (defaults to the config's path)")
        if name in ("ingest", "evaluate", "report"):
            p.add_argument("input", nargs="?", help="input file (defaults to the config's path)")
        if name == "sample":
            p.add_argument("--conditions", help="table1-in | table1-out | PATH")
            p.add_argument("--n", type=int, default=None, help="samples per condition")
        if name == "pca-fit":
            p.add_argument("--curve", help="also write the explained-variance curve CSV here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args)
    except (CliError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"stellagen {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
