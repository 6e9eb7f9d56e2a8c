"""Command-line surface: gen-synthetic, baseline, train, eval, sweep, id-score.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/training
failure. The TRIALIGN_OUTPUT_ROOT environment variable supplies the default
output root when a command's --out is relative.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics as am
from .exceptions import (ConfigError, DataError, DegenerateError, FormatError,
                         JoinError, NumericsError, ShapeError, StateError,
                         TrainError, TrialignError)
from .infodensity import compute_id, dataset_id, rank_variants, read_surprisals
from .losses import LossVariant
from .store import (SubsampleSpec, join_triplets, load_manifest, normalize)
from .synthetic import MODALITY_ORDER, ModalityView, SynthSpec, chance_floor, generate
from .training import (RunConfig, evaluate_checkpoint, load_checkpoint,
                       save_checkpoint, train, write_log_csv)

OUTPUT_ROOT_ENV = "TRIALIGN_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve_out(path_str: str) -> Path:
    path = Path(path_str)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not path.is_absolute() and root:
        return Path(root) / path
    return path


def _pairs_to_report(sets, subsample: SubsampleSpec, pairs) -> am.AlignmentReport:
    records = {}
    for pair in pairs:
        mx, my = pair.split("-")
        records[pair] = am.evaluate_pair(sets[mx].data, sets[my].data,
                                         pair=pair, subsample=subsample)
    n = next(iter(sets.values())).n
    return am.AlignmentReport(records, split="", context={"n": n})


def _all_pairs(modalities) -> list[str]:
    order = [m for m in ("ts", "img", "txt", "vl") if m in modalities]
    return [f"{a}-{b}" for i, a in enumerate(order) for b in order[i + 1:]]


def cmd_gen_synthetic(args) -> int:
    views = {}
    for mod in MODALITY_ORDER:
        views[mod] = ModalityView(
            dim=getattr(args, f"{mod}_dim"),
            informative_fraction=getattr(args, f"{mod}_rho"),
            noise_scale=getattr(args, f"{mod}_noise"),
            nuisance_dim=getattr(args, f"{mod}_nuisance"),
        )
    spec = SynthSpec(n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
                     latent_dim=args.latent_dim, views=views, seed=args.seed,
                     independent=args.independent)
    out = _resolve_out(args.out)
    manifest = generate(spec, out)
    print(f"wrote {manifest.path}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    """Raw-embedding diagnostics: normalize, evaluate all three pairs."""
    manifest = load_manifest(args.manifest)
    sets = join_triplets(manifest, args.split)
    sets = {mod: normalize(s) for mod, s in sets.items()}
    subsample = SubsampleSpec(max_n=args.max_n, seed=args.subsample_seed)
    report = _pairs_to_report(sets, subsample, _all_pairs(sets))
    report.split = args.split
    report.context["mode"] = "baseline"
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    am.write_report(report, out / "baseline.json", out / "baseline.csv")
    print(f"wrote {out / 'baseline.json'}")
    return EXIT_OK


def _load_config(args) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    overrides = {
        "run_name": args.run_name, "loss_variant": args.loss_variant,
        "tau": args.tau, "base_lr": args.base_lr, "weight_decay": args.weight_decay,
        "epochs": args.epochs, "batch_size": args.batch_size,
        "grad_accum_steps": args.grad_accum_steps, "d_out": args.d_out,
        "dropout_rate": args.dropout_rate, "patience": args.patience,
        "seed": args.seed, "manifest": args.manifest, "out_dir": args.out,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc)


def cmd_train(args) -> int:
    config = _load_config(args)
    if not config.manifest:
        raise ConfigError("a manifest is required (--manifest or config key)")
    if not config.out_dir:
        raise ConfigError("an output directory is required (--out or config key)")
    run_dir = _resolve_out(config.out_dir) / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    config.out_dir = str(run_dir)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    heads, log = train(config, config.manifest)
    variant = LossVariant.parse(config.loss_variant)
    write_log_csv(log, variant, run_dir / "log.csv")
    meta = {"config": config.to_dict(), "best_epoch": log.best_epoch,
            "stop_reason": log.stop_reason, "seed": config.seed}
    save_checkpoint(run_dir / "checkpoints" / "best.ckpt", heads, meta)
    print(f"trained {config.run_name}: best epoch {log.best_epoch} "
          f"({log.stop_reason}); wrote {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    heads, meta = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    variant_pairs: list[str] = []
    if meta.get("config", {}).get("loss_variant"):
        variant_pairs = list(LossVariant.parse(meta["config"]["loss_variant"]).pairs)
    available = [m for m in heads if m in manifest.modalities
                 and args.split in manifest.modalities[m]]
    pairs = _all_pairs(available)
    for pair in variant_pairs:
        if pair not in pairs and all(m in available for m in pair.split("-")):
            pairs.append(pair)
    projected = evaluate_checkpoint(heads, manifest, args.split, available)
    subsample = SubsampleSpec(max_n=args.max_n, seed=args.subsample_seed)
    report = _pairs_to_report(projected, subsample, pairs)
    report.split = args.split
    report.context["mode"] = "eval"
    report.context["checkpoint"] = str(args.checkpoint)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    am.write_report(report, out / "report.json", out / "report.csv")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def _sweep_correlations(rows: list[dict], pairs: list[str]) -> list[dict]:
    """Pearson/Spearman of each metric against params and retrieval columns."""
    metric_cols = ("matched_mean", "margin", "procrustes_disparity", "cka",
                   "mutual_knn", "mad_degrees")
    target_cols = ("total_params", "r1_macro", "r5_macro", "r10_macro")
    out = []
    for pair in pairs:
        pair_rows = [r for r in rows if r["pair"] == pair]
        for metric in metric_cols:
            for target in target_cols:
                if metric == target:
                    continue
                entry = {"pair": pair, "metric": metric, "vs": target,
                         "n": len(pair_rows)}
                try:
                    pearson, spearman = am.correlations(
                        [(r[metric], r[target]) for r in pair_rows])
                    entry.update({"pearson": pearson, "spearman": spearman,
                                  "degenerate": False})
                except (DegenerateError, ConfigError) as exc:
                    entry.update({"pearson": None, "spearman": None,
                                  "degenerate": True, "reason": str(exc)})
                out.append(entry)
    return out


def cmd_sweep(args) -> int:
    """Train+eval every config in the sweep spec; emit rows and correlations."""
    try:
        doc = json.loads(Path(args.spec).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON ({exc})") from exc
    runs = doc.get("runs")
    if not isinstance(runs, list) or not runs:
        raise ConfigError(f"{args.spec}: 'runs' must be a non-empty list")
    configs = [RunConfig.from_dict(run) for run in runs]
    names = [c.run_name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("sweep run names must be unique")
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subsample = SubsampleSpec(max_n=args.max_n, seed=args.subsample_seed)

    rows: list[dict] = []
    failures: list[dict] = []
    pairs_seen: list[str] = []
    for config in configs:
        run_dir = out / config.run_name
        try:
            manifest_path = config.manifest or args.manifest
            if not manifest_path:
                raise ConfigError(f"run {config.run_name!r} has no manifest")
            heads, log = train(config, manifest_path)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "config.json").write_text(
                json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
            variant = LossVariant.parse(config.loss_variant)
            write_log_csv(log, variant, run_dir / "log.csv")
            save_checkpoint(run_dir / "checkpoints" / "best.ckpt", heads,
                            {"config": config.to_dict(), "best_epoch": log.best_epoch})
            projected = evaluate_checkpoint(heads, manifest_path, args.split)
            total_params = sum(int(e.get("params", 0))
                               for e in config.encoders.values()) or None
            for pair in _all_pairs(projected):
                record = am.evaluate_pair(projected[pair.split("-")[0]].data,
                                          projected[pair.split("-")[1]].data,
                                          pair=pair, subsample=subsample)
                row = {"run": config.run_name,
                       "total_params": total_params if total_params is not None else 0,
                       **record.to_flat_dict()}
                rows.append(row)
                if pair not in pairs_seen:
                    pairs_seen.append(pair)
        except TrialignError as exc:
            failures.append({"run": config.run_name, "error": type(exc).__name__,
                             "message": str(exc)})
    if rows:
        am.write_metrics_csv(rows, out / "sweep.csv")
    correlations = _sweep_correlations(rows, pairs_seen) if len(rows) >= 2 else []
    summary = {"failures": failures, "correlations": correlations,
               "n_runs": len(configs), "n_completed": len(configs) - len(failures)}
    (out / "correlations.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"sweep complete: {summary['n_completed']}/{len(configs)} runs; wrote {out}")
    return EXIT_OK


def cmd_id_score(args) -> int:
    records = read_surprisals(args.surprisals)
    id_records = [compute_id(r) for r in records]
    by_variant: dict[str, list] = {}
    for rec in id_records:
        by_variant.setdefault(rec.variant or "all", []).append(rec)
    stats = {name: dataset_id(recs) for name, recs in by_variant.items()}
    ranking = rank_variants({name: s.mean_id for name, s in stats.items()})
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "captions": [{"id": r.id, "id_value": r.id_value,
                      "mean_per_token": r.mean_per_token,
                      "token_count": r.token_count, "variant": r.variant}
                     for r in id_records],
        "variants": {name: {"mean_id": s.mean_id, "mean_tokens": s.mean_tokens,
                            "mean_per_token": s.mean_per_token, "n": s.n}
                     for name, s in stats.items()},
        "ranking": ranking,
    }
    (out / "id_scores.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'id_scores.json'}")
    return EXIT_OK


def cmd_chance_floor(args) -> int:
    print(json.dumps(chance_floor(args.n, args.k), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trialign",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic trimodal dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--independent", action="store_true",
                   help="sever the shared latent (chance-level views)")
    for mod in MODALITY_ORDER:
        p.add_argument(f"--{mod}-dim", type=int, default=64)
        p.add_argument(f"--{mod}-rho", type=float, default=1.0)
        p.add_argument(f"--{mod}-noise", type=float, default=0.0)
        p.add_argument(f"--{mod}-nuisance", type=int, default=0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("baseline", help="evaluate raw normalized embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--max-n", type=int, default=2000)
    p.add_argument("--subsample-seed", type=int, default=42)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="train projection heads")
    p.add_argument("--config", help="JSON config; flags override file values")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--run-name")
    p.add_argument("--loss-variant")
    p.add_argument("--tau", type=float)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--grad-accum-steps", type=int)
    p.add_argument("--d-out", type=int)
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--max-n", type=int, default=2000)
    p.add_argument("--subsample-seed", type=int, default=42)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a list of configs and correlate metrics")
    p.add_argument("--spec", required=True)
    p.add_argument("--manifest", help="default manifest for runs that omit one")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--max-n", type=int, default=2000)
    p.add_argument("--subsample-seed", type=int, default=42)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("id-score", help="score caption information density")
    p.add_argument("--surprisals", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_id_score)

    p = sub.add_parser("chance-floor", help="print chance-level metric values")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_chance_floor)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DataError, JoinError, ShapeError, StateError,
            DegenerateError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericsError, TrainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
