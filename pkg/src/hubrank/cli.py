"""Command line: gen-synthetic, train, rank, eval, gradcheck."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .meta_dataset import (
    DEFAULT_HORIZONS,
    generate_synthetic_world,
    load_dataset,
    load_meta,
    save_meta,
    split_meta,
    write_dataset_csv,
)
from .metrics import evaluate_ranking, pr_top_k
from .model_encoder import hub_features, load_card, save_card
from .report import plot_eval, plot_training
from .sanity import GRADCHECK_COMPONENTS, run_gradcheck
from .scorer import write_attention_csv
from .trainer import TrainConfig, config_from_meta, rank_models, substream, train

log = logging.getLogger("hubrank")

WORLD_DEFAULTS = {"n_datasets": 14, "K": 8, "horizons": list(DEFAULT_HORIZONS), "length": 6000, "holdout": 3}
TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "seed"]
CONFIG_KEYS = set(WORLD_DEFAULTS) | set(TRAIN_KEYS) | {"seed"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config and manifests


def resolve_config(args) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(WORLD_DEFAULTS)
    cfg.update({k: v for k, v in TrainConfig().to_dict().items()})
    if args.config:
        blob = json.loads(Path(args.config).read_text())
        unknown = sorted(set(blob) - CONFIG_KEYS)
        if unknown:
            raise CliError(f"{args.config}: unknown config keys: {', '.join(unknown)}")
        cfg.update(blob)
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["horizons"] = [int(h) for h in cfg["horizons"]]
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS}, seed=int(cfg["seed"]))


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, blob) -> None:
    Path(path).write_text(json.dumps(blob, indent=1, sort_keys=True) + "\n")


def write_manifest(out: Path, command: str, cfg: dict, precision: str, inputs: dict, outputs: list[Path], name: str | None = None) -> None:
    """Everything needed to reproduce a command's outputs; no timestamps or absolute paths."""
    write_json(
        out / f"manifest_{name or command}.json",
        {
            "command": command,
            "config": cfg,
            "seed": cfg["seed"],
            "precision": precision,
            "inputs": {name: sha256(p) for name, p in sorted(inputs.items())},
            "outputs": {p.name: sha256(p) for p in sorted(outputs)},
        },
    )


def out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {out} is not writable: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# world files


def world_paths(world: Path) -> dict:
    return {"datasets": world / "datasets.json", "meta": world / "meta.json", "cards": world / "cards"}


def load_world(world: Path):
    """Datasets, hub cards and meta-samples from a gen-synthetic directory, plus input hashes."""
    paths = world_paths(world)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise CliError("missing world files: " + ", ".join(missing))
    index = json.loads(paths["datasets"].read_text())
    hub_ids, samples = load_meta(paths["meta"])
    card_files = [paths["cards"] / f"{m}.json" for m in hub_ids]
    data_files = [world / d["file"] for d in index]
    missing = [str(p) for p in card_files + data_files if not p.exists()]
    if missing:
        raise CliError("missing world files: " + ", ".join(missing))
    datasets = {}
    for d, path in zip(index, data_files):
        datasets[d["id"]] = load_dataset(path, dataset_id=d["id"], split=d["split"], domain=d["domain"], frequency=d["frequency"])
    cards = [load_card(p) for p in card_files]
    inputs = {"datasets.json": paths["datasets"], "meta.json": paths["meta"]}
    inputs.update({f"cards/{p.name}": p for p in card_files})
    inputs.update({d["file"]: world / d["file"] for d in index})
    return datasets, cards, samples, inputs


def cmd_gen_synthetic(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    world = generate_synthetic_world(int(cfg["seed"]), n_datasets=int(cfg["n_datasets"]), K=int(cfg["K"]),
                                     horizons=cfg["horizons"], length=int(cfg["length"]))
    (out / "datasets").mkdir(exist_ok=True)
    (out / "cards").mkdir(exist_ok=True)
    written, index = [], []
    for ds_id in sorted(world.datasets):
        ds = world.datasets[ds_id]
        rel = f"datasets/{ds_id}.csv"
        write_dataset_csv(ds, out / rel)
        written.append(out / rel)
        index.append({"id": ds_id, "file": rel, "domain": ds.domain, "frequency": ds.frequency,
                      "split": ":".join(str(f) for f in ds.split)})
    write_json(out / "datasets.json", index)
    for m in world.hub:
        save_card(m.to_card(), out / "cards" / f"{m.id}.json")
        written.append(out / "cards" / f"{m.id}.json")
    save_meta(out / "meta.json", [m.id for m in world.hub], world.samples)
    written += [out / "datasets.json", out / "meta.json"]
    write_manifest(out, "gen-synthetic", cfg, args.precision, {}, written)
    print(f"{len(world.datasets)} datasets, {len(world.hub)} model cards, {len(world.samples)} meta-samples -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    datasets, cards, samples, inputs = load_world(Path(args.world))
    tcfg = train_config(cfg)
    tr, va, te = split_meta(samples, int(cfg["holdout"]), tcfg.seed)
    hub = hub_features(cards)
    params, report = train(tr, va, datasets, hub, tcfg)
    split = {name: sorted({s.dataset_id for s in part}) for name, part in (("train", tr), ("val", va), ("test", te))}
    ckpt = out / "checkpoint.bin"
    nx.save_checkpoint(ckpt, params, {"config": tcfg.to_dict(), "hub_ids": hub.ids, "split": split,
                                      "seed": tcfg.seed, "holdout": int(cfg["holdout"])})
    report.checkpoint = ckpt.name
    write_json(out / "train_report.json", report.to_dict())
    plot_training(report.epochs, out / "training.png", report.best_epoch)
    write_manifest(out, "train", cfg, args.precision, inputs, [ckpt, out / "training.png"])
    print(f"best epoch {report.best_epoch}  val tau_w {report.best_val_tau_w:.4f}  ({report.seconds:.1f}s) -> {ckpt}")
    return 0


def _dataset_arg(args, datasets):
    if args.dataset in datasets:
        return datasets[args.dataset]
    path = Path(args.dataset)
    if path.exists():
        return load_dataset(path)
    raise CliError(f"dataset {args.dataset!r} is neither a world dataset id nor a CSV path")


def cmd_rank(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    datasets, cards, _, inputs = load_world(Path(args.world))
    ds = _dataset_arg(args, datasets)
    hub = hub_features(cards)
    rk = rank_models(args.checkpoint, ds, args.horizon, hub, seed=args.seed)
    stem = f"rank_{ds.id}_H{args.horizon}"
    written = [out / f"{stem}.csv"]
    with open(written[0], "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["rank", "model_id", "score", "score_sd"])
        for pos, k in enumerate(rk.result.ranking(), start=1):
            wr.writerow([pos, rk.model_ids[k], repr(float(rk.result.r_hat[k])), repr(float(rk.score_sd[k]))])
            print(f"{pos:2d}  {rk.model_ids[k]:<20s} {rk.result.r_hat[k]: .6f}  (sd {rk.score_sd[k]:.2e})")
    if args.export_attention:
        write_attention_csv(rk.result, rk.model_ids, out / f"{stem}_attention.csv")
        written.append(out / f"{stem}_attention.csv")
    if args.export_embedding:
        with open(out / f"{stem}_data_embedding.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in rk.E_d])
        written.append(out / f"{stem}_data_embedding.csv")
    inputs["checkpoint"] = Path(args.checkpoint)
    cfg.update(dataset=ds.id, horizon=args.horizon)
    write_manifest(out, "rank", cfg, args.precision, inputs, written, name=stem)
    return 0


def _case_scores(args, samples, datasets, hub):
    """Predicted scores per case from the checkpoint or from a stub."""
    if args.stub == "oracle":
        return [s.scores.copy() for s in samples]
    if args.stub == "random":
        rng = substream(args.seed or 0, "random-stub")
        return [rng.permutation(len(s.scores)).astype(float) for s in samples]
    return [rank_models(args.checkpoint, datasets[s.dataset_id], s.horizon, hub, seed=args.seed).result.r_hat for s in samples]


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(args)
    datasets, cards, samples, inputs = load_world(Path(args.world))
    hub = hub_features(cards)
    ckpt_meta = {}
    if args.stub is None:
        if not args.checkpoint:
            raise CliError("eval needs --checkpoint unless --stub is given")
        _, ckpt_meta = nx.load_checkpoint(args.checkpoint)
        inputs["checkpoint"] = Path(args.checkpoint)
    if args.partition != "all":
        split = ckpt_meta.get("split")
        if split is None:
            tc = config_from_meta(ckpt_meta) if ckpt_meta else train_config(cfg)
            tr, va, te = split_meta(samples, int(ckpt_meta.get("holdout", cfg["holdout"])), tc.seed)
            split = {n: sorted({s.dataset_id for s in p}) for n, p in (("train", tr), ("val", va), ("test", te))}
        keep = set(split[args.partition])
        samples = [s for s in samples if s.dataset_id in keep]
    if not samples:
        raise CliError(f"partition {args.partition!r} has no cases")
    preds = _case_scores(args, samples, datasets, hub)
    K = hub.K
    rows, rankings = [], []
    for s, r_hat in zip(samples, preds):
        ev = evaluate_ranking(r_hat, s.scores)
        order = np.argsort(-np.asarray(r_hat), kind="stable")
        rankings.append(order)
        rows.append({"dataset_id": s.dataset_id, "horizon": s.horizon, "tau": ev.tau, "tau_w": ev.tau_w,
                     "pred_top3": ";".join(hub.ids[k] for k in order[:3]), "true_top1": hub.ids[int(np.argmax(s.scores))],
                     "scores": ";".join(repr(float(v)) for v in r_hat)})
    stem = f"eval_{args.partition}" + (f"_{args.stub}" if args.stub else "")
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    topk = [pr_top_k(rankings, [s.scores for s in samples], k) for k in range(1, K + 1)]
    agg = {"partition": args.partition, "stub": args.stub, "cases": len(rows),
           "mean_tau": float(np.mean([r["tau"] for r in rows])), "mean_tau_w": float(np.mean([r["tau_w"] for r in rows])),
           "pr_top_k": {str(k): v for k, v in enumerate(topk, start=1)}}
    if args.stub == "random":
        rng = substream(args.seed or 0, "random-stub", "null")
        null = [np.mean([evaluate_ranking(rng.permutation(K).astype(float), s.scores).tau_w for s in samples])
                for _ in range(args.resamples)]
        agg["null_mean_tau_w"] = float(np.mean(null))
        agg["null_p95_tau_w"] = float(np.percentile(null, 95))
        agg["null_resamples"] = args.resamples
    write_json(out / f"{stem}.json", agg)
    plot_eval([f"{r['dataset_id']}/{r['horizon']}" for r in rows], [r["tau_w"] for r in rows], topk, out / f"{stem}.png")
    cfg.update(partition=args.partition, stub=args.stub)
    write_manifest(out, "eval", cfg, args.precision, inputs, [out / f"{stem}.csv", out / f"{stem}.json", out / f"{stem}.png"], name=stem)
    print(f"{len(rows)} cases  mean tau {agg['mean_tau']:.4f}  mean tau_w {agg['mean_tau_w']:.4f}  "
          + "  ".join(f"top{k} {v:.3f}" for k, v in enumerate(topk[:3], start=1)))
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(args.component, instances=args.instances, seed=args.seed or 0)
    print(f"{'component':<20s} {'max rel err':>12s}  {'worst param':<16s} result")
    for r in rows:
        print(f"{r.component:<20s} {r.max_rel_error:12.3e}  {r.worst_param:<16s} {'pass' if r.passed else 'FAIL'}")
    failed = [r.component for r in rows if not r.passed]
    if failed:
        print("gradient check failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config overrides (flags win)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--precision", choices=("f32", "f64"), default="f64")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hubrank", description="Rank a hub of pre-trained forecasters for a target dataset.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic world with oracle scores")
    g.add_argument("--n-datasets", dest="n_datasets", type=int)
    g.add_argument("--hub-size", dest="K", type=int)
    g.add_argument("--horizons", type=int, nargs="+")
    g.add_argument("--length", type=int)
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", parents=[common], help="train the selector on a world directory")
    t.add_argument("--world", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--inner-steps", dest="inner_steps", type=int)
    t.add_argument("--n-tasks", dest="n_tasks", type=int)
    t.add_argument("--no-meta-learning", dest="meta_learning", action="store_const", const=False)
    t.add_argument("--loss-orientation", dest="loss_orientation", choices=("reverse", "conventional"))
    t.add_argument("--holdout", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rank", parents=[common], help="rank the hub for one dataset and horizon")
    r.add_argument("--world", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True, help="world dataset id or a wide CSV path")
    r.add_argument("--horizon", type=int, required=True)
    r.add_argument("--export-attention", action="store_true")
    r.add_argument("--export-embedding", action="store_true")
    r.set_defaults(func=cmd_rank)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint (or a stub) against oracle rankings")
    e.add_argument("--world", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--partition", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--stub", choices=("oracle", "random"))
    e.add_argument("--resamples", type=int, default=1000, help="null draws for the random stub")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit of all gradients")
    c.add_argument("--component", nargs="+", choices=sorted(GRADCHECK_COMPONENTS))
    c.add_argument("--instances", type=int, default=20)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    nx.set_precision(args.precision)
    try:
        return args.func(args)
    except (CliError, ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        nx.set_precision("f64")


if __name__ == "__main__":
    sys.exit(main())
