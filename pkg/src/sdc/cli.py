"""Command-line entry point.

Commands: synth, split, pretrain, discover, evaluate, infer, estimate-k,
ablate, export-features. Reports are printed as an aligned table followed by
one JSON line; artifacts (datasets, checkpoints, logs) go to paths given by
flags. Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .clustering import estimate_k
from .data import (
    SPLIT_TEST,
    SPLIT_UNLABELED,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .evaluation import compute_metrics, hungarian_map
from .model import EncoderConfig, pretrain_biased, save_model, load_model
from .pipeline import (
    ABLATION_ARMS,
    PipelineConfig,
    infer,
    load_config,
    make_ablation_config,
    run_discovery,
)

__all__ = ["main"]


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sdc",
        description="Generalized category discovery with self-debiasing calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-mixture dataset")
    p.add_argument("--categories", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-category", type=int, required=True)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--within-std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="tag rows as labeled/unlabeled/test")
    p.add_argument("--data", required=True)
    p.add_argument("--labeled-fraction", type=float, default=0.1)
    p.add_argument("--known-ratio", type=float, default=0.75)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("pretrain", help="pre-train and freeze the biased model")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder", choices=["identity", "hidden"], default="hidden")
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("discover", help="run the full discovery pipeline")
    _add_discover_flags(p)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("evaluate", help="score a saved model on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["classifier", "clustering"], default="clustering")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("infer", help="predict categories for dataset rows")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["classifier", "clustering"], default="classifier")
    p.add_argument("--split", choices=["L", "U", "T", "all"], default="T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("estimate-k", help="estimate the number of categories")
    p.add_argument("--data", required=True)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--drop-ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_estimate_k)

    p = sub.add_parser("ablate", help="run named ablation arms over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--arms", default=",".join(ABLATION_ARMS))
    p.add_argument("--seeds", default="0-4")
    p.add_argument("--mode", choices=["classifier", "clustering"], default="clustering")
    p.add_argument("--json", dest="json_out", default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-features", help="dump learned features as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["L", "U", "T", "all"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    return parser


def _add_discover_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-model", default=None)
    p.add_argument("--out-log", default=None)
    p.add_argument("--mode", choices=["classifier", "clustering"], default="clustering")
    p.add_argument("--k", type=int, default=None, help="override the category count")
    for flag in (
        "disable-cbm",
        "disable-ccm",
        "disable-weighting",
        "disable-logit-adjustment",
        "disable-contrastive",
    ):
        p.add_argument(f"--{flag}", action="store_true")


def _cmd_synth(args):
    ds = generate_synthetic(
        SyntheticConfig(
            num_categories=args.categories,
            dim=args.dim,
            points_per_category=args.per_category,
            center_separation=args.separation,
            within_std=args.within_std,
            seed=args.seed,
        )
    )
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} rows ({args.categories} categories, d={ds.dim}) to {args.out}")
    return 0


def _cmd_split(args):
    ds = split_dataset(
        load_dataset(args.data),
        labeled_fraction=args.labeled_fraction,
        known_category_ratio=args.known_ratio,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    save_dataset(ds, args.out)
    counts = {tag: int(ds.indices(tag).size) for tag in ("L", "U", "T")}
    print(
        f"wrote {args.out}: M={ds.label_space.num_known} "
        f"N={ds.label_space.num_novel} labeled={counts['L']} "
        f"unlabeled={counts['U']} test={counts['T']}"
    )
    return 0


def _cmd_pretrain(args):
    ds = load_dataset(args.data)
    model = pretrain_biased(
        ds,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        encoder=EncoderConfig(
            kind=args.encoder, hidden_dim=args.hidden_dim, dropout_rate=args.dropout
        ),
    )
    save_model(model, args.out_model)
    print(f"wrote frozen biased model ({model.num_classes} classes) to {args.out_model}")
    return 0


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["k_override"] = args.k
    for field in (
        "disable_cbm",
        "disable_ccm",
        "disable_weighting",
        "disable_logit_adjustment",
        "disable_contrastive",
    ):
        if getattr(args, field):
            overrides[field] = True
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_discover(args):
    ds = load_dataset(args.data)
    if ds.indices(SPLIT_TEST).size == 0:
        raise ValueError("dataset has no test rows; run `sdc split` first")
    cfg = _resolve_config(args)
    model, report, log = run_discovery(ds, cfg, eval_mode=args.mode)
    if args.out_model:
        save_model(model, args.out_model)
    if args.out_log:
        with open(args.out_log, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(report.to_table())
    print(report.to_json())
    return 0


def _cmd_evaluate(args):
    ds = load_dataset(args.data)
    model = load_model(args.model)
    test_idx = ds.indices(SPLIT_TEST)
    if test_idx.size == 0:
        raise ValueError("dataset has no test rows")
    X = ds.features[test_idx].astype(np.float64)
    gts = ds.labels[test_idx]
    k = max(model.num_classes, ds.label_space.total)
    preds = infer(model, X, mode=args.mode, seed=args.seed)
    mapping = hungarian_map(preds, gts, k) if args.mode == "clustering" else None
    from .data import LabelSpace

    space = LabelSpace(ds.label_space.num_known, k - ds.label_space.num_known)
    report = compute_metrics(preds, gts, space, mapping=mapping, mode=args.mode)
    print(report.to_table())
    print(report.to_json())
    return 0


def _select_rows(ds, split):
    if split == "all":
        return np.arange(ds.n)
    return ds.indices(split)


def _cmd_infer(args):
    ds = load_dataset(args.data)
    model = load_model(args.model)
    rows = _select_rows(ds, args.split)
    if rows.size == 0:
        raise ValueError(f"no rows with split {args.split!r}")
    preds = infer(
        model, ds.features[rows].astype(np.float64), mode=args.mode, seed=args.seed
    )
    lines = ["id,prediction"] + [
        f"{int(ds.ids[r])},{int(p)}" for r, p in zip(rows, preds)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_estimate_k(args):
    ds = load_dataset(args.data)
    rows = ds.indices(SPLIT_UNLABELED)
    if rows.size == 0:
        rows = np.arange(ds.n)
    estimate = estimate_k(
        ds.features[rows].astype(np.float64),
        k_max=args.k_max,
        drop_ratio=args.drop_ratio,
        seed=args.seed,
    )
    print(estimate)
    return 0


def _parse_seeds(spec):
    seeds = []
    for token in spec.split(","):
        token = token.strip()
        if "-" in token and not token.startswith("-"):
            lo, hi = token.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(token))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _ablate_worker(job):
    data_path, arm, seed, base_cfg, mode = job
    ds = load_dataset(data_path)
    cfg = replace(make_ablation_config(base_cfg, arm), seed=seed)
    _, report, _ = run_discovery(ds, cfg, eval_mode=mode)
    return arm, seed, report.h_score, report.acc_known, report.acc_novel


def _cmd_ablate(args):
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    for arm in arms:
        if arm not in ABLATION_ARMS:
            raise ValueError(f"unknown ablation arm {arm!r}")
    seeds = _parse_seeds(args.seeds)
    base_cfg = load_config(args.config) if args.config else PipelineConfig()
    jobs = [(args.data, arm, seed, base_cfg, args.mode) for arm in arms for seed in seeds]

    workers = os.environ.get("SDC_THREADS")
    workers = int(workers) if workers else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        results = [_ablate_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablate_worker, jobs))

    by_key = {(arm, seed): r for arm, seed, *r in results}
    print(f"{'arm':<16}{'seed':>6}{'h_score':>10}{'known':>10}{'novel':>10}")
    rows = []
    for arm in arms:
        for seed in seeds:
            h, known, novel = by_key[(arm, seed)]
            rows.append({"arm": arm, "seed": seed, "h_score": h, "known": known, "novel": novel})
            print(f"{arm:<16}{seed:>6}{h:>10.2f}{known:>10.2f}{novel:>10.2f}")
        hs = [by_key[(arm, s)][0] for s in seeds]
        ks = [by_key[(arm, s)][1] for s in seeds]
        ns = [by_key[(arm, s)][2] for s in seeds]
        print(
            f"{arm:<16}{'mean':>6}{np.mean(hs):>10.2f}{np.mean(ks):>10.2f}"
            f"{np.mean(ns):>10.2f}"
        )
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
    return 0


def _cmd_export(args):
    ds = load_dataset(args.data)
    model = load_model(args.model)
    rows = _select_rows(ds, args.split)
    if rows.size == 0:
        raise ValueError(f"no rows with split {args.split!r}")
    feats, _ = model.forward(ds.features[rows].astype(np.float64))
    with open(args.out, "w") as fh:
        header = ["id", "label"] + [f"f_{j}" for j in range(feats.shape[1])]
        fh.write(",".join(header) + "\n")
        for r, row in zip(rows, feats):
            vals = ",".join("%.9g" % v for v in row)
            fh.write(f"{int(ds.ids[r])},{int(ds.labels[r])},{vals}\n")
    print(f"wrote {rows.size} feature rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
