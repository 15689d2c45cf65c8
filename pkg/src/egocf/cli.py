"""Command-line interface.

Subcommands: gen-data, augment-text, augment-video, train, eval,
gradcheck, audit, ablate. Options given on the command line override the
JSON config file. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import synthgen, textcf, trainkit, videocf
from .errors import EgocfError


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--data-dir")
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--text-variant", choices=textcf.TEXT_VARIANTS)
    p.add_argument("--video-variant", choices=videocf.VIDEO_VARIANTS)
    p.add_argument("--fill", type=float)
    p.add_argument("--split")
    p.add_argument("--lexicon")
    p.add_argument("--swap-table")
    p.add_argument("--bboxes")
    p.add_argument("--checkpoint-in")
    p.add_argument("--checkpoint-out")
    p.add_argument("--metrics-out")
    p.add_argument("--freeze-augmentation", action="store_true", default=None)
    p.add_argument("--no-adam-reset", dest="adam_reset", action="store_false", default=None)
    p.add_argument("--early-stop-train-acc", type=float)


_TRAIN_KEYS = (
    "data_dir stage epochs batch_size lr weight_decay seed alpha beta lam tau "
    "text_variant video_variant fill split lexicon swap_table bboxes "
    "checkpoint_in checkpoint_out metrics_out freeze_augmentation adam_reset "
    "early_stop_train_acc"
).split()


def _train_config(args: argparse.Namespace) -> trainkit.TrainConfig:
    overrides = {}
    for key in _TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides["lambda" if key == "lam" else key] = value
    if args.config:
        return trainkit.TrainConfig.from_json(args.config, overrides)
    if "data_dir" not in overrides:
        raise EgocfError("either --config or --data-dir is required")
    return trainkit.TrainConfig.from_dict(overrides)


def _cmd_gen_data(args: argparse.Namespace) -> int:
    world_kwargs = {}
    if args.world:
        world_kwargs = json.loads(Path(args.world).read_text())
        for key in ("verbs", "objects"):
            if key in world_kwargs:
                world_kwargs[key] = tuple(world_kwargs[key])
    world = synthgen.WorldSpec(**world_kwargs)
    lex = textcf.SynonymLexicon.from_tsv(args.lexicon or textcf.DEFAULT_LEXICON)
    table = textcf.SwapTable.from_tsv(args.swap_table or textcf.DEFAULT_SWAP_TABLE)
    extra = sorted(lex.tokens() | table.tokens())
    for split, size in (("train", args.train_size), ("test", args.test_size)):
        if size <= 0:
            continue
        ds = synthgen.build_split(world, size, args.seed, split, extra_tokens=extra)
        synthgen.write_dataset(ds, args.out)
        print(f"wrote {size} {split} records ({len(ds.frames)} videos) to {args.out}")
    return 0


def _cmd_augment_text(args: argparse.Namespace) -> int:
    lex = textcf.SynonymLexicon.from_tsv(args.lexicon or textcf.DEFAULT_LEXICON)
    table = textcf.SwapTable.from_tsv(args.swap_table or textcf.DEFAULT_SWAP_TABLE)
    if args.data:
        meta = json.loads((Path(args.data) / "meta.json").read_text())
        verbs, objects = meta["world"]["verbs"], meta["world"]["objects"]
    elif args.verbs and args.objects:
        verbs, objects = args.verbs.split(","), args.objects.split(",")
    else:
        raise EgocfError("augment-text needs --data or both --verbs and --objects")
    rng = np.random.default_rng(args.seed)
    n = 0
    with open(args.infile) as src, open(args.out, "w") as dst:
        for line in src:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            tokens = rec.get("question_tokens") or rec.get("tokens") or rec.get("text", "").split()
            q = textcf.QuestionRecord(
                raw=" ".join(tokens),
                tokens=list(tokens),
                answer_label=int(rec.get("answer_label", -1)),
                category=rec.get("category", ""),
            )
            triple = textcf.make_question_triple(q, args.variant, lex, table, verbs, objects, rng)
            dst.write(
                json.dumps(
                    {
                        "original": triple.original.tokens,
                        "positive": triple.positive.tokens,
                        "negative": triple.negative.tokens,
                        "contrastive_usable": triple.contrastive_usable,
                        "edits": [
                            {
                                "position": e.position,
                                "before": list(e.before),
                                "after": list(e.after),
                                "group": e.group,
                            }
                            for e in triple.edits
                        ],
                    }
                )
                + "\n"
            )
            n += 1
    print(f"augmented {n} questions -> {args.out}")
    return 0


def _cmd_augment_video(args: argparse.Namespace) -> int:
    tensors, _ = ckpt_io.load_tensors(args.infile)
    bbox_map = videocf.load_bboxes(args.bboxes) if args.bboxes else None
    if args.variant == "f_v4" and bbox_map is None:
        raise EgocfError("variant f_v4 requires --bboxes")
    pos_out: dict[str, np.ndarray] = {}
    neg_out: dict[str, np.ndarray] = {}
    for vid, frames in tensors.items():
        bboxes = bbox_map.get(vid, []) if args.variant == "f_v4" else None
        pos, neg = videocf.make_video_pair(frames, args.variant, bboxes=bboxes, fill=args.fill)
        pos_out[vid] = pos
        neg_out[vid] = neg
    ckpt_io.save_tensors(args.out_pos, pos_out, meta={"variant": args.variant, "side": "positive"})
    ckpt_io.save_tensors(args.out_neg, neg_out, meta={"variant": args.variant, "side": "negative"})
    print(f"wrote {len(pos_out)} positive/negative videos -> {args.out_pos}, {args.out_neg}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    ds = synthgen.read_dataset(cfg.data_dir, cfg.split)
    runner = trainkit.train_stage1 if cfg.stage == 1 else trainkit.train_stage2
    result = runner(ds, cfg)
    print(
        f"stage {cfg.stage}: {result.epochs_run} epochs, final train acc "
        f"{result.final_train_acc:.4f}, checkpoint {result.checkpoint_path}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    ds = synthgen.read_dataset(args.data, args.split)
    metrics = trainkit.evaluate(ds, args.checkpoint)
    payload = metrics.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=1, sort_keys=True))
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    worst = trainkit.full_objective_grad_check(
        n_samples=args.samples, eps=args.eps, max_coords=args.coords, seed=args.seed
    )
    elapsed = time.perf_counter() - start
    ok = worst <= args.tolerance
    print(f"gradcheck: max relative error {worst:.3e} (tolerance {args.tolerance:.1e}) "
          f"in {elapsed:.1f}s -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_audit(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    ds = synthgen.read_dataset(cfg.data_dir, cfg.split)
    report = trainkit.similarity_audit(ds, args.checkpoint, cfg)
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=1, sort_keys=True))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    rows = trainkit.run_ablation(cfg, args.out)
    print(trainkit.format_ablation_table(rows), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egocf",
        description="Counterfactual contrastive construction and training for egocentric video QA.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic QA benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--world", help="WorldSpec JSON overrides")
    p.add_argument("--lexicon")
    p.add_argument("--swap-table")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("augment-text", help="emit question triples for a QA JSONL")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=textcf.TEXT_VARIANTS, default="f_q3")
    p.add_argument("--data", help="dataset dir supplying verb/object vocabularies")
    p.add_argument("--verbs", help="comma-separated verb vocabulary")
    p.add_argument("--objects", help="comma-separated object vocabulary")
    p.add_argument("--lexicon")
    p.add_argument("--swap-table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_augment_text)

    p = sub.add_parser("augment-video", help="emit retain/mask pairs for a frames container")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-pos", required=True)
    p.add_argument("--out-neg", required=True)
    p.add_argument("--variant", choices=videocf.VIDEO_VARIANTS, default="f_v1")
    p.add_argument("--fill", type=float, default=0.0)
    p.add_argument("--bboxes")
    p.set_defaults(func=_cmd_augment_video)

    p = sub.add_parser("train", help="run stage-1 or stage-2 training")
    _add_train_overrides(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the composite objective")
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--coords", type=int, default=8, help="sampled coordinates per tensor")
    # 1e-4 balances truncation against roundoff for a full-model loss;
    # cheap per-op checks use the numkit default of 1e-5.
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("audit", help="similarity-margin audit of a checkpoint")
    _add_train_overrides(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("ablate", help="run every text x video variant combination")
    _add_train_overrides(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EgocfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
