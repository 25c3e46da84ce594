"""Command-line entry point.

Options can also come from a JSON ``--config`` file: top-level keys apply to
every subcommand, and a section named after the subcommand overrides them.
Keys use the option names with dashes replaced by underscores. Relative
input paths resolve against ``$FLOODWATCH_DATA_DIR`` (default: cwd).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from floodwatch import change, cowts, pipeline, raster, report, segnet, synthetic, tweets
from floodwatch.errors import FloodwatchError

log = logging.getLogger("floodwatch")


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands ---------------------------------------------------------------

def cmd_prepare(args) -> int:
    """Crop, patchify and filter image/mask pairs, then write a train/val split."""
    out = Path(args.out_dir)
    ids, masks_kept = [], 0
    for img_path in sorted(pipeline.resolve(args.images).glob("*.png")):
        mask_path = pipeline.resolve(args.masks) / img_path.name
        image = raster.crop_to_multiple(raster.read_image(img_path), args.patch_size)
        mask = raster.crop_to_multiple(raster.read_mask(mask_path), args.patch_size)
        img_patches, grid = raster.patchify(image, args.patch_size)
        mask_patches, _ = raster.patchify(mask, args.patch_size)
        keep = raster.filter_useful(mask_patches, args.min_labeled_fraction)
        for k in keep:
            r, c = divmod(k, grid.cols)
            name = raster.patch_filename(img_path.stem, r, c)
            (out / "images").mkdir(parents=True, exist_ok=True)
            (out / "masks").mkdir(parents=True, exist_ok=True)
            raster.write_image(out / "images" / name, img_patches[k])
            raster.write_mask(out / "masks" / name, mask_patches[k])
            ids.append(name)
        masks_kept += len(keep)
        log.info("%s: kept %d of %d patches", img_path.name, len(keep), len(mask_patches))
    split = raster.split_dataset(ids, args.ratio, args.seed)
    split.save(out / "split.json")
    print(f"{masks_kept} useful patches: {len(split.train)} train, {len(split.val)} val")
    return 0


def _load_patch_dir(root: Path, split: raster.DatasetSplit):
    names = list(split.train) + list(split.val)
    images = np.stack([raster.read_image(root / "images" / n) for n in names])
    masks = np.stack([raster.read_mask(root / "masks" / n) for n in names])
    index = {n: i for i, n in enumerate(names)}
    return images, masks, raster.DatasetSplit([index[n] for n in split.train],
                                              [index[n] for n in split.val], split.ratio, split.seed)


def cmd_train(args) -> int:
    config = segnet.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                learning_rate=args.lr, gamma=args.gamma,
                                loss_weights=tuple(args.loss_weights), seed=args.seed,
                                width=args.width)
    if args.patches:
        root = pipeline.resolve(args.patches)
        images, masks, split = _load_patch_dir(root, raster.DatasetSplit.load(root / "split.json"))
    else:
        images, masks = synthetic.make_dataset(args.synthetic, args.synthetic_size, seed=args.seed)
        split = raster.split_dataset(range(len(images)), 0.75, seed=args.seed)
    resume = None
    if args.resume:
        resume, saved = segnet.load_checkpoint(args.resume)
        config = segnet.TrainConfig.from_dict({**saved.to_dict(), "epochs": args.epochs})
    state = segnet.train(images, masks, split, config, checkpoint_dir=args.checkpoint_dir,
                         resume=resume)
    if args.history:
        segnet.write_history_csv(args.history, state.history)
    for h in state.history:
        print(f"epoch {h.epoch}: loss {h.train_loss:.4f} mIoU {h.train_miou:.4f} | "
              f"val loss {h.val_loss:.4f} val mIoU {h.val_miou:.4f}")
    return 0


def cmd_predict(args) -> int:
    net = segnet.load_network(pipeline.resolve(args.checkpoint))
    image = raster.read_image(pipeline.resolve(args.image))
    probs, labels = pipeline.segment(image, net, args.window_size, args.subdivisions,
                                     not args.no_augmentation)
    raster.write_mask(args.out, labels)
    if args.probs_out:
        np.save(args.probs_out, probs)
    counts = change.count_class_pixels(labels)
    print(json.dumps({"mask": str(args.out), "class_counts": counts.tolist()}))
    return 0


def cmd_change(args) -> int:
    pre = raster.read_mask(pipeline.resolve(args.pre))
    post = raster.read_mask(pipeline.resolve(args.post))
    anns = change.load_annotations(pipeline.resolve(args.annotations)) if args.annotations else []
    rep = change.analyze_change(pre, post, anns, min_area=args.min_area, run_id=args.run_id)
    if args.overlay:
        change.write_change_overlay(args.overlay, rep.change_mask)
    _write_or_print(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_summarize(args) -> int:
    records = tweets.load_corpus(pipeline.resolve(args.corpus))
    stop = tweets.load_stoplist(pipeline.resolve(args.stoplist) if args.stoplist else None)
    res = pipeline.summarize(records, args.budget, args.exact_cap, args.node_cap, stop)
    if args.solution_out:
        Path(args.solution_out).write_text(json.dumps(res.solution.to_dict()) + "\n")
    if args.words_csv:
        tweets.write_content_words_csv(args.words_csv, res.words)
    _write_or_print("".join(line + "\n" for line in res.lines), args.out)
    log.info("%d of %d tweets selected, %d tokens, objective %.4f (%s)",
             sum(res.solution.x), len(records), res.token_length, res.solution.objective,
             "optimal" if res.solution.proven_optimal else "greedy")
    return 0


def cmd_frequency(args) -> int:
    records = tweets.load_corpus(pipeline.resolve(args.corpus))
    out = {}
    if args.keywords:
        if not (args.pre and args.post):
            raise SystemExit("--keywords needs --pre START END and --post START END")
        query = pipeline.make_query(args.keywords, args.pre, args.post)
        out["frequency"] = report.keyword_frequency(records, query).to_dict()
    if args.regions:
        out["proportions"] = report.region_tweet_proportion(
            records, pipeline.load_json(pipeline.resolve(args.regions)))
    _write_or_print(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def cmd_report(args, cfg: dict) -> int:
    merged = {**{k: v for k, v in cfg.items() if k != "report"}, **cfg.get("report", {})}
    if args.generated_at:
        merged["generated_at"] = args.generated_at
    rep = pipeline.run_report(merged, seed=args.seed)
    text = rep.to_json() + "\n"
    _write_or_print(text, args.out)
    if args.text_out:
        Path(args.text_out).write_text(rep.render_text(), encoding="utf-8")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("floodwatch.service:app", host=args.host, port=args.port)
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floodwatch", description="Disaster land-cover change and tweet summarization pipeline.")
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    p.subcommands = sub.choices

    s = sub.add_parser("prepare", help="crop/patchify/filter rasters and split them")
    s.add_argument("images", help="directory of RGB PNG rasters")
    s.add_argument("masks", help="directory of label-mask PNGs with matching names")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--patch-size", type=int, default=raster.DEFAULT_PATCH_SIZE)
    s.add_argument("--min-labeled-fraction", type=float,
                   default=raster.DEFAULT_MIN_LABELED_FRACTION)
    s.add_argument("--ratio", type=float, default=0.75)

    s = sub.add_parser("train", help="train the patch segmenter")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--patches", help="directory written by 'prepare'")
    src.add_argument("--synthetic", type=int, default=256,
                     help="number of synthetic colour-coded patches (default source)")
    s.add_argument("--synthetic-size", type=int, default=32)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--loss-weights", type=float, nargs=2, default=(1.0, 1.0))
    s.add_argument("--width", type=int, default=16)
    s.add_argument("--checkpoint-dir", default="checkpoints")
    s.add_argument("--resume", help="checkpoint file to continue from")
    s.add_argument("--history", help="write per-epoch CSV here")

    s = sub.add_parser("predict", help="smooth-blended segmentation of one raster")
    s.add_argument("image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True, help="output label-mask PNG")
    s.add_argument("--probs-out", help="optional .npy of class probabilities")
    s.add_argument("--window-size", type=int, default=256)
    s.add_argument("--subdivisions", type=int, default=2)
    s.add_argument("--no-augmentation", action="store_true")

    s = sub.add_parser("change", help="pre/post label masks -> change report")
    s.add_argument("pre")
    s.add_argument("post")
    s.add_argument("--annotations", help="JSON region annotations")
    s.add_argument("--min-area", type=int, default=change.DEFAULT_MIN_AREA)
    s.add_argument("--run-id")
    s.add_argument("--overlay", help="write the change mask as a 1-bit PNG")
    s.add_argument("--out")

    s = sub.add_parser("summarize", help="ILP summary of a tweet corpus")
    s.add_argument("corpus")
    s.add_argument("--budget", type=int, default=cowts.DEFAULT_BUDGET)
    s.add_argument("--exact-cap", type=int, default=cowts.DEFAULT_EXACT_CAP)
    s.add_argument("--node-cap", type=int, default=cowts.DEFAULT_NODE_CAP)
    s.add_argument("--stoplist")
    s.add_argument("--solution-out", help="write the x/y solution as JSON")
    s.add_argument("--words-csv", help="write the scored content-word table")
    s.add_argument("--out")

    s = sub.add_parser("frequency", help="keyword frequency and region proportions")
    s.add_argument("corpus")
    s.add_argument("--keywords", nargs="+")
    s.add_argument("--pre", nargs=2, metavar=("START", "END"))
    s.add_argument("--post", nargs=2, metavar=("START", "END"))
    s.add_argument("--regions", help="JSON map of region -> keyword list")
    s.add_argument("--out")

    s = sub.add_parser("report", help="full pipeline driven by --config")
    s.add_argument("--generated-at", help="fixed timestamp for reproducible output")
    s.add_argument("--text-out", help="also write a human-readable rendering")
    s.add_argument("--out")

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv, cfg: dict) -> argparse.Namespace:
    pre = parser.parse_args(argv)
    section = {**{k: v for k, v in cfg.items() if not isinstance(v, dict)},
               **cfg.get(pre.command, {})}
    if not section:
        return pre
    sub = parser.subcommands[pre.command]
    known = {a.dest for a in sub._actions}
    sub.set_defaults(**{k: v for k, v in section.items() if k in known})
    if "seed" in cfg:
        parser.set_defaults(seed=cfg["seed"])
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    first = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if first.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = pipeline.load_json(first.config) if first.config else {}
    args = _apply_config(parser, argv, cfg)
    try:
        if args.command == "report":
            return cmd_report(args, cfg)
        return globals()[f"cmd_{args.command}"](args)
    except (FloodwatchError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
