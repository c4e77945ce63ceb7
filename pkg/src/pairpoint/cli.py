"""Command line entry point: train, detect, match, eval-homography, eval-pose, make-synthetic.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .errors import (CheckpointCorrupt, CheckpointIncompatible, ConfigError, DecodeError, MissingImage,
                     NonFiniteLoss)

log = logging.getLogger("pairpoint")

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_train(args):
    import torch

    from .config import dump_config, load_config
    from .trainer import Trainer

    torch.manual_seed(args.seed)
    overrides = list(args.set or [])
    if args.seed_set:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pio.write_text(out / "config.yaml", dump_config(cfg))
    trainer = Trainer.resume(args.resume, cfg, out_dir=out) if args.resume else Trainer(cfg, out_dir=out)
    if trainer.step >= cfg.steps:
        print(f"already at step {trainer.step}/{cfg.steps}; nothing to do")
        return EXIT_OK
    trainer.run()
    print(f"trained {trainer.step} steps; checkpoint {out / 'last.ckpt'}")
    return EXIT_OK


def _load_model(path):
    from .backbone import load_checkpoint

    model, _ = load_checkpoint(path)
    return model.eval()


def cmd_detect(args):
    import cv2
    import torch

    from .data import load_image, preprocess, to_tensor
    from .detector import top_k_inference

    model = _load_model(args.checkpoint)
    image = load_image(args.image)
    if args.size:
        image, _ = preprocess(image, args.size)
    h, w = image.shape[:2]
    s = model.cfg.max_stride
    ph, pw = -h % s, -w % s
    padded = cv2.copyMakeBorder(image, 0, ph, 0, pw, cv2.BORDER_REPLICATE)
    with torch.no_grad():
        hm, pyr = model(to_tensor(padded)[None])
        det = top_k_inference(hm[0, :h, :w], args.k)
        desc = model.describe([f[0] for f in pyr], det.positions)
    pio.save_keypoints(args.out, det.positions.numpy(), det.scores.numpy(), desc.numpy())
    print(f"{len(det)} keypoints -> {args.out}")
    return EXIT_OK


def cmd_match(args):
    from .geometry import RansacConfig, filter_matches, mutual_nearest_neighbors

    pos_a, _, desc_a = pio.load_keypoints(args.export_a)
    pos_b, _, desc_b = pio.load_keypoints(args.export_b)
    if desc_a.shape[1] != desc_b.shape[1]:
        print(f"descriptor dimensions differ: {desc_a.shape[1]} vs {desc_b.shape[1]}", file=sys.stderr)
        return EXIT_USAGE
    match = mutual_nearest_neighbors(desc_a, desc_b)
    if args.filter == "fundamental":
        if len(match) < 8:
            log.warning("only %d matches; fundamental filtering needs 8, marking all as outliers", len(match))
        match = filter_matches(match, pos_a, pos_b, RansacConfig(threshold=args.threshold, seed=args.seed))
    pa, pb = pos_a[match.pairs[:, 0]], pos_b[match.pairs[:, 1]]
    pio.save_matches(args.out, pa, pb, match.inlier_mask, match.fundamental)
    if args.viz and args.image_a and args.image_b:
        from .data import load_image
        from .evalkit import draw_matches

        draw_matches(load_image(args.image_a), load_image(args.image_b), pa, pb, match.inlier_mask, args.viz)
    print(f"{len(match)} matches, {match.num_inliers} inliers -> {args.out}")
    return EXIT_OK


def _extractor(args):
    from .evalkit import ModelExtractor, OracleExtractor, RandomExtractor, file_digest

    if args.extractor == "oracle":
        return OracleExtractor(args.seed)
    if args.extractor == "random":
        return RandomExtractor(args.seed)
    if not args.checkpoint:
        raise ConfigError("checkpoint", "--checkpoint is required for the model extractor")
    return ModelExtractor(_load_model(args.checkpoint), file_digest(args.checkpoint))


def _cmd_eval(args, benchmark):
    from .data import read_synthetic_dataset
    from .evalkit import DEFAULT_THRESHOLDS, run_benchmark

    pairs = None
    if args.data:
        if not Path(args.data, "truth.txt").exists():
            print(f"benchmark data not found in {args.data}", file=sys.stderr)
            return EXIT_USAGE
        pairs = read_synthetic_dataset(args.data)
    thresholds = _floats(args.thresholds) if args.thresholds else list(DEFAULT_THRESHOLDS[benchmark])
    report = run_benchmark(_extractor(args), benchmark, k=args.k, n_pairs=args.pairs, thresholds=thresholds,
                           seed=args.seed + 1000, size=args.size, pairs=pairs, viz_dir=args.viz)
    pio.write_json(args.out, report)
    unit = "px" if benchmark == "synthetic-homography" else "deg"
    print(" ".join(f"AUC@{t:g}{unit}" for t in report["thresholds"]))
    print(" ".join(f"{v:.4f}" for v in report["auc"]))
    return EXIT_OK


def cmd_make_synthetic(args):
    from .data import write_synthetic_dataset

    out = write_synthetic_dataset(args.out, args.kind, args.n, args.size, args.seed)
    print(f"wrote {args.n} {args.kind} pairs to {out}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="pairpoint", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a keypoint network")
    t.add_argument("--config", help="YAML configuration file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--out", default="runs/train", help="output directory")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="detect and describe keypoints in one image")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--k", type=int, default=2048)
    d.add_argument("--size", type=int, default=0, help="resize longer side and pad to a square first")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_detect)

    m = sub.add_parser("match", help="mutual-NN matching of two keypoint exports")
    m.add_argument("export_a")
    m.add_argument("export_b")
    m.add_argument("--filter", choices=("none", "fundamental"), default="none")
    m.add_argument("--threshold", type=float, default=2.0, help="RANSAC threshold in px")
    m.add_argument("--out", required=True)
    m.add_argument("--image-a")
    m.add_argument("--image-b")
    m.add_argument("--viz", help="write a side-by-side match image")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_match)

    for name, bench in (("eval-homography", "synthetic-homography"), ("eval-pose", "synthetic-epipolar")):
        e = sub.add_parser(name, help=f"evaluate on the {bench} benchmark")
        e.add_argument("--checkpoint")
        e.add_argument("--extractor", choices=("model", "oracle", "random"), default="model")
        e.add_argument("--data", help="directory written by make-synthetic (default: generate on the fly)")
        e.add_argument("--pairs", type=int, default=50)
        e.add_argument("--size", type=int, default=128)
        e.add_argument("--k", type=int, default=1024 if bench == "synthetic-homography" else 2048)
        e.add_argument("--thresholds", help="comma separated, e.g. 1,3,5")
        e.add_argument("--out", required=True)
        e.add_argument("--viz", help="directory for match visualisations")
        e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=lambda a, b=bench: _cmd_eval(a, b))

    s = sub.add_parser("make-synthetic", help="write a synthetic pair dataset")
    s.add_argument("--kind", choices=("homography", "epipolar"), default="homography")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "train":
        args.seed_set = args.seed is not None
        args.seed = args.seed or 0
    if args.command == "make-synthetic" and args.out is None:
        args.out = str(pio.cache_dir() / f"synthetic-{args.kind}-{args.seed}")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc} (key: {exc.key})", file=sys.stderr)
        return EXIT_USAGE
    except (MissingImage, DecodeError, CheckpointCorrupt, CheckpointIncompatible, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        if exc.record:
            print(json.dumps(exc.record), file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
