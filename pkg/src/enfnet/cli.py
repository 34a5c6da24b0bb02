"""Command-line entry point: ``enfnet {train,predict,eval,gradcheck}``.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, load_checkpoint
from .checks import DEFAULT_TOL, run_checks
from .config import ConfigError, load_run_config, to_dict
from .data import DatasetError, Entry, list_images, load_dataset, prepare_image, prepare_sample, read_mask, write_saliency
from .metrics import aggregate, write_metrics_csv
from .model import ENFNet
from .tensor import ShapeError
from .train import NumericalError, train

log = logging.getLogger("enfnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    network, tcfg = run.network, run.train
    if args.egb is not None:
        network = replace(network, egb_count=args.egb)
    overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs)) if v is not None}
    if overrides:
        tcfg = replace(tcfg, **overrides)
    data = args.data or run.data
    out = Path(args.out or run.out or "runs/train")
    if data is None:
        raise UsageError("no dataset given (use --data or the config's \"data\" key)")

    manifest = load_dataset(data)
    samples = [prepare_sample(e, network) for e in manifest]
    out.mkdir(parents=True, exist_ok=True)
    resolved = replace(run, network=network, train=tcfg, data=str(data), out=str(out))
    (out / "config.json").write_text(json.dumps(to_dict(resolved), indent=2) + "\n", encoding="utf-8")

    model = ENFNet(network, seed=tcfg.seed)
    t0 = time.perf_counter()
    result = train(model, samples, tcfg, out_dir=out)
    if not args.no_figures and result.log:
        from .plotting import plot_loss_curve

        plot_loss_curve(result.log, out / "loss.png", title=f"Training loss ({network.egb_count} EGB)")
    last = result.log[-1]["total_loss"] if result.log else float("nan")
    print(f"trained {len(result.log)} steps in {time.perf_counter() - t0:.1f}s, final loss {last:.6g}")
    print(f"wrote {out / 'final.enfn'} and {out / 'loss.csv'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = load_run_config(args.config)
    model = ENFNet(run.network)
    model.load_state(load_checkpoint(args.checkpoint))
    images = list_images(Path(args.images))
    if not images:
        raise DatasetError(f"no PNG images found in {args.images}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for stem, path in images.items():
        edge = path.with_name(f"{stem}.edge.png")
        image, edge_map = prepare_image(Entry(stem, path, None, edge if edge.exists() else None), run.network)
        write_saliency(model.predict(image, edge_map)[0, 0], out / f"{stem}.png")
    print(f"wrote {len(images)} saliency map(s) to {out}")
    return EXIT_OK


def _load_pair(pred_path: Path, gt_path: Path) -> tuple:
    gt = read_mask(gt_path)
    with Image.open(pred_path) as im:
        im = im.convert("L")
        if im.size != (gt.shape[1], gt.shape[0]):
            im = im.resize((gt.shape[1], gt.shape[0]), Image.BILINEAR)
        pred = np.asarray(im, dtype=np.float64) / 255.0
    return pred, (gt >= 0.5).astype(np.float64)


def cmd_eval(args) -> int:
    if not Path(args.pred).is_dir():
        raise DatasetError(f"prediction directory not found: {args.pred}")
    if not Path(args.gt).is_dir():
        raise DatasetError(f"ground-truth directory not found: {args.gt}")
    preds, gts = list_images(Path(args.pred)), list_images(Path(args.gt))
    only_pred, only_gt = sorted(set(preds) - set(gts)), sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise DatasetError(
            f"unpaired files: predictions without ground truth [{', '.join(only_pred)}]; "
            f"ground truth without predictions [{', '.join(only_gt)}]"
        )
    if not preds:
        raise DatasetError(f"no PNG files in {args.pred}")
    record = aggregate(_load_pair(preds[s], gts[s]) for s in sorted(preds))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(record, out)
    if not args.no_figures:
        from .plotting import plot_pr_curve

        plot_pr_curve({Path(args.pred).name or "pred": record}, out.with_name(out.stem + "_pr.png"))
    print(f"max_f {record.max_f!r}")
    print(f"mae {record.mae!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = [n.strip() for n in args.ops.split(",") if n.strip()] if args.ops else None
    t0 = time.perf_counter()
    try:
        errors = run_checks(names, seed=args.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    width = max(len(n) for n in errors)
    print(f"{'op':<{width}}  {'max rel err':>12}  status")
    for name, err in errors.items():
        print(f"{name:<{width}}  {err:12.3e}  {'ok' if err < args.tol else 'FAIL'}")
    print(f"({time.perf_counter() - t0:.1f}s, tolerance {args.tol:g})")
    failed = [n for n, e in errors.items() if not e < args.tol]
    if failed:
        return _fail(f"gradient check exceeded tolerance for: {', '.join(failed)}", EXIT_NUMERICAL)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enfnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a PNG dataset")
    p.add_argument("--config", default="desk", help="JSON config file or preset name (desk, paper)")
    p.add_argument("--data", help="dataset root with images/ and masks/")
    p.add_argument("--out", help="output directory for checkpoints and logs")
    p.add_argument("--egb", type=int, choices=(0, 3, 5), help="number of edge guidance blocks")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-figures", action="store_true", help="skip the loss-curve PNG")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write full-resolution saliency maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="directory of PNG images")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default="desk", help="network geometry the checkpoint was trained with")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score saliency maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--no-figures", action="store_true", help="skip the PR-curve PNG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--ops", help="comma-separated subset of checks")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, ShapeError, UsageError) as exc:
        return _fail(str(exc), EXIT_INVALID)
    except NumericalError as exc:
        return _fail(str(exc), EXIT_NUMERICAL)
    except OSError as exc:
        return _fail(str(exc), EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
