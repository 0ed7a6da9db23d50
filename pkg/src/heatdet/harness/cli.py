"""Command-line entry point: train, eval, ablate, heatbar, params, gen-data."""
import argparse
import csv
import os
import sys

import numpy as np

from ..autodiff import Tensor, no_grad
from .config import TOGGLES, ConfigFileError, load_config, write_config
from .logs import get_logger


def _toggle(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected <component>=<on|off>, got {text!r}")
    name, state = text.split("=", 1)
    name, state = name.strip().lower(), state.strip().lower()
    if name not in TOGGLES:
        raise argparse.ArgumentTypeError(f"unknown component {name!r}; choose from {', '.join(TOGGLES)}")
    if state not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"toggle state must be on or off, got {state!r}")
    return name, state == "on"


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--decoder-depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="runs/default")
    p.add_argument("--toggle", action="append", type=_toggle, default=[], metavar="COMPONENT=on|off")
    p.add_argument("--image-size", type=int)
    p.add_argument("--queries", dest="query_budget", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="heatdet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a detector and save a checkpoint")
    _common(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint")
    p = sub.add_parser("ablate", help="train and evaluate a grid of configs")
    _common(p)
    p.add_argument("--grid", choices=("depth", "components", "hqr"), default="depth")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--depths", default="0,1,2,3,6")
    p = sub.add_parser("heatbar", help="render heatmap overlays for test scenes")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=4)
    p = sub.add_parser("params", help="per-module parameter counts")
    _common(p)
    p = sub.add_parser("gen-data", help="write synthetic scenes as images plus a label table")
    _common(p)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--split", choices=("train", "test"), default="train")
    return parser


def effective_config(args):
    overrides = {}
    for key in ("seed", "lam", "tau", "decoder_depth", "epochs", "image_size", "query_budget"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for name, on in args.toggle:
        overrides[f"{name}_enabled"] = on
    return load_config(args.config, overrides)


def _checkpoint_path(args):
    return args.checkpoint or os.path.join(args.out, "checkpoint.bin")


def cmd_train(args, cfg, log):
    from .checkpoint import save_checkpoint
    from .train import train

    result = train(cfg)
    path = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(path, cfg, result.model.state_dict())
    keys = list(result.history[0]) if result.history else []
    with open(os.path.join(args.out, "train_history.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(result.history)
    log.info("saved %s after %d steps (%.0fs)", path, result.steps, result.seconds)


def _write_report(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["map50", f"{report.map50:.6f}"])
        w.writerow(["map", f"{report.map:.6f}"])
        for k, v in sorted(report.per_class_ap.items()):
            w.writerow([f"ap50_class{k}", f"{v:.6f}"])
        w.writerow(["detections", report.detection_count])
        w.writerow(["grad_calls", report.grad_calls])
        w.writerow(["config_digest", report.config_digest])


def cmd_eval(args, cfg, log):
    from .checkpoint import load_model
    from .data import make_split
    from .train import evaluate

    model = load_model(_checkpoint_path(args))
    mc = model.cfg
    report = evaluate(model, make_split("test", mc.test_size, mc.difficulty, mc.image_size, mc.classes))
    _write_report(report, os.path.join(args.out, "eval.csv"))
    log.info("map50 %.4f map %.4f (%d detections)", report.map50, report.map, report.detection_count)


def cmd_ablate(args, cfg, log):
    from .ablate import GRIDS, run_grid, summarize, write_table

    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if args.grid == "depth":
        depths = tuple(int(d) for d in args.depths.split(",") if d.strip())
        configs = GRIDS["depth"](cfg, depths, seeds)
        by = ("decoder_depth",)
    elif args.grid == "hqr":
        configs, by = GRIDS["hqr"](cfg, seeds), ("hqr_enabled",)
    else:
        configs, by = GRIDS["components"](cfg, seeds), ("lsconv_enabled", "mohfe_enabled", "hqr_enabled")
    rows = run_grid(configs)
    write_table(rows, os.path.join(args.out, f"ablation_{args.grid}.csv"))
    text = summarize(rows, by)
    with open(os.path.join(args.out, f"ablation_{args.grid}_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    log.info("%s", text)


def cmd_heatbar(args, cfg, log):
    from .checkpoint import load_model
    from .data import batch_arrays, make_split
    from .heatbar import render_heatbar

    model = load_model(_checkpoint_path(args))
    mc = model.cfg
    scenes = make_split("test", args.count, mc.difficulty, mc.image_size, mc.classes)
    images, _, _ = batch_arrays(scenes)
    with no_grad():
        result = model(Tensor(images), train=False)
    for i, scene in enumerate(scenes):
        path = os.path.join(args.out, f"heatbar_{i:03d}.ppm")
        render_heatbar(result.maps["mixed"][i], result.mask[i], scene.image, path)
        log.info("wrote %s", path)


def cmd_params(args, cfg, log):
    from .params import count_parameters

    rows = count_parameters(cfg)
    with open(os.path.join(args.out, "params.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["module", "parameters"])
        w.writerows(rows)
    for name, n in rows:
        log.info("%-18s %10d", name, n)


def cmd_gen_data(args, cfg, log):
    from .data import make_split
    from .heatbar import encode_p6

    scenes = make_split(args.split, args.count, cfg.difficulty, cfg.image_size, cfg.classes)
    with open(os.path.join(args.out, "labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "seed", "label", "cx", "cy", "w", "h"])
        for i, s in enumerate(scenes):
            pix = np.floor(np.transpose(s.image, (1, 2, 0)) * 255 + 0.5).astype(np.uint8)
            with open(os.path.join(args.out, f"scene_{i:04d}.ppm"), "wb") as img:
                img.write(encode_p6(pix))
            for lab, box in zip(s.labels, s.boxes):
                w.writerow([i, s.seed, int(lab)] + [f"{v:.6f}" for v in box])
    log.info("wrote %d scenes to %s", len(scenes), args.out)


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "heatbar": cmd_heatbar,
            "params": cmd_params, "gen-data": cmd_gen_data}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
    except (ConfigFileError, ValueError, OSError) as exc:
        parser.error(str(exc))
    os.makedirs(args.out, exist_ok=True)
    log = get_logger(os.path.join(args.out, "run.log"))
    write_config(cfg, os.path.join(args.out, "config.txt"))
    log.info("heatdet %s -> %s (config %s)", args.command, args.out, cfg.digest()[:12])
    COMMANDS[args.command](args, cfg, log)
    return 0


if __name__ == "__main__":
    sys.exit(main())
