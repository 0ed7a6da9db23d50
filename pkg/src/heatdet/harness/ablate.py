"""Config grids: train and evaluate each cell, then tabulate."""
import csv
import logging
from dataclasses import asdict

import numpy as np

from .data import make_split
from .train import evaluate, train

log = logging.getLogger("heatdet")

METRIC_COLUMNS = ("map50", "map", "detections", "steps", "seconds")
CONFIG_COLUMNS = ("seed", "decoder_depth", "lsconv_enabled", "mohfe_enabled", "hqr_enabled", "lam", "tau", "epochs")


def depth_grid(base, depths=(0, 1, 2, 3, 6), seeds=(0, 1, 2)):
    return [base.replace(decoder_depth=d, seed=s) for d in depths for s in seeds]


def component_grid(base, seeds=(0, 1, 2)):
    """Cumulative component additions, like a component ablation table."""
    steps = [
        dict(lsconv_enabled=False, mohfe_enabled=False, hqr_enabled=False),
        dict(lsconv_enabled=True, mohfe_enabled=False, hqr_enabled=False),
        dict(lsconv_enabled=True, mohfe_enabled=True, hqr_enabled=False),
        dict(lsconv_enabled=True, mohfe_enabled=True, hqr_enabled=True),
    ]
    return [base.replace(seed=s, **st) for st in steps for s in seeds]


def hqr_grid(base, seeds=(0, 1, 2)):
    return [base.replace(seed=s, hqr_enabled=h) for h in (True, False) for s in seeds]


GRIDS = {"depth": depth_grid, "components": component_grid, "hqr": hqr_grid}


def run_grid(configs, train_scenes=None, test_scenes=None, cache=None):
    """One row per config. ``cache`` (dict keyed by digest) lets grids share identical cells."""
    rows = []
    for cfg in configs:
        key = cfg.digest()
        if cache is not None and key in cache:
            rows.append(dict(cache[key]))
            continue
        tr = train_scenes if train_scenes is not None else make_split("train", cfg.train_size, cfg.difficulty, cfg.image_size, cfg.classes)
        te = test_scenes if test_scenes is not None else make_split("test", cfg.test_size, cfg.difficulty, cfg.image_size, cfg.classes)
        result = train(cfg, tr)
        report = evaluate(result.model, te)
        row = {k: getattr(cfg, k) for k in CONFIG_COLUMNS}
        row.update(map50=report.map50, map=report.map, detections=report.detection_count,
                   steps=result.steps, seconds=round(result.seconds, 1), digest=key[:16])
        log.info("cell %s -> map50 %.4f map %.4f", {k: row[k] for k in CONFIG_COLUMNS[:5]}, report.map50, report.map)
        if cache is not None:
            cache[key] = dict(row)
        rows.append(row)
    return rows


def write_table(rows, path):
    columns = list(CONFIG_COLUMNS) + list(METRIC_COLUMNS) + ["digest"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in rows:
            writer.writerow({c: r.get(c, "") for c in columns})


def summarize(rows, by):
    """Mean and spread of map50/map grouped by the ``by`` columns, as text lines."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[c] for c in by), []).append(r)
    lines = [" ".join(f"{c:>14s}" for c in by) + f" {'n':>3s} {'map50':>8s} {'sd':>7s} {'map':>8s}"]
    for key, grp in groups.items():
        m50 = np.array([g["map50"] for g in grp])
        mp = np.array([g["map"] for g in grp])
        lines.append(" ".join(f"{str(k):>14s}" for k in key)
                     + f" {len(grp):3d} {m50.mean():8.4f} {m50.std():7.4f} {mp.mean():8.4f}")
    return "\n".join(lines)


def group_mean(rows, column, value, metric="map50"):
    vals = [r[metric] for r in rows if r[column] == value]
    return float(np.mean(vals)) if vals else float("nan")
