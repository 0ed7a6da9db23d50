"""Training loop and evaluation."""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, clear_graph, counters, grad, no_grad
from ..autodiff.nn import Adam
from ..decoder import to_detections
from ..model import Detector, Targets, STRIDE
from .data import batch_arrays, make_split
from .loss import detection_loss
from .metrics import EvalReport, evaluate_detections

log = logging.getLogger("heatdet")


class DivergenceError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainResult:
    model: Detector
    history: list = field(default_factory=list)
    steps: int = 0
    grad_calls: int = 0
    seconds: float = 0.0


def _diagnostics(result, parts, params):
    out = {k: float(abs(v.item())) if math.isfinite(v.item()) else float("nan") for k, v in parts.items()}
    out["features_max"] = float(np.abs(result.features.data).max())
    out["logits_max"] = float(np.nanmax(np.abs(result.output.logits.data)))
    out["boxes_max"] = float(np.nanmax(np.abs(result.output.boxes.data)))
    out["param_max"] = float(max(np.abs(p.data).max() for p in params))
    return out


def train_step(model, opt, scenes):
    images, boxes, labels = batch_arrays(scenes)
    size = images.shape[-1] // STRIDE
    targets = Targets.build(boxes, labels, size, size)
    result = model(Tensor(images), targets, train=True)
    loss, parts, _ = detection_loss(model, result, targets)
    params = opt.params
    if not math.isfinite(loss.item()):
        diag = _diagnostics(result, parts, params)
        raise DivergenceError(f"loss became {loss.item()}; last-step magnitudes: {diag}", diag)
    opt.step(grad(loss, params))
    clear_graph(loss)
    return {k: v.item() for k, v in parts.items()} | {"total": loss.item()}


def learning_rate(cfg, step, total):
    """Linear warmup, then constant or cosine decay to zero at ``total``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    span = max(total - cfg.warmup_steps, 1)
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * min(step - cfg.warmup_steps, span) / span))


def train(cfg, scenes=None, eval_fn=None, eval_every=0, stop_at=None):
    """Fit a fresh detector. ``eval_fn(model) -> float`` may stop training once it reaches ``stop_at``."""
    rng = np.random.default_rng(cfg.seed)
    model = Detector(cfg, rng)
    scenes = make_split("train", cfg.train_size, cfg.difficulty, cfg.image_size, cfg.classes) if scenes is None else scenes
    opt = Adam(model.parameters(), lr=cfg.learning_rate, clip_norm=cfg.grad_clip or None)
    per_epoch = max(1, math.ceil(len(scenes) / cfg.batch_size))
    total = cfg.max_steps or cfg.epochs * per_epoch
    start, g0 = time.time(), counters["grad"]
    history, step = [], 0
    log.info("training %d steps (%d scenes, batch %d), config %s", total, len(scenes), cfg.batch_size, cfg.digest()[:12])
    while step < total:
        order = rng.permutation(len(scenes))
        for k in range(0, len(order), cfg.batch_size):
            if step >= total:
                break
            opt.lr = learning_rate(cfg, step, total)
            parts = train_step(model, opt, [scenes[i] for i in order[k:k + cfg.batch_size]])
            parts["step"] = step
            history.append(parts)
            step += 1
            if step % 25 == 0 or step == total:
                recent = np.mean([h["total"] for h in history[-25:]])
                log.info("step %d/%d loss %.4f (%.0fs)", step, total, recent, time.time() - start)
            log.debug("step %d %s", step, {k: round(v, 5) for k, v in parts.items()})
            if eval_every and step % eval_every == 0 and eval_fn is not None:
                score = eval_fn(model)
                log.info("step %d eval %.4f", step, score)
                if stop_at is not None and score >= stop_at:
                    total = step
                    break
    return TrainResult(model, history, step, counters["grad"] - g0, time.time() - start)


def predict(model, scenes, batch_size=16):
    """Per-scene lists of (box, label, score) from the inference path."""
    preds = []
    with no_grad():
        for k in range(0, len(scenes), batch_size):
            images, _, _ = batch_arrays(scenes[k:k + batch_size])
            out = model(Tensor(images), train=False).output
            for dets in to_detections(out):
                preds.append([(d.box, d.label, d.score) for d in dets])
    return preds


def evaluate(model, scenes, batch_size=16):
    """mAP on ``scenes``; reports the number of differentiation calls made (should be 0)."""
    g0 = counters["grad"]
    preds = predict(model, scenes, batch_size)
    report = evaluate_detections(preds, [(s.boxes, s.labels) for s in scenes], model.cfg.classes)
    report.config_digest = model.cfg.digest()
    report.grad_calls = counters["grad"] - g0
    return report


def evaluate_ap(checkpoint, scenes, batch_size=16):
    """``evaluate`` on a checkpoint path or an already loaded model."""
    if isinstance(checkpoint, Detector):
        model = checkpoint
    else:
        from .checkpoint import load_model
        model = load_model(checkpoint)
    return evaluate(model, scenes, batch_size)
