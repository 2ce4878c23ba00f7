"""Training and evaluation runs assembled from the package modules."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .config import RunConfig, header_comment
from .inference import DetectionConfig, Detections, detect
from .metrics import EvalResult, ImagePredictions, evaluate
from .model import checkpoint
from .model.detector import Detector
from .model.train import AdamW, NonFiniteLossError, TrainItem, prepare_item, train_step
from .rerank import RerankWeights
from .synthdata import SceneSpec, generate

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "rank", "conf", "pos", "junc", "edge", "total", "lr")


def scene_spec(cfg: RunConfig, seed: int | None = None) -> SceneSpec:
    d = dict(cfg.data.__dict__)
    if seed is not None:
        d["seed"] = seed
    return SceneSpec(**d)


def training_items(cfg: RunConfig) -> list[TrainItem]:
    spec = scene_spec(cfg)
    return [prepare_item(generate(spec, i), i, cfg.model.levels) for i in range(cfg.run.train_scenes)]


def schedule(cfg: RunConfig) -> np.ndarray:
    """Training-image indices for every step, fixed by the run seed."""
    rng = np.random.default_rng([cfg.run.seed, 0x5EED])
    return rng.integers(0, cfg.run.train_scenes, size=(cfg.optim.steps, cfg.optim.batch_size))


def build_model(cfg: RunConfig) -> Detector:
    return Detector(cfg.model.replace(seed=cfg.model.seed + cfg.run.seed))


@dataclass
class TrainResult:
    model: Detector
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0


def _ckpt_extra(opt: AdamW, step: int) -> dict[str, np.ndarray]:
    extra = opt.state_arrays()
    extra["train.step"] = np.array([float(step)])
    return extra


def train(cfg: RunConfig, out_dir: str | Path | None = None, resume: str | Path | None = None,
          on_step: Callable[[dict], None] | None = None, items: list[TrainItem] | None = None,
          stop_at: int | None = None) -> TrainResult:
    """Run the configured schedule; writes ``config.txt``, ``losses.csv`` and checkpoints when ``out_dir`` is set.

    Checkpoints are written at step 0, at every learning-rate milestone and at
    the end. ``resume`` continues from a checkpoint written by this function.
    ``stop_at`` ends the loop early without changing the schedule, so the
    rows produced are a prefix of the full run.
    """
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    opt = AdamW(list(model.named_parameters()), cfg.optim)
    start = 0
    if resume is not None:
        _, tensors = checkpoint.read(resume)
        checkpoint.load_into(model, tensors)
        opt.load_state_arrays(tensors)
        start = int(tensors["train.step"][0])
    items = items if items is not None else training_items(cfg)
    plan = schedule(cfg)
    text = cfg.to_text()
    if out is not None:
        (out / "config.txt").write_text(text, encoding="utf-8")
    res = TrainResult(model)
    boundaries = set(cfg.optim.milestone_steps()) | {0}
    csv_fh = None
    writer = None
    if out is not None:
        path = out / "losses.csv"
        csv_fh = open(path, "a" if resume is not None else "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_fh, lineterminator="\n")
        if resume is None:
            csv_fh.write(f"# {header_comment(cfg)}\n")
            writer.writerow(LOSS_COLUMNS)

    def save(step: int) -> None:
        if out is None:
            return
        p = out / f"step{step:05d}.ckpt"
        checkpoint.save(p, text, model, _ckpt_extra(opt, step))
        res.checkpoints.append(p)

    try:
        if start in boundaries and resume is None:
            save(start)
        end = cfg.optim.steps if stop_at is None else min(stop_at, cfg.optim.steps)
        for step in range(start, end):
            batch = [items[int(i)] for i in plan[step]]
            try:
                vals = train_step(model, batch, opt, cfg.loss, step, cfg.run.seed)
            except NonFiniteLossError as err:
                if out is not None:
                    (out / "nan_dump.json").write_text(str(err.dump) + "\n")
                raise
            row = {"step": step, **vals}
            res.history.append(row)
            if writer is not None:
                writer.writerow([step] + [repr(float(vals[k])) for k in LOSS_COLUMNS[1:]])
            if on_step is not None:
                on_step(row)
            if step + 1 in boundaries:
                save(step + 1)
        if end == cfg.optim.steps:
            if cfg.optim.steps > 0 and cfg.optim.steps not in boundaries:
                save(cfg.optim.steps)
            if out is not None:
                checkpoint.save(out / "final.ckpt", text, model, _ckpt_extra(opt, cfg.optim.steps))
    finally:
        if csv_fh is not None:
            csv_fh.close()
    res.seconds = time.perf_counter() - t0
    return res


def load_model(path) -> tuple[Detector, RunConfig]:
    text, tensors = checkpoint.read(path)
    cfg = RunConfig.from_text(text)
    model = build_model(cfg)
    checkpoint.load_into(model, tensors)
    return model, cfg


@dataclass
class EvalRun:
    result: EvalResult
    images: list[ImagePredictions]
    detections: list[Detections]


def eval_images(model: Detector, spec: SceneSpec, count: int, start: int = 0,
                det: DetectionConfig = DetectionConfig(), w: RerankWeights = RerankWeights(),
                predict_level: int | None = None) -> tuple[list[ImagePredictions], list[Detections]]:
    images, dets = [], []
    for i in range(start, start + count):
        s = generate(spec, i)
        d = detect(s.image, model, det, w, predict_level)
        images.append(ImagePredictions(d.segs, d.scores, s.gt_array))
        dets.append(d)
    return images, dets


def evaluate_model(model: Detector, spec: SceneSpec, count: int, thresholds=(5.0, 10.0, 15.0),
                   det: DetectionConfig = DetectionConfig(), w: RerankWeights = RerankWeights(),
                   predict_level: int | None = None) -> EvalRun:
    images, dets = eval_images(model, spec, count, 0, det, w, predict_level)
    return EvalRun(evaluate(images, thresholds), images, dets)


def history_csv(history: list[dict], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for row in history:
        w.writerow([row["step"]] + [repr(float(row[k])) for k in LOSS_COLUMNS[1:]])
    return buf.getvalue()


def no_grad_forward(model: Detector, image):
    with T.no_grad(), T.new_tape():
        return model(image)
