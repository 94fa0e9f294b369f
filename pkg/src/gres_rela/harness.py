"""Training loop, evaluation pipeline, ablation variants and gradient sweep."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import encoders as enc
from . import numcore as nc
from . import synthdata as sd
from .config import Config
from .errors import CompatibilityError, InputError, NumericalError
from .metrics import EvalReport, eval_record, summarize
from .model import GresModel
from .objective import GresSample, LossWeights, compute_loss

log = logging.getLogger(__name__)

MODEL_FILE = "model.ckpt"
VOCAB_FILE = "vocab.txt"
CONFIG_FILE = "config.txt"
STATE_FILE = "state.ckpt"
STATE_META = "state.json"
LOG_FILE = "train.log"


# ---------------------------------------------------------------- data


def load_split(data_dir: str | Path, split: str) -> list[GresSample]:
    data_dir = Path(data_dir)
    manifest = data_dir / f"{split}.tsv"
    if not manifest.is_file():
        raise InputError(f"dataset manifest not found: {manifest}")
    samples = []
    for row in sd.read_manifest(manifest):
        image = sd.read_ppm(data_dir / row.image_path)
        mask = sd.read_pgm(data_dir / row.mask_path)
        samples.append(GresSample(image, row.expression, mask, row.no_target))
    return samples


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: nc.ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros(p.shape) for p in params}
        self.v = {p.name: np.zeros(p.shape) for p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p in self.params:
            if p.grad is None:
                g = np.zeros(p.shape)
            else:
                g = p.grad
            m = self.m[p.name] = b1 * self.m[p.name] + (1.0 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for k in self.m:
            self.m[k] = arrays[f"adam.m.{k}"].copy()
            self.v[k] = arrays[f"adam.v.{k}"].copy()
        self.t = t


# ---------------------------------------------------------------- ablations


def ablation_apply(config: Config, model: GresModel) -> GresModel:
    """Point ``model`` at the variant selected by the ablation flags in ``config``.

    The minimap flag does not change the network; it zeroes the minimap loss
    weight through ``Config.loss_weights``.
    """
    model.variant = config.variant()
    return model


# ---------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    mask: float
    minimap: float
    nt: float
    total: float
    val_giou: float | None
    seconds: float

    def line(self, timing: bool = True) -> str:
        g = "n/a" if self.val_giou is None else f"{self.val_giou:.4f}"
        text = (
            f"epoch={self.epoch} mask={self.mask:.6f} minimap={self.minimap:.6f} "
            f"nt={self.nt:.6f} total={self.total:.6f} val_giou={g}"
        )
        return text + f" seconds={self.seconds:.1f}" if timing else text


@dataclass
class TrainResult:
    model: GresModel
    history: list[EpochLog] = field(default_factory=list)
    best_val_giou: float | None = None
    best_epoch: int = 0


def _check_finite(parts: dict[str, float], where: str) -> None:
    for name, value in parts.items():
        if not math.isfinite(value):
            raise NumericalError(f"{where}: {name} loss is {value}")


def train_step(model: GresModel, batch: Sequence[GresSample], weights: LossWeights) -> dict[str, float]:
    """Accumulate averaged gradients over ``batch``; returns the summed loss parts."""
    sums = {"mask": 0.0, "minimap": 0.0, "nt": 0.0, "total": 0.0}
    inv = 1.0 / len(batch)
    for sample in batch:
        out = model.forward(sample.image, sample.expression)
        losses = compute_loss(out, sample, weights)
        parts = losses.values()
        _check_finite(parts, f"sample {sample.expression!r}")
        nc.backward(nc.scale(losses.total, inv))
        for k, v in parts.items():
            sums[k] += v
    return sums


def evaluate_model(model: GresModel, samples: Sequence[GresSample], mode: str | None = None) -> EvalReport:
    records = []
    for s in samples:
        pred, _ = model.predict(s.image, s.expression, mode)
        records.append(eval_record(pred, s.m_gt, s.e_gt))
    return summarize(records)


def _save_resume_state(
    out: Path, model: GresModel, opt: Adam, rng: np.random.Generator, epoch: int, result: "TrainResult"
) -> None:
    arrays = dict(model.params.state())
    arrays.update(opt.state())
    nc.write_checkpoint(out / STATE_FILE, arrays)
    meta = {
        "epoch": epoch,
        "step": opt.t,
        "rng": rng.bit_generator.state,
        "best_val_giou": result.best_val_giou,
        "best_epoch": result.best_epoch,
    }
    (out / STATE_META).write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


def train(
    config: Config,
    data_dir: str | Path,
    out_dir: str | Path | None = None,
    *,
    train_samples: Sequence[GresSample] | None = None,
    val_samples: Sequence[GresSample] | None = None,
    vocab: enc.Vocabulary | None = None,
    resume: bool = False,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam training; keeps the checkpoint with the best validation gIoU."""
    if train_samples is None:
        train_samples = load_split(data_dir, "train")
    if val_samples is None:
        val_path = Path(data_dir) / "val.tsv"
        val_samples = load_split(data_dir, "val") if val_path.is_file() else []
    if vocab is None:
        vocab = enc.Vocabulary.build(s.expression for s in train_samples)
    model = ablation_apply(config, GresModel(config, vocab))
    opt = Adam(model.params, config.lr)
    rng = np.random.default_rng(config.seed + 1)
    weights = config.loss_weights()
    out = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    result = TrainResult(model)
    best_state = model.params.state()

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / VOCAB_FILE)
        config.save(out / CONFIG_FILE)
        if resume and (out / STATE_META).is_file():
            meta = json.loads((out / STATE_META).read_text(encoding="utf-8"))
            arrays = nc.read_checkpoint(out / STATE_FILE)
            model.params.load_state({k: v for k, v in arrays.items() if not k.startswith("adam.")})
            opt.load_state(arrays, meta["step"])
            rng.bit_generator.state = meta["rng"]
            start_epoch = meta["epoch"]
            result.best_val_giou = meta["best_val_giou"]
            result.best_epoch = meta["best_epoch"]
            best_state = nc.read_checkpoint(out / MODEL_FILE)
        elif not resume:
            (out / LOG_FILE).write_text("", encoding="utf-8")

    if out is not None and start_epoch == 0:
        model.save(out / MODEL_FILE)

    n = len(train_samples)
    for epoch in range(start_epoch + 1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = {"mask": 0.0, "minimap": 0.0, "nt": 0.0, "total": 0.0}
        for start in range(0, n, config.batch_size):
            batch = [train_samples[int(i)] for i in order[start : start + config.batch_size]]
            model.params.zero_grad()
            part = train_step(model, batch, weights)
            for k in sums:
                sums[k] += part[k]
            opt.step()
        val_giou = evaluate_model(model, val_samples).giou if val_samples else None
        entry = EpochLog(epoch, *(sums[k] / max(n, 1) for k in ("mask", "minimap", "nt", "total")),
                         val_giou, time.perf_counter() - t0)
        result.history.append(entry)
        log.info(entry.line())
        if on_epoch:
            on_epoch(entry)
        improved = val_giou is not None and (result.best_val_giou is None or val_giou > result.best_val_giou)
        if improved or (val_giou is None and epoch == config.epochs):
            result.best_val_giou = val_giou
            result.best_epoch = epoch
            best_state = model.params.state()
            if out is not None:
                model.save(out / MODEL_FILE)
        if out is not None:
            with open(out / LOG_FILE, "a", encoding="utf-8") as fh:
                # wall-clock time stays out of the file so reruns are byte-identical
                fh.write(entry.line(timing=False) + "\n")
            _save_resume_state(out, model, opt, rng, epoch, result)

    model.params.load_state(best_state)
    return result


# ---------------------------------------------------------------- evaluation


def load_trained(run_dir: str | Path, config: Config | None = None) -> GresModel:
    """Rebuild a model from a training output directory (or a checkpoint inside one)."""
    path = Path(run_dir)
    ckpt = path / MODEL_FILE if path.is_dir() else path
    base = ckpt.parent
    if not ckpt.is_file():
        raise InputError(f"checkpoint not found: {ckpt}")
    vocab_path = base / VOCAB_FILE
    if not vocab_path.is_file():
        raise CompatibilityError(f"no vocabulary next to checkpoint {ckpt}")
    if config is None:
        cfg_path = base / CONFIG_FILE
        config = Config.load(cfg_path) if cfg_path.is_file() else Config()
    model = GresModel(config, enc.Vocabulary.load(vocab_path))
    model.load(ckpt)
    return model


def evaluate(
    checkpoint: str | Path,
    data_dir: str | Path,
    split: str = "val",
    mode: str | None = None,
    config: Config | None = None,
) -> EvalReport:
    model = load_trained(checkpoint, config)
    model = ablation_apply(model.config, model)
    return evaluate_model(model, load_split(data_dir, split), mode)


# ---------------------------------------------------------------- gradient sweep


def gradcheck_model(
    seed: int = 0,
    *,
    channels: int = 16,
    regions: int = 4,
    grid: int = 8,
    n_tokens: int = 4,
    step: float = 1e-4,
    variant_overrides: dict | None = None,
) -> dict[str, float]:
    """Finite-difference check of every parameter of the full model on one random sample.

    Returns the relative error per parameter name.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(n_tokens)]
    vocab = enc.Vocabulary(words)
    cfg = Config(canvas=grid * 4, channels=channels, regions=regions, max_tokens=n_tokens, seed=seed)
    if variant_overrides:
        cfg = cfg.replace(**variant_overrides)
    model = ablation_apply(cfg, GresModel(cfg, vocab))
    image = rng.integers(0, 256, size=(cfg.canvas, cfg.canvas, 3)).astype(np.uint8)
    mask = np.zeros((cfg.canvas, cfg.canvas), dtype=bool)
    r0, c0 = rng.integers(0, cfg.canvas // 2, size=2)
    mask[r0 : r0 + cfg.canvas // 3, c0 : c0 + cfg.canvas // 3] = True
    sample = GresSample(image, " ".join(words), mask, False)
    weights = cfg.loss_weights()

    def loss() -> nc.Tensor:
        return compute_loss(model.forward(sample.image, sample.expression), sample, weights).total

    return nc.check_gradients(loss, list(model.params), step)
