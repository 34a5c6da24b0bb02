"""Optimization loop and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import Sample, hflip_augment
from .losses import total_loss
from .metrics import MetricsRecord, aggregate
from .model import ENFNet
from .params import ParamStore
from .tensor import GraphTape, Tensor, reverse_accumulate

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "ce_loss", "boundary_loss", "total_loss")


class NumericalError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: ParamStore
    log: list = field(default_factory=list)

    @property
    def losses(self) -> list:
        return [row["total_loss"] for row in self.log]


def stack(samples: Sequence[Sample], attr: str) -> Tensor:
    return Tensor(np.concatenate([getattr(s, attr).data for s in samples], axis=0))


def train_step(model: ENFNet, batch: Sequence[Sample], weights) -> tuple:
    params = model.params.tensors()
    with GraphTape() as tape:
        out = model.forward(stack(batch, "image"), stack(batch, "edge"))
        terms = total_loss(model.supervised_output(out), stack(batch, "gt"), weights)
    grads = reverse_accumulate(tape, terms.total, params)
    return terms, dict(zip(model.params, grads))


def epoch_order(samples: Sequence[Sample], augment: bool, rng: np.random.Generator) -> list:
    items = list(samples)
    if augment:
        items += [hflip_augment(s) for s in samples]
    return [items[i] for i in rng.permutation(len(items))]


def train(
    model: ENFNet,
    samples: Sequence[Sample],
    config: TrainConfig,
    out_dir: Optional[Path] = None,
) -> TrainResult:
    """Adam on the combined loss; one log row per optimizer step."""
    if not samples:
        raise ValueError("training needs at least one sample")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.learning_rate)
    result = TrainResult(params=model.params)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = epoch_order(samples, config.augment, rng)
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            step += 1
            terms, grads = train_step(model, batch, config.weights)
            row = {
                "step": step,
                "epoch": epoch,
                "ce_loss": terms.cross_entropy.item(),
                "boundary_loss": terms.boundary.item(),
                "total_loss": terms.total.item(),
            }
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if not math.isfinite(row["total_loss"]) or bad:
                raise NumericalError(
                    f"non-finite loss or gradient at step {step} (epoch {epoch}): "
                    f"loss={row['total_loss']!r}, bad gradients={bad[:3]}"
                )
            result.log.append(row)
            opt.step(grads)
            log.debug("step %d loss %.6f", step, row["total_loss"])
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model.params, out_dir / f"epoch_{epoch:04d}.enfn")
    if out_dir is not None:
        save_checkpoint(model.params, out_dir / "final.enfn")
        write_loss_csv(result.log, out_dir / "loss.csv")
    return result


def write_loss_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in rows:
            w.writerow([row["step"], row["epoch"]] + [repr(row[k]) for k in LOG_FIELDS[2:]])


def read_loss_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()} for row in reader
        ]


def evaluate(model: ENFNet, samples: Sequence[Sample]) -> MetricsRecord:
    """Full-resolution predictions scored against each sample's mask."""
    if not samples:
        raise ValueError("evaluation needs at least one sample")
    pairs = ((model.predict(s.image, s.edge)[0, 0], s.mask.data[0, 0]) for s in samples)
    return aggregate(pairs)
