"""Deterministic single-frame training loop with one-cycle SGD."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rangeseg import config as kv
from rangeseg._atomic import atomic_write_text
from rangeseg.errors import ConfigError, NonFiniteLossError
from rangeseg.losses import LossConfig, total_loss
from rangeseg.nn.checkpoint import state_to_bytes
from rangeseg.nn.optim import SGD
from rangeseg.projection import hflip
from rangeseg.schedule import ScheduleConfig, lr_at, momentum_at

METRICS_HEADER = ("step", "lr", "loss_pred", "loss_range", "loss_total")
TRAIN_KEYS = {"lambda_lovasz", "lambda_range", "lr_max", "steps", "seed"}


@dataclass(frozen=True)
class TrainConfig:
    lambda_lovasz: float = 1.0
    lambda_range: float = 1.0
    lr_max: float = 0.05
    steps: int = 500
    seed: int = 0

    @classmethod
    def from_text(cls, text: str, source: str = "<train config>") -> "TrainConfig":
        vals = kv.parse_kv(text, TRAIN_KEYS, source)
        try:
            return cls(
                lambda_lovasz=float(vals.get("lambda_lovasz", 1.0)),
                lambda_range=float(vals.get("lambda_range", 1.0)),
                lr_max=float(vals.get("lr_max", 0.05)),
                steps=int(vals.get("steps", 500)),
                seed=int(vals.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    def loss_config(self, num_classes: int = 4) -> LossConfig:
        return LossConfig(self.lambda_lovasz, self.lambda_range, num_classes)

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(lr_max=self.lr_max, total_steps=self.steps)


@dataclass
class TrainResult:
    checkpoint: bytes
    metrics: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics)

    def moving_average(self, window: int = 20) -> np.ndarray:
        totals = np.array([row[4] for row in self.metrics], dtype=np.float64)
        return trailing_mean(totals, window)


def trailing_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` values ending at each position (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for step, lr, pred, rng_loss, total in rows:
        writer.writerow([step, f"{lr:.9g}", f"{pred:.9g}", f"{rng_loss:.9g}", f"{total:.9g}"])
    return buf.getvalue()


def _frame_order(rng, n, steps):
    order = []
    while len(order) < steps:
        order.extend(rng.permutation(n).tolist())
    return order[:steps]


def train(dataset, net, loss_cfg: LossConfig, sched: ScheduleConfig, seed: int = 0,
          dump_path=None, log=None) -> TrainResult:
    """Train ``net`` in place on ``(RangeImage, raster)`` pairs, one frame per step.

    Frames are visited in per-epoch permutations and flipped horizontally
    with probability 0.5, both drawn from ``seed``.  A non-finite loss aborts
    with :class:`NonFiniteLossError`; its diagnostic dump is also written to
    ``dump_path`` when given.
    """
    dataset = list(dataset)
    steps = sched.total_steps
    if steps and not dataset:
        raise ConfigError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    order = _frame_order(rng, len(dataset), steps) if steps else []
    flips = rng.random(steps) < 0.5
    opt = SGD(net.parameters(), lr=lr_at(0, sched), momentum=momentum_at(0, sched))
    net.train()
    rows = []
    for step in range(steps):
        img, raster = dataset[order[step]]
        if flips[step]:
            img, raster = hflip(img, raster)
        lr, mom = lr_at(step, sched), momentum_at(step, sched)
        net.zero_grad()
        fused, heavy, light = net(img)
        parts = total_loss(fused, heavy, light, raster, loss_cfg)
        values = (float(parts.pred.data), float(parts.range.data), float(parts.total.data))
        if not all(math.isfinite(v) for v in values):
            dump = {
                "step": step, "frame": int(order[step]), "flipped": bool(flips[step]),
                "lr": lr, "loss_pred": values[0], "loss_range": values[1], "loss_total": values[2],
                "param_norms": {name: float(np.linalg.norm(p.data))
                                for name, p in net.named_parameters()},
            }
            if dump_path is not None:
                atomic_write_text(dump_path, json.dumps(dump, indent=1, sort_keys=True))
            raise NonFiniteLossError(f"non-finite loss at step {step}: {values}", dump)
        parts.total.backward()
        opt.lr, opt.momentum = lr, mom
        opt.step()
        rows.append((step, lr, *values))
        if log is not None:
            log(step, lr, values)
    return TrainResult(state_to_bytes(net.state()), rows)


def write_metrics(path, result: TrainResult) -> None:
    atomic_write_text(Path(path), result.metrics_csv())
