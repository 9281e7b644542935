"""Dual-path pre-training loop.

Per step: two augmented views per anchor, view 1 through the dense path,
view 2 through the gated path, loss = VICReg + budget penalty, one
backward pass over the joint graph, then a LARS step. Every random draw
comes from a counter-based stream so a run is a pure function of its
config.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .augment import sample_views
from .budget import FlopsModel, budget_loss, flops_ratio
from .checkpoint import Checkpoint, atomic_write_text, encoder_state, load_checkpoint, \
    load_encoder_state, save_checkpoint
from .config import RunConfig, dump_config
from .data import ImageDataset
from .encoder import Encoder
from .errors import ContractError, NumericError
from .gating import temperature
from .objective import vicreg_loss
from .optim import LARS, TrainConfig, lars_update, lr_schedule  # noqa: F401  (re-exported)
from .rng import generator, stream_id
from .tensorcore import Tensor

METRIC_FIELDS = ("epoch", "loss_total", "loss_inv", "loss_var", "loss_cov",
                 "loss_budget", "flops_ratio", "lr", "tau")

_PERMUTE, _AUGMENT, _GATES = 0x9E12, 0xA06, 0x6A7E


class TrainingAborted(NumericError):
    def __init__(self, message: str, last_checkpoint: str | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    encoder: Encoder
    metrics: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def format_metrics(rows: list[dict]) -> str:
    lines = [",".join(METRIC_FIELDS)]
    for row in rows:
        vals = [str(row["epoch"])] + [format(row[k], ".9g") for k in METRIC_FIELDS[1:]]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != METRIC_FIELDS:
            raise ContractError(f"unexpected metrics header in {path}")
        rows = []
        for line in fh:
            if line.strip():
                vals = line.strip().split(",")
                rows.append({"epoch": int(vals[0]), **{k: float(v) for k, v in zip(header[1:], vals[1:])}})
    return rows


def conv_checksum(kernels: list[Tensor]) -> str:
    h = hashlib.sha256()
    for k in kernels:
        h.update(np.ascontiguousarray(k.data).tobytes())
    return h.hexdigest()


def make_batch(dataset: ImageDataset, indices: np.ndarray, config: RunConfig,
               epoch: int) -> tuple[np.ndarray, np.ndarray]:
    aug = config.effective_augment
    v1, v2 = [], []
    for idx in indices:
        a, b = sample_views(dataset.images[idx], aug, stream_id(_AUGMENT, epoch, int(idx)))
        v1.append(a)
        v2.append(b)
    to_nchw = lambda views: np.ascontiguousarray(np.stack(views).transpose(0, 3, 1, 2))
    return to_nchw(v1), to_nchw(v2)


def train_step(encoder: Encoder, x1: np.ndarray, x2: np.ndarray, config: RunConfig,
               flops_model: FlopsModel, step_stream: int, tau: float) -> dict:
    """Forward both views, backpropagate the joint loss, return the loss breakdown."""
    mode = config.train.mode
    if mode == "dual":
        f1, _ = encoder.forward(x1, "dense", "training")
        f2, masks = encoder.forward(x2, "gated", "training", rng_stream=stream_id(step_stream, 2), tau=tau)
        z1, z2 = encoder.project(f1, "dense"), encoder.project(f2, "gated")
        ratio = flops_ratio(masks, flops_model)
    elif mode == "gated":
        f1, m1 = encoder.forward(x1, "gated", "training", rng_stream=stream_id(step_stream, 1), tau=tau)
        f2, m2 = encoder.forward(x2, "gated", "training", rng_stream=stream_id(step_stream, 2), tau=tau)
        z1, z2 = encoder.project(f1, "gated"), encoder.project(f2, "gated")
        ratio = (flops_ratio(m1, flops_model) + flops_ratio(m2, flops_model)) * 0.5
    else:
        f1, _ = encoder.forward(x1, "dense", "training")
        f2, _ = encoder.forward(x2, "dense", "training")
        z1, z2 = encoder.project(f1, "dense"), encoder.project(f2, "dense")
        ratio = None
    terms = vicreg_loss(z1, z2, config.effective_vicreg)
    total = terms.total
    if ratio is not None:
        penalty = budget_loss(ratio, config.effective_budget)
        total = total + penalty
    value = total.item()
    if not math.isfinite(value):
        raise NumericError("loss is not finite")
    total.backward()
    return {
        "loss_total": value,
        "loss_inv": terms.invariance.item(),
        "loss_var": terms.variance.item(),
        "loss_cov": terms.covariance.item(),
        "loss_budget": penalty.item() if ratio is not None else 0.0,
        "flops_ratio": ratio.item() if ratio is not None else 1.0,
    }


def _names_by_id(encoder: Encoder) -> dict:
    return {id(p): name for name, p in encoder.named_parameters()}


def make_checkpoint(encoder: Encoder, optimizer: LARS, config: RunConfig, epoch: int, counter: int) -> Checkpoint:
    arrays = dict(encoder_state(encoder))
    for name, buf in optimizer.named_momenta(_names_by_id(encoder)).items():
        arrays[f"optimizer.momentum.{name}"] = buf
    return Checkpoint(arrays, epoch, config.train.seed, counter, dump_config(config))


def pretrain(config: RunConfig, dataset: ImageDataset, encoder: Encoder | None = None,
             out_dir=None, resume=None, on_epoch: Callable | None = None) -> TrainResult:
    tcfg = config.train
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    steps_per_epoch = len(dataset) // tcfg.batch_size  # drop the partial batch
    if steps_per_epoch == 0:
        raise ContractError(f"dataset of {len(dataset)} images is smaller than one batch")
    encoder = encoder or Encoder(config.encoder, config.sampler)
    flops_model = FlopsModel.from_config(config.encoder)
    optimizer = LARS(*encoder.param_groups(), tcfg)
    total_steps = steps_per_epoch * tcfg.epochs
    result = TrainResult(encoder)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "config.cfg", dump_config(config))

    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        load_encoder_state(encoder, ckpt.arrays)
        prefix = "optimizer.momentum."
        optimizer.load_momenta({k[len(prefix):]: v for k, v in ckpt.arrays.items() if k.startswith(prefix)},
                               _names_by_id(encoder))
        start_epoch = ckpt.epoch
        if out is not None and (out / "metrics.csv").exists():
            result.metrics = [r for r in read_metrics(out / "metrics.csv") if r["epoch"] <= start_epoch]
        result.checkpoints.append(str(resume))

    dense_kernels = encoder.conv_kernels()
    for epoch in range(start_epoch, tcfg.epochs):
        order = generator(tcfg.seed, stream_id(_PERMUTE, epoch)).permutation(len(dataset))
        sums = dict.fromkeys(METRIC_FIELDS[1:7], 0.0)
        lr = tau = 0.0
        for s in range(steps_per_epoch):
            step = epoch * steps_per_epoch + s
            lr = lr_schedule(step, total_steps, tcfg)
            tau = temperature(step / total_steps, config.sampler)
            x1, x2 = make_batch(dataset, order[s * tcfg.batch_size:(s + 1) * tcfg.batch_size], config, epoch)
            try:
                stats = train_step(encoder, x1, x2, config, flops_model,
                                   stream_id(_GATES, tcfg.seed, step), tau)
            except NumericError as exc:
                last = result.checkpoints[-1] if result.checkpoints else None
                raise TrainingAborted(f"epoch {epoch + 1} step {s}: {exc}", last) from exc
            optimizer.step(lr)
            optimizer.zero_grad()
            for k in sums:
                sums[k] += stats[k]
        row = {"epoch": epoch + 1, **{k: v / steps_per_epoch for k, v in sums.items()}, "lr": lr, "tau": tau}
        result.metrics.append(row)
        # both paths execute the very same kernel objects
        if conv_checksum(dense_kernels) != conv_checksum(encoder.conv_kernels()):
            raise ContractError("convolution kernels diverged between paths")
        if out is not None:
            atomic_write_text(out / "metrics.csv", format_metrics(result.metrics))
            if (epoch + 1) % tcfg.checkpoint_every == 0 or epoch + 1 == tcfg.epochs:
                path = out / "checkpoints" / f"epoch_{epoch + 1:04d}.vdg"
                save_checkpoint(path, make_checkpoint(encoder, optimizer, config, epoch + 1,
                                                      (epoch + 1) * steps_per_epoch))
                result.checkpoints.append(str(path))
        if on_epoch is not None:
            on_epoch(row)
    return result
