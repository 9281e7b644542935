"""Frozen-encoder evaluation: features, kNN, linear probe, channel policy."""
from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .augment import center_resize
from .budget import FlopsModel, flops_ratio_value
from .data import ImageDataset
from .encoder import Encoder
from .errors import ConfigurationError, ContractError
from .tensorcore import no_grad


@dataclass
class FeatureSet:
    features: np.ndarray  # n×d float32
    labels: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ContractError("features must be n×d with one label per row")
        if not np.isfinite(self.features).all():
            raise ContractError("features contain non-finite values")


def _batches(dataset: ImageDataset, size: int, batch_size: int):
    for start in range(0, len(dataset), batch_size):
        imgs = [center_resize(im, size) for im in dataset.images[start:start + batch_size]]
        yield np.ascontiguousarray(np.stack(imgs).transpose(0, 3, 1, 2))


def l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x.astype(np.float64), axis=1, keepdims=True)
    return (x / np.maximum(norms, 1e-12)).astype(np.float32)


def extract_features(encoder: Encoder, path: str, dataset: ImageDataset, normalize: bool = True,
                     batch_size: int = 250, return_masks: bool = False):
    """Pooled encoder features in inference mode (no sampling, frozen statistics)."""
    if len(dataset) == 0:
        raise ContractError("cannot extract features from an empty dataset")
    feats, masks = [], []
    with no_grad():
        for x in _batches(dataset, encoder.config.input_size, batch_size):
            f, m = encoder.forward(x, path, "inference")
            feats.append(f.data.astype(np.float32))
            masks.append([g.hard for g in m])
    features = np.concatenate(feats)
    if normalize:
        features = l2_normalize(features)
    fs = FeatureSet(features, np.asarray(dataset.labels, dtype=np.int64), normalize)
    if return_masks:
        per_block = [np.concatenate([b[i] for b in masks]) for i in range(len(masks[0]))] if masks[0] else []
        return fs, per_block
    return fs


def nearest_neighbors(train: FeatureSet, test: FeatureSet, k: int = 1, chunk: int = 512) -> np.ndarray:
    """Indices of the k nearest training rows per test row; ties go to the lower index."""
    if train.features.shape[0] == 0:
        raise ContractError("kNN needs a non-empty training set")
    if train.features.shape[1] != test.features.shape[1]:
        raise ContractError("train and test features differ in dimension")
    if not 1 <= k <= len(train.features):
        raise ContractError("k must lie between 1 and the training set size")
    a = train.features.astype(np.float64)
    sq_a = (a * a).sum(axis=1)
    out = []
    for start in range(0, len(test.features), chunk):
        b = test.features[start:start + chunk].astype(np.float64)
        d = sq_a[None, :] - 2.0 * b @ a.T + (b * b).sum(axis=1)[:, None]
        out.append(np.argsort(d, axis=1, kind="stable")[:, :k])
    return np.concatenate(out) if out else np.zeros((0, k), dtype=np.int64)


def knn_top1(train: FeatureSet, test: FeatureSet, k: int = 1) -> float:
    """Top-1 accuracy of a k-nearest-neighbour vote (plurality, ties to the nearest)."""
    idx = nearest_neighbors(train, test, k)
    if len(idx) == 0:
        raise ContractError("test set is empty")
    votes = train.labels[idx]
    if k == 1:
        pred = votes[:, 0]
    else:
        pred = np.empty(len(votes), dtype=np.int64)
        for i, row in enumerate(votes):
            labels, counts = np.unique(row, return_counts=True)
            best = labels[counts == counts.max()]
            pred[i] = next(v for v in row if v in best)
    return float((pred == test.labels).mean())


@dataclass(frozen=True)
class ProbeSchedule:
    epochs: int = 100
    batch_size: int = 512
    lr: float = 0.3
    milestones: tuple = (60, 80)
    decay: float = 0.1
    momentum: float = 0.9

    @classmethod
    def toy(cls) -> "ProbeSchedule":
        return cls(epochs=30, milestones=(18, 24))


def _softmax_xent_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def linear_probe(train: FeatureSet, test: FeatureSet, schedule: ProbeSchedule | None = None,
                 repeats: int = 1, seed: int = 0) -> float:
    """Mean top-1 of a softmax linear classifier over ``repeats`` probe seeds.

    Features are standardised with training-set statistics before the probe.
    """
    schedule = schedule or ProbeSchedule()
    classes = np.unique(train.labels)
    if len(classes) < 2:
        raise ContractError("linear probe needs at least two classes in the training set")
    if train.features.shape[1] != test.features.shape[1]:
        raise ContractError("train and test features differ in dimension")
    num_classes = int(max(train.labels.max(), test.labels.max())) + 1
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0) + 1e-6
    xtr = ((train.features - mean) / std).astype(np.float64)
    xte = ((test.features - mean) / std).astype(np.float64)
    n, d = xtr.shape
    accs = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        w = np.zeros((d, num_classes))
        b = np.zeros(num_classes)
        mw, mb = np.zeros_like(w), np.zeros_like(b)
        for epoch in range(schedule.epochs):
            lr = schedule.lr * schedule.decay ** sum(epoch >= m for m in schedule.milestones)
            order = rng.permutation(n)
            for start in range(0, n, schedule.batch_size):
                idx = order[start:start + schedule.batch_size]
                g = _softmax_xent_grad(xtr[idx] @ w + b, train.labels[idx])
                mw = schedule.momentum * mw + xtr[idx].T @ g
                mb = schedule.momentum * mb + g.sum(axis=0)
                w -= lr * mw
                b -= lr * mb
        accs.append(float(((xte @ w + b).argmax(axis=1) == test.labels).mean()))
    return float(np.mean(accs))


def policy_from_masks(block_masks: list[np.ndarray], thresholds: tuple = (0.99, 0.01)) -> dict:
    hi, lo = thresholds
    if not 0 <= lo < hi <= 1:
        raise ConfigurationError("policy thresholds must satisfy 0 <= off < always_on <= 1")
    blocks = []
    for i, m in enumerate(block_masks):
        p = m.mean(axis=0, dtype=np.float64)
        always = int((p >= hi).sum())
        off = int((p <= lo).sum())
        blocks.append({
            "block": i,
            "width": int(p.size),
            "always_on": always,
            "data_dependent": int(p.size) - always - off,
            "off": off,
            "active_fraction": float(p.mean()),
            "probabilities": [float(v) for v in p],
        })
    return {"thresholds": {"always_on": hi, "off": lo}, "blocks": blocks}


def export_policy(encoder: Encoder, probe: ImageDataset, thresholds: tuple = (0.99, 0.01)) -> dict:
    """Per-channel activation probabilities of the inference gates over a probe set."""
    if len(probe) == 0:
        raise ContractError("probe set is empty")
    _, masks = extract_features(encoder, "gated", probe, normalize=False, return_masks=True)
    policy = policy_from_masks(masks, thresholds)
    flops_model = FlopsModel.from_config(encoder.config)
    policy["num_samples"] = len(probe)
    policy["mean_active_fraction"] = float(np.mean(np.concatenate([m.ravel() for m in masks])))
    policy["flops_ratio"] = flops_ratio_value(masks, flops_model)
    return policy


def save_features(path, fs: FeatureSet) -> None:
    from .checkpoint import atomic_write_bytes

    n, d = fs.features.shape
    blob = struct.pack("<IIB", n, d, int(fs.normalized))
    blob += np.ascontiguousarray(fs.features, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(fs.labels, dtype="<u4").tobytes()
    atomic_write_bytes(path, blob)


def load_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    n, d, flag = struct.unpack("<IIB", blob[:9])
    body = 9 + 4 * n * d
    if len(blob) != body + 4 * n:
        raise ContractError("feature file has the wrong length")
    feats = np.frombuffer(blob[9:body], dtype="<f4").reshape(n, d).astype(np.float32)
    labels = np.frombuffer(blob[body:], dtype="<u4").astype(np.int64)
    return FeatureSet(feats, labels, bool(flag))


def run_report(encoder: Encoder, train_set: ImageDataset, test_set: ImageDataset,
               normalize: bool = True, t_d: float | None = None) -> dict:
    """Dense and gated kNN top-1, inference FLOPs ratio and policy summary."""
    out = {}
    flops_model = FlopsModel.from_config(encoder.config)
    for path in ("dense", "gated"):
        bank = extract_features(encoder, path, train_set, normalize)
        query, masks = extract_features(encoder, path, test_set, normalize, return_masks=True)
        out[f"knn_top1_{path}"] = knn_top1(bank, query)
        if path == "gated":
            ratio = flops_ratio_value(masks, flops_model)
            out["inference_flops_ratio"] = ratio
            out["flops_reduction"] = 1.0 - ratio
            policy = policy_from_masks(masks)
            out["policy"] = [{k: b[k] for k in ("block", "width", "always_on", "data_dependent", "off",
                                                "active_fraction")} for b in policy["blocks"]]
    out["knn_gap"] = abs(out["knn_top1_dense"] - out["knn_top1_gated"])
    out["gate_overhead_flops"] = flops_model.gate_overhead
    if t_d is not None:
        out["t_d"] = t_d
    return out
