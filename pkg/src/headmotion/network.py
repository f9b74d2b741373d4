"""Fully convolutional 3D network with hand-derived gradients.

The estimator is deliberately small: stacked 3x3x3 convolution blocks
with max pooling, a 1x1x1 head, global average pooling, and a 40-way
soft-bin output trained against soft Gaussian labels with a KL loss.
Everything runs in numpy with float64 arithmetic so training is
bit-reproducible and every gradient can be checked against finite
differences.  An alternative scalar head trained with squared error is
kept for comparison experiments.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .io import DatasetManifest, Volume, read_nifti
from .preprocess import AugmentConfig, augment, lsb8, mask_background, robust_scale
from .softbin import BinGrid, decode, encode, kl_loss, mse_head_loss

__all__ = [
    "LOSS_KINDS",
    "NORM_KINDS",
    "FULL_SCALE_CHANNELS",
    "PREPROCESS_KINDS",
    "EpochRecord",
    "NetConfig",
    "TrainConfig",
    "adam_step",
    "backward",
    "fit",
    "forward",
    "init_adam_state",
    "init_params",
    "load_checkpoint",
    "predict",
    "prepare_input",
    "read_loss_log",
    "save_checkpoint",
    "write_loss_log",
]

NORM_KINDS = ("batch", "none")
LOSS_KINDS = ("softbin_kl", "mse")
PREPROCESS_KINDS = ("none", "lsb8", "robust", "background")

# channel plan from the full-scale experiments; the default below is a
# desk-scale network that trains in minutes on a CPU
FULL_SCALE_CHANNELS = (32, 64, 128, 256, 256, 64)

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters."""

    block_channels: tuple = (8, 16, 32, 64)
    head_channels: int = 64
    output_bins: int = 40
    dropout_rate: float = 0.5
    norm: str = "none"
    seed: int = 0

    def __post_init__(self):
        channels = tuple(int(c) for c in np.atleast_1d(self.block_channels))
        if len(channels) < 1 or min(channels) < 1:
            raise ConfigError("bad_channels", f"need positive block channels, got {self.block_channels!r}")
        object.__setattr__(self, "block_channels", channels)
        if self.head_channels < 1 or self.output_bins < 1:
            raise ConfigError("bad_channels", "head channels and output bins must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("bad_dropout", f"dropout rate must be in [0, 1), got {self.dropout_rate!r}")
        if self.norm not in NORM_KINDS:
            raise ConfigError("bad_norm", f"norm must be one of {NORM_KINDS}, got {self.norm!r}")

    @property
    def pool_stages(self) -> int:
        return len(self.block_channels)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (Adam with bias correction)."""

    epochs: int = 500
    batch_size: int = 2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "softbin_kl"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("bad_train_config", "epochs and batch size must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("bad_train_config", f"learning rate must be positive, got {self.learning_rate!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ConfigError("bad_train_config", "invalid Adam constants")
        if self.loss not in LOSS_KINDS:
            raise ConfigError("bad_loss", f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float
    val_spearman: float


# --------------------------------------------------------------- params


def init_params(config: NetConfig, in_channels: int = 1) -> Params:
    """He-normal weights, zero biases; batch-norm scale 1 / shift 0."""
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 7]))
    params: Params = {}
    cin = in_channels
    for i, cout in enumerate(config.block_channels):
        fan_in = cin * 27
        params[f"block{i}.weight"] = rng.standard_normal((cout, cin, 3, 3, 3)) * math.sqrt(2.0 / fan_in)
        params[f"block{i}.bias"] = np.zeros(cout)
        if config.norm == "batch":
            params[f"block{i}.gamma"] = np.ones(cout)
            params[f"block{i}.beta"] = np.zeros(cout)
            params[f"block{i}.running_mean"] = np.zeros(cout)
            params[f"block{i}.running_var"] = np.ones(cout)
        cin = cout
    params["head.weight"] = rng.standard_normal((config.head_channels, cin)) * math.sqrt(2.0 / cin)
    params["head.bias"] = np.zeros(config.head_channels)
    params["out.weight"] = rng.standard_normal((config.output_bins, config.head_channels)) * math.sqrt(
        2.0 / config.head_channels
    )
    params["out.bias"] = np.zeros(config.output_bins)
    return params


def _require(params: Params, name: str, shape: tuple) -> np.ndarray:
    if name not in params:
        raise DomainError("shape_mismatch", f"parameter {name!r} is missing")
    arr = params[name]
    if arr.shape != shape:
        raise DomainError(
            "shape_mismatch", f"parameter {name!r} has shape {arr.shape}, expected {shape}"
        )
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise DomainError("non_finite_activations", f"non-finite activations in layer {name!r}")


# --------------------------------------------------------------- layers


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x (n, cin, d, h, w); w (cout, cin, 3, 3, 3); zero padding 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.moveaxis(out, -1, 1) + b[None, :, None, None, None]


def _conv3_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, need_dx: bool):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    # dw[cout, cin, a, b, c] = sum_{n,d,h,w} dy[n,cout,d,h,w] win[n,cin,d,h,w,a,b,c]
    dw = np.tensordot(dy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    db = dy.sum(axis=(0, 2, 3, 4))
    dx = None
    if need_dx:
        # gradient w.r.t. input: correlate dy with the flipped, transposed kernel
        wf = w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
        dx = _conv3(dy, wf, np.zeros(wf.shape[0]))
    return dw, db, dx


def _maxpool(x: np.ndarray):
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise DomainError("shape_mismatch", f"cannot 2x2x2-pool odd dims {(d, h, w)}")
    blocks = (
        x.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // 2, h // 2, w // 2, 8)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dy: np.ndarray, idx: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, c, d, h, w = in_shape
    blocks = np.zeros((n, c, d // 2, h // 2, w // 2, 8))
    np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
    return (
        blocks.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(n, c, d, h, w)
    )


def _pad_to_pool_multiple(x: np.ndarray, stages: int) -> np.ndarray:
    unit = 2 ** stages
    pads = [(0, 0), (0, 0)]
    for size in x.shape[2:]:
        target = ((size + unit - 1) // unit) * unit
        extra = target - size
        pads.append((extra // 2, extra - extra // 2))
    if any(p != (0, 0) for p in pads):
        x = np.pad(x, pads)
    return x


# ------------------------------------------------------------- forward


def prepare_input(volume: Volume, preprocess: str, head_mask: Optional[Volume] = None) -> np.ndarray:
    """Map a uint16 volume to an O(1) real tensor for the network."""
    if preprocess not in PREPROCESS_KINDS:
        raise ConfigError("bad_preprocess", f"preprocess must be one of {PREPROCESS_KINDS}, got {preprocess!r}")
    if preprocess == "lsb8":
        return lsb8(volume).data.astype(np.float64) / 255.0
    if preprocess == "robust":
        return robust_scale(volume).data.astype(np.float64) / 255.0
    if preprocess == "background":
        if head_mask is None:
            raise ConfigError("bad_preprocess", "background preprocessing needs a head mask volume")
        return mask_background(volume, head_mask).data.astype(np.float64) / 65535.0
    return volume.data.astype(np.float64) / 65535.0


def forward(
    batch: np.ndarray,
    params: Params,
    config: NetConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, Optional[dict]]:
    """Run the network; returns (output, cache-for-backward-if-training).

    Output is (n, output_bins) softmax probabilities, or raw values when
    the config has a single output (the scalar regression head).
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DomainError("shape_mismatch", f"expected a (n, d, h, w) batch, got shape {x.shape}")
    x = _pad_to_pool_multiple(x[:, None], config.pool_stages)
    cache: dict = {"config": config, "blocks": [], "input": x} if training else None
    cin = 1
    for i, cout in enumerate(config.block_channels):
        w = _require(params, f"block{i}.weight", (cout, cin, 3, 3, 3))
        b = _require(params, f"block{i}.bias", (cout,))
        z = _conv3(x, w, b)
        _check_finite(f"block{i}.conv", z)
        entry = {"x": x, "z_shape": z.shape}
        if config.norm == "batch":
            gamma = _require(params, f"block{i}.gamma", (cout,))
            beta = _require(params, f"block{i}.beta", (cout,))
            if training:
                mu = z.mean(axis=(0, 2, 3, 4))
                var = z.var(axis=(0, 2, 3, 4))
                m = z.size // cout
                correction = m / max(m - 1, 1)
                params[f"block{i}.running_mean"] *= 1.0 - _BN_MOMENTUM
                params[f"block{i}.running_mean"] += _BN_MOMENTUM * mu
                params[f"block{i}.running_var"] *= 1.0 - _BN_MOMENTUM
                params[f"block{i}.running_var"] += _BN_MOMENTUM * var * correction
            else:
                mu = _require(params, f"block{i}.running_mean", (cout,))
                var = _require(params, f"block{i}.running_var", (cout,))
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (z - mu[None, :, None, None, None]) * inv_std[None, :, None, None, None]
            z = gamma[None, :, None, None, None] * xhat + beta[None, :, None, None, None]
            entry.update({"xhat": xhat, "inv_std": inv_std, "gamma": gamma})
        pooled, idx = _maxpool(z)
        x = np.maximum(pooled, 0.0)
        _check_finite(f"block{i}.relu", x)
        if training:
            entry.update({"idx": idx, "pooled": pooled})
            cache["blocks"].append(entry)
        cin = cout

    hw = _require(params, "head.weight", (config.head_channels, cin))
    hb = _require(params, "head.bias", (config.head_channels,))
    # 1x1x1 convolution is a channel mix at every voxel
    head_pre = np.einsum("oc,ncdhw->nodhw", hw, x) + hb[None, :, None, None, None]
    head_act = np.maximum(head_pre, 0.0)
    _check_finite("head", head_act)
    gap = head_act.mean(axis=(2, 3, 4))

    drop_mask = None
    if training and config.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("bad_dropout", "training with dropout needs a random generator")
        keep = 1.0 - config.dropout_rate
        drop_mask = (rng.random(gap.shape) < keep) / keep
        dropped = gap * drop_mask
    else:
        dropped = gap

    ow = _require(params, "out.weight", (config.output_bins, config.head_channels))
    ob = _require(params, "out.bias", (config.output_bins,))
    logits = dropped @ ow.T + ob
    _check_finite("out", logits)

    if config.output_bins > 1:
        shifted = logits - logits.max(axis=1, keepdims=True)
        expo = np.exp(shifted)
        out = expo / expo.sum(axis=1, keepdims=True)
    else:
        out = logits

    if training:
        cache.update(
            {
                "block_out": x,
                "head_pre": head_pre,
                "head_act": head_act,
                "gap": gap,
                "drop_mask": drop_mask,
                "dropped": dropped,
                "out": out,
                "params": params,
            }
        )
    return out, cache


# ------------------------------------------------------------- backward


def backward(cache: Optional[dict], targets: np.ndarray, loss: str = "softbin_kl") -> Params:
    """Exact gradients of the mean batch loss for every parameter."""
    if cache is None:
        raise DomainError("missing_cache", "backward needs the cache from forward(training=True)")
    if loss not in LOSS_KINDS:
        raise ConfigError("bad_loss", f"loss must be one of {LOSS_KINDS}, got {loss!r}")
    config: NetConfig = cache["config"]
    params: Params = cache["params"]
    out = cache["out"]
    n = out.shape[0]
    targets = np.asarray(targets, dtype=np.float64)

    if loss == "softbin_kl":
        if targets.shape != out.shape:
            raise DomainError(
                "shape_mismatch", f"targets shape {targets.shape} does not match output {out.shape}"
            )
        # d(KL)/d(logits) for a softmax output is simply p - t
        dlogits = (out - targets) / n
    else:
        if config.output_bins != 1:
            raise ConfigError("bad_loss", "mse loss applies to the single-output head")
        values = targets.reshape(-1)
        if values.shape[0] != n:
            raise DomainError("shape_mismatch", f"need {n} target values, got {values.shape[0]}")
        dlogits = np.array(
            [mse_head_loss(v, float(out[i, 0]))[1] for i, v in enumerate(values)]
        ).reshape(n, 1) / n

    grads: Params = {}
    dropped = cache["dropped"]
    ow = params["out.weight"]
    grads["out.weight"] = dlogits.T @ dropped
    grads["out.bias"] = dlogits.sum(axis=0)
    dgap = dlogits @ ow
    if cache["drop_mask"] is not None:
        dgap = dgap * cache["drop_mask"]

    head_act = cache["head_act"]
    spatial = head_act.shape[2] * head_act.shape[3] * head_act.shape[4]
    dhead_act = np.broadcast_to(
        dgap[:, :, None, None, None] / spatial, head_act.shape
    )
    dhead_pre = np.where(cache["head_pre"] > 0.0, dhead_act, 0.0)
    block_out = cache["block_out"]
    grads["head.weight"] = np.einsum("nodhw,ncdhw->oc", dhead_pre, block_out)
    grads["head.bias"] = dhead_pre.sum(axis=(0, 2, 3, 4))
    dx = np.einsum("oc,nodhw->ncdhw", params["head.weight"], dhead_pre)

    for i in range(config.pool_stages - 1, -1, -1):
        entry = cache["blocks"][i]
        dpooled = np.where(entry["pooled"] > 0.0, dx, 0.0)
        dz = _maxpool_backward(dpooled, entry["idx"], entry["z_shape"])
        if config.norm == "batch":
            xhat, inv_std, gamma = entry["xhat"], entry["inv_std"], entry["gamma"]
            m = dz.size // dz.shape[1]
            grads[f"block{i}.gamma"] = (dz * xhat).sum(axis=(0, 2, 3, 4))
            grads[f"block{i}.beta"] = dz.sum(axis=(0, 2, 3, 4))
            dxhat = dz * gamma[None, :, None, None, None]
            sum_dxhat = dxhat.sum(axis=(0, 2, 3, 4), keepdims=True)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3, 4), keepdims=True)
            dz = (
                inv_std[None, :, None, None, None]
                * (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m)
            )
        w = params[f"block{i}.weight"]
        dw, db, dx = _conv3_backward(entry["x"], w, dz, need_dx=(i > 0))
        grads[f"block{i}.weight"] = dw
        grads[f"block{i}.bias"] = db
    return grads


# ----------------------------------------------------------------- adam


def init_adam_state(params: Params) -> dict:
    zeros = {k: np.zeros_like(v) for k, v in params.items() if ".running_" not in k}
    return {"t": 0, "m": zeros, "v": copy.deepcopy(zeros)}


def adam_step(params: Params, grads: Params, state: dict, config: TrainConfig) -> Tuple[Params, dict]:
    """One standard bias-corrected Adam update; returns new params/state."""
    t = state["t"] + 1
    new_params: Params = {}
    new_m, new_v = {}, {}
    for name, value in params.items():
        if ".running_" in name:
            new_params[name] = value
            continue
        if name not in grads:
            raise DomainError("shape_mismatch", f"missing gradient for {name!r}")
        g = grads[name]
        if g.shape != value.shape:
            raise DomainError(
                "shape_mismatch", f"gradient for {name!r} has shape {g.shape}, expected {value.shape}"
            )
        m = config.beta1 * state["m"][name] + (1.0 - config.beta1) * g
        v = config.beta2 * state["v"][name] + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        new_params[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, {"t": t, "m": new_m, "v": new_v}


# ------------------------------------------------------------- training


def _resolve(root, rel) -> str:
    return os.path.join(str(root), str(rel))


def _mask_path(volume_path: str) -> str:
    if volume_path.endswith(".nii.gz"):
        return volume_path[: -len(".nii.gz")] + ".mask.nii.gz"
    if volume_path.endswith(".nii"):
        return volume_path[: -len(".nii")] + ".mask.nii"
    return volume_path + ".mask"


def _load_split(manifest: DatasetManifest, split: str, root, preprocess: str):
    subset = manifest.subset(split)
    if len(subset) == 0:
        raise DomainError("empty_split", f"manifest has no {split!r} entries")
    volumes, masks, scores = [], [], []
    for entry in subset:
        if entry.motion_score is None:
            raise DomainError("missing_label", f"{entry.volume_path} has no motion score")
        volumes.append(read_nifti(_resolve(root, entry.volume_path)))
        masks.append(
            read_nifti(_resolve(root, _mask_path(entry.volume_path)))
            if preprocess == "background"
            else None
        )
        scores.append(float(entry.motion_score))
    return volumes, masks, np.array(scores)


def fit(
    manifest: DatasetManifest,
    root=".",
    net_config: Optional[NetConfig] = None,
    train_config: Optional[TrainConfig] = None,
    preprocess: str = "lsb8",
    augment_config: Optional[AugmentConfig] = None,
    grid: Optional[BinGrid] = None,
    sigma: Optional[float] = None,
) -> Tuple[Params, List[EpochRecord]]:
    """Train on the manifest's train split, validating every epoch.

    Returns the parameters from the epoch with the best validation
    Spearman correlation (the final epoch's if no epoch produced a
    usable correlation) together with the per-epoch loss log.
    Augmentation is off unless a config is given.
    """
    net_config = net_config or NetConfig()
    train_config = train_config or TrainConfig()
    if preprocess not in PREPROCESS_KINDS:
        raise ConfigError("bad_preprocess", f"preprocess must be one of {PREPROCESS_KINDS}, got {preprocess!r}")
    if train_config.loss == "mse":
        if grid is not None:
            raise ConfigError(
                "bad_loss_config",
                "the mse head regresses the score directly; a soft-bin grid does not apply",
            )
        net_config = replace(net_config, output_bins=1)
    else:
        grid = grid or BinGrid()

    train_vols, train_masks, train_scores = _load_split(manifest, "train", root, preprocess)
    val_vols, val_masks, val_scores = _load_split(manifest, "validation", root, preprocess)
    n_train = len(train_vols)

    if train_config.loss == "softbin_kl":
        train_targets = np.stack(
            [encode(s, grid, sigma).probabilities for s in train_scores]
        )
        val_targets = np.stack([encode(s, grid, sigma).probabilities for s in val_scores])
    else:
        train_targets = train_scores.reshape(-1, 1)
        val_targets = val_scores.reshape(-1, 1)

    val_x = np.stack(
        [prepare_input(v, preprocess, m) for v, m in zip(val_vols, val_masks)]
    )

    params = init_params(net_config)
    state = init_adam_state(params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([int(train_config.seed), 11]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([int(train_config.seed), 13]))

    log: List[EpochRecord] = []
    best_rho = -np.inf
    best_params: Optional[Params] = None

    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        for start in range(0, n_train, train_config.batch_size):
            chunk = order[start : start + train_config.batch_size]
            items = []
            for i in chunk:
                vol = train_vols[i]
                if augment_config is not None:
                    vol = augment(vol, augment_config, epoch * n_train + int(i))
                items.append(prepare_input(vol, preprocess, train_masks[i]))
            x = np.stack(items)
            out, cache = forward(x, params, net_config, training=True, rng=dropout_rng)
            batch_targets = train_targets[chunk]
            loss_sum += _batch_loss(out, batch_targets, train_config.loss)
            grads = backward(cache, batch_targets, train_config.loss)
            params, state = adam_step(params, grads, state, train_config)

        val_out = _forward_in_batches(val_x, params, net_config, train_config.batch_size)
        val_loss = _batch_loss(val_out, val_targets, train_config.loss) / len(val_scores)
        val_pred = _decode_outputs(val_out, grid)
        rho = _safe_spearman(val_scores, val_pred)
        log.append(EpochRecord(epoch, loss_sum / n_train, val_loss, rho))
        if np.isfinite(rho) and rho > best_rho:
            best_rho = rho
            best_params = copy.deepcopy(params)

    return (best_params if best_params is not None else params), log


def _batch_loss(out: np.ndarray, targets: np.ndarray, loss: str) -> float:
    if loss == "softbin_kl":
        return float(sum(kl_loss(t, p)[0] for t, p in zip(targets, out)))
    return float(
        sum(mse_head_loss(float(t[0]), float(p[0]))[0] for t, p in zip(targets, out))
    )


def _forward_in_batches(x: np.ndarray, params: Params, config: NetConfig, batch_size: int) -> np.ndarray:
    outs = []
    for start in range(0, x.shape[0], batch_size):
        out, _ = forward(x[start : start + batch_size], params, config, training=False)
        outs.append(out)
    return np.concatenate(outs, axis=0)


def _decode_outputs(out: np.ndarray, grid: Optional[BinGrid]) -> np.ndarray:
    if out.shape[1] == 1:
        return out[:, 0].copy()
    return np.array([decode(p, grid) for p in out])


def _safe_spearman(y: np.ndarray, yhat: np.ndarray) -> float:
    from .metrics import spearman

    try:
        rho, _ = spearman(y, yhat)
    except DomainError:
        return float("nan")
    return float(rho)


def predict(
    params: Params,
    net_config: NetConfig,
    volume: Volume,
    preprocess: str = "lsb8",
    grid: Optional[BinGrid] = None,
    head_mask: Optional[Volume] = None,
) -> float:
    """Score one volume: forward in inference mode, then decode."""
    x = prepare_input(volume, preprocess, head_mask)[None]
    out, _ = forward(x, params, net_config, training=False)
    if net_config.output_bins == 1:
        return float(out[0, 0])
    return float(decode(out[0], grid or BinGrid()))


# ---------------------------------------------------------- persistence

_CHECKPOINT_MAGIC = b"HMCK"
_CHECKPOINT_VERSION = 1


def save_checkpoint(params: Params, config: NetConfig, path, meta: Optional[dict] = None) -> None:
    """Versioned binary container: JSON header, float64 LE tensors, sha256."""
    names = sorted(params)
    header = {
        "version": _CHECKPOINT_VERSION,
        "config": {
            "block_channels": list(config.block_channels),
            "head_channels": config.head_channels,
            "output_bins": config.output_bins,
            "dropout_rate": config.dropout_rate,
            "norm": config.norm,
            "seed": config.seed,
        },
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = bytearray()
    body += _CHECKPOINT_MAGIC
    body += len(blob).to_bytes(4, "little")
    body += blob
    for n in names:
        body += np.ascontiguousarray(params[n], dtype="<f8").tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path) -> Tuple[Params, NetConfig, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_CHECKPOINT_MAGIC) + 4 + 32:
        raise FormatError("truncated_checkpoint", f"{path}: too short to be a checkpoint")
    if raw[:4] != _CHECKPOINT_MAGIC:
        raise FormatError("bad_magic", f"{path}: not a checkpoint file")
    digest = raw[-32:]
    if hashlib.sha256(raw[:-32]).digest() != digest:
        raise FormatError("corrupt_checkpoint", f"{path}: checksum mismatch")
    header_len = int.from_bytes(raw[4:8], "little")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("bad_header", f"{path}: unreadable checkpoint header") from exc
    if header.get("version") != _CHECKPOINT_VERSION:
        raise FormatError(
            "unsupported_version", f"{path}: checkpoint version {header.get('version')!r}"
        )
    cfg = header["config"]
    config = NetConfig(
        block_channels=tuple(cfg["block_channels"]),
        head_channels=cfg["head_channels"],
        output_bins=cfg["output_bins"],
        dropout_rate=cfg["dropout_rate"],
        norm=cfg["norm"],
        seed=cfg["seed"],
    )
    params: Params = {}
    offset = 8 + header_len
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw) - 32:
            raise FormatError("truncated_checkpoint", f"{path}: tensor data cut short")
        params[spec["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw) - 32:
        raise FormatError("bad_header", f"{path}: trailing bytes after tensor data")
    return params, config, header.get("meta", {})


def write_loss_log(log: List[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_spearman"])
        for row in log:
            writer.writerow(
                [row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.val_spearman)]
            )


def read_loss_log(path) -> List[EpochRecord]:
    rows: List[EpochRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "train_loss", "val_loss", "val_spearman"]:
            raise FormatError("bad_header", f"{path}: unexpected loss-log header {header!r}")
        for parts in reader:
            if len(parts) != 4:
                raise FormatError("bad_row", f"{path}: malformed loss-log row {parts!r}")
            rows.append(
                EpochRecord(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]))
            )
    return rows
