"""Losses, the Adam optimizer, the training loop, and checkpoints.

The primary loss weights each Lie entry by the total bone length its
error swings: entry z carries Theta(z) = sum_{j=z..K} (K + 1 - j) * l_j
over the chain-major entry order, so errors near a chain root (which
displace every downstream bone, repeatedly) cost more than errors at
the tips.  Theta is constant once bone lengths are normalized.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .encoder import ChainLayout
from .model import ModelConfig, ModelParams, forward, frames_tensor
from .skeleton import MotionSequence, ParseError, sample_windows

_MAGIC = b"STHRN1\n"


class TrainingDiverged(RuntimeError):
    """The loss became NaN or infinite."""


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bone_weights(entry_lengths: np.ndarray) -> np.ndarray:
    """Accumulated weights Theta(z), strictly decreasing in z.

    Theta(z) = sum_{j=z..K} (K + 1 - j) * l_j with 1-based z; for K = 3
    and unit lengths this is (6, 3, 1).
    """
    lengths = np.asarray(entry_lengths, dtype=np.float64)
    k = lengths.size
    terms = (k - np.arange(k)) * lengths  # (K + 1 - j) * l_j, j = 1..K
    return np.cumsum(terms[::-1])[::-1]


def weighted_loss(pred: Tensor, target: np.ndarray, theta: np.ndarray) -> Tensor:
    """Mean over frames of sum_z Theta(z) * ||pred_z - target_z||_2."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ad.ShapeMismatch(f"loss shapes {pred.data.shape} vs {target.shape}")
    frames = target.shape[0]
    diff = ad.sub(pred, Tensor(target))
    norms = ad.l2norm(diff, axis=2)                      # (frames, K)
    weighted = ad.mul(norms, Tensor(np.asarray(theta)))  # broadcast over frames
    return ad.scale(ad.tsum(weighted), 1.0 / frames)


def l2_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over frames of the summed squared entry errors."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ad.ShapeMismatch(f"loss shapes {pred.data.shape} vs {target.shape}")
    frames = target.shape[0]
    diff = ad.sub(pred, Tensor(target))
    return ad.scale(ad.tsum(ad.mul(diff, diff)), 1.0 / frames)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, named: dict[str, Tensor]) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros_like(t.data) for name, t in named.items()},
            v={name: np.zeros_like(t.data) for name, t in named.items()},
        )


def adam_step(named: dict[str, Tensor], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the parameter data."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, t in named.items():
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_gradients(named: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    total = float(np.sqrt(sum(float((t.grad * t.grad).sum()) for t in named.values())))
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / total
        for t in named.values():
            t.grad *= factor
    return total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    observed: int = 50     # frames fed to the model, last one seeds the decoder
    horizon: int = 10
    loss: str = "weighted"  # or "l2"
    seed: int = 0
    teacher_forcing: bool = False


@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[tuple[int, float, float]]  # (iteration, loss, wallclock_ms)
    adam: AdamState


def train(sequences: list[MotionSequence], layout: ChainLayout, theta: np.ndarray,
          model_config: ModelConfig, train_config: TrainConfig,
          params: ModelParams | None = None) -> TrainResult:
    """Seeded minibatch training over uniformly sampled windows.

    The same seed reproduces the exact loss curve.  Raises
    TrainingDiverged when the loss stops being finite.
    """
    if train_config.loss not in ("weighted", "l2"):
        raise ValueError(f"unknown loss {train_config.loss!r}")
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = ModelParams.init(model_config, layout, seed=train_config.seed)
    named = params.named()
    adam = AdamState.init(named)
    k = layout.num_entries
    metrics: list[tuple[int, float, float]] = []
    for it in range(train_config.iterations):
        t0 = time.perf_counter()
        losses = []
        for _ in range(train_config.batch_size):
            si = int(rng.integers(len(sequences)))
            window = sample_windows(sequences[si], train_config.observed,
                                    train_config.horizon, 1, rng)[0]
            feed = window.target if train_config.teacher_forcing else None
            outs = forward(params, model_config, layout, window.observed,
                           train_config.horizon, feed=feed)
            pred = frames_tensor(outs, k)
            if train_config.loss == "weighted":
                losses.append(weighted_loss(pred, window.target, theta))
            else:
                losses.append(l2_loss(pred, window.target))
        total = losses[0]
        for extra in losses[1:]:
            total = ad.add(total, extra)
        loss = ad.scale(total, 1.0 / len(losses))
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        backward(loss, leaves=named.values())
        clip_gradients(named, train_config.clip_norm)
        adam_step(named, adam, lr=train_config.learning_rate,
                  beta1=train_config.beta1, beta2=train_config.beta2,
                  eps=train_config.epsilon)
        metrics.append((it, float(loss.data), (time.perf_counter() - t0) * 1000.0))
    return TrainResult(params=params, metrics=metrics, adam=adam)


def write_metrics(path, metrics: list[tuple[int, float, float]]) -> None:
    """CSV loss curve: iteration,loss,wallclock_ms.

    Loss values are written with repr and are seed-deterministic; the
    wallclock column is measured and varies between runs.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss,wallclock_ms\n")
        for it, loss, ms in metrics:
            fh.write(f"{it},{loss!r},{ms:.3f}\n")


# ---------------------------------------------------------------------------
# checkpoints
#
# Binary container, version 1:
#   magic b"STHRN1\n"
#   uint64 little-endian header length, then that many bytes of JSON
#   the tensors back to back, row-major little-endian float64
# The JSON header records the model config, the chain layout, the
# iteration count, and each tensor's name and shape in write order.
# Optimizer moments ride along as "adam.m.*" / "adam.v.*" tensors.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    layout: ChainLayout, iteration: int = 0,
                    adam: AdamState | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = [
        (name, t.data) for name, t in params.named().items()
    ]
    if adam is not None:
        tensors.extend((f"adam.m.{n}", a) for n, a in adam.m.items())
        tensors.extend((f"adam.v.{n}", a) for n, a in adam.v.items())
    header = {
        "version": 1,
        "config": asdict(config),
        "chains": list(layout.entry_counts),
        "iteration": iteration,
        "adam_step": adam.step if adam is not None else None,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    layout: ChainLayout
    iteration: int
    adam: AdamState | None


def load_checkpoint(path) -> Checkpoint:
    """Bit-exact reload of a saved checkpoint."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ParseError(f"{path}: unsupported checkpoint version")
        loaded: dict[str, np.ndarray] = {}
        for spec_ in header["tensors"]:
            shape = tuple(spec_["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ParseError(f"{path}: truncated tensor {spec_['name']!r}")
            loaded[spec_["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    config = ModelConfig(**header["config"])
    layout = ChainLayout(tuple(header["chains"]))
    params = ModelParams.init(config, layout, seed=0)
    named = params.named()
    for name, t in named.items():
        if name not in loaded:
            raise ParseError(f"{path}: missing tensor {name!r}")
        if loaded[name].shape != t.data.shape:
            raise ParseError(f"{path}: tensor {name!r} has shape "
                             f"{loaded[name].shape}, expected {t.data.shape}")
        t.data = loaded[name]
    adam = None
    if header.get("adam_step") is not None:
        adam = AdamState(
            step=int(header["adam_step"]),
            m={n: loaded[f"adam.m.{n}"] for n in named},
            v={n: loaded[f"adam.v.{n}"] for n in named},
        )
    return Checkpoint(params=params, config=config, layout=layout,
                      iteration=int(header["iteration"]), adam=adam)
