"""Whole-model composition: encode observed frames, decode the future."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoder import DecoderParams, decode_step, init_decoder
from .encoder import ChainLayout, EncoderParams, encode


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches; widths follow the encoder hidden size."""

    hidden_size: int = 20
    layers: int = 10
    global_temporal: bool = True
    global_spatial: bool = True
    decoder: str = "structured"


@dataclass
class ModelParams:
    encoder: EncoderParams
    decoder: DecoderParams

    @classmethod
    def init(cls, config: ModelConfig, layout: ChainLayout, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        enc = EncoderParams.init(config.hidden_size, rng)
        dec = DecoderParams.init(layout, config.hidden_size, rng, kind=config.decoder)
        return cls(encoder=enc, decoder=dec)

    def named(self) -> dict[str, Tensor]:
        out = self.encoder.named()
        out.update(self.decoder.named())
        return out


def forward(params: ModelParams, config: ModelConfig, layout: ChainLayout,
            observed: np.ndarray, horizon: int,
            feed: np.ndarray | None = None) -> list[Tensor]:
    """Predicted frames as (1, 3K) tape tensors.

    ``observed`` is (t, K, 3) with t >= 2: the first t - 1 frames drive
    the encoder and the last one seeds the decoder.  Decoding consumes
    its own outputs; passing ``feed`` (horizon, K, 3) instead feeds the
    true previous frame at each step (teacher forcing).
    """
    observed = np.asarray(observed, dtype=np.float64)
    k = layout.num_entries
    if observed.ndim != 3 or observed.shape[1:] != (k, 3):
        raise ad.ShapeMismatch(f"observed must be (t, {k}, 3), got {observed.shape}")
    if observed.shape[0] < 2:
        raise ad.ShapeMismatch("need at least 2 observed frames")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    enc = encode(observed[:-1], params.encoder, layout, config.layers,
                 config.global_temporal, config.global_spatial)
    state = init_decoder(enc, params.decoder)
    w = Tensor(observed[-1].reshape(1, 3 * k), op="input")
    outs: list[Tensor] = []
    for n in range(horizon):
        w, state = decode_step(w, state, params.decoder, layout)
        outs.append(w)
        if feed is not None and n + 1 < horizon:
            w = Tensor(feed[n].reshape(1, 3 * k), op="input")
    return outs


def frames_tensor(outs: list[Tensor], k: int) -> Tensor:
    """Stack step outputs into one (horizon, K, 3) tensor."""
    stacked = outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)
    return ad.reshape(stacked, (len(outs), k, 3))


def predict(params: ModelParams, config: ModelConfig, layout: ChainLayout,
            observed: np.ndarray, horizon: int) -> np.ndarray:
    """Value-only prediction: (horizon, K, 3) future Lie frames."""
    with ad.no_grad():
        outs = forward(params, config, layout, observed, horizon)
    k = layout.num_entries
    return np.stack([t.data.reshape(k, 3) for t in outs], axis=0)
