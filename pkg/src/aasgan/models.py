"""Augmenter, Generator and Discriminator networks.

All three share the same building blocks: a per-step ReLU embedding of
(x, y) feeding an LSTM encoder, a social pooling module that max-pools
embedded neighbour displacements and hidden states, and (for the Augmenter
and Generator) an LSTM decoder whose initial hidden state is the pooled
context concatenated with Gaussian noise.

Tensors are laid out pedestrian-major: ``rel`` has shape (n_peds, T, 2) and
``scene_ids`` tells which scene each pedestrian belongs to. Pooling only ever
mixes pedestrians of the same scene.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from . import nncore
from .data import Scene, to_relative
from .nncore import DTYPE, ParamStore, ShapeError, add_linear, add_lstm, linear, lstm_step, relu


class ContractError(ValueError):
    """A model received a sequence of the wrong length."""


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 16
    hidden_dim: int = 32

    def __post_init__(self):
        if self.embed_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("encoder dimensions must be positive")


@dataclass(frozen=True)
class PoolConfig:
    embed_dim: int = 16
    out_dim: int = 32

    def __post_init__(self):
        if self.embed_dim <= 0 or self.out_dim <= 0:
            raise ValueError("pooling dimensions must be positive")


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    noise_dim: int = 8
    pool_dim: int = 24

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.pool_dim) <= 0 or self.noise_dim < 0:
            raise ValueError("decoder dimensions must be positive")
        if self.pool_dim + self.noise_dim != self.hidden_dim:
            raise ValueError(
                f"pool_dim + noise_dim must equal hidden_dim "
                f"({self.pool_dim} + {self.noise_dim} != {self.hidden_dim})"
            )


# -- batches -----------------------------------------------------------------

@dataclass
class SceneBatch:
    """Pedestrians of several scenes stacked into one tensor.

    ``rel`` holds coordinates relative to each pedestrian's own first point,
    ``origin`` that first point in world coordinates. ``slot`` is the index of
    a pedestrian inside its scene, used to build padded pooling tensors.
    """

    rel: torch.Tensor
    origin: torch.Tensor
    scene_ids: torch.Tensor
    slot: torch.Tensor
    n_scenes: int
    max_peds: int

    @classmethod
    def from_scenes(cls, scenes: Sequence[Scene]) -> "SceneBatch":
        if not scenes:
            raise ValueError("empty batch")
        rel, origin, ids, slot = [], [], [], []
        for i, scene in enumerate(scenes):
            for j, traj in enumerate(scene.trajectories):
                r = to_relative(traj)
                rel.append(r.points)
                origin.append(r.origin)
                ids.append(i)
                slot.append(j)
        return cls(
            rel=torch.tensor(np.stack(rel), dtype=DTYPE),
            origin=torch.tensor(np.stack(origin), dtype=DTYPE),
            scene_ids=torch.tensor(ids, dtype=torch.long),
            slot=torch.tensor(slot, dtype=torch.long),
            n_scenes=len(scenes),
            max_peds=max(len(s) for s in scenes),
        )

    @classmethod
    def single_scene(cls, rel, origin=None) -> "SceneBatch":
        rel = torch.as_tensor(rel, dtype=DTYPE)
        n = rel.shape[0]
        if origin is None:
            origin = torch.zeros(n, 2, dtype=DTYPE)
        return cls(rel, torch.as_tensor(origin, dtype=DTYPE), torch.zeros(n, dtype=torch.long),
                   torch.arange(n), 1, n)

    @property
    def n_peds(self) -> int:
        return self.rel.shape[0]

    @property
    def length(self) -> int:
        return self.rel.shape[1]

    def with_rel(self, rel: torch.Tensor) -> "SceneBatch":
        return SceneBatch(rel, self.origin, self.scene_ids, self.slot, self.n_scenes, self.max_peds)

    def prefix(self, t: int) -> "SceneBatch":
        return self.with_rel(self.rel[:, :t])

    def absolute(self) -> torch.Tensor:
        return self.rel + self.origin[:, None, :]

    def repeat(self, k: int) -> "SceneBatch":
        """``k`` stacked copies, each copy a separate set of scenes."""
        offsets = torch.arange(k).repeat_interleave(self.n_peds) * self.n_scenes
        return SceneBatch(
            rel=self.rel.repeat(k, 1, 1),
            origin=self.origin.repeat(k, 1),
            scene_ids=self.scene_ids.repeat(k) + offsets,
            slot=self.slot.repeat(k),
            n_scenes=self.n_scenes * k,
            max_peds=self.max_peds,
        )

    @staticmethod
    def concat(a: "SceneBatch", b: "SceneBatch") -> "SceneBatch":
        return SceneBatch(
            rel=torch.cat([a.rel, b.rel]),
            origin=torch.cat([a.origin, b.origin]),
            scene_ids=torch.cat([a.scene_ids, b.scene_ids + a.n_scenes]),
            slot=torch.cat([a.slot, b.slot]),
            n_scenes=a.n_scenes + b.n_scenes,
            max_peds=max(a.max_peds, b.max_peds),
        )


# -- building blocks -----------------------------------------------------------

def encode(rel: torch.Tensor, store: ParamStore, prefix: str) -> torch.Tensor:
    """Final LSTM hidden state per pedestrian for ``rel`` of shape (n, T, 2)."""
    if rel.dim() != 3 or rel.shape[-1] != 2:
        raise ShapeError(f"encode expects (n, T, 2), got {tuple(rel.shape)}")
    lstm = store.section(f"{prefix}.lstm")
    hidden = lstm["W_h"].shape[0]
    h = torch.zeros(rel.shape[0], hidden, dtype=rel.dtype)
    c = torch.zeros_like(h)
    for t in range(rel.shape[1]):
        e = relu(linear(rel[:, t], store, f"{prefix}.embed"))
        h, c = lstm_step(e, h, c, lstm)
    return h


def pool(hidden, positions, store: ParamStore, prefix: str, scene_ids=None, slot=None,
         n_scenes: int = 1, max_peds: int | None = None) -> torch.Tensor:
    """Social pooling: one context vector per pedestrian from its neighbours.

    For pedestrian i and each other pedestrian j of the same scene, the world
    displacement ``pos_j - pos_i`` is embedded, concatenated with ``h_j`` and
    passed through a ReLU layer; the results are max-pooled over j. A
    pedestrian alone in its scene gets zeros.
    """
    n = hidden.shape[0]
    if n == 0:
        raise ValueError("pool needs at least one pedestrian")
    if positions.shape != (n, 2):
        raise ShapeError(f"pool: hidden{tuple(hidden.shape)} vs positions{tuple(positions.shape)}")
    if scene_ids is None:
        scene_ids = torch.zeros(n, dtype=torch.long)
        slot = torch.arange(n)
        n_scenes, max_peds = 1, n
    if max_peds is None:
        max_peds = int(slot.max()) + 1

    pad_h = hidden.new_zeros(n_scenes, max_peds, hidden.shape[1]).index_put((scene_ids, slot), hidden)
    pad_pos = positions.new_zeros(n_scenes, max_peds, 2).index_put((scene_ids, slot), positions)
    valid = torch.zeros(n_scenes, max_peds, dtype=torch.bool).index_put((scene_ids, slot), torch.tensor(True))

    disp = pad_pos[:, None, :, :] - pad_pos[:, :, None, :]  # [s, i, j] = pos_j - pos_i
    emb = relu(linear(disp, store, f"{prefix}.disp"))
    h_j = pad_h[:, None, :, :].expand(-1, max_peds, -1, -1)
    feat = relu(linear(torch.cat([emb, h_j], dim=-1), store, f"{prefix}.mlp"))

    eye = torch.eye(max_peds, dtype=torch.bool)
    mask = valid[:, :, None] & valid[:, None, :] & ~eye
    pooled = nncore.masked_max(feat.reshape(-1, max_peds, feat.shape[-1]), mask.reshape(-1, max_peds))
    return pooled.reshape(n_scenes, max_peds, -1)[scene_ids, slot]


def _pool_batch(hidden, positions, store, prefix, batch: SceneBatch):
    return pool(hidden, positions, store, prefix, batch.scene_ids, batch.slot, batch.n_scenes, batch.max_peds)


def init_decoder_state(context: torch.Tensor, z: torch.Tensor, store: ParamStore, prefix: str):
    """Decoder (h, c): ``h = [ReLU(context W_c + b_c), z]``, ``c = 0``."""
    c_t = relu(linear(context, store, f"{prefix}.context"))
    hidden = store[f"{prefix}.lstm.W_h"].shape[0]
    if c_t.shape[-1] + z.shape[-1] != hidden:
        raise ShapeError(f"context {c_t.shape[-1]} + noise {z.shape[-1]} != decoder hidden {hidden}")
    h = torch.cat([c_t, z], dim=-1)
    return h, torch.zeros_like(h)


def decode(h, c, last_rel, store: ParamStore, prefix: str, steps: int, batch: SceneBatch):
    """Roll the decoder forward ``steps`` times, feeding back each output.

    Each step embeds the previous position, pools the current decoder hidden
    states at the current world positions, mixes the pooled vector with the
    previous hidden state into the recurrent input, and reads the next
    relative position off the new hidden state.
    """
    if steps < 1:
        raise ValueError("decode needs at least one step")
    lstm = store.section(f"{prefix}.lstm")
    prev = last_rel
    outputs = []
    for _ in range(steps):
        e = relu(linear(prev, store, f"{prefix}.embed"))
        p = _pool_batch(h, batch.origin + prev, store, f"{prefix}.pool", batch)
        h_in = relu(linear(torch.cat([p, h], dim=-1), store, f"{prefix}.mix"))
        h, c = lstm_step(e, h_in, c, lstm)
        prev = linear(h, store, f"{prefix}.out")
        outputs.append(prev)
    return torch.stack(outputs, dim=1)


# -- networks ------------------------------------------------------------------

class _EncoderDecoder:
    kind = "encdec"

    def __init__(self, t_obs: int, t_pred: int, enc: EncoderConfig = EncoderConfig(),
                 pool_cfg: PoolConfig = PoolConfig(), dec: DecoderConfig = DecoderConfig(),
                 gen: torch.Generator | None = None):
        if not 0 < t_obs < t_pred:
            raise ValueError(f"need 0 < t_obs < t_pred, got {t_obs}, {t_pred}")
        gen = gen if gen is not None else nncore.make_generator(0)
        self.t_obs, self.t_pred = t_obs, t_pred
        self.enc, self.pool_cfg, self.dec = enc, pool_cfg, dec
        s = self.params = ParamStore()
        add_linear(s, "enc.embed", 2, enc.embed_dim, gen)
        add_lstm(s, "enc.lstm", enc.embed_dim, enc.hidden_dim, gen)
        add_linear(s, "pool.disp", 2, pool_cfg.embed_dim, gen)
        add_linear(s, "pool.mlp", pool_cfg.embed_dim + enc.hidden_dim, pool_cfg.out_dim, gen)
        add_linear(s, "dec.context", enc.hidden_dim + pool_cfg.out_dim, dec.pool_dim, gen)
        add_linear(s, "dec.embed", 2, dec.embed_dim, gen)
        add_linear(s, "dec.pool.disp", 2, pool_cfg.embed_dim, gen)
        add_linear(s, "dec.pool.mlp", pool_cfg.embed_dim + dec.hidden_dim, pool_cfg.out_dim, gen)
        add_linear(s, "dec.mix", pool_cfg.out_dim + dec.hidden_dim, dec.hidden_dim, gen)
        add_lstm(s, "dec.lstm", dec.embed_dim, dec.hidden_dim, gen)
        add_linear(s, "dec.out", dec.hidden_dim, 2, gen)

    @property
    def noise_dim(self) -> int:
        return self.dec.noise_dim

    def _run(self, batch: SceneBatch, z: torch.Tensor, start_rel: torch.Tensor, steps: int):
        s = self.params
        if z.shape != (batch.n_peds, self.noise_dim):
            raise ShapeError(f"noise must have shape {(batch.n_peds, self.noise_dim)}, got {tuple(z.shape)}")
        h_enc = encode(batch.rel, s, "enc")
        last_pos = batch.origin + batch.rel[:, -1]
        p = _pool_batch(h_enc, last_pos, s, "pool", batch)
        # the context carries each pedestrian's own encoding alongside the pooled neighbours
        h, c = init_decoder_state(torch.cat([h_enc, p], dim=-1), z, s, "dec")
        return decode(h, c, start_rel, s, "dec", steps, batch)

    def header(self) -> dict:
        return {"kind": self.kind, "t_obs": self.t_obs, "t_pred": self.t_pred, "enc": asdict(self.enc),
                "pool": asdict(self.pool_cfg), "dec": asdict(self.dec)}

    @classmethod
    def from_header(cls, header: dict):
        return cls(header["t_obs"], header["t_pred"], EncoderConfig(**header["enc"]),
                   PoolConfig(**header["pool"]), DecoderConfig(**header["dec"]))


class AugmenterModel(_EncoderDecoder):
    """Maps a full synthetic trajectory to a synth-augmented one of equal length."""

    kind = "augmenter"

    def augment(self, batch: SceneBatch, z: torch.Tensor) -> torch.Tensor:
        if batch.length != self.t_pred:
            raise ContractError(f"augmenter input must have {self.t_pred} points, got {batch.length}")
        # the output keeps the input's starting point and regenerates the rest
        start = batch.rel[:, 0]
        body = self._run(batch, z, start, self.t_pred - 1)
        return torch.cat([start[:, None, :], body], dim=1)

    __call__ = augment


class GeneratorModel(_EncoderDecoder):
    """Predicts the ``t_pred - t_obs`` points following an observed prefix."""

    kind = "generator"

    @property
    def pred_len(self) -> int:
        return self.t_pred - self.t_obs

    def predict(self, obs: SceneBatch, z: torch.Tensor) -> torch.Tensor:
        if obs.length != self.t_obs:
            raise ContractError(f"generator input must have {self.t_obs} points, got {obs.length}")
        return self._run(obs, z, obs.rel[:, -1], self.pred_len)

    __call__ = predict

    def complete(self, batch: SceneBatch, z: torch.Tensor) -> torch.Tensor:
        """``[obs, G(obs)]`` for a full-length batch."""
        obs = batch.prefix(self.t_obs)
        return torch.cat([obs.rel, self.predict(obs, z)], dim=1)


class DiscriminatorModel:
    """LSTM encoder plus a two-layer classifier head producing one score."""

    kind = "discriminator"

    def __init__(self, t_pred: int, enc: EncoderConfig = EncoderConfig(), mlp_dim: int = 32,
                 gen: torch.Generator | None = None):
        gen = gen if gen is not None else nncore.make_generator(0)
        self.t_pred, self.enc, self.mlp_dim = t_pred, enc, mlp_dim
        s = self.params = ParamStore()
        add_linear(s, "enc.embed", 2, enc.embed_dim, gen)
        add_lstm(s, "enc.lstm", enc.embed_dim, enc.hidden_dim, gen)
        add_linear(s, "head.hidden", enc.hidden_dim, mlp_dim, gen)
        add_linear(s, "head.out", mlp_dim, 1, gen)

    def logits(self, rel: torch.Tensor) -> torch.Tensor:
        if rel.dim() != 3 or rel.shape[1] != self.t_pred:
            raise ContractError(f"discriminator input must have {self.t_pred} points, got shape {tuple(rel.shape)}")
        h = encode(rel, self.params, "enc")
        return linear(relu(linear(h, self.params, "head.hidden")), self.params, "head.out").squeeze(-1)

    def discriminate(self, rel: torch.Tensor) -> torch.Tensor:
        """Realism score in (0, 1) per pedestrian trajectory."""
        return torch.sigmoid(self.logits(rel))

    __call__ = discriminate

    def header(self) -> dict:
        return {"kind": self.kind, "t_pred": self.t_pred, "enc": asdict(self.enc), "mlp_dim": self.mlp_dim}

    @classmethod
    def from_header(cls, header: dict):
        return cls(header["t_pred"], EncoderConfig(**header["enc"]), header["mlp_dim"])


def augment(batch: SceneBatch, z, A: AugmenterModel) -> torch.Tensor:
    return A.augment(batch, z)


def predict(obs: SceneBatch, z, G: GeneratorModel) -> torch.Tensor:
    return G.predict(obs, z)


def discriminate(rel, D: DiscriminatorModel) -> torch.Tensor:
    return D.discriminate(rel)
