"""Adversarial training: the three-phase ``aa-sgan`` step, SGAN baselines and the
independent-augmenter ablation, plus checkpointing.

One ``aa-sgan`` step runs, in order:

1. Discriminator update on real ``r`` (label real) and on ``r~ = [r_obs, G(r_obs)]``,
   ``a = A(s)`` and ``a~ = [a_obs, G(a_obs)]`` (label fake).
2. Generator update on the real branch, then a second update on the
   synth-augmented branch. ``a`` is a fixed input here.
3. Augmenter update on ``-log D(A(s)) + L2(s, A(s))``.

Each phase takes gradients with respect to its own model's parameters only,
so the other models are untouched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import nncore
from .data import Scene, Trajectory, relabel, write_dataset
from .losses import (
    LOG_HEADER,
    LossReport,
    augmenter_adversarial,
    discriminator_loss,
    generator_branch_loss,
    l2,
)
from .models import (
    AugmenterModel,
    DecoderConfig,
    DiscriminatorModel,
    EncoderConfig,
    GeneratorModel,
    PoolConfig,
    SceneBatch,
)

MODES = ("aa-sgan", "sgan-real", "sgan-synthetic", "sgan-hybrid", "independent-augmenter")
BASELINE_MODES = ("sgan-real", "sgan-synthetic", "sgan-hybrid")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    t_obs: int = 8
    t_pred: int = 20
    batch_size: int = 8
    lr_d: float = 5e-4
    lr_g: float = 5e-4
    lr_a: float = 5e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    steps: int = 500
    seed: int = 0
    real_synth_ratio: tuple[int, int] = (1, 1)
    variety_k: int = 1
    mode: str = "aa-sgan"
    grad_clip: float | None = 2.0
    embed_dim: int = 16
    hidden_dim: int = 32
    noise_dim: int = 8
    pool_dim: int = 24
    pool_embed_dim: int = 16
    pool_out_dim: int = 32
    d_mlp_dim: int = 32

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        self.real_synth_ratio = tuple(int(r) for r in self.real_synth_ratio)
        self.validate()

    def validate(self) -> None:
        if not 0 < self.t_obs < self.t_pred:
            raise ValueError(f"need 0 < t_obs < t_pred, got t_obs={self.t_obs}, t_pred={self.t_pred}")
        if min(self.lr_d, self.lr_g, self.lr_a) < 0:
            raise ValueError("learning rates must be non-negative")
        if len(self.real_synth_ratio) != 2 or min(self.real_synth_ratio) <= 0:
            raise ValueError(f"real_synth_ratio components must be positive, got {self.real_synth_ratio}")
        if self.batch_size <= 0 or self.steps < 0 or self.variety_k < 1:
            raise ValueError("batch_size and variety_k must be positive, steps non-negative")
        if self.batch_size % self.real_synth_ratio[0]:
            raise ValueError(
                f"batch_size {self.batch_size} must be a multiple of the real ratio part {self.real_synth_ratio[0]}"
            )
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive or None")

    @property
    def synth_per_step(self) -> int:
        r, s = self.real_synth_ratio
        return self.batch_size // r * s

    @property
    def uses_augmenter(self) -> bool:
        return self.mode in ("aa-sgan", "independent-augmenter")

    def model_configs(self):
        enc = EncoderConfig(self.embed_dim, self.hidden_dim)
        pool = PoolConfig(self.pool_embed_dim, self.pool_out_dim)
        dec = DecoderConfig(self.embed_dim, self.hidden_dim, self.noise_dim, self.pool_dim)
        return enc, pool, dec

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Models:
    generator: GeneratorModel
    discriminator: DiscriminatorModel
    augmenter: AugmenterModel | None = None

    def stores(self) -> dict[str, nncore.ParamStore]:
        out = {"G": self.generator.params, "D": self.discriminator.params}
        if self.augmenter is not None:
            out["A"] = self.augmenter.params
        return out


def build_models(cfg: TrainConfig, gen: torch.Generator) -> Models:
    # all three are always initialised, in a fixed order, so G and D start
    # from the same weights whichever mode is selected
    enc, pool, dec = cfg.model_configs()
    G = GeneratorModel(cfg.t_obs, cfg.t_pred, enc, pool, dec, gen)
    D = DiscriminatorModel(cfg.t_pred, enc, cfg.d_mlp_dim, gen)
    A = AugmenterModel(cfg.t_obs, cfg.t_pred, enc, pool, dec, gen)
    return Models(G, D, A if cfg.uses_augmenter else None)


class RatioBatcher:
    """Draws real and synthetic scene indices in a fixed per-step proportion.

    Each source is an endless stream of shuffled passes, so every step holds
    exactly ``n_real`` real and ``n_synth`` synthetic scenes and any run of
    steps realises the configured ratio exactly.
    """

    def __init__(self, sizes: dict[str, int], rng: np.random.Generator):
        self.sizes = dict(sizes)
        self.rng = rng
        self.perm = {k: np.zeros(0, dtype=np.int64) for k in sizes}
        self.pos = {k: 0 for k in sizes}

    def draw(self, source: str, k: int) -> list[int]:
        n = self.sizes[source]
        if k and n == 0:
            raise TrainingError(f"no {source} scenes to draw from")
        out = []
        while len(out) < k:
            if self.pos[source] >= len(self.perm[source]):
                self.perm[source] = self.rng.permutation(n)
                self.pos[source] = 0
            take = min(k - len(out), len(self.perm[source]) - self.pos[source])
            out.extend(self.perm[source][self.pos[source] : self.pos[source] + take].tolist())
            self.pos[source] += take
        return out

    def state(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "perm": {k: v.tolist() for k, v in self.perm.items()},
            "pos": dict(self.pos),
        }

    def load_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.perm = {k: np.asarray(v, dtype=np.int64) for k, v in state["perm"].items()}
        self.pos = {k: int(v) for k, v in state["pos"].items()}


def _adam(store: nncore.ParamStore, lr: float, betas) -> torch.optim.Adam:
    return torch.optim.Adam(store.parameters(), lr=lr, betas=tuple(betas))


def _apply(loss: torch.Tensor, store: nncore.ParamStore, opt: torch.optim.Optimizer, clip) -> None:
    params = store.parameters()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g
    if clip is not None:
        torch.nn.utils.clip_grad_norm_(params, clip)
    opt.step()


class Trainer:
    """Holds models, optimisers, random streams and data for one training run."""

    def __init__(self, cfg: TrainConfig, real_scenes: Sequence[Scene] = (), synth_scenes: Sequence[Scene] = ()):
        self.cfg = cfg
        self.real = list(real_scenes)
        self.synth = list(synth_scenes)
        for name, scenes in (("real", self.real), ("synthetic", self.synth)):
            bad = [s.t_pred for s in scenes if s.t_pred != cfg.t_pred]
            if bad:
                raise ValueError(f"{name} scenes have length {bad[0]}, expected t_pred={cfg.t_pred}")
        self.gen = nncore.make_generator(cfg.seed)
        self.models = build_models(cfg, self.gen)
        self.batcher = RatioBatcher({"real": len(self.real), "synth": len(self.synth)},
                                    np.random.default_rng(cfg.seed))
        b = cfg.adam_betas
        self.opt_g = _adam(self.models.generator.params, cfg.lr_g, b)
        self.opt_d = _adam(self.models.discriminator.params, cfg.lr_d, b)
        self.opt_a = _adam(self.models.augmenter.params, cfg.lr_a, b) if self.models.augmenter else None
        self.step = 0

    @property
    def G(self) -> GeneratorModel:
        return self.models.generator

    @property
    def D(self) -> DiscriminatorModel:
        return self.models.discriminator

    @property
    def A(self) -> AugmenterModel | None:
        return self.models.augmenter

    def noise(self, n: int) -> torch.Tensor:
        return nncore.sample_standard_normal((n, self.cfg.noise_dim), self.gen)

    # -- batching ------------------------------------------------------------

    def next_batches(self) -> tuple[list[Scene], list[Scene]]:
        """Scenes for the next step as ``(real-role, synthetic-role)`` lists."""
        cfg = self.cfg
        if cfg.mode == "sgan-real":
            return [self.real[i] for i in self.batcher.draw("real", cfg.batch_size)], []
        if cfg.mode == "sgan-synthetic":
            return [], [self.synth[i] for i in self.batcher.draw("synth", cfg.batch_size)]
        real = [self.real[i] for i in self.batcher.draw("real", cfg.batch_size)]
        synth = [self.synth[i] for i in self.batcher.draw("synth", cfg.synth_per_step)]
        return real, synth

    def _check_ratio(self, real, synth) -> None:
        if not real or not synth:
            raise TrainingError("empty batch")
        r, s = self.cfg.real_synth_ratio
        if len(real) * s != len(synth) * r:
            raise TrainingError(f"batch of {len(real)} real and {len(synth)} synthetic scenes violates ratio {r}:{s}")

    # -- steps -----------------------------------------------------------------

    def _candidates(self, obs: SceneBatch) -> torch.Tensor:
        k = self.cfg.variety_k
        z = self.noise(obs.n_peds * k)
        pred = self.G.predict(obs.repeat(k), z) if k > 1 else self.G.predict(obs, z)
        return pred.reshape(k, obs.n_peds, self.G.pred_len, 2)

    def _generator_branch(self, batch: SceneBatch):
        t_obs = self.cfg.t_obs
        obs = batch.prefix(t_obs)
        cands = self._candidates(obs)
        tilde = torch.cat([obs.rel, cands[0]], dim=1)
        return generator_branch_loss(self.D(tilde), batch.rel[:, t_obs:], cands, self.G.pred_len)

    def train_step(self, real: Sequence[Scene], synth: Sequence[Scene],
                   on_phase_end: Callable[[str], None] | None = None) -> LossReport:
        """One full ``aa-sgan`` iteration (discriminator, generator, augmenter)."""
        if self.cfg.mode != "aa-sgan":
            raise TrainingError(f"train_step runs aa-sgan, config mode is {self.cfg.mode}")
        self._check_ratio(real, synth)
        cfg, G, D, A = self.cfg, self.G, self.D, self.A
        r_batch = SceneBatch.from_scenes(real)
        s_batch = SceneBatch.from_scenes(synth)

        with torch.no_grad():
            r_tilde = G.complete(r_batch, self.noise(r_batch.n_peds))
            a = A.augment(s_batch, self.noise(s_batch.n_peds))
            a_batch = s_batch.with_rel(a)
            a_tilde = G.complete(a_batch, self.noise(a_batch.n_peds))
        d_loss = discriminator_loss(D(r_batch.rel), D(a), D(r_tilde), D(a_tilde))
        _apply(d_loss, D.params, self.opt_d, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("D")

        g_real_adv, g_real_l2 = self._generator_branch(r_batch)
        _apply(g_real_adv + g_real_l2, G.params, self.opt_g, cfg.grad_clip)
        g_synth_adv, g_synth_l2 = self._generator_branch(a_batch)
        _apply(g_synth_adv + g_synth_l2, G.params, self.opt_g, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("G")

        a = A.augment(s_batch, self.noise(s_batch.n_peds))
        a_adv = augmenter_adversarial(D(a))
        a_l2 = l2(s_batch.rel, a)
        _apply(a_adv + a_l2, A.params, self.opt_a, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("A")

        return self._report(d_loss, a_adv, a_l2, g_real_adv, g_real_l2, g_synth_adv, g_synth_l2)

    def train_step_baseline(self, scenes: Sequence[Scene],
                            on_phase_end: Callable[[str], None] | None = None) -> LossReport:
        """Plain SGAN discriminator/generator alternation on ``scenes``."""
        if self.cfg.mode not in BASELINE_MODES:
            raise TrainingError(f"train_step_baseline needs an sgan-* mode, config mode is {self.cfg.mode}")
        if not scenes:
            raise TrainingError("empty batch")
        cfg, G, D = self.cfg, self.G, self.D
        batch = SceneBatch.from_scenes(scenes)
        with torch.no_grad():
            tilde = G.complete(batch, self.noise(batch.n_peds))
        d_loss = discriminator_loss(D(batch.rel), score_rt=D(tilde))
        _apply(d_loss, D.params, self.opt_d, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("D")
        g_adv, g_l2 = self._generator_branch(batch)
        _apply(g_adv + g_l2, G.params, self.opt_g, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("G")
        return self._report(d_loss, g_real_adv=g_adv, g_real_l2=g_l2)

    def train_augmenter_standalone(self, real: Sequence[Scene], synth: Sequence[Scene],
                                   on_phase_end: Callable[[str], None] | None = None) -> LossReport:
        """Adversarial A-vs-D step with no generator in the loop."""
        if self.cfg.mode != "independent-augmenter":
            raise TrainingError(f"standalone augmenter training needs mode independent-augmenter, got {self.cfg.mode}")
        self._check_ratio(real, synth)
        cfg, D, A = self.cfg, self.D, self.A
        r_batch = SceneBatch.from_scenes(real)
        s_batch = SceneBatch.from_scenes(synth)
        with torch.no_grad():
            a = A.augment(s_batch, self.noise(s_batch.n_peds))
        d_loss = discriminator_loss(D(r_batch.rel), score_a=D(a))
        _apply(d_loss, D.params, self.opt_d, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("D")
        a = A.augment(s_batch, self.noise(s_batch.n_peds))
        a_adv = augmenter_adversarial(D(a))
        a_l2 = l2(s_batch.rel, a)
        _apply(a_adv + a_l2, A.params, self.opt_a, cfg.grad_clip)
        if on_phase_end:
            on_phase_end("A")
        return self._report(d_loss, a_adv, a_l2)

    def _report(self, d_loss, a_adv=0.0, a_l2=0.0, g_real_adv=0.0, g_real_l2=0.0,
                g_synth_adv=0.0, g_synth_l2=0.0) -> LossReport:
        vals = [v.item() if isinstance(v, torch.Tensor) else float(v)
                for v in (d_loss, a_adv, a_l2, g_real_adv, g_real_l2, g_synth_adv, g_synth_l2)]
        report = LossReport(self.step, *vals)
        self.step += 1
        if not report.is_finite():
            raise TrainingError(f"non-finite loss at step {report.step}: {report.log_line()}")
        return report

    def step_once(self) -> LossReport:
        real, synth = self.next_batches()
        mode = self.cfg.mode
        if mode == "aa-sgan":
            return self.train_step(real, synth)
        if mode == "independent-augmenter":
            return self.train_augmenter_standalone(real, synth)
        return self.train_step_baseline(real + synth)

    def run(self, steps: int | None = None, log_path=None, callback=None) -> list[LossReport]:
        """Train for ``steps`` more iterations (default: up to ``cfg.steps``)."""
        steps = self.cfg.steps - self.step if steps is None else steps
        reports = []
        log_file = None
        if log_path is not None:
            log_path = Path(log_path)
            fresh = not log_path.exists() or log_path.stat().st_size == 0
            log_file = log_path.open("a", encoding="utf-8")
            if fresh:
                log_file.write(LOG_HEADER + "\n")
        try:
            for _ in range(steps):
                report = self.step_once()
                reports.append(report)
                if log_file:
                    log_file.write(report.log_line() + "\n")
                if callback:
                    callback(self, report)
        finally:
            if log_file:
                log_file.close()
        return reports

    # -- augmented data -------------------------------------------------------------

    def augment_scenes(self, scenes: Sequence[Scene], chunk: int = 64) -> list[Scene]:
        return augment_scenes(self.A, scenes, self.gen, chunk)

    # -- checkpoints ---------------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        records = {}
        for tag, store in self.models.stores().items():
            for name, arr in store.state_arrays().items():
                records[f"{tag}/{name}"] = arr
        for tag, opt in self._optimizers().items():
            for idx, state in opt.state_dict()["state"].items():
                for key, value in state.items():
                    records[f"opt_{tag}/{idx}/{key}"] = torch.as_tensor(value).detach().numpy().copy()
        records["rng/torch"] = self.gen.get_state().numpy().copy()
        header = {
            "config": self.cfg.to_dict(),
            "step": self.step,
            "models": {"G": self.G.header(), "D": self.D.header(), **({"A": self.A.header()} if self.A else {})},
            "batcher": self.batcher.state(),
        }
        nncore.save_records(path, records, header)

    def _optimizers(self) -> dict[str, torch.optim.Optimizer]:
        opts = {"G": self.opt_g, "D": self.opt_d}
        if self.opt_a is not None:
            opts["A"] = self.opt_a
        return opts

    @classmethod
    def from_checkpoint(cls, path, real_scenes=(), synth_scenes=()) -> "Trainer":
        records, header = nncore.load_records(path)
        cfg = TrainConfig.from_dict(header["config"])
        trainer = cls(cfg, real_scenes, synth_scenes)
        _load_stores(trainer.models, records)
        for tag, opt in trainer._optimizers().items():
            sd = opt.state_dict()
            state = {}
            prefix = f"opt_{tag}/"
            for key, arr in records.items():
                if key.startswith(prefix):
                    idx, name = key[len(prefix):].split("/")
                    state.setdefault(int(idx), {})[name] = torch.from_numpy(arr.copy())
            sd["state"] = state
            opt.load_state_dict(sd)
        trainer.gen.set_state(torch.from_numpy(records["rng/torch"].copy()))
        trainer.batcher.load_state(header["batcher"])
        trainer.step = int(header["step"])
        return trainer


def _load_stores(models: Models, records: dict) -> None:
    for tag, store in models.stores().items():
        prefix = f"{tag}/"
        arrays = {k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)}
        if not arrays:
            raise nncore.CheckpointError(f"checkpoint has no {tag} parameters")
        store.load_arrays(arrays)


def save_checkpoint(trainer: Trainer, path) -> None:
    trainer.save_checkpoint(path)


def load_checkpoint(path) -> tuple[Models, TrainConfig, int]:
    """Models, config and step count stored in a checkpoint.

    Only the models present in the file are returned; a baseline run has no
    augmenter.
    """
    records, header = nncore.load_records(path)
    cfg = TrainConfig.from_dict(header["config"])
    hdr = header["models"]
    models = Models(
        GeneratorModel.from_header(hdr["G"]),
        DiscriminatorModel.from_header(hdr["D"]),
        AugmenterModel.from_header(hdr["A"]) if "A" in hdr else None,
    )
    _load_stores(models, records)
    return models, cfg, int(header["step"])


def augment_scenes(A: AugmenterModel, scenes: Sequence[Scene], gen: torch.Generator, chunk: int = 64) -> list[Scene]:
    """Run the augmenter over ``scenes`` and return synth-augmented scenes in world coordinates."""
    out = []
    with torch.no_grad():
        for i in range(0, len(scenes), chunk):
            part = list(scenes[i : i + chunk])
            batch = SceneBatch.from_scenes(part)
            z = nncore.sample_standard_normal((batch.n_peds, A.noise_dim), gen)
            world = batch.with_rel(A.augment(batch, z)).absolute().numpy()
            k = 0
            for scene in part:
                trajs = []
                for traj in scene.trajectories:
                    trajs.append(Trajectory(traj.ped_id, world[k], traj.dt))
                    k += 1
                out.append(Scene(tuple(trajs), scene.start_frame, scene.frame_step))
    return out


def dump_augmented(A: AugmenterModel, scenes: Sequence[Scene], path, gen: torch.Generator) -> list[Scene]:
    """Write synth-augmented versions of ``scenes`` to a dataset file for later hybrid training."""
    augmented = relabel(augment_scenes(A, scenes, gen))
    write_dataset(augmented, path)
    return augmented


def train_generator(cfg: TrainConfig, real: Sequence[Scene], synth: Sequence[Scene] = ()) -> GeneratorModel:
    """Train a generator under ``cfg.mode`` and return it.

    ``independent-augmenter`` runs the two-stage ablation: an A-vs-D run for
    ``cfg.steps`` steps, then an ``sgan-hybrid`` run on real scenes plus the
    augmenter's output.
    """
    if cfg.mode == "independent-augmenter":
        stage1 = Trainer(cfg, real, synth)
        stage1.run()
        augmented = stage1.augment_scenes(synth)
        cfg = replace(cfg, mode="sgan-hybrid")
        synth = augmented
    trainer = Trainer(cfg, real, synth)
    trainer.run()
    return trainer.G
