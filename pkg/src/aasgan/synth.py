"""Synthetic, game-engine-like pedestrian trajectories.

Stands in for the JTA corpus: pedestrians walk in straight lines at constant
speed, occasionally with a single heading change, optionally with positional
jitter. Output uses the common dataset format of :mod:`aasgan.data`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .data import DT, Scene, Trajectory


@dataclass
class SynthConfig:
    n_scenes: int = 100
    peds_per_scene: tuple[int, int] = (1, 4)
    speed: tuple[float, float] = (0.5, 1.8)
    heading: tuple[float, float] = (-math.pi, math.pi)
    turn_probability: float = 0.0
    turn_angle: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    jitter_std: float = 0.0
    seed: int = 0
    t_pred: int = 20
    dt: float = DT
    frame_step: int = 10
    area: float = 10.0

    def __post_init__(self):
        self.peds_per_scene = tuple(int(v) for v in self.peds_per_scene)
        for name in ("speed", "heading", "turn_angle"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("peds_per_scene", "speed", "heading", "turn_angle"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low bound {lo} exceeds high bound {hi}")
        if self.peds_per_scene[0] < 1:
            raise ValueError("peds_per_scene must allow at least one pedestrian")
        if self.speed[0] < 0:
            raise ValueError("speed must be non-negative")
        if not 0.0 <= self.turn_probability <= 1.0:
            raise ValueError(f"turn_probability must lie in [0, 1], got {self.turn_probability}")
        if self.jitter_std < 0:
            raise ValueError("jitter_std must be non-negative")
        if self.n_scenes < 0:
            raise ValueError("n_scenes must be non-negative")
        if self.t_pred < 2:
            raise ValueError("t_pred must be at least 2")
        if self.dt <= 0 or self.frame_step <= 0:
            raise ValueError("dt and frame_step must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def generate_linear_trajectory(start, velocity, t_pred: int, dt: float = DT, ped_id: int = 0) -> Trajectory:
    if t_pred < 2:
        raise ValueError("t_pred must be at least 2")
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    k = np.arange(t_pred, dtype=np.float64)[:, None]
    return Trajectory(ped_id, start + k * dt * velocity)


def _piecewise_track(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    start = rng.uniform(-cfg.area / 2, cfg.area / 2, size=2)
    speed = rng.uniform(*cfg.speed)
    heading = rng.uniform(*cfg.heading)
    v1 = speed * np.array([math.cos(heading), math.sin(heading)])
    points = generate_linear_trajectory(start, v1, cfg.t_pred, cfg.dt).points
    # at most one heading change; the turn happens at an interior sample
    if cfg.t_pred > 2 and rng.random() < cfg.turn_probability:
        k_turn = int(rng.integers(1, cfg.t_pred - 1))
        heading2 = heading + rng.uniform(*cfg.turn_angle)
        v2 = speed * np.array([math.cos(heading2), math.sin(heading2)])
        tail = generate_linear_trajectory(points[k_turn], v2, cfg.t_pred - k_turn, cfg.dt).points
        points = np.concatenate([points[:k_turn], tail])
    if cfg.jitter_std > 0:
        points = points + rng.normal(0.0, cfg.jitter_std, size=points.shape)
    return points


def generate_synthetic_dataset(cfg: SynthConfig) -> list[Scene]:
    """Draw ``cfg.n_scenes`` scenes; identical output for identical configs.

    Scenes occupy disjoint frame windows and pedestrian ids are unique, so
    writing and re-reading the dataset recovers exactly these scenes.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scenes = []
    ped_id = 0
    for i in range(cfg.n_scenes):
        n = int(rng.integers(cfg.peds_per_scene[0], cfg.peds_per_scene[1] + 1))
        trajs = []
        for _ in range(n):
            trajs.append(Trajectory(ped_id, _piecewise_track(rng, cfg), cfg.dt))
            ped_id += 1
        start_frame = i * (cfg.t_pred + 1) * cfg.frame_step
        scenes.append(Scene(tuple(trajs), start_frame=start_frame, frame_step=cfg.frame_step))
    return scenes
