"""Trajectory dataset files, scene extraction and coordinate normalisation.

Dataset files hold one observation per line, ``frame_id ped_id x y``,
whitespace separated. Lines starting with ``#`` are comments. The same format
is used for ETH/UCY-style real data, processed JTA data and the locally
generated synthetic data.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DT = 0.4
HEADER = "# frame_id ped_id x y"


class DataError(ValueError):
    """Raised when dataset content violates a structural rule."""


class ParseError(DataError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class TrajectorySample(NamedTuple):
    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Absolute positions in meters of one pedestrian, one row per timestep."""

    ped_id: int
    points: np.ndarray
    dt: float = DT

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (T, 2), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class RelativeTrajectory:
    origin: np.ndarray
    points: np.ndarray
    ped_id: int = -1

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class SplitTrajectory:
    obs: np.ndarray
    pred: np.ndarray


@dataclass(frozen=True, eq=False)
class Scene:
    """All pedestrians fully present in one window of consecutive frames."""

    trajectories: tuple[Trajectory, ...]
    start_frame: int = 0
    frame_step: int = 10

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("a scene needs at least one trajectory")
        lengths = {len(t) for t in trajs}
        if len(lengths) != 1:
            raise ValueError(f"scene trajectories differ in length: {sorted(lengths)}")
        object.__setattr__(self, "trajectories", trajs)

    @property
    def t_pred(self) -> int:
        return len(self.trajectories[0])

    @property
    def ped_ids(self) -> list[int]:
        return [t.ped_id for t in self.trajectories]

    def positions(self) -> np.ndarray:
        """Absolute positions, shape (n_peds, t_pred, 2)."""
        return np.stack([t.points for t in self.trajectories])

    def __len__(self) -> int:
        return len(self.trajectories)


def _as_int(token: str) -> int:
    value = float(token)
    if not np.isfinite(value) or value != int(value):
        raise ValueError(f"{token!r} is not an integer")
    return int(value)


def parse_trajectory_file(path) -> list[TrajectorySample]:
    """Read a dataset file into samples sorted by ``(ped_id, frame_id)``.

    ETH/UCY releases write integer columns as ``10.0``; those are accepted as
    long as they are integral.
    """
    path = Path(path)
    samples = []
    seen = set()
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(parts)}")
            try:
                frame_id = _as_int(parts[0])
                ped_id = _as_int(parts[1])
                x, y = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if frame_id < 0 or ped_id < 0:
                raise ParseError(path, lineno, "frame_id and ped_id must be non-negative")
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError(path, lineno, "coordinates must be finite")
            key = (ped_id, frame_id)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate observation for ped {ped_id} at frame {frame_id}")
            seen.add(key)
            samples.append(TrajectorySample(frame_id, ped_id, x, y))
    samples.sort(key=lambda s: (s.ped_id, s.frame_id))
    return samples


def _frame_stride(tracks: dict[int, list[TrajectorySample]]) -> int:
    diffs = set()
    for track in tracks.values():
        frames = np.array([s.frame_id for s in track])
        diffs.update(np.diff(frames).tolist())
    if not diffs:
        return 1
    stride = min(diffs)
    for ped_id, track in tracks.items():
        frames = np.array([s.frame_id for s in track])
        if len(frames) > 1 and np.any(np.diff(frames) != stride):
            raise DataError(
                f"pedestrian {ped_id} has a non-uniform frame stride "
                f"(expected {stride}, saw {sorted(set(np.diff(frames).tolist()))})"
            )
    return stride


def extract_scenes(samples: Sequence[TrajectorySample], t_obs: int, t_pred: int) -> list[Scene]:
    """Slide a ``t_pred``-frame window one frame step at a time over a dataset.

    A pedestrian joins a window's scene only if observed at every one of its
    frames; windows without any such pedestrian are dropped.
    """
    if not 0 < t_obs < t_pred:
        raise ValueError(f"need 0 < t_obs < t_pred, got t_obs={t_obs}, t_pred={t_pred}")
    tracks: dict[int, list[TrajectorySample]] = defaultdict(list)
    for s in sorted(samples, key=lambda s: (s.ped_id, s.frame_id)):
        tracks[s.ped_id].append(s)
    if not tracks:
        return []
    stride = _frame_stride(tracks)
    first_frame = min(s.frame_id for s in samples)
    span = (t_pred - 1) * stride

    by_start: dict[int, list[int]] = defaultdict(list)
    for ped_id, track in tracks.items():
        start, end = track[0].frame_id, track[-1].frame_id
        if (start - first_frame) % stride:
            raise DataError(f"pedestrian {ped_id} starts off the frame grid (stride {stride})")
        for f in range(start, end - span + 1, stride):
            by_start[f].append(ped_id)

    scenes = []
    for f in sorted(by_start):
        trajs = []
        for ped_id in sorted(by_start[f]):
            track = tracks[ped_id]
            i = (f - track[0].frame_id) // stride
            pts = np.array([(s.x, s.y) for s in track[i : i + t_pred]], dtype=np.float64)
            trajs.append(Trajectory(ped_id, pts))
        scenes.append(Scene(tuple(trajs), start_frame=f, frame_step=stride))
    return scenes


def load_scenes(path, t_obs: int, t_pred: int) -> list[Scene]:
    return extract_scenes(parse_trajectory_file(path), t_obs, t_pred)


def to_relative(t: Trajectory) -> RelativeTrajectory:
    if len(t.points) == 0:
        raise ValueError("cannot normalise an empty trajectory")
    origin = t.points[0].copy()
    return RelativeTrajectory(origin=origin, points=t.points - origin, ped_id=t.ped_id)


def to_absolute(r: RelativeTrajectory) -> Trajectory:
    return Trajectory(r.ped_id, np.asarray(r.points) + np.asarray(r.origin))


def split_obs_pred(t, t_obs: int) -> SplitTrajectory:
    """Split a trajectory (or a bare ``(T, 2)`` array) after ``t_obs`` points."""
    points = t.points if hasattr(t, "points") else np.asarray(t)
    if not 0 < t_obs < len(points):
        raise ValueError(f"t_obs must satisfy 0 < t_obs < {len(points)}, got {t_obs}")
    return SplitTrajectory(obs=points[:t_obs].copy(), pred=points[t_obs:].copy())


def write_dataset(scenes: Sequence[Scene], path, precision: int = 9) -> None:
    """Write scenes in the common dataset format.

    Scenes are emitted in order at their own ``start_frame``; callers that want
    ``extract_scenes`` to recover them one-to-one must give them disjoint frame
    ranges and pedestrian ids (``synth.generate_synthetic_dataset`` does).
    """
    path = Path(path)
    rows = []
    for scene in scenes:
        for traj in scene.trajectories:
            for k, (x, y) in enumerate(traj.points):
                rows.append((scene.start_frame + k * scene.frame_step, traj.ped_id, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    with path.open("w", encoding="utf-8") as f:
        f.write(HEADER + "\n")
        for frame_id, ped_id, x, y in rows:
            f.write(f"{frame_id} {ped_id} {x:.{precision}f} {y:.{precision}f}\n")


def relabel(scenes: Sequence[Scene], scene_len: int | None = None, frame_step: int = 10) -> list[Scene]:
    """Give scenes disjoint frame windows and unique pedestrian ids.

    Needed before writing scenes drawn from different windows of a dataset
    (which share pedestrians) back to a single file.
    """
    out = []
    next_ped = 0
    next_frame = 0
    for scene in scenes:
        length = scene_len or scene.t_pred
        trajs = []
        for traj in scene.trajectories:
            trajs.append(Trajectory(next_ped, traj.points))
            next_ped += 1
        out.append(Scene(tuple(trajs), start_frame=next_frame, frame_step=frame_step))
        next_frame += (length + 1) * frame_step
    return out
