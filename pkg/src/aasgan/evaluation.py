"""Displacement metrics, best-of-N evaluation and the leave-one-out benchmark."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from . import nncore
from .data import Scene
from .models import GeneratorModel, SceneBatch

CSV_HEADER = ("dataset", "ade", "fde", "n_scenes", "N", "seed")


@dataclass
class MetricsReport:
    dataset_name: str
    ade: float
    fde: float
    n_scenes: int
    n_samples_N: int
    seed: int

    def row(self) -> tuple:
        return (self.dataset_name, self.ade, self.fde, self.n_scenes, self.n_samples_N, self.seed)


def _displacements(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if pred.ndim < 2 or pred.shape[-1] != 2 or pred.shape[-2] == 0:
        raise ValueError(f"expected (..., L, 2) point sequences with L >= 1, got {pred.shape}")
    d = pred - gt
    # hypot avoids underflow for tiny offsets
    return np.hypot(d[..., 0], d[..., 1])


def ade(pred, gt) -> float:
    """Mean Euclidean error over predicted timesteps, then over pedestrians."""
    return float(_displacements(pred, gt).mean(axis=-1).mean())


def fde(pred, gt) -> float:
    """Euclidean error at the last predicted timestep, averaged over pedestrians."""
    return float(_displacements(pred, gt)[..., -1].mean())


def scene_generator(seed: int, index: int) -> torch.Generator:
    # per-scene stream from (seed, index): serial and parallel evaluation agree
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint32)
    return nncore.make_generator(int(state[0]) << 32 | int(state[1]))


def best_of_n_scene(G: GeneratorModel, scene: Scene, N: int, gen: torch.Generator):
    """Best of ``N`` predictions for one scene, selected by scene-mean ADE.

    Returns the selected prediction in world coordinates (n_peds, L, 2) with
    its ADE and FDE. Noise is drawn one sample at a time, so the first ``M``
    draws of a best-of-``N`` call equal a best-of-``M`` call on the same
    stream.
    """
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if scene.t_pred != G.t_pred:
        raise ValueError(f"scene has length {scene.t_pred}, model expects {G.t_pred}")
    with torch.no_grad():
        batch = SceneBatch.from_scenes([scene])
        z = torch.cat([nncore.sample_standard_normal((batch.n_peds, G.noise_dim), gen) for _ in range(N)])
        obs = batch.prefix(G.t_obs).repeat(N)
        pred_rel = G.predict(obs, z).reshape(N, batch.n_peds, G.pred_len, 2)
        pred = (pred_rel + batch.origin[None, :, None, :]).numpy()
        gt = batch.absolute()[:, G.t_obs:].numpy()
    diff = pred - gt[None]
    dist = np.hypot(diff[..., 0], diff[..., 1])  # (N, peds, L)
    sample_ade = dist.mean(axis=-1).mean(axis=-1)
    best = int(np.argmin(sample_ade))
    return pred[best], float(sample_ade[best]), float(dist[best, :, -1].mean())


def best_of_n_errors(G: GeneratorModel, scenes: Sequence[Scene], N: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-scene (ADE, FDE) of the minimum-ADE sample among ``N`` draws."""
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    ades, fdes = np.zeros(len(scenes)), np.zeros(len(scenes))
    for idx, scene in enumerate(scenes):
        _, ades[idx], fdes[idx] = best_of_n_scene(G, scene, N, scene_generator(seed, idx))
    return ades, fdes


def best_of_n_eval(G: GeneratorModel, scenes: Sequence[Scene], N: int = 20, seed: int = 0,
                   dataset_name: str = "test") -> MetricsReport:
    if not scenes:
        raise ValueError("no scenes to evaluate")
    ades, fdes = best_of_n_errors(G, scenes, N, seed)
    return MetricsReport(dataset_name, float(ades.mean()), float(fdes.mean()), len(scenes), N, seed)


def average_report(reports: Sequence[MetricsReport], name: str = "average") -> MetricsReport:
    return MetricsReport(
        name,
        float(np.mean([r.ade for r in reports])),
        float(np.mean([r.fde for r in reports])),
        sum(r.n_scenes for r in reports),
        reports[0].n_samples_N,
        reports[0].seed,
    )


TrainFn = Callable[[list[Scene]], GeneratorModel]


def leave_one_out(datasets: Mapping[str, Sequence[Scene]], train_fn: TrainFn, N: int = 20,
                  seed: int = 0, progress: Callable[[str], None] | None = None) -> list[MetricsReport]:
    """Train on all splits but one, evaluate best-of-N on the held-out split.

    ``train_fn`` receives the pooled real training scenes and returns a
    generator; synthetic data, if any, is the train function's business.
    Returns one report per split followed by the average row.
    """
    if len(datasets) < 2:
        raise ValueError(f"leave-one-out needs at least 2 datasets, got {len(datasets)}")
    reports = []
    for held_out, test_scenes in datasets.items():
        train = [s for name, scenes in datasets.items() if name != held_out for s in scenes]
        if progress:
            progress(held_out)
        G = train_fn(train)
        reports.append(best_of_n_eval(G, test_scenes, N, seed, held_out))
    reports.append(average_report(reports))
    return reports


def write_metrics_csv(reports: Sequence[MetricsReport], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow([r.dataset_name, repr(r.ade), repr(r.fde), r.n_scenes, r.n_samples_N, r.seed])


def read_metrics_csv(path) -> list[MetricsReport]:
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [MetricsReport(n, float(a), float(fd), int(s), int(k), int(sd)) for n, a, fd, s, k, sd in reader]


def format_metrics_table(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    buf.write(f"{'dataset':<12} {'ADE':>8} {'FDE':>8} {'scenes':>7} {'N':>4} {'seed':>6}\n")
    for r in reports:
        buf.write(f"{r.dataset_name:<12} {r.ade:>8.4f} {r.fde:>8.4f} {r.n_scenes:>7d} {r.n_samples_N:>4d} {r.seed:>6d}\n")
    return buf.getvalue()


def plot_scene(scene: Scene, predictions: Mapping[str, np.ndarray], path, t_obs: int = 8) -> Path:
    """Draw observed and future ground truth plus named predictions.

    ``predictions`` maps a label to world coordinates of shape
    (n_peds, t_pred - t_obs, 2). SVG output is byte-for-byte reproducible.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    gt = scene.positions()
    styles = ["tab:red", "tab:green", "tab:purple", "tab:orange", "tab:brown", "tab:pink", "tab:olive"]
    with matplotlib.rc_context({"svg.hashsalt": "aasgan", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 6))
        for i in range(len(scene)):
            ax.plot(gt[i, :t_obs, 0], gt[i, :t_obs, 1], "-", color="black", lw=1.5,
                    label="observed" if i == 0 else None)
            ax.plot(gt[i, t_obs - 1:, 0], gt[i, t_obs - 1:, 1], "-", color="tab:blue", lw=1.5,
                    label="ground truth" if i == 0 else None)
        for k, (name, pred) in enumerate(predictions.items()):
            pred = np.asarray(pred)
            for i in range(len(pred)):
                xs = np.concatenate([gt[i, t_obs - 1 : t_obs, 0], pred[i, :, 0]])
                ys = np.concatenate([gt[i, t_obs - 1 : t_obs, 1], pred[i, :, 1]])
                ax.plot(xs, ys, "--", color=styles[k % len(styles)], lw=1.2, label=name if i == 0 else None)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="best")
        fmt = path.suffix.lstrip(".") or "svg"
        metadata = {"Date": None} if fmt == "svg" else None
        fig.savefig(path, format=fmt, metadata=metadata)
        plt.close(fig)
    return path
