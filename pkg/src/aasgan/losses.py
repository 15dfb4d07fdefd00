"""Adversarial objectives and the best-of-k variety loss.

Every function returns a quantity to *minimise*. The discriminator loss is
the negated log-likelihood of labelling real trajectories real and the three
fake classes fake. The augmenter and generator use the non-saturating
adversarial term ``-log D(x)`` plus an L2 term.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import torch

EPS = 1e-7


def _clamp(score: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(score).clamp(EPS, 1.0 - EPS)


def _neg_log(score) -> torch.Tensor:
    return -torch.log(_clamp(score)).mean()


def _neg_log1m(score) -> torch.Tensor:
    return -torch.log1p(-_clamp(score)).mean()


def _check_points(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] != 2:
        raise ValueError(f"point sequences must end in a coordinate axis of size 2, got {tuple(a.shape)}")


def l2(s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """Squared point distances summed over time, averaged over pedestrians."""
    s, a = torch.as_tensor(s), torch.as_tensor(a)
    _check_points(s, a)
    per_ped = ((s - a) ** 2).sum(dim=(-1, -2))
    return per_ped.mean()


def discriminator_loss(score_r, score_a=None, score_rt=None, score_at=None) -> torch.Tensor:
    """``-[log D(r) + log(1-D(a)) + log(1-D(r~)) + log(1-D(a~))]``.

    Each term is averaged over its own pedestrians. Fake classes passed as
    ``None`` are left out, which gives the plain two-class SGAN loss.
    """
    loss = _neg_log(score_r)
    for fake in (score_a, score_rt, score_at):
        if fake is not None:
            loss = loss + _neg_log1m(fake)
    return loss


def augmenter_adversarial(score_a) -> torch.Tensor:
    return _neg_log(score_a)


def augmenter_loss(score_a, s, a) -> torch.Tensor:
    return augmenter_adversarial(score_a) + l2(s, a)


def variety_l2(gt, candidates) -> torch.Tensor:
    """Minimum over k candidates of the summed squared distance to ``gt``.

    ``gt`` has shape (..., L, 2) and ``candidates`` (k, ..., L, 2). With
    leading pedestrian axes the minimum is taken per pedestrian and the
    result averaged, so only the best candidate of each pedestrian receives
    gradient.
    """
    gt = torch.as_tensor(gt)
    candidates = torch.as_tensor(candidates)
    if candidates.dim() == gt.dim():
        raise ValueError("candidates need a leading k axis")
    if candidates.shape[0] == 0:
        raise ValueError("variety_l2 needs at least one candidate")
    _check_points(candidates[0], gt)
    per_cand = ((candidates - gt) ** 2).sum(dim=(-1, -2))  # (k, ...)
    return per_cand.min(dim=0).values.mean()


def generator_branch_loss(score_tilde, gt_pred, candidates, pred_len: int):
    """Adversarial and variety terms of one generator branch (real or synth-augmented)."""
    candidates = torch.as_tensor(candidates)
    if candidates.dim() == torch.as_tensor(gt_pred).dim():
        candidates = candidates[None]
    if gt_pred.shape[-2] != pred_len or candidates.shape[-2] != pred_len:
        raise ValueError(
            f"generator L2 covers only the {pred_len} predicted samples, "
            f"got {gt_pred.shape[-2]} and {candidates.shape[-2]}"
        )
    return _neg_log(score_tilde), variety_l2(gt_pred, candidates)


def generator_loss(score_rt, score_at, r_pred, r_hat, a_pred, a_hat, pred_len: int) -> torch.Tensor:
    """``-log D(r~) + varL2(r_pred, r^) - log D(a~) + varL2(a_pred, a^)``.

    The synth-augmented branch may be omitted (``score_at=None``) for the
    SGAN baselines.
    """
    adv, var = generator_branch_loss(score_rt, r_pred, r_hat, pred_len)
    loss = adv + var
    if score_at is not None:
        adv, var = generator_branch_loss(score_at, a_pred, a_hat, pred_len)
        loss = loss + adv + var
    return loss


@dataclass
class LossReport:
    step: int
    d_loss: float
    a_adv: float = 0.0
    a_l2: float = 0.0
    g_real_adv: float = 0.0
    g_real_l2: float = 0.0
    g_synth_adv: float = 0.0
    g_synth_l2: float = 0.0

    @property
    def a_loss(self) -> float:
        return self.a_adv + self.a_l2

    @property
    def g_loss(self) -> float:
        return self.g_real_adv + self.g_real_l2 + self.g_synth_adv + self.g_synth_l2

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in astuple(self)[1:])

    def log_line(self) -> str:
        values = astuple(self)
        return " ".join([str(values[0])] + [repr(float(v)) for v in values[1:]])

    @classmethod
    def parse_line(cls, line: str) -> "LossReport":
        parts = line.split()
        if len(parts) != len(fields(cls)):
            raise ValueError(f"loss log line needs {len(fields(cls))} fields: {line!r}")
        return cls(int(parts[0]), *(float(p) for p in parts[1:]))


LOG_HEADER = "# step d_loss a_adv a_l2 g_real_adv g_real_l2 g_synth_adv g_synth_l2"
