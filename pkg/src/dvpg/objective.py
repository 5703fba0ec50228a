"""Reconstruction and KL losses, KL annealing and the two-step schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from .variational import DiagonalGaussian

LOSS_KINDS = (1, 2, 3)
ANNEAL_ONLY = "anneal-only"
TWO_STEP = "two-step"
SCHEDULE_KINDS = (ANNEAL_ONLY, TWO_STEP)

_LOG_FLOOR = 1e-30


def gaussian_kl(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over all entries.

    Rows outside ``q.mask`` (padding in independent mode) contribute nothing.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(f"shape mismatch: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    # log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2, in log-variance form
    elem = 0.5 * (p.logvar - q.logvar) + (q.logvar.exp() + (q.mean - p.mean) ** 2) / (2.0 * p.logvar.exp()) - 0.5
    if q.mask is not None:
        elem = elem * q.mask.to(elem.dtype).unsqueeze(-1)
    return elem.sum()


def kl_standard(q: DiagonalGaussian) -> Tensor:
    return gaussian_kl(q, DiagonalGaussian.standard_like(q))


def kl_loss_1(q: DiagonalGaussian) -> Tensor:
    """Prior replaced by N(0, 1), doubled KL."""
    return 2.0 * kl_standard(q)


def kl_loss_2(q: DiagonalGaussian, prior: DiagonalGaussian) -> Tensor:
    """Unregularized KL to the label prior."""
    return gaussian_kl(q, prior)


def kl_loss_3(q: DiagonalGaussian, prior: DiagonalGaussian) -> Tensor:
    """KL to the label prior plus both regularizers toward N(0, 1)."""
    return gaussian_kl(q, prior) + kl_standard(q) + gaussian_kl(prior, DiagonalGaussian.standard_like(prior))


def kl_for_loss(loss_kind: int, q: DiagonalGaussian, prior: DiagonalGaussian) -> Tensor:
    if loss_kind == 1:
        return kl_loss_1(q)
    if loss_kind == 2:
        return kl_loss_2(q, prior)
    if loss_kind == 3:
        return kl_loss_3(q, prior)
    raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")


def cross_entropy(
    step_probs: Tensor,
    gold: Tensor,
    gold_mask: Optional[Tensor] = None,
    support: Optional[Tensor] = None,
    length_normalize: bool = False,
) -> Tensor:
    """Negative summed log-probability of gold ids (no length normalization).

    Args:
        step_probs: ``(T, W)`` or ``(B, T, W)`` step distributions over the
            extended vocabulary.
        gold: matching ``(T,)`` / ``(B, T)`` gold ids, extended ids allowed.
        gold_mask: marks real (non-pad) target positions.
        support: ``(W,)`` / ``(B, W)`` boolean mask of ids that exist for the
            example's source; a gold id outside it is an encoding bug.
        length_normalize: divide each sequence's CE by its length (off by
            default).
    """
    if step_probs.dim() == 2:
        step_probs, gold = step_probs.unsqueeze(0), gold.unsqueeze(0)
        gold_mask = None if gold_mask is None else gold_mask.unsqueeze(0)
        support = None if support is None else support.unsqueeze(0)
    if gold_mask is None:
        gold_mask = torch.ones_like(gold, dtype=torch.bool)
    if step_probs.shape[:2] != gold.shape:
        raise ValueError(f"{tuple(step_probs.shape[:2])} distributions for {tuple(gold.shape)} gold ids")
    width = step_probs.shape[-1]
    live = gold.masked_select(gold_mask)
    if live.numel() and (int(live.max()) >= width or int(live.min()) < 0):
        raise ValueError("gold id outside the extended vocabulary")
    if support is not None:
        ok = torch.gather(support, 1, gold.clamp(0, width - 1))
        if not bool(ok[gold_mask].all()):
            raise ValueError("gold id has no support in the extended vocabulary for its source")
    probs = torch.gather(step_probs, 2, gold.clamp(0, width - 1).unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(probs.clamp_min(_LOG_FLOOR)) * gold_mask.to(probs.dtype)
    if length_normalize:
        return (nll.sum(1) / gold_mask.sum(1).clamp_min(1).to(probs.dtype)).sum()
    return nll.sum()


@dataclass
class ScheduleState:
    """Training-step counter plus the KL schedule parameters (in batches)."""

    step: int = 0
    two_step_boundary: int = 0
    anneal_length: int = 0
    schedule_kind: str = ANNEAL_ONLY

    def __post_init__(self):
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.schedule_kind!r}")
        if self.two_step_boundary < 0 or self.anneal_length < 0:
            raise ValueError("schedule lengths must be non-negative")

    @property
    def boundary(self) -> int:
        return self.two_step_boundary if self.schedule_kind == TWO_STEP else 0

    @property
    def latent_enabled(self) -> bool:
        """False during the CE-only phase of two-step training."""
        return self.step >= self.boundary


def anneal_coefficient(state: ScheduleState) -> float:
    """KL weight: 0 before the boundary, linear ramp over ``anneal_length``, then 1.

    An ``anneal_length`` of 0 makes the coefficient a step function at the
    boundary.
    """
    offset = state.step - state.boundary
    if offset < 0:
        return 0.0
    if state.anneal_length == 0:
        return 1.0
    return min(1.0, offset / state.anneal_length)


@dataclass
class LossBreakdown:
    """Batch losses, summed over tokens and examples.

    ``kl`` is None when the latent path was skipped (two-step CE phase).
    """

    ce: Tensor
    kl: Optional[Tensor]
    coefficient: float
    total: Tensor
    n_examples: int = 1

    def as_record(self, step: int) -> dict:
        return {
            "step": step,
            "ce": self.ce.item(),
            "kl": None if self.kl is None else self.kl.item(),
            "coefficient": self.coefficient,
            "total": self.total.item(),
        }


def combine_losses(ce: Tensor, kl: Optional[Tensor], coefficient: float, n_examples: int = 1) -> LossBreakdown:
    if kl is None:
        total = ce
    else:
        total = ce + coefficient * kl
    if not math.isfinite(total.item()):
        raise FloatingPointError(f"non-finite loss (ce={ce.item()}, kl={None if kl is None else kl.item()})")
    return LossBreakdown(ce, kl, coefficient, total, n_examples)


def total_loss(model, batch, loss_kind: int, schedule: ScheduleState,
               rng: Optional[torch.Generator] = None, length_normalize: bool = False) -> LossBreakdown:
    """CE plus the coefficient-weighted KL variant for one batch.

    Baseline models return ``kl = 0``. During the CE phase of two-step
    training the latent path is skipped altogether: no z is drawn, the
    decoder sees the plain encoder states and ``kl`` is None.
    """
    enc = model.encode(batch)
    n = len(batch)
    support = batch.support

    def ce_of(memory):
        probs = model.decode_teacher_forced(memory, batch)
        return cross_entropy(probs, batch.tgt_out, batch.tgt_mask, support, length_normalize)

    if not model.variational:
        ce = ce_of(enc.states)
        return combine_losses(ce, torch.zeros((), dtype=ce.dtype), 0.0, n)
    if not schedule.latent_enabled:
        return combine_losses(ce_of(enc.states), None, 0.0, n)
    coefficient = anneal_coefficient(schedule)
    augmented, q, _ = model.augment(enc, batch.labels, rng)
    prior = model.latent.prior_like(q, batch.labels)
    kl = kl_for_loss(loss_kind, q, prior)
    return combine_losses(ce_of(augmented), kl, coefficient, n)
