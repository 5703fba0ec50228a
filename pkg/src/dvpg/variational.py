"""Gaussian posterior/prior heads, label conditioning and latent sampling.

Two sampling modes fuse the latent variable with encoder states:

* ``independent``: one draw per non-masked source position, ``z`` has shape
  ``(d, H)`` per example;
* ``aggregated``: encoder rows are average-pooled and a single ``z`` of shape
  ``(H,)`` is drawn and broadcast to every position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

INDEPENDENT = "independent"
AGGREGATED = "aggregated"
SAMPLING_MODES = (INDEPENDENT, AGGREGATED)


@dataclass
class DiagonalGaussian:
    """Diagonal Gaussian stored as mean and log-variance.

    ``mask`` marks valid rows for row-wise (independent) Gaussians; entries
    in masked-out rows are ignored by KL terms. ``mode`` records which
    sampling mode produced the parameters, if any.
    """

    mean: Tensor
    logvar: Tensor
    mask: Optional[Tensor] = None
    mode: Optional[str] = None

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ValueError(f"mean {tuple(self.mean.shape)} and logvar {tuple(self.logvar.shape)} differ")

    @property
    def std(self) -> Tensor:
        return torch.exp(0.5 * self.logvar)

    @property
    def shape(self) -> torch.Size:
        return self.mean.shape

    @classmethod
    def standard_like(cls, other: "DiagonalGaussian") -> "DiagonalGaussian":
        zeros = torch.zeros_like(other.mean)
        return cls(zeros, torch.zeros_like(other.logvar), other.mask, other.mode)

    @classmethod
    def from_std(cls, mean: Tensor, std: Tensor, **kwargs) -> "DiagonalGaussian":
        return cls(mean, 2.0 * torch.log(std), **kwargs)


@dataclass
class LatentSample:
    mode: str
    values: Tensor
    noise: Tensor


def check_labels(labels) -> Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and not bool(((labels == 0) | (labels == 1)).all()):
        raise ValueError(f"labels must be 0 or 1, got {labels.tolist()}")
    return labels


def mean_pool(states: Tensor, mask: Tensor) -> Tensor:
    """Average of the non-masked rows; works for ``(d, H)`` or ``(B, d, H)``."""
    m = mask.to(states.dtype).unsqueeze(-1)
    return (states * m).sum(-2) / m.sum(-2).clamp_min(1.0)


def sample_z(
    gaussian: DiagonalGaussian,
    mode: str,
    rng: Optional[torch.Generator] = None,
    noise: Optional[Tensor] = None,
) -> LatentSample:
    """Reparameterized draw ``mean + std * eps``.

    Pass ``noise`` to force a particular epsilon; otherwise it is drawn from
    ``rng`` (a ``torch.Generator``). Gradients flow to mean and log-variance.
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if gaussian.mode is not None and gaussian.mode != mode:
        raise ValueError(f"gaussian was built for {gaussian.mode!r} sampling, not {mode!r}")
    if mode == INDEPENDENT and gaussian.mean.dim() < 2:
        raise ValueError("independent sampling needs row-wise (d x H) parameters")
    if mode == AGGREGATED and gaussian.mask is not None:
        raise ValueError("aggregated sampling needs pooled (H) parameters, got row-wise ones")
    if noise is None:
        noise = torch.randn(gaussian.shape, generator=rng, dtype=gaussian.mean.dtype)
    elif noise.shape != gaussian.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(gaussian.shape)}")
    values = gaussian.mean + gaussian.std * noise
    if gaussian.mask is not None:
        values = values * gaussian.mask.to(values.dtype).unsqueeze(-1)
    return LatentSample(mode, values, noise)


def combine(states: Tensor, mask: Tensor, sample: LatentSample) -> Tensor:
    """Add ``z`` to the encoder states; masked positions are left unchanged."""
    z = sample.values
    if z.shape[-1] != states.shape[-1]:
        raise ValueError(f"latent dim {z.shape[-1]} != hidden dim {states.shape[-1]}")
    if sample.mode == AGGREGATED:
        z = z.unsqueeze(-2)
    elif z.shape != states.shape:
        raise ValueError(f"independent z {tuple(z.shape)} != states {tuple(states.shape)}")
    return states + z * mask.to(states.dtype).unsqueeze(-1)


class LatentModule(nn.Module):
    """Posterior heads q(z|x[,v]) and the learned per-label priors p(z|v).

    For ``dvpg`` a 2-row label embedding is added to the head input, making
    the posterior label dependent. ``vae`` ignores labels and always uses a
    standard normal prior.
    """

    def __init__(self, hidden_dim: int, model_kind: str = "dvpg"):
        super().__init__()
        if model_kind not in ("dvpg", "vae"):
            raise ValueError(f"latent module needs kind dvpg or vae, got {model_kind!r}")
        self.model_kind = model_kind
        self.hidden_dim = hidden_dim
        self.mean_head = nn.Linear(hidden_dim, hidden_dim)
        self.logvar_head = nn.Linear(hidden_dim, hidden_dim)
        if model_kind == "dvpg":
            self.label_embedding = nn.Embedding(2, hidden_dim)
            self.prior_mean = nn.ParameterList([nn.Parameter(torch.zeros(hidden_dim)) for _ in range(2)])
            self.prior_logvar = nn.ParameterList([nn.Parameter(torch.zeros(hidden_dim)) for _ in range(2)])

    @property
    def learned_prior(self) -> bool:
        return self.model_kind == "dvpg"

    def posterior_params(self, states: Tensor, mask: Tensor, labels, mode: str) -> DiagonalGaussian:
        """q(z|x,v) for a batch ``(B, d, H)`` (or a single ``(d, H)`` example)."""
        labels = check_labels(labels)
        if mode == AGGREGATED:
            inputs = mean_pool(states, mask)
        elif mode == INDEPENDENT:
            inputs = states
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
        if self.model_kind == "dvpg":
            emb = self.label_embedding(labels.to(states.device))
            if mode == INDEPENDENT:
                emb = emb.unsqueeze(-2)
            inputs = inputs + emb
        mean = self.mean_head(inputs)
        logvar = self.logvar_head(inputs)
        row_mask = mask if mode == INDEPENDENT else None
        return DiagonalGaussian(mean, logvar, row_mask, mode)

    def prior_params(self, label: int) -> DiagonalGaussian:
        label = int(check_labels(label))
        if not self.learned_prior:
            zeros = torch.zeros(self.hidden_dim)
            return DiagonalGaussian(zeros, zeros.clone())
        return DiagonalGaussian(self.prior_mean[label], self.prior_logvar[label])

    def prior_like(self, q: DiagonalGaussian, labels) -> DiagonalGaussian:
        """Per-example priors broadcast to the shape of posterior ``q``."""
        if not self.learned_prior:
            return DiagonalGaussian.standard_like(q)
        labels = check_labels(labels).reshape(-1).tolist()
        mean = torch.stack([self.prior_mean[v] for v in labels])
        logvar = torch.stack([self.prior_logvar[v] for v in labels])
        if q.mean.dim() == 1:
            mean, logvar = mean[0], logvar[0]
        while mean.dim() < q.mean.dim():
            mean, logvar = mean.unsqueeze(-2), logvar.unsqueeze(-2)
        return DiagonalGaussian(mean.expand_as(q.mean), logvar.expand_as(q.logvar), q.mask, q.mode)
