"""Seeded candidate generation over encoded examples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from ..corpus import EncodedPair, Vocabulary, decode_ids
from ..seq_model import ParaphraseModel, collate
from ..variational import INDEPENDENT
from .config import derive_seed

CHUNK = 128


@dataclass
class CandidateSet:
    example_id: str
    label: int
    reference: list
    candidates: list
    scores: list

    def to_dict(self) -> dict:
        return {"example_id": self.example_id, "label": self.label, "reference": self.reference,
                "candidates": self.candidates, "scores": self.scores}


def example_noise(model: ParaphraseModel, pairs: Sequence[EncodedPair], K: int, seed: int, offset: int, width: int):
    """Epsilon draws for a chunk: one generator per example index.

    Example ``i`` always gets the same stream, so its first ``k`` draws do not
    depend on ``K`` or on how examples are chunked. Draws are taken one
    sample at a time: a single batched ``randn`` fills in blocks and would
    not keep prefixes when ``K`` changes.
    """
    H = model.config.hidden_dim
    rows = []
    for j, p in enumerate(pairs):
        g = torch.Generator().manual_seed(derive_seed(seed, offset + j))
        if model.sampling_mode == INDEPENDENT:
            d = len(p.original_ids)
            eps = torch.zeros(K, width, H)
            for k in range(K):
                eps[k, :d] = torch.randn((d, H), generator=g)
        else:
            eps = torch.stack([torch.randn(H, generator=g) for _ in range(K)]) if K else torch.zeros(0, H)
        rows.append(eps)
    return torch.cat(rows, 0)


@torch.no_grad()
def generate_candidates(
    model: ParaphraseModel,
    pairs: Sequence[EncodedPair],
    vocab: Vocabulary,
    num_samples: int,
    seed: int,
    latent_source: str = "posterior",
    length_normalize: bool = False,
    beam_width=None,
    max_steps=None,
) -> list[CandidateSet]:
    """K candidates per example, each the top beam of an independent z draw."""
    model.eval()
    out = []
    for start in range(0, len(pairs), CHUNK):
        chunk = pairs[start:start + CHUNK]
        batch = collate(chunk, len(vocab))
        noise = None
        if model.variational:
            noise = example_noise(model, chunk, num_samples, seed, start, batch.src_ids.shape[1])
        sets = model.generate(batch, num_samples, beam_width=beam_width, max_steps=max_steps,
                              latent_source=latent_source, length_normalize=length_normalize, noise=noise)
        for p, draws in zip(chunk, sets):
            cands = [decode_ids(d.candidates[0], vocab, p.original_tokens) if d.candidates else [] for d in draws]
            scores = [d.scores[0] if d.scores else float("-inf") for d in draws]
            out.append(CandidateSet(p.example_id, p.label, list(p.paraphrase_tokens), cands, scores))
    return out
