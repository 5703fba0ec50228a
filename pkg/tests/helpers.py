"""Small random fixtures shared by the test modules."""

from __future__ import annotations

import numpy as np
import torch

from dvpg.corpus import BOS_ID, EOS_ID, EncodedPair
from dvpg.seq_model import ModelConfig, ParaphraseModel, collate

TINY = dict(embedding_dim=8, hidden_dim=8, num_layers=1, num_heads=2, projection_dim=8,
            feedforward_dim=16, target_embedding_dim=8, max_decode_steps=6, beam_width=3)
VOCAB = 24


def tiny_model(kind="baseline", mode="aggregated", seed=0, vocab_size=VOCAB, **overrides):
    torch.manual_seed(seed)
    cfg = ModelConfig(vocab_size=vocab_size, **{**TINY, **overrides})
    return ParaphraseModel(cfg, kind, mode).eval()


def random_pairs(n, seed=0, vocab_size=VOCAB, max_len=7, oov_rate=0.2):
    """Encoded pairs with random ids; some source positions are OOV (copy-only)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        d = int(rng.integers(1, max_len + 1))
        src = [int(t) for t in rng.integers(4, vocab_size, size=d)]
        cmap = list(src)
        for j in range(d):
            if rng.random() < oov_rate:
                src[j] = 3
                cmap[j] = vocab_size + j
        t = int(rng.integers(1, max_len + 1))
        tgt = [int(rng.choice(cmap)) if rng.random() < 0.4 else int(tok) for tok in rng.integers(4, vocab_size, size=t)]
        pairs.append(EncodedPair(f"ex-{i}", int(rng.integers(2)), [f"s{x}" for x in range(d)], [f"t{x}" for x in range(t)],
                                 src, cmap, [BOS_ID] + tgt + [EOS_ID]))
    return pairs


def random_batch(n, seed=0, vocab_size=VOCAB, **kw):
    return collate(random_pairs(n, seed, vocab_size, **kw), vocab_size)
