"""Transformer encoder + LSTM copy decoder with cross-attention and beam search.

The same network is the non-variational CopyNet-style baseline; variational
model kinds add a :class:`~dvpg.variational.LatentModule` whose samples are
summed into the encoder states before decoding.

Step distributions live on an extended vocabulary of width ``V + L``: the
first ``V`` entries are the base vocabulary and entry ``V + j`` is the copy
slot of source position ``j`` (used by OOV source tokens, see
:func:`dvpg.corpus.encode_pair`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID, EncodedPair
from .variational import (
    AGGREGATED,
    INDEPENDENT,
    SAMPLING_MODES,
    DiagonalGaussian,
    LatentModule,
    LatentSample,
    combine,
    mean_pool,
    sample_z,
)

MODEL_KINDS = ("baseline", "vae", "dvpg")
CHECKPOINT_FORMAT = 1


@dataclass
class ModelConfig:
    vocab_size: int
    embedding_dim: int = 32
    hidden_dim: int = 32
    num_layers: int = 1
    num_heads: int = 4
    projection_dim: int = 32
    feedforward_dim: int = 64
    target_embedding_dim: int = 32
    max_source_length: int = 14
    max_decode_steps: int = 13
    beam_width: int = 4
    dropout: float = 0.0

    @classmethod
    def from_profile(cls, profile: str, vocab_size: int, **overrides) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        params = {k: v for k, v in PROFILES[profile].items() if k in known}
        params.update(overrides)
        return cls(vocab_size=vocab_size, **params)


# "paper" follows the published setup; "desk" is a small profile for tests and laptops.
PROFILES = {
    "paper": dict(
        embedding_dim=768, hidden_dim=128, num_layers=1, num_heads=8, projection_dim=256,
        feedforward_dim=128, target_embedding_dim=768, beam_width=16, max_decode_steps=13,
        vocab_limit=5000, learning_rate=1e-4, batch_size=48, epochs=20,
    ),
    "desk": dict(
        embedding_dim=32, hidden_dim=32, num_layers=1, num_heads=4, projection_dim=32,
        feedforward_dim=64, target_embedding_dim=32, beam_width=4, max_decode_steps=13,
        vocab_limit=200, learning_rate=3e-3, batch_size=16, epochs=15,
    ),
}


@dataclass
class Batch:
    example_ids: list
    labels: Tensor
    src_ids: Tensor
    src_mask: Tensor
    copy_map: Tensor
    tgt_in: Tensor
    tgt_out: Tensor
    tgt_mask: Tensor
    source_tokens: list
    references: list
    vocab_size: int

    def __len__(self) -> int:
        return len(self.example_ids)

    @property
    def support(self) -> Tensor:
        """``(B, V + L)`` mask of ids that can carry probability for each source."""
        B, L = self.src_ids.shape
        sup = torch.zeros(B, self.vocab_size + L, dtype=torch.bool)
        sup[:, : self.vocab_size] = True
        sup.scatter_(1, self.copy_map, self.src_mask)
        sup[:, : self.vocab_size] = True
        return sup


def collate(pairs: Sequence[EncodedPair], vocab_size: int) -> Batch:
    """Pad a list of encoded pairs into a :class:`Batch`."""
    B = len(pairs)
    L = max(len(p.original_ids) for p in pairs)
    T = max(len(p.paraphrase_ids) - 1 for p in pairs) if pairs[0].paraphrase_ids else 0
    src = torch.full((B, L), PAD_ID, dtype=torch.long)
    mask = torch.zeros(B, L, dtype=torch.bool)
    cmap = torch.arange(L).repeat(B, 1) + vocab_size
    tgt_in = torch.full((B, max(T, 1)), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((B, max(T, 1)), PAD_ID, dtype=torch.long)
    tmask = torch.zeros(B, max(T, 1), dtype=torch.bool)
    for i, p in enumerate(pairs):
        d = len(p.original_ids)
        if len(p.copy_map) != d:
            raise ValueError(f"{p.example_id}: copy map length {len(p.copy_map)} != source length {d}")
        src[i, :d] = torch.tensor(p.original_ids)
        mask[i, :d] = True
        cmap[i, :d] = torch.tensor(p.copy_map)
        if p.paraphrase_ids:
            ids = torch.tensor(p.paraphrase_ids)
            n = len(ids) - 1
            inp = ids[:-1].clone()
            inp[inp >= vocab_size] = UNK_ID
            tgt_in[i, :n] = inp
            tgt_out[i, :n] = ids[1:]
            tmask[i, :n] = True
    return Batch(
        example_ids=[p.example_id for p in pairs],
        labels=torch.tensor([p.label for p in pairs], dtype=torch.long),
        src_ids=src,
        src_mask=mask,
        copy_map=cmap,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_mask=tmask,
        source_tokens=[p.original_tokens for p in pairs],
        references=[p.paraphrase_tokens for p in pairs],
        vocab_size=vocab_size,
    )


class LearnedEmbedding(nn.Module):
    """Token embedding table trained from scratch."""

    def __init__(self, vocab_size: int, dim: int):
        super().__init__()
        self.dim = dim
        self.table = nn.Embedding(vocab_size, dim, padding_idx=PAD_ID)

    def forward(self, src_ids: Tensor, example_ids=None) -> Tensor:
        return self.table(src_ids)


class PrecomputedEmbedding(nn.Module):
    """Frozen contextual embeddings read from an ``.npz`` archive.

    The archive maps each example id to a float matrix of shape
    ``(source_length, dim)``, row ``j`` embedding source token ``j``.
    """

    def __init__(self, path):
        super().__init__()
        with np.load(path) as data:
            self._rows = {k: torch.from_numpy(np.asarray(data[k], dtype=np.float32)) for k in data.files}
        if not self._rows:
            raise ValueError(f"{path} holds no embeddings")
        self.dim = next(iter(self._rows.values())).shape[1]

    @staticmethod
    def save(path, embeddings: dict) -> None:
        np.savez(path, **{k: np.asarray(v, dtype=np.float32) for k, v in embeddings.items()})

    def forward(self, src_ids: Tensor, example_ids=None) -> Tensor:
        if example_ids is None:
            raise ValueError("precomputed embeddings are looked up by example id")
        B, L = src_ids.shape
        out = torch.zeros(B, L, self.dim)
        for i, ex in enumerate(example_ids):
            if ex not in self._rows:
                raise KeyError(f"no precomputed embedding for example {ex!r}")
            rows = self._rows[ex]
            d = int((src_ids[i] != PAD_ID).sum())
            if rows.shape[0] != d:
                raise ValueError(f"example {ex!r}: {rows.shape[0]} embedding rows for {d} tokens")
            out[i, : rows.shape[0]] = rows
        return out


class SelfAttentionLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, projection: int, feedforward: int, dropout: float):
        super().__init__()
        if projection % heads:
            raise ValueError(f"projection dim {projection} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(hidden, 3 * projection)
        self.merge = nn.Linear(projection, hidden)
        self.norm1 = nn.LayerNorm(hidden)
        self.ff = nn.Sequential(nn.Linear(hidden, feedforward), nn.ReLU(), nn.Linear(feedforward, hidden))
        self.norm2 = nn.LayerNorm(hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        B, L, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        split = lambda t: t.view(B, L, self.heads, -1).transpose(1, 2)  # noqa: E731
        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        att = self.dropout(torch.softmax(scores, dim=-1))
        h = (att @ v).transpose(1, 2).reshape(B, L, -1)
        x = self.norm1(x + self.dropout(self.merge(h)))
        return self.norm2(x + self.dropout(self.ff(x)))


@dataclass
class EncoderStates:
    """Per-token encoder outputs ``(B, L, H)``; ``mask`` marks real tokens."""

    states: Tensor
    mask: Tensor

    def rows(self, i: int = 0) -> Tensor:
        """The ``d x H`` non-masked states of example ``i``."""
        return self.states[i][self.mask[i]]


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig, provider: nn.Module):
        super().__init__()
        self.config = config
        self.provider = provider
        self.input_proj = nn.Linear(provider.dim, config.hidden_dim)
        self.positions = nn.Embedding(config.max_source_length, config.hidden_dim)
        self.layers = nn.ModuleList(
            SelfAttentionLayer(config.hidden_dim, config.num_heads, config.projection_dim,
                               config.feedforward_dim, config.dropout)
            for _ in range(config.num_layers)
        )

    def forward(self, src_ids: Tensor, src_mask: Tensor, example_ids=None) -> EncoderStates:
        L = src_ids.shape[1]
        if L > self.config.max_source_length:
            raise ValueError(f"source of length {L} exceeds max_source_length {self.config.max_source_length}")
        if not bool(src_mask.any(1).all()):
            raise ValueError("every source needs at least one token")
        x = self.input_proj(self.provider(src_ids, example_ids))
        x = x + self.positions(torch.arange(L))
        for layer in self.layers:
            x = layer(x, src_mask)
        return EncoderStates(x * src_mask.unsqueeze(-1), src_mask)


class CopyDecoder(nn.Module):
    """LSTM decoder mixing a vocabulary softmax with attention-based copying.

    A sigmoid gate ``g`` interpolates the two: ``P = g * P_vocab + (1 - g) *
    P_copy``, where the copy mass of each source position goes to its
    copy-map id, so a token both in the vocabulary and in the source gets the
    sum of both.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        V, H, E = config.vocab_size, config.hidden_dim, config.target_embedding_dim
        self.vocab_size = V
        self.embedding = nn.Embedding(V, E, padding_idx=PAD_ID)
        self.cell = nn.LSTMCell(E + H, H)
        self.attention = nn.Linear(H, H, bias=False)
        self.output = nn.Linear(2 * H, H)
        self.generator = nn.Linear(H, V)
        self.gate = nn.Linear(2 * H + E, 1)
        self.init_h = nn.Linear(H, H)
        self.init_c = nn.Linear(H, H)

    def initial_state(self, memory: Tensor, mask: Tensor):
        pooled = mean_pool(memory, mask)
        return torch.tanh(self.init_h(pooled)), torch.tanh(self.init_c(pooled)), pooled

    def check_copy_map(self, memory: Tensor, mask: Tensor, copy_map: Tensor) -> None:
        if copy_map.shape != mask.shape:
            raise ValueError(f"copy map {tuple(copy_map.shape)} does not match source {tuple(mask.shape)}")
        L = mask.shape[1]
        if bool((copy_map < 0).any()) or bool((copy_map >= self.vocab_size + L).any()):
            raise ValueError("copy map id outside the extended vocabulary of its source")

    def step(self, prev: Tensor, state, memory: Tensor, mask: Tensor, copy_map: Tensor):
        """One decoding step; returns ``(probs (N, V + L), new_state)``."""
        h, c, ctx = state
        prev = torch.where(prev >= self.vocab_size, torch.full_like(prev, UNK_ID), prev)
        emb = self.embedding(prev)
        h, c = self.cell(torch.cat([emb, ctx], -1), (h, c))
        scores = torch.bmm(memory, self.attention(h).unsqueeze(-1)).squeeze(-1)
        attn = torch.softmax(scores.masked_fill(~mask, float("-inf")), dim=-1)
        ctx = torch.bmm(attn.unsqueeze(1), memory).squeeze(1)
        feat = torch.tanh(self.output(torch.cat([h, ctx], -1)))
        gen = torch.softmax(self.generator(feat), dim=-1)
        g = torch.sigmoid(self.gate(torch.cat([h, ctx, emb], -1)))
        copy_slots = memory.new_zeros(memory.shape[0], memory.shape[1])
        probs = torch.cat([g * gen, copy_slots], -1).scatter_add(1, copy_map, (1 - g) * attn)
        return probs, (h, c, ctx)

    def teacher_forced(self, memory: Tensor, mask: Tensor, copy_map: Tensor, tgt_in: Tensor) -> Tensor:
        """Step distributions ``(B, T, V + L)`` conditioned on the gold previous tokens."""
        self.check_copy_map(memory, mask, copy_map)
        state = self.initial_state(memory, mask)
        steps = []
        for t in range(tgt_in.shape[1]):
            probs, state = self.step(tgt_in[:, t], state, memory, mask, copy_map)
            steps.append(probs)
        return torch.stack(steps, 1)


@dataclass
class GenerationSet:
    """Beam output for one source, sorted by descending score."""

    candidates: list
    scores: list
    finished: list = field(default_factory=list)


def _log(p: Tensor) -> Tensor:
    return torch.log(p).masked_fill(p <= 0, float("-inf"))


def _top_stable(cand: Tensor, k: int) -> tuple[Tensor, Tensor]:
    """First ``k`` entries of a stable descending sort along dim 1.

    Uses topk and only falls back to the full sort when a tie straddles
    the cut, so results always match the stable sort.
    """
    vals, idx = torch.topk(cand, k, dim=1)
    if bool(((cand >= vals[:, -1:]).sum(1) == k).all()):
        idx = idx.sort(dim=1).values
        top = cand.gather(1, idx)
        order = torch.sort(top, dim=1, descending=True, stable=True).indices
        return top.gather(1, order), idx.gather(1, order)
    top, idx = torch.sort(cand, dim=1, descending=True, stable=True)
    return top[:, :k], idx[:, :k]


@torch.no_grad()
def beam_search(
    decoder: CopyDecoder,
    memory: Tensor,
    mask: Tensor,
    copy_map: Tensor,
    beam_width: int,
    max_steps: int,
    length_normalize: bool = False,
) -> list[GenerationSet]:
    """Batched beam search over ``N`` sources.

    Hypotheses are scored by summed token log-probability. Finished
    hypotheses stay in the beam with a frozen score. Ties are broken by lower
    token id, then by earlier hypothesis index.
    """
    if beam_width < 1 or max_steps < 1:
        raise ValueError("beam_width and max_steps must be >= 1")
    decoder.check_copy_map(memory, mask, copy_map)
    N, L, _ = memory.shape
    w, W = beam_width, decoder.vocab_size + L
    mem = memory.repeat_interleave(w, 0)
    msk = mask.repeat_interleave(w, 0)
    cmap = copy_map.repeat_interleave(w, 0)
    state = decoder.initial_state(mem, msk)
    prev = torch.full((N * w,), BOS_ID, dtype=torch.long)
    scores = torch.full((N, w), float("-inf"), dtype=memory.dtype)
    scores[:, 0] = 0.0
    finished = torch.zeros(N, w, dtype=torch.bool)
    lengths = torch.zeros(N, w, dtype=torch.long)
    tokens = torch.zeros(N, w, 0, dtype=torch.long)
    frozen = torch.full((W,), float("-inf"), dtype=memory.dtype)
    frozen[PAD_ID] = 0.0
    base = (torch.arange(N) * w).unsqueeze(1)
    for _ in range(max_steps):
        probs, state = decoder.step(prev, state, mem, msk, cmap)
        logp = _log(probs).view(N, w, W)
        logp[..., PAD_ID] = float("-inf")
        logp[..., BOS_ID] = float("-inf")
        logp = torch.where(finished.unsqueeze(-1), frozen, logp)
        cand = (scores.unsqueeze(-1) + logp).transpose(1, 2).reshape(N, W * w)
        top, idx = _top_stable(cand, w)
        tok, hyp = idx // w, idx % w
        rows = (base + hyp).reshape(-1)
        state = tuple(s[rows] for s in state)
        was_finished = finished.gather(1, hyp)
        tokens = torch.cat([tokens.gather(1, hyp.unsqueeze(-1).expand(-1, -1, tokens.shape[2])), tok.unsqueeze(-1)], -1)
        lengths = lengths.gather(1, hyp) + (~was_finished).long()
        finished = was_finished | (tok == EOS_ID)
        scores = top
        prev = tok.reshape(-1)
        if bool(finished.all()):
            break
    results = []
    for n in range(N):
        order = list(range(w))
        final = scores[n].tolist()
        if length_normalize:
            final = [s / max(int(lengths[n, k]), 1) for k, s in enumerate(final)]
            order.sort(key=lambda k: -final[k])
        cands, scs, done = [], [], []
        for k in order:
            if math.isinf(final[k]):
                continue
            seq = tokens[n, k].tolist()
            out = []
            for t in seq:
                if t == EOS_ID or t == PAD_ID:
                    break
                out.append(t)
            cands.append(out)
            scs.append(final[k])
            done.append(bool(finished[n, k]))
        results.append(GenerationSet(cands, scs, done))
    return results


@torch.no_grad()
def greedy_decode(decoder: CopyDecoder, memory: Tensor, mask: Tensor, copy_map: Tensor, max_steps: int) -> list[list]:
    """Stepwise argmax decoding (lowest id wins ties)."""
    decoder.check_copy_map(memory, mask, copy_map)
    N = memory.shape[0]
    state = decoder.initial_state(memory, mask)
    prev = torch.full((N,), BOS_ID, dtype=torch.long)
    outputs = [[] for _ in range(N)]
    alive = [True] * N
    for _ in range(max_steps):
        probs, state = decoder.step(prev, state, memory, mask, copy_map)
        logp = _log(probs)
        logp[:, PAD_ID] = float("-inf")
        logp[:, BOS_ID] = float("-inf")
        prev = torch.argmax(logp, dim=-1)
        for n, t in enumerate(prev.tolist()):
            if alive[n]:
                if t == EOS_ID:
                    alive[n] = False
                else:
                    outputs[n].append(t)
        if not any(alive):
            break
    return outputs


class ParaphraseModel(nn.Module):
    """Encoder/decoder backbone, optionally with a latent variable.

    ``model_kind`` is ``baseline`` (deterministic copy seq2seq), ``vae``
    (label-free posterior, N(0, 1) prior) or ``dvpg`` (label-conditioned
    posterior and per-label learned prior).
    """

    def __init__(self, config: ModelConfig, model_kind: str = "baseline", sampling_mode: str = AGGREGATED,
                 embedding_provider: Optional[nn.Module] = None):
        super().__init__()
        if model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model_kind!r}")
        if sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {sampling_mode!r}")
        self.config = config
        self.model_kind = model_kind
        self.sampling_mode = sampling_mode
        provider = embedding_provider or LearnedEmbedding(config.vocab_size, config.embedding_dim)
        self.encoder = Encoder(config, provider)
        self.decoder = CopyDecoder(config)
        self.latent = LatentModule(config.hidden_dim, model_kind) if model_kind != "baseline" else None

    @property
    def variational(self) -> bool:
        return self.latent is not None

    def encode(self, batch: Batch) -> EncoderStates:
        return self.encoder(batch.src_ids, batch.src_mask, batch.example_ids)

    def posterior(self, enc: EncoderStates, labels) -> DiagonalGaussian:
        return self.latent.posterior_params(enc.states, enc.mask, labels, self.sampling_mode)

    def latent_shape(self, enc: EncoderStates) -> tuple:
        B, L, H = enc.states.shape
        return (B, H) if self.sampling_mode == AGGREGATED else (B, L, H)

    def prior_sample(self, enc: EncoderStates, labels, rng: Optional[torch.Generator] = None,
                     noise: Optional[Tensor] = None) -> LatentSample:
        """Draw z from p(z|v) (or N(0, 1) for vae) in the model's sampling shape."""
        shape = self.latent_shape(enc)
        like = DiagonalGaussian(torch.zeros(shape), torch.zeros(shape),
                                enc.mask if self.sampling_mode == INDEPENDENT else None, self.sampling_mode)
        prior = self.latent.prior_like(like, labels)
        return sample_z(prior, self.sampling_mode, rng, noise)

    def augment(self, enc: EncoderStates, labels, rng: Optional[torch.Generator] = None,
                latent_source: str = "posterior", noise: Optional[Tensor] = None):
        """Return ``(augmented_states, posterior, sample)`` for the latent path."""
        q = self.posterior(enc, labels)
        if latent_source == "posterior":
            sample = sample_z(q, self.sampling_mode, rng, noise)
        elif latent_source == "prior":
            sample = self.prior_sample(enc, labels, rng, noise)
        else:
            raise ValueError(f"latent source must be posterior or prior, got {latent_source!r}")
        return combine(enc.states, enc.mask, sample), q, sample

    def decode_teacher_forced(self, memory: Tensor, batch: Batch) -> Tensor:
        return self.decoder.teacher_forced(memory, batch.src_mask, batch.copy_map, batch.tgt_in)

    @torch.no_grad()
    def generate(self, batch: Batch, num_samples: int = 1, rng: Optional[torch.Generator] = None,
                 beam_width: Optional[int] = None, max_steps: Optional[int] = None,
                 latent_source: str = "posterior", length_normalize: bool = False,
                 noise: Optional[Tensor] = None) -> list[list[GenerationSet]]:
        """K generations per example: z is redrawn per candidate, beam search per draw.

        Returns ``out[i][k]``, the beam result of draw ``k`` for example ``i``.
        ``noise`` optionally fixes the epsilon draws, shaped like the latent
        sample of the example-major expanded batch (``B * K`` rows). Baseline
        models run beam search once and repeat it.
        """
        beam_width = beam_width or self.config.beam_width
        max_steps = max_steps or self.config.max_decode_steps
        enc = self.encode(batch)
        B = len(batch)
        if not self.variational:
            sets = beam_search(self.decoder, enc.states, enc.mask, batch.copy_map, beam_width, max_steps, length_normalize)
            return [[s] * num_samples for s in sets]
        K = num_samples
        rep = torch.arange(B).repeat_interleave(K)
        enc_k = EncoderStates(enc.states[rep], enc.mask[rep])
        aug, _, _ = self.augment(enc_k, batch.labels[rep], rng, latent_source, noise)
        sets = beam_search(self.decoder, aug, enc_k.mask, batch.copy_map[rep], beam_width, max_steps, length_normalize)
        return [sets[i * K:(i + 1) * K] for i in range(B)]


def save_checkpoint(path, model: ParaphraseModel, experiment: Optional[dict] = None, **extra) -> None:
    """Write parameters (name -> shape + values) and the configs used.

    Layout: ``{"format_version", "model_config", "model_kind",
    "sampling_mode", "parameters": {name: {"shape", "values"}},
    "experiment_config", ...extra}``.
    """
    params = {name: {"shape": list(t.shape), "values": t.detach().clone()}
              for name, t in model.state_dict().items()}
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "model_config": asdict(model.config),
        "model_kind": model.model_kind,
        "sampling_mode": model.sampling_mode,
        "parameters": params,
        "experiment_config": experiment,
    }
    payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, embedding_provider: Optional[nn.Module] = None) -> tuple[ParaphraseModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {payload.get('format_version')!r}")
    model = ParaphraseModel(ModelConfig(**payload["model_config"]), payload["model_kind"],
                            payload["sampling_mode"], embedding_provider)
    state = {}
    for k, v in payload["parameters"].items():
        if list(v["values"].shape) != v["shape"]:
            raise ValueError(f"{path}: parameter {k} shape does not match its record")
        state[k] = v["values"]
    model.load_state_dict(state)
    return model, payload
