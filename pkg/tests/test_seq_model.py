import numpy as np
import pytest
import torch

from dvpg.corpus import BOS_ID, EOS_ID, UNK_ID, EncodedPair
from dvpg.objective import ScheduleState, total_loss
from dvpg.seq_model import (ModelConfig, ParaphraseModel, PrecomputedEmbedding, beam_search, collate, greedy_decode,
                            load_checkpoint, save_checkpoint)
from helpers import TINY, VOCAB, random_batch, random_pairs, tiny_model


def sources(model, batch):
    enc = model.encode(batch)
    return enc, (enc.states, enc.mask, batch.copy_map)


class TestEncoder:
    def test_shapes(self):
        model = tiny_model(hidden_dim=128, projection_dim=16, feedforward_dim=32)
        pair = random_pairs(1, seed=0, max_len=1)[0]
        six = EncodedPair("six", 1, list("abcdef"), ["x"], [4, 5, 6, 7, 8, 9], [4, 5, 6, 7, 8, 9], [BOS_ID, 4, EOS_ID])
        enc = model.encode(collate([six], VOCAB))
        assert enc.rows(0).shape == (6, 128)
        assert model.encode(collate([pair], VOCAB)).rows(0).shape == (1, 128)
        assert torch.equal(model.encode(collate([six], VOCAB)).states, enc.states)

    def test_over_length_source(self):
        model = tiny_model(max_source_length=4)
        batch = random_batch(3, seed=0, max_len=7)
        if batch.src_ids.shape[1] > 4:
            with pytest.raises(ValueError):
                model.encode(batch)

    def test_padding_rows_zero(self):
        model = tiny_model()
        batch = random_batch(6, seed=3)
        enc, _ = sources(model, batch)
        assert enc.states[~enc.mask].abs().sum().item() == 0.0


class TestDecoder:
    @pytest.mark.parametrize("seed", range(5))
    def test_step_distributions_normalized(self, seed):
        model = tiny_model("baseline", seed=seed)
        batch = random_batch(6, seed=seed)
        probs = model.decode_teacher_forced(model.encode(batch).states, batch)
        assert probs.shape == (6, batch.tgt_in.shape[1], VOCAB + batch.src_ids.shape[1])
        assert bool((probs >= 0).all())
        assert torch.allclose(probs.sum(-1), torch.ones(probs.shape[:2]), atol=1e-6)
        # copy slots of padded source positions never receive mass
        pad_slots = ~batch.support
        assert probs.masked_select(pad_slots.unsqueeze(1).expand_as(probs)).abs().sum().item() == 0.0

    def test_one_distribution_per_target_token(self):
        pair = EncodedPair("p", 0, list("abc"), list("wxyz"), [4, 5, 6], [4, 5, 6], [BOS_ID, 7, 8, 9, 10, EOS_ID])
        model = tiny_model()
        batch = collate([pair], VOCAB)
        assert model.decode_teacher_forced(model.encode(batch).states, batch).shape[1] == 5

    def test_oov_copy_target_has_finite_ce(self):
        # source token 1 is OOV (copy id V+1) and appears twice in the target
        pair = EncodedPair("oov", 1, ["how", "zanzibar", "?"], ["zanzibar", "zanzibar", "?"],
                           [5, UNK_ID, 6], [5, VOCAB + 1, 6], [BOS_ID, VOCAB + 1, VOCAB + 1, 6, EOS_ID])
        model = tiny_model()
        batch = collate([pair], VOCAB)
        assert int(batch.tgt_in[0, 1]) == UNK_ID
        probs = model.decode_teacher_forced(model.encode(batch).states, batch)
        assert probs[0, 0, VOCAB + 1].item() > 0
        out = total_loss(model, batch, 2, ScheduleState())
        assert np.isfinite(out.ce.item())

    def test_bad_copy_map(self):
        model = tiny_model()
        batch = random_batch(2, seed=0)
        enc = model.encode(batch)
        with pytest.raises(ValueError):
            beam_search(model.decoder, enc.states, enc.mask, batch.copy_map + 100, 2, 3)


class TestBeamSearch:
    def test_width_one_matches_greedy_on_50_fixtures(self):
        for seed in range(50):
            model = tiny_model("baseline", seed=seed, max_decode_steps=8)
            batch = random_batch(4, seed=100 + seed)
            _, args = sources(model, batch)
            beams = beam_search(model.decoder, *args, beam_width=1, max_steps=8)
            greedy = greedy_decode(model.decoder, *args, max_steps=8)
            assert [b.candidates[0] for b in beams] == greedy

    @pytest.mark.parametrize("width,steps", [(3, 5), (5, 9)])
    def test_generation_set_invariants(self, width, steps):
        model = tiny_model(seed=1)
        batch = random_batch(5, seed=2)
        _, args = sources(model, batch)
        for gs in beam_search(model.decoder, *args, beam_width=width, max_steps=steps):
            assert len(gs.candidates) == width
            assert gs.scores == sorted(gs.scores, reverse=True)
            for cand, done in zip(gs.candidates, gs.finished):
                assert len(cand) <= steps
                assert done or len(cand) == steps
                assert all(t not in (0, BOS_ID, EOS_ID) for t in cand)

    def test_batched_equals_single(self):
        model = tiny_model(seed=4)
        pairs = random_pairs(4, seed=9)
        batch = collate(pairs, VOCAB)
        _, args = sources(model, batch)
        together = beam_search(model.decoder, *args, beam_width=3, max_steps=6)
        for i, p in enumerate(pairs):
            b = collate([p], VOCAB)
            _, a1 = sources(model, b)
            alone = beam_search(model.decoder, *a1, beam_width=3, max_steps=6)[0]
            assert alone.candidates == together[i].candidates
            assert np.allclose(alone.scores, together[i].scores, atol=1e-5)

    def test_invalid_width(self):
        model = tiny_model()
        _, args = sources(model, random_batch(1))
        with pytest.raises(ValueError):
            beam_search(model.decoder, *args, beam_width=0, max_steps=3)


def test_one_pair_overfit_memorizes_paraphrase():
    pair = EncodedPair("one", 1, list("abcd"), list("wxy"), [4, 5, 6, 7], [4, 5, 6, 7], [BOS_ID, 9, 5, 11, EOS_ID])
    model = tiny_model(seed=0)
    model.train()
    batch = collate([pair], VOCAB)
    opt = torch.optim.Adam(model.parameters(), lr=1e-2)
    ces = []
    for _ in range(150):
        opt.zero_grad()
        out = total_loss(model, batch, 2, ScheduleState())
        out.total.backward()
        opt.step()
        ces.append(out.ce.item())
    assert ces[-1] < ces[0] * 0.05
    model.eval()
    _, args = sources(model, batch)
    assert beam_search(model.decoder, *args, beam_width=3, max_steps=6)[0].candidates[0] == [9, 5, 11]


class TestGenerate:
    def test_variational_k_draws(self):
        model = tiny_model("dvpg", seed=2)
        batch = random_batch(3, seed=1)
        out = model.generate(batch, num_samples=4, rng=torch.Generator().manual_seed(0))
        assert len(out) == 3 and all(len(o) == 4 for o in out)

    def test_baseline_repeats_single_result(self):
        model = tiny_model("baseline")
        out = model.generate(random_batch(2, seed=1), num_samples=3)
        assert all(o[0] is o[1] is o[2] for o in out)

    def test_fixed_noise_is_deterministic(self):
        model = tiny_model("dvpg", mode="independent", seed=3)
        batch = random_batch(2, seed=7)
        a = model.generate(batch, 2, rng=torch.Generator().manual_seed(5))
        b = model.generate(batch, 2, rng=torch.Generator().manual_seed(5))
        assert [[s.candidates for s in o] for o in a] == [[s.candidates for s in o] for o in b]

    def test_prior_sample_shapes(self):
        for mode in ("aggregated", "independent"):
            model = tiny_model("dvpg", mode=mode)
            batch = random_batch(3, seed=1)
            enc = model.encode(batch)
            s = model.prior_sample(enc, batch.labels, torch.Generator().manual_seed(0))
            assert s.values.shape == model.latent_shape(enc)
            with pytest.raises(ValueError):
                model.augment(enc, batch.labels, latent_source="decoder")


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model("dvpg", mode="independent", seed=11)
    save_checkpoint(tmp_path / "m.pt", model, {"note": "x"}, epoch=3)
    loaded, payload = load_checkpoint(tmp_path / "m.pt")
    assert payload["epoch"] == 3 and payload["experiment_config"] == {"note": "x"}
    assert loaded.model_kind == "dvpg" and loaded.sampling_mode == "independent"
    for (k, v), (k2, v2) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    torch.save({"format_version": 99}, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.pt")


def test_precomputed_embeddings(tmp_path):
    pairs = random_pairs(3, seed=4)
    rng = np.random.default_rng(0)
    PrecomputedEmbedding.save(tmp_path / "emb.npz", {p.example_id: rng.standard_normal((len(p.original_ids), 10)) for p in pairs})
    provider = PrecomputedEmbedding(tmp_path / "emb.npz")
    assert provider.dim == 10
    torch.manual_seed(0)
    model = ParaphraseModel(ModelConfig(vocab_size=VOCAB, **TINY), "baseline", embedding_provider=provider).eval()
    batch = collate(pairs, VOCAB)
    assert model.encode(batch).states.shape[-1] == TINY["hidden_dim"]
    bad = EncodedPair("nope", 0, ["a"], ["b"], [4], [4], [BOS_ID, 4, EOS_ID])
    with pytest.raises(KeyError):
        model.encode(collate([bad], VOCAB))
    short = EncodedPair(pairs[0].example_id, 0, ["a"] * 9, ["b"], [4] * 9, [4] * 9, [BOS_ID, 4, EOS_ID])
    if len(pairs[0].original_ids) != 9:
        with pytest.raises(ValueError):
            model.encode(collate([short], VOCAB))
