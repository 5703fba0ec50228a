import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dvpg.objective import (ScheduleState, anneal_coefficient, combine_losses, cross_entropy, gaussian_kl, kl_for_loss,
                            kl_loss_1, kl_loss_2, kl_loss_3, kl_standard, total_loss)
from dvpg.variational import DiagonalGaussian, sample_z
from dvpg.seq_model import collate
from helpers import random_batch, random_pairs, tiny_model
from oracles import central_difference, mc_kl, random_gaussian_pair


def gauss(mean, logvar, **kw):
    return DiagonalGaussian(torch.as_tensor(mean, dtype=torch.float64), torch.as_tensor(logvar, dtype=torch.float64), **kw)


def random_q(seed, shape=(8,)):
    g = torch.Generator().manual_seed(seed)
    return DiagonalGaussian(torch.randn(shape, generator=g, dtype=torch.float64),
                            torch.randn(shape, generator=g, dtype=torch.float64))


class TestClosedForms:
    def test_kl_examples(self):
        assert float(gaussian_kl(gauss([0.0], [0.0]), gauss([0.0], [0.0]))) == 0.0
        assert float(gaussian_kl(gauss([2.0], [0.0]), gauss([0.0], [0.0]))) == pytest.approx(2.0)
        # sigma = e  ->  logvar = 2
        assert float(kl_standard(gauss([0.0], [2.0]))) == pytest.approx((math.e ** 2 - 1) / 2 - 1)
        assert float(kl_loss_1(gauss([2.0], [0.0]))) == pytest.approx(4.0)
        assert float(kl_loss_3(gauss([1.0], [0.0]), gauss([0.0], [0.0]))) == pytest.approx(1.0)
        q = random_q(3)
        assert float(kl_loss_2(q, q)) == 0.0
        assert float(kl_loss_3(gauss([0.0], [0.0]), gauss([0.0], [0.0]))) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_kl(gauss([0.0, 1.0], [0.0, 0.0]), gauss([0.0], [0.0]))

    def test_masked_rows_excluded(self):
        mean = torch.randn(2, 3, 4, dtype=torch.float64)
        logvar = torch.randn(2, 3, 4, dtype=torch.float64)
        mask = torch.tensor([[True, True, False], [True, False, False]])
        q = DiagonalGaussian(mean, logvar, mask)
        expected = kl_standard(DiagonalGaussian(mean[0, :2], logvar[0, :2])) + kl_standard(DiagonalGaussian(mean[1, :1], logvar[1, :1]))
        assert float(kl_standard(q)) == pytest.approx(float(expected))

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(1234)
        for i in range(5):
            mq, lq, mp, lp = random_gaussian_pair(rng)
            kl = float(gaussian_kl(gauss(mq, lq), gauss(mp, lp)))
            assert abs(kl - mc_kl(mq, lq, mp, lp, seed=i)) < 0.02

    def test_kl_for_loss_dispatch(self):
        q, p = random_q(0), random_q(1)
        assert torch.equal(kl_for_loss(1, q, p), kl_loss_1(q))
        assert torch.equal(kl_for_loss(2, q, p), kl_loss_2(q, p))
        assert torch.equal(kl_for_loss(3, q, p), kl_loss_3(q, p))
        with pytest.raises(ValueError):
            kl_for_loss(4, q, p)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(1,), (8,), (3, 5)]))
def test_loss_identities(seed, shape):
    q, p = random_q(seed, shape), random_q(seed + 1, shape)
    assert torch.equal(kl_loss_1(q), 2 * kl_standard(q))
    assert torch.equal(kl_loss_3(q, p), kl_loss_2(q, p) + kl_standard(q) + kl_standard(p))
    assert torch.equal(kl_loss_2(q, DiagonalGaussian.standard_like(q)), kl_standard(q))
    assert float(kl_loss_2(q, p)) >= 0 and float(kl_loss_1(q)) >= 0 and float(kl_loss_3(q, p)) >= 0


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.mark.parametrize("seed", range(10))
def test_kl_and_reparameterization_gradients(seed):
    rng = np.random.default_rng(seed)
    mq, lq, mp, lp = random_gaussian_pair(rng, dim=5)
    eps = rng.standard_normal(5)
    w = rng.standard_normal(5)

    def kl_np(m, lv):
        return float(gaussian_kl(gauss(m, lv), gauss(mp, lp)))

    def path_np(m, lv):
        z = sample_z(gauss(m, lv), "aggregated", noise=torch.tensor(eps)).values
        return float((torch.tensor(w) * z ** 2).sum())

    for fn in (kl_np, path_np):
        m = torch.tensor(mq, requires_grad=True)
        lv = torch.tensor(lq, requires_grad=True)
        if fn is kl_np:
            out = gaussian_kl(DiagonalGaussian(m, lv), gauss(mp, lp))
        else:
            out = (torch.tensor(w) * sample_z(DiagonalGaussian(m, lv), "aggregated", noise=torch.tensor(eps)).values ** 2).sum()
        gm, glv = torch.autograd.grad(out, [m, lv])
        assert _rel_err(gm.numpy(), central_difference(lambda x: fn(x, lq), mq)) < 1e-3
        assert _rel_err(glv.numpy(), central_difference(lambda x: fn(mq, x), lq)) < 1e-3


class TestCrossEntropy:
    def test_certain_distribution_is_zero(self):
        probs = torch.eye(5)[[1, 3, 2]]
        assert float(cross_entropy(probs, torch.tensor([1, 3, 2]))) == 0.0

    def test_uniform(self):
        V, L = 7, 4
        probs = torch.full((L, V), 1.0 / V, dtype=torch.float64)
        assert float(cross_entropy(probs, torch.tensor([0, 1, 2, 3]))) == pytest.approx(L * math.log(V))

    def test_hand_fixture(self):
        probs = torch.tensor([[0.5, 0.5, 0.0], [0.25, 0.0, 0.75]], dtype=torch.float64)
        assert float(cross_entropy(probs, torch.tensor([0, 0]))) == pytest.approx(-math.log(0.5) - math.log(0.25))

    def test_mask_and_normalization(self):
        probs = torch.full((2, 3, 4), 0.25, dtype=torch.float64)
        gold = torch.zeros(2, 3, dtype=torch.long)
        mask = torch.tensor([[True, True, False], [True, False, False]])
        assert float(cross_entropy(probs, gold, mask)) == pytest.approx(3 * math.log(4))
        assert float(cross_entropy(probs, gold, mask, length_normalize=True)) == pytest.approx(2 * math.log(4))

    def test_bad_gold_ids(self):
        probs = torch.full((2, 4), 0.25)
        with pytest.raises(ValueError):
            cross_entropy(probs, torch.tensor([0, 4]))
        support = torch.tensor([True, True, True, False])
        with pytest.raises(ValueError):
            cross_entropy(probs, torch.tensor([0, 3]), support=support)


class TestSchedule:
    def test_examples(self):
        assert anneal_coefficient(ScheduleState(0, 0, 100, "anneal-only")) == 0.0
        assert anneal_coefficient(ScheduleState(150, 0, 100, "anneal-only")) == 1.0
        s = ScheduleState(11999, 12000, 2000, "two-step")
        assert anneal_coefficient(s) == 0.0 and not s.latent_enabled
        assert ScheduleState(12000, 12000, 0, "two-step").latent_enabled
        assert anneal_coefficient(ScheduleState(12000, 12000, 0, "two-step")) == 1.0
        # anneal-only ignores the boundary
        assert ScheduleState(5, 12000, 10, "anneal-only").latent_enabled

    def test_invalid(self):
        with pytest.raises(ValueError):
            ScheduleState(0, 0, 0, "cyclic")
        with pytest.raises(ValueError):
            ScheduleState(0, -1, 0, "two-step")

    @given(st.integers(0, 500), st.integers(0, 200), st.sampled_from(["anneal-only", "two-step"]))
    def test_monotone_bounded_reaches_one(self, boundary, length, kind):
        vals = [anneal_coefficient(ScheduleState(t, boundary, length, kind)) for t in range(0, boundary + length + 3)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 1.0
        if kind == "two-step":
            assert all(v == 0.0 for v in vals[:boundary])


class TestTotalLoss:
    def test_baseline_kl_zero_and_repeatable(self):
        model = tiny_model("baseline")
        batch = random_batch(4, seed=1)
        a = total_loss(model, batch, 2, ScheduleState())
        b = total_loss(model, batch, 2, ScheduleState())
        assert float(a.kl) == 0.0 and torch.equal(a.total, a.ce) and torch.equal(a.ce, b.ce)

    def test_ce_phase_bypasses_latent(self):
        model = tiny_model("dvpg")
        batch = random_batch(4, seed=1)
        sched = ScheduleState(3, 10, 5, "two-step")
        out = total_loss(model, batch, 2, sched, torch.Generator().manual_seed(0))
        assert out.kl is None and out.coefficient == 0.0 and torch.equal(out.total, out.ce)
        plain = total_loss(tiny_model("baseline"), batch, 2, ScheduleState())
        assert out.ce.item() > 0 and plain.ce.item() > 0

    @pytest.mark.parametrize("kind,loss", [("dvpg", 1), ("dvpg", 2), ("dvpg", 3), ("vae", 2), ("vae", 3)])
    def test_breakdown_identity(self, kind, loss):
        model = tiny_model(kind)
        batch = random_batch(5, seed=2)
        out = total_loss(model, batch, loss, ScheduleState(7, 0, 10, "anneal-only"), torch.Generator().manual_seed(0))
        assert out.coefficient == pytest.approx(0.7)
        assert out.total.item() == pytest.approx((out.ce + out.coefficient * out.kl).item(), rel=1e-6)
        assert out.ce.item() >= 0 and out.kl.item() >= 0
        zero = total_loss(model, batch, loss, ScheduleState(0, 0, 10, "anneal-only"), torch.Generator().manual_seed(0))
        assert torch.equal(zero.total, zero.ce)

    def test_vae_prior_is_standard_for_loss_2_and_3(self):
        model = tiny_model("vae")
        batch = random_batch(3, seed=4)
        enc = model.encode(batch)
        q = model.posterior(enc, batch.labels)
        prior = model.latent.prior_like(q, batch.labels)
        assert torch.equal(prior.mean, torch.zeros_like(q.mean)) and torch.equal(prior.logvar, torch.zeros_like(q.logvar))
        assert torch.equal(kl_loss_2(q, prior), kl_standard(q))

    def test_label1_step_leaves_label0_prior(self):
        model = tiny_model("dvpg")
        model.train()
        pairs = [p for p in random_pairs(20, seed=5) if p.label == 1][:4]
        batch = collate(pairs, model.config.vocab_size)
        before0 = [t.detach().clone() for t in (model.latent.prior_mean[0], model.latent.prior_logvar[0])]
        before1 = model.latent.prior_mean[1].detach().clone()
        opt = torch.optim.SGD(model.parameters(), lr=0.5)
        out = total_loss(model, batch, 2, ScheduleState(0, 0, 0, "anneal-only"), torch.Generator().manual_seed(0))
        out.total.backward()
        opt.step()
        assert torch.equal(model.latent.prior_mean[0], before0[0]) and torch.equal(model.latent.prior_logvar[0], before0[1])
        assert not torch.equal(model.latent.prior_mean[1], before1)

    def test_non_finite_loss_raises(self):
        with pytest.raises(FloatingPointError):
            combine_losses(torch.tensor(float("nan")), None, 0.0)
