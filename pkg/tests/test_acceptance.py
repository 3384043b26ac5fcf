"""Acceptance gate: one test per criterion, printed pass/fail per line.

Criteria 7 and 8 evaluate the session's reduced desk-scale training run (the
``desk_run`` fixture); its iteration counts scale up via SCALIC_* environment
variables for a full desk reproduction.
"""

import os

import numpy as np
import torch

from conftest import tiny_config
from oracles import brute_force_masked_conv, counting_conv, enumerate_vimco_gradient, softmax

from scalic.codec import compress, compress_given_structure, count_stage_invocations, decompress
from scalic.complexity import conv_macs, context_macs, min_max_macs, structure_macs
from scalic.config import EDGES
from scalic.control import ControllerState, budget_table, propose_structure
from scalic.datasets import synthetic_corpus
from scalic.entropy import ConditionalGaussian, gaussian_rate_bits
from scalic.metrics import psnr
from scalic.structure_inter import InterChoice, InterStructureParams, sample_inter
from scalic.structure_intra import (
    TopologyField,
    decode_schedule,
    dynamic_masked_conv,
    random_topology,
    vimco_objective,
)


def ok(criterion: int, message: str) -> None:
    print(f"[criterion {criterion}] PASS — {message}")


class TestCriterion1Causality:
    def test_context_merge_jacobian(self):
        """Perturbation Jacobian nonzero at (u->v) only when T(u) < T(v)."""
        torch.manual_seed(0)
        m, g, h, w = 16, 4, 8, 8
        cond = ConditionalGaussian(m, ((8, 8), (16, 16)), context_kernel=5)
        cond.eval()
        gen = torch.Generator().manual_seed(1)
        checked = 0
        with torch.no_grad():
            for trial in range(2):
                topo = random_topology(g, 4, h, w, rng=gen)
                hyper = torch.randn(1, 2 * m, h, w, generator=gen)
                y = torch.randn(1, m, h, w, generator=gen)
                choice = InterChoice.one_hot("merge", trial % 2, 2)
                base_mean, base_scale = cond(hyper, y, topo, choice)
                for uc in range(m):
                    for uh in range(h):
                        for uw in range(w):
                            bumped = y.clone()
                            bumped[0, uc, uh, uw] += 2.0
                            mean, scale = cond(hyper, bumped, topo, choice)
                            delta = ((mean - base_mean).abs() + (scale - base_scale).abs())[0]
                            t_u = int(topo.field[uc % g, uh, uw])
                            hit = (delta > 1e-6).nonzero()
                            for vc, vh, vw in hit.tolist():
                                t_v = int(topo.field[vc % g, vh, vw])
                                assert t_u < t_v, (
                                    f"leak: u=({uc},{uh},{uw}) T={t_u} -> v=({vc},{vh},{vw}) T={t_v}"
                                )
                                checked += 1
        ok(1, f"causality audit clean over all node pairs ({checked} responding pairs)")


class TestCriterion2MaskedConvOracle:
    def test_fifty_random_triples(self):
        gen = torch.Generator().manual_seed(7)
        worst = 0.0
        for trial in range(50):
            k = int(torch.randint(0, 2, (1,), generator=gen)) * 2 + 3
            g = int(torch.randint(1, 4, (1,), generator=gen))
            c_in = g * int(torch.randint(1, 3, (1,), generator=gen))
            c_out = g * int(torch.randint(1, 3, (1,), generator=gen))
            h = int(torch.randint(3, 7, (1,), generator=gen))
            w = int(torch.randint(3, 7, (1,), generator=gen))
            s = int(torch.randint(1, 8, (1,), generator=gen))
            x = torch.randn(c_in, h, w, generator=gen, dtype=torch.float64)
            weight = torch.randn(c_out, c_in, k, k, generator=gen, dtype=torch.float64) * 0.3
            bias = torch.randn(c_out, generator=gen, dtype=torch.float64)
            field = torch.randint(0, s, (g, h, w), generator=gen)
            got = dynamic_masked_conv(
                x.unsqueeze(0), weight, bias,
                field.unsqueeze(0), field.unsqueeze(0),
            )[0].numpy()
            want = brute_force_masked_conv(
                x.numpy(), weight.numpy(), bias.numpy(), field.numpy(), field.numpy(),
                np.arange(c_in) % g, np.arange(c_out) % g,
            )
            worst = max(worst, float(np.abs(got - want).max()))
        assert worst <= 1e-5
        ok(2, f"50/50 triples match the sequential oracle (max |Δ| = {worst:.2e})")


class TestCriterion3StageCounts:
    def test_checkerboard_and_single(self, desk_run):
        model = desk_run["model"]
        tile_cb = torch.tensor([[0, 1], [1, 0]]).expand(2, 2, 2).clone()
        assert len(decode_schedule(TopologyField.from_tile(tile_cb, 2, 8, 8))) == 2
        assert len(decode_schedule(TopologyField.from_tile(torch.zeros(1, 2, 2).long(), 1, 8, 8))) == 1
        x = synthetic_corpus(seed=11, count=1, size=64)[0]
        cb = model.fixed_structure({e: 0 for e in EDGES}, tile_cb, s_intra=2)
        res = compress_given_structure(x, model, cb.at(4, 4))
        assert count_stage_invocations(res.blob, model) == 2
        assert decompress(res.blob, model).stages_executed == 2
        single = model.fixed_structure({e: 0 for e in EDGES}, torch.zeros(1, 2, 2).long(), s_intra=1)
        res1 = compress_given_structure(x, model, single.at(4, 4))
        assert decompress(res1.blob, model).stages_executed == 1
        ok(3, "checkerboard decodes in 2 stages, single partite in 1")


class TestCriterion4MacFormula:
    def test_formula_vs_counter_and_dense_equivalence(self, np_rng):
        for _ in range(20):
            h, w = int(np_rng.randint(1, 5)), int(np_rng.randint(1, 5))
            c_out, c_in = int(np_rng.randint(1, 5)), int(np_rng.randint(1, 5))
            k = int(np_rng.choice([1, 3, 5]))
            _, multiplies = counting_conv(np_rng.randn(c_in, h, w), np_rng.randn(c_out, c_in, k, k))
            assert conv_macs(h, w, c_out, c_in, k) == multiplies
        # dynamic masked conv costs exactly its dense equivalent
        cfg = tiny_config()
        m, kk = cfg.latent_channels, cfg.context_kernel
        assert context_macs(cfg, 8, 8) == conv_macs(8, 8, 2 * m, m, kk)
        ok(4, "analytic MACs equal the instrumented multiply counter (20 shapes); dynamic == dense")


class TestCriterion5CodecRoundTrip:
    def test_fifty_images_all_levels_both_tasks(self, desk_run):
        model = desk_run["model"]
        images = synthetic_corpus(seed=31, count=50, size=64)
        n_levels = model.config.num_levels
        checked = 0
        worst_rel = 0.0
        for i, x in enumerate(images):
            for task in (0, 1):
                for level in range(n_levels):
                    res = compress(x, model, ControllerState(
                        budget_index=level, task_index=task, quality_index=3))
                    rec = decompress(res.blob, model)
                    assert torch.equal(res.latents.y_hat, rec.latents.y_hat), (
                        f"latent mismatch: image {i}, level {level}, task {task}")
                    assert torch.equal(res.latents.z_hat, rec.latents.z_hat)
                    gap = abs(res.estimated_bits - res.payload_bits)
                    assert gap <= 0.05 * res.payload_bits + 64, (
                        f"rate estimate off: {res.estimated_bits:.0f} vs {res.payload_bits}")
                    worst_rel = max(worst_rel, gap / res.payload_bits)
                    checked += 1
        ok(5, f"{checked} round trips bit-exact; worst rate-estimate gap {worst_rel:.1%}")


class TestCriterion6Estimators:
    def test_gumbel_marginals(self):
        logits = torch.tensor([1.0, 2.0, 3.0])
        params = InterStructureParams(logits={"e": logits}, temperature=1.0)
        gen = torch.Generator().manual_seed(2)
        counts = np.zeros(3)
        n = 10_000
        for _ in range(n):
            counts[sample_inter(params, "e", rng=gen).index] += 1
        expected = softmax(logits.numpy())
        err = np.abs(counts / n - expected).max()
        assert err < 0.02
        ok(6, f"Gumbel-softmax marginals within {err:.3f} of softmax at 1e4 samples")

    def test_vimco_against_enumeration(self):
        logits_np = np.array([0.3, -0.2, 0.5])
        log_liks_np = np.array([0.2, 1.1, -0.7])
        m = 2
        exact = enumerate_vimco_gradient(logits_np, log_liks_np, m)
        logits = torch.tensor(logits_np, dtype=torch.float64, requires_grad=True)
        gen = torch.Generator().manual_seed(5)
        draws = 50_000
        grad_acc = torch.zeros(3, dtype=torch.float64)
        done = 0
        while done < draws:
            n = min(2500, draws - done)
            logp = torch.log_softmax(logits, -1)
            rows = torch.multinomial(logp.detach().exp().repeat(n, 1), m, replacement=True, generator=gen)
            total = torch.zeros((), dtype=torch.float64)
            for row in rows:
                ell = torch.tensor(log_liks_np[row.numpy()], dtype=torch.float64)
                surrogate, _, _ = vimco_objective(ell, logp[row])
                total = total + surrogate
            grad_acc += torch.autograd.grad(total, logits)[0]
            done += n
        est = -(grad_acc / draws).numpy()
        rel = np.abs(est - exact).max() / np.abs(exact).max()
        assert rel < 0.05, f"relative error {rel:.3f}"
        ok(6, f"VIMCO estimator within {rel:.1%} of the enumerated exact gradient")


class TestCriterion7ComplexityScaling:
    def test_stored_levels_and_budgets(self, desk_run):
        model = desk_run["model"]
        c_min, c_max = min_max_macs(model, 64, 64)

        def level_macs(level):
            idx = {e: int(model.stored_inter[level, i]) for i, e in enumerate(EDGES)}
            return structure_macs(model, idx, 64, 64)

        lc = [(level_macs(l) - c_min) / (c_max - c_min) for l in range(8)]
        assert level_macs(0) > level_macs(7)
        assert lc[0] >= 0.95, f"L_C(L0) = {lc[0]:.3f}"
        assert lc[7] <= 0.05, f"L_C(L7) = {lc[7]:.3f}"
        table = budget_table(model, 64, 64)
        gen = torch.Generator().manual_seed(3)
        x = synthetic_corpus(seed=13, count=1, size=64)[0].unsqueeze(0)
        total, satisfied = 0, 0
        for level in range(8):
            for _ in range(15):
                s = propose_structure(
                    model, ControllerState(budget_index=level, data_adaptive=True), x, 4, 4, rng=gen
                )
                total += 1
                satisfied += structure_macs(model, s.inter_indices, 64, 64) <= float(table[level]) + 1e-6
        assert satisfied == total
        ok(7, f"C(L0)>C(L7); L_C endpoints ({lc[0]:.2f}, {lc[7]:.2f}); {satisfied}/{total} budget-sound")


class TestCriterion8Trends:
    def test_context_variant_ordering(self, desk_run):
        bpp = desk_run["harness"]
        assert bpp["baseline"] > bpp["learned-2"], (
            f"no-context {bpp['baseline']:.4f} must exceed learned-2 {bpp['learned-2']:.4f}")
        assert bpp["learned-4"] <= bpp["learned-2"] * 1.01, (
            f"learned-4 {bpp['learned-4']:.4f} vs learned-2 {bpp['learned-2']:.4f}")
        assert bpp["learned-10"] <= bpp["learned-4"] * 1.01, (
            f"learned-10 {bpp['learned-10']:.4f} vs learned-4 {bpp['learned-4']:.4f}")
        ok(8, "BPP ordering: baseline > learned-2 >= learned-4 >= learned-10 (1% slack)")

    def test_level_extremes_match_at_quality(self, desk_run):
        model = desk_run["model"]
        images = synthetic_corpus(seed=99, count=12, size=64)
        stats = {}
        for level in (0, 7):
            bpps, psnrs = [], []
            for x in images:
                res = compress(x, model, ControllerState(budget_index=level, quality_index=3))
                rec = decompress(res.blob, model)
                bpps.append(res.payload_bits / (64 * 64))
                psnrs.append(psnr(x, rec.image))
            stats[level] = (float(np.mean(bpps)), float(np.mean(psnrs)))
        # quality is matched when the reduced level sits within 0.1 dB of the
        # full level or above it; only then is the rate comparison meaningful
        quality_deficit = stats[0][1] - stats[7][1]
        ratio = stats[7][0] / stats[0][0]
        assert quality_deficit <= 0.1, (
            f"level-7 quality trails level-0 by {quality_deficit:.3f} dB (not matched)")
        assert ratio <= 1.10, f"level-7 bpp is {ratio:.3f}x level-0"
        ok(8, f"levels matched (deficit {quality_deficit:+.3f} dB); bpp(L7)/bpp(L0) = {ratio:.3f}")


class TestCriterion9GradientSanity:
    def test_rate_gradient_finite_differences(self):
        gen = torch.Generator().manual_seed(17)
        n = 100
        v = torch.randint(-6, 7, (n,), generator=gen).double()
        mean = torch.randn(n, generator=gen, dtype=torch.float64).requires_grad_(True)
        scale = 0.11 + torch.rand(n, generator=gen, dtype=torch.float64) * 2
        gaussian_rate_bits(v, mean, scale).backward()
        worst = 0.0
        h = 1e-5
        for i in range(n):
            mp, mm = mean.detach().clone(), mean.detach().clone()
            mp[i] += h
            mm[i] -= h
            fd = (float(gaussian_rate_bits(v, mp, scale)) - float(gaussian_rate_bits(v, mm, scale))) / (2 * h)
            rel = abs(float(mean.grad[i]) - fd) / max(abs(fd), 1e-4)
            worst = max(worst, rel)
        assert worst < 1e-3
        ok(9, f"analytic rate gradient matches central differences (worst rel {worst:.1e})")
