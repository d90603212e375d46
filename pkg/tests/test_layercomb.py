import numpy as np
import pytest
import torch

from vocoder_ood.layercomb import CombinerSpec, LayerCombiner, combine


def test_single_is_identity_selection():
    stack = torch.zeros(3, 4, 5)
    stack[0] = 1.0
    out = combine(stack, LayerCombiner(CombinerSpec("single", 0), 3))
    assert torch.equal(out, torch.ones(4, 5))


def test_weighted_prefix_convex():
    stack = torch.stack([torch.zeros(4, 5), torch.full((4, 5), 2.0), torch.full((4, 5), 100.0)])
    comb = LayerCombiner(CombinerSpec("weighted_prefix", 2), 3)
    torch.testing.assert_close(comb.weights(), torch.tensor([0.5, 0.5]))
    torch.testing.assert_close(combine(stack, comb), torch.ones(4, 5))


@pytest.mark.parametrize("seed", range(5))
def test_one_hot_weighted_all_equals_single(seed):
    rng = np.random.default_rng(seed)
    stack = torch.as_tensor(rng.standard_normal((4, 6, 3)))
    j = int(rng.integers(4))
    comb = LayerCombiner(CombinerSpec("weighted_all"), 4).double()
    with torch.no_grad():
        comb.logits.fill_(-1e4)
        comb.logits[j] = 0.0
    single = LayerCombiner(CombinerSpec("single", j), 4)
    torch.testing.assert_close(combine(stack, comb), combine(stack, single), rtol=0, atol=1e-12)


def test_parameter_views():
    assert LayerCombiner(CombinerSpec("single", 6), 24).parameters_view() == []
    (p,) = LayerCombiner(CombinerSpec("weighted_prefix", 18), 24).parameters_view()
    assert p.numel() == 18


def test_index_validation():
    with pytest.raises(IndexError):
        LayerCombiner(CombinerSpec("single", 3), 3)
    with pytest.raises(IndexError):
        LayerCombiner(CombinerSpec("weighted_prefix", 0), 3)
    with pytest.raises(IndexError):
        LayerCombiner(CombinerSpec("weighted_prefix", 4), 3)
    with pytest.raises(ValueError):
        CombinerSpec("median")
    with pytest.raises(IndexError):
        LayerCombiner(CombinerSpec("single", 0), 3)(torch.zeros(2, 4, 5))


def test_step_on_layer_increases_its_weight():
    comb = LayerCombiner(CombinerSpec("weighted_prefix", 18), 24).double()
    before = comb.weights().detach().clone()
    # finite-difference oracle on the normalisation: d w5 / d logit5 > 0
    eps = 1e-6
    with torch.no_grad():
        comb.logits[5] += eps
        plus = comb.weights()[5].item()
        comb.logits[5] -= 2 * eps
        minus = comb.weights()[5].item()
        comb.logits[5] += eps
    assert (plus - minus) / (2 * eps) > 0
    opt = torch.optim.SGD(comb.parameters(), lr=0.5)
    (-comb.logits[5]).backward()  # gradient step raises logit 5
    opt.step()
    after = comb.weights().detach()
    assert after[5] > before[5]
    assert after.sum().item() == pytest.approx(1.0, abs=1e-6)


def test_weights_stay_on_simplex_after_steps():
    torch.manual_seed(0)
    comb = LayerCombiner(CombinerSpec("weighted_all"), 5).double()
    opt = torch.optim.Adam(comb.parameters(), lr=0.3)
    stack = torch.randn(5, 4, 3, dtype=torch.float64)
    target = torch.randn(4, 3, dtype=torch.float64)
    for _ in range(50):
        opt.zero_grad()
        ((comb(stack) - target) ** 2).mean().backward()
        opt.step()
        w = comb.weights()
        assert torch.all(w > 0)
        assert w.sum().item() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("mode", ["single", "weighted_prefix", "weighted_all"])
def test_linearity(mode):
    g = torch.Generator().manual_seed(1)
    comb = LayerCombiner(CombinerSpec(mode, 2), 4).double()
    if comb.logits is not None:
        with torch.no_grad():
            comb.logits.copy_(torch.randn(comb.logits.shape, generator=g, dtype=torch.float64))
    s1, s2 = (torch.randn(4, 5, 3, generator=g, dtype=torch.float64) for _ in range(2))
    a, b = 1.7, -0.3
    torch.testing.assert_close(comb(a * s1 + b * s2), a * comb(s1) + b * comb(s2), rtol=1e-6, atol=1e-12)


def test_batched_stacks():
    comb = LayerCombiner(CombinerSpec("weighted_all"), 3)
    out = comb(torch.ones(7, 3, 4, 5))
    assert out.shape == (7, 4, 5)
