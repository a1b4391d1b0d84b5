import json
from pathlib import Path

import pytest
import torch

from frontalize.networks import (
    ConvIdentityExtractor,
    Generator,
    GlobalDiscriminator,
    LocalDiscriminator,
    ShapeError,
    architecture_id,
    build_model,
    count_parameters,
)
from frontalize.verify import network_gradient_errors, tiny_networks

GOLDEN = json.loads((Path(__file__).parent / "golden" / "param_counts.json").read_text())


def small_gen(seed=0):
    return Generator(32, base=4, n_res=1, seed=seed)


def test_generator_shape_and_range():
    g = small_gen()
    x = torch.rand(3, 3, 32, 32) * 2 - 1
    y = g(x)
    assert y.shape == x.shape
    assert y.min() >= -1 and y.max() <= 1


def test_generator_range_on_large_inputs():
    g = small_gen()
    y = g(torch.randn(2, 3, 32, 32) * 50)
    assert y.abs().max() <= 1


def test_generator_128_shape():
    g = Generator(128, base=8, n_res=1)
    assert g(torch.zeros(1, 3, 128, 128)).shape == (1, 3, 128, 128)
    assert len(g.downs) == 4


def test_generator_rejects_wrong_size():
    with pytest.raises(ShapeError):
        small_gen()(torch.zeros(1, 3, 64, 64))
    with pytest.raises(ShapeError):
        Generator(100)


def test_generator_deterministic_inference():
    g = small_gen().eval()
    x = torch.randn(2, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(g(x), g(x))


def test_generator_differentiable_wrt_input():
    x = torch.randn(1, 3, 32, 32, requires_grad=True)
    small_gen()(x).sum().backward()
    assert x.grad is not None and x.grad.abs().sum() > 0


def test_global_disc_range_and_bias_monotonicity():
    d = GlobalDiscriminator(base=4, stages=3)
    x = torch.randn(2, 3, 32, 32)
    prev = None
    with torch.no_grad():
        for b in (-3.0, -1.0, 0.0, 1.0, 3.0):
            d.fc.bias.fill_(b)
            p = d(x)
            assert torch.all((p > 0) & (p < 1))
            if prev is not None:
                assert torch.all(p > prev)
            prev = p


def test_global_disc_batch_consistency():
    d = GlobalDiscriminator(base=4, stages=3)
    x = torch.randn(4, 3, 32, 32)
    with torch.no_grad():
        batched = d(x)
        single = torch.cat([d(x[i : i + 1]) for i in range(4)])
    assert (batched - single).abs().max() < 1e-6


def test_local_disc_range_sensitivity_and_asymmetry():
    d = LocalDiscriminator(base=4, fuse_ch=8, seed=1)
    torch.manual_seed(0)
    hair, skin, face = (torch.rand(2, 3, 32, 32) * 2 - 1 for _ in range(3))
    with torch.no_grad():
        p = d(hair, skin, face)
        assert torch.all((p > 0) & (p < 1))
        assert (d(torch.zeros_like(hair), skin, face) - p).abs().max() > 0
        assert (d(skin, face, hair) - p).abs().max() > 0


def test_local_disc_gradient_reaches_every_view():
    d = LocalDiscriminator(base=4, fuse_ch=8)
    views = [torch.randn(1, 3, 32, 32, requires_grad=True) for _ in range(3)]
    d(*views).sum().backward()
    assert all(v.grad.abs().sum() > 0 for v in views)


def test_local_disc_subnets_unshared():
    d = LocalDiscriminator(base=4, fuse_ch=8)
    ptrs = [{p.data_ptr() for p in d.subnets[r].parameters()} for r in d.REGIONS]
    assert not (ptrs[0] & ptrs[1]) and not (ptrs[1] & ptrs[2])


def test_local_disc_shape_mismatch():
    d = LocalDiscriminator(base=4, fuse_ch=8)
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 16, 16))


def test_no_running_statistics():
    for m in (Generator(32, base=4), GlobalDiscriminator(base=4), LocalDiscriminator(base=4)):
        assert not any("running" in name for name, _ in m.named_buffers())


@pytest.mark.parametrize("cls", [Generator, GlobalDiscriminator, LocalDiscriminator, ConvIdentityExtractor])
def test_init_determinism(cls):
    a, b, c = cls(seed=5), cls(seed=5), cls(seed=6)
    for pa, pb, pc in zip(a.parameters(), b.parameters(), c.parameters()):
        assert torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_parameter_counts_match_golden():
    counts = {
        "Generator(size=128)": count_parameters(Generator(128)),
        "Generator(size=256)": count_parameters(Generator(256)),
        "GlobalDiscriminator()": count_parameters(GlobalDiscriminator()),
        "LocalDiscriminator()": count_parameters(LocalDiscriminator()),
        "ConvIdentityExtractor()": count_parameters(ConvIdentityExtractor()),
    }
    assert counts == GOLDEN


def test_extractor_frozen_and_stays_in_eval():
    ext = ConvIdentityExtractor(seed=0)
    assert not any(p.requires_grad for p in ext.parameters())
    ext.train()
    assert not ext.training
    phi_f, phi_p = ext.features(torch.zeros(2, 3, 32, 32))
    assert phi_f.shape == (2, ext.embedding_dim) and phi_p.dim() == 4
    assert ext.embedding_dim == 128


def test_build_model_and_architecture_id():
    g = build_model("Generator", {"size": 32, "base": 4, "n_res": 1, "max_ch": 256, "seed": 2})
    assert architecture_id({"g": g}) == architecture_id({"g": Generator(32, base=4, n_res=1, seed=9)})
    assert architecture_id({"g": g}) != architecture_id({"g": Generator(32, base=8, n_res=1)})
    with pytest.raises(ValueError):
        build_model("Nope", {})


def test_tiny_networks_are_small():
    assert all(count_parameters(n) <= 50_000 for n in tiny_networks().values())


def test_network_backward_matches_finite_differences():
    errors = network_gradient_errors(seed=3, n_coords=8)
    for name, (worst, checked, sampled) in errors.items():
        assert worst < 1e-3, name
        assert checked >= sampled // 2, name
