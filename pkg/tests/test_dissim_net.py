import warnings

import numpy as np
import pytest
import torch

from anomseg.dissim_net import AllPixelsIgnoredWarning, DissimNet, NetConfig, ce_loss, samples_to_batch
from anomseg.errors import ConfigError
from anomseg.transforms import normalize
from oracles import block_mean, ce_loss_ref


def _inputs(n=2, h=32, w=32, k=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    sem = torch.randint(0, k, (n, h, w), generator=g)
    onehot = torch.nn.functional.one_hot(sem, k).permute(0, 3, 1, 2).float()
    return (torch.randn(n, 3, h, w, generator=g), torch.randn(n, 3, h, w, generator=g), onehot,
            torch.rand(n, 1, h, w, generator=g))


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return DissimNet(NetConfig(height=32, width=32))


def test_output_shapes(net):
    with torch.no_grad():
        out = net(*_inputs())
    assert out.logits.shape == (2, 1, 32, 32)
    assert out.decoder_features.shape == (2, 16, 32, 32)
    for level, f in enumerate(out.fused, start=1):
        assert f.shape == (2, 16 * 2**level, 32 // 2**level, 32 // 2**level)
    assert out.coarsest_fused is out.fused[-1]
    assert float(out.prob.min()) >= 0 and float(out.prob.max()) <= 1


def test_pyramid_channels():
    cfg = NetConfig()
    assert [cfg.channels(l) for l in (1, 2, 3)] == [32, 64, 128]


def test_shared_image_encoder(net):
    img, _, sem, unc = _inputs()
    f_img, f_rec, _ = net.encode(img, img.clone(), sem)
    for a, b in zip(f_img, f_rec):
        assert torch.equal(a, b)


def test_fuse_bias_starts_at_zero(net):
    fresh = DissimNet(NetConfig(height=32, width=32))
    assert all(not c.bias.detach().any() for c in fresh.fuse)


def test_apply_uncertainty_matches_block_mean():
    r = np.random.default_rng(3)
    u = r.random((16, 16))
    fused = torch.tensor(r.normal(size=(1, 4, 4, 4)))
    out = DissimNet.apply_uncertainty(fused, torch.tensor(u)[None, None])
    ref = fused.numpy() * (1 + block_mean(u, 4))[None, None]
    np.testing.assert_allclose(out.numpy(), ref, rtol=1e-12)


def test_zero_uncertainty_is_identity():
    fused = torch.randn(2, 8, 4, 4)
    assert torch.equal(DissimNet.apply_uncertainty(fused, torch.zeros(2, 16, 16)), fused)


def test_semantic_map_changes_spatial_norm_output():
    torch.manual_seed(1)
    n = DissimNet(NetConfig(height=32, width=32))
    for norm in list(n.dec_norms) + [n.final_norm]:
        torch.nn.init.normal_(norm.gamma.weight)
    img, rec, sem, unc = _inputs()
    with torch.no_grad():
        a = n(img, rec, sem, unc).logits
        b = n(img, rec, sem.flip(1), unc).logits
    assert not torch.allclose(a, b)


def test_plain_norm_mode_runs():
    n = DissimNet(NetConfig(height=32, width=32, norm_mode="plain"))
    with torch.no_grad():
        assert n(*_inputs()).logits.shape == (2, 1, 32, 32)


@pytest.mark.parametrize("kw", [dict(num_levels=1), dict(norm_mode="batch"), dict(height=36), dict(num_classes=1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        NetConfig(**kw)


def test_shape_errors(net):
    img, rec, sem, unc = _inputs()
    with pytest.raises(ValueError):
        net(img[:, :2], rec, sem, unc)
    with pytest.raises(ValueError):
        net(img[..., :24], rec, sem, unc)
    with pytest.raises(ValueError):
        net.fuse_level(torch.zeros(1, 32, 4, 4), torch.zeros(1, 32, 4, 4), torch.zeros(1, 32, 4, 4), 0)
    out = net(img, rec, sem, unc)
    with pytest.raises(ValueError):
        net.decode(out.weighted[:2], sem)


def test_ce_worked_example():
    logits = torch.tensor([[0.0, 2.0], [-1.0, 5.0]])
    gt = torch.tensor([[1, 0], [0, 255]])
    expected = (np.log(2) + np.log1p(np.exp(2)) + np.log1p(np.exp(-1))) / 3
    assert float(ce_loss(logits, gt)) == pytest.approx(expected, rel=1e-6)


def test_ce_matches_oracle(rng):
    for _ in range(30):
        h, w = rng.integers(1, 9, 2)
        x = rng.normal(scale=3, size=(2, h, w))
        y = rng.choice([0, 1, 255], size=(2, h, w))
        if (y != 255).sum() == 0:
            continue
        got = float(ce_loss(torch.tensor(x), torch.tensor(y)))
        assert got == pytest.approx(ce_loss_ref(x, y), rel=1e-12)


def test_ce_all_ignored():
    logits = torch.randn(1, 1, 4, 4, requires_grad=True)
    with pytest.warns(AllPixelsIgnoredWarning):
        loss = ce_loss(logits, torch.full((1, 4, 4), 255))
    assert float(loss.detach()) == 0.0
    loss.backward()
    assert float(logits.grad.abs().sum()) == 0.0


def test_ce_large_logits_finite():
    loss = ce_loss(torch.tensor([1e4, -1e4]), torch.tensor([0, 1]))
    assert torch.isfinite(loss)


def test_samples_to_batch(small_dataset):
    b = samples_to_batch([normalize(s) for s in small_dataset[:3]], 3)
    assert b["image"].shape == (3, 3, 32, 32)
    assert b["semantic"].shape == (3, 3, 32, 32)
    assert torch.equal(b["semantic"].sum(1), torch.ones(3, 32, 32))
    assert b["uncertainty"].shape == (3, 1, 32, 32)
    assert set(torch.unique(b["gt"]).tolist()) <= {0, 1, 255}
    with pytest.raises(ValueError):
        samples_to_batch(small_dataset[:3], 2)


def test_forward_deterministic(net):
    with torch.no_grad():
        a = net(*_inputs(seed=4)).logits
        b = net(*_inputs(seed=4)).logits
    assert torch.equal(a, b)
