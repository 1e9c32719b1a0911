import math

import numpy as np
import pytest
import torch

from vtlkws.features import NormStats
from vtlkws.model import (BCResBlock, ModelConfig, bc_residual_block, build_model, count_parameters, forward,
                          load_checkpoint, logits, save_checkpoint, smoothed_cross_entropy, zero_parameters_)


def _tc_params(d, c, k0=9, k=3, n_classes=35):
    """Closed-form parameter count of the TC-ResNet8 layout."""
    total = d * c[0] * k0
    for cin, cout in zip(c[:-1], c[1:]):
        total += cin * cout * k + 2 * cout + cout * cout * k + 2 * cout + cin * cout + 2 * cout
    return total + c[-1] * n_classes + n_classes


def test_tc_resnet8_output_and_parameter_count():
    torch.manual_seed(42)
    m = build_model(ModelConfig())
    assert m(torch.randn(3, 98, 40)).shape == (3, 35)
    assert count_parameters(m) == _tc_params(40, (16, 24, 32, 48)) == 30563
    torch.manual_seed(0)
    assert count_parameters(build_model(ModelConfig())) == 30563


def test_concat_model_parameter_count():
    assert count_parameters(build_model(ModelConfig(input_dim=840))) == _tc_params(840, (16, 24, 32, 48)) == 145763


def test_doubling_frames_keeps_output_shape():
    m = build_model(ModelConfig()).eval()
    assert m(torch.randn(1, 196, 40)).shape == (1, 35)
    assert m(torch.randn(1, 5, 40)).shape == (1, 35)


def test_shape_mismatch_rejected():
    m = build_model(ModelConfig())
    with pytest.raises(ValueError):
        m(torch.randn(1, 98, 39))


def test_forward_is_probability_vector():
    torch.manual_seed(1)
    m = build_model(ModelConfig())
    p = forward(m, np.random.default_rng(0).normal(size=(98, 40)))
    assert p.shape == (35,)
    assert abs(p.sum() - 1.0) < 1e-6
    assert np.all((p >= 0) & (p <= 1))


@pytest.mark.parametrize("arch,channels", [("tc_resnet8", (16, 24, 32, 48)), ("bc_block_net", (8, 12))])
def test_zero_parameters_uniform(arch, channels):
    m = zero_parameters_(build_model(ModelConfig(architecture=arch, channels=channels)))
    p = forward(m, np.random.default_rng(0).normal(size=(98, 40)))
    np.testing.assert_allclose(p, 1 / 35, atol=1e-12)


def test_forward_deterministic():
    torch.manual_seed(42)
    a = build_model(ModelConfig())
    torch.manual_seed(42)
    b = build_model(ModelConfig())
    x = np.random.default_rng(0).normal(size=(98, 40))
    assert forward(a, x).tobytes() == forward(a, x).tobytes() == forward(b, x).tobytes()


def test_batch_invariance():
    torch.manual_seed(3)
    m = build_model(ModelConfig())
    x = np.random.default_rng(1).normal(size=(6, 98, 40))
    batched = forward(m, x)
    for i in range(6):
        np.testing.assert_allclose(forward(m, x[i]), batched[i], atol=1e-6)


def test_bc_block_zero_branch_identity():
    block = BCResBlock(8).zero_branch_()
    x = torch.randn(8, 40, 98)
    for mode in (block.train, block.eval):
        mode()
        assert torch.equal(block(x), x)


def test_bc_block_shape():
    block = BCResBlock(8)
    assert block(torch.randn(8, 40, 98)).shape == (8, 40, 98)
    assert block(torch.randn(2, 8, 40, 98)).shape == (2, 8, 40, 98)


@pytest.mark.parametrize("train_mode", [False, True])
def test_bc_block_frequency_constant_input(train_mode):
    torch.manual_seed(0)
    block = BCResBlock(8)
    block.train(train_mode)
    base = torch.randn(2, 8, 1, 98)
    full = block(base.expand(2, 8, 40, 98).contiguous())
    ref = block(base)
    torch.testing.assert_close(full, ref.expand_as(full), atol=1e-6, rtol=1e-6)


def test_bc_residual_block_functional():
    x = torch.randn(4, 10, 20)
    y = bc_residual_block(x, lambda z: 2 * z, lambda z: z + 1)
    expected = x + 2 * (x + 1).mean(dim=1, keepdim=True)
    torch.testing.assert_close(y, expected)
    with pytest.raises(ValueError):
        bc_residual_block(x, lambda z: z[:, :1, :, :3], lambda z: z)


def test_bc_block_net_runs():
    m = build_model(ModelConfig(architecture="bc_block_net", channels=(8, 12)))
    assert m(torch.randn(2, 98, 40)).shape == (2, 35)


def test_loss_uniform_logits():
    z = torch.zeros(4, 35)
    y = torch.tensor([0, 3, 7, 34])
    for s in (0.0, 0.1, 0.5):
        assert float(smoothed_cross_entropy(z, y, s)) == pytest.approx(math.log(35), abs=1e-6)


def test_loss_huge_matching_logit_no_smoothing():
    z = torch.zeros(1, 35, dtype=torch.float64)
    z[0, 4] = 1e3
    assert float(smoothed_cross_entropy(z, torch.tensor([4]), 0.0)) < 1e-12


def test_loss_lower_bound_with_smoothing():
    k, s = 35, 0.1
    q = np.full(k, s / k)
    q[2] += 1 - s
    entropy = -np.sum(q * np.log(q))  # 0.6613201845 for K=35, s=0.1
    assert entropy == pytest.approx(0.6613201845021326, abs=1e-12)
    z = torch.tensor(np.log(q))[None]
    assert float(smoothed_cross_entropy(z, torch.tensor([2]), s)) == pytest.approx(entropy, abs=1e-10)
    other = torch.tensor(np.log(q) + np.random.default_rng(0).normal(0, 0.5, k))[None]
    assert float(smoothed_cross_entropy(other, torch.tensor([2]), s)) > entropy


def test_loss_matches_torch_reference():
    z = torch.randn(8, 35, dtype=torch.float64)
    y = torch.randint(0, 35, (8,))
    ref = torch.nn.functional.cross_entropy(z, y, label_smoothing=0.1)
    assert float(smoothed_cross_entropy(z, y, 0.1)) == pytest.approx(float(ref), abs=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(5)
    cfg = ModelConfig()
    m = build_model(cfg)
    m.train()
    m(torch.randn(16, 98, 40))  # move BN running stats away from defaults
    stats = NormStats(np.arange(40.0), np.ones(40))
    save_checkpoint(tmp_path / "m.ckpt", m, cfg, stats, {"seed_init": 5, "method": "baseline"})
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"VTLKCKPT"
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert ck.config == cfg
    assert ck.provenance["seed_init"] == 5
    np.testing.assert_array_equal(ck.norm_stats["mean"], np.arange(40.0))
    x = np.random.default_rng(0).normal(size=(3, 98, 40))
    np.testing.assert_allclose(logits(ck.model(), x), logits(m, x), atol=1e-6)
    assert ck.state["blocks.0.bn1.num_batches_tracked"].dtype == torch.int64


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"0" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(architecture="kwt3")
    with pytest.raises(ValueError):
        ModelConfig(channels=(16, 24))
