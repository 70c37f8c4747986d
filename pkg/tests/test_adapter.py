import numpy as np
import pytest
import torch

from eegcontrol.adapter import (
    ZeroConv2d,
    adapter_forward,
    build_control,
    clone_encoder,
    guess_mode_scales,
    inject_residuals,
)
from eegcontrol.diffusion.residuals import ControlResiduals, EncoderOutput
from eegcontrol.errors import ArchitectureMismatchError


def naive_1x1(weight, bias, x):
    """Per-pixel channel matrix product, written out."""
    co, ci = weight.shape
    b, _, h, w = x.shape
    out = np.zeros((b, co, h, w))
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for o in range(co):
                    out[n, o, i, j] = bias[o] + sum(weight[o, c] * x[n, c, i, j] for c in range(ci))
    return out


class TestClone:
    def test_copy_is_exact(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        src = fresh_backbone.encoder.state_dict()
        for k, v in adapter.encoder_copy.state_dict().items():
            assert torch.equal(v, src[k])

    def test_zero_convs_are_zero(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        convs = [adapter.input_zero_conv, *adapter.output_zero_convs]
        assert all(torch.count_nonzero(p) == 0 for c in convs for p in c.parameters())

    def test_copy_is_isolated(self, fresh_backbone):
        before = fresh_backbone.state_snapshot()
        adapter = clone_encoder(fresh_backbone)
        with torch.no_grad():
            for p in adapter.encoder_copy.parameters():
                p.add_(1.0)
        after = fresh_backbone.state_snapshot()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_copy_is_trainable_backbone_is_not(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        assert all(p.requires_grad for p in adapter.encoder_copy.parameters())
        assert not any(p.requires_grad for p in fresh_backbone.encoder.parameters())

    def test_declared_shape_mismatch(self, fresh_backbone):
        shapes = fresh_backbone.block_shapes()
        shapes[0] = (shapes[0][0] + 1, *shapes[0][1:])
        with pytest.raises(ArchitectureMismatchError):
            clone_encoder(fresh_backbone, shapes)


class TestBuildControl:
    def test_zero_conv_is_identity_on_noisy_latent(self):
        z = torch.randn(2, 4, 8, 8)
        assert torch.equal(build_control(z, torch.randn(2, 4, 8, 8), ZeroConv2d(4)), z)

    def test_identity_conv_adds(self):
        conv = ZeroConv2d(4)
        with torch.no_grad():
            conv.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
        z, e = torch.randn(1, 4, 3, 3), torch.randn(1, 4, 3, 3)
        torch.testing.assert_close(build_control(z, e, conv), z + e)

    def test_matches_naive_1x1(self):
        rng = np.random.default_rng(0)
        conv = ZeroConv2d(3).double()
        w, b = rng.normal(size=(3, 3)), rng.normal(size=3)
        with torch.no_grad():
            conv.weight.copy_(torch.from_numpy(w).view(3, 3, 1, 1))
            conv.bias.copy_(torch.from_numpy(b))
        z = rng.normal(size=(2, 3, 4, 5))
        e = rng.normal(size=(2, 3, 4, 5))
        out = build_control(torch.from_numpy(z), torch.from_numpy(e), conv).detach().numpy()
        np.testing.assert_allclose(out, z + naive_1x1(w, b, e), rtol=0, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            build_control(torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4), ZeroConv2d(4))


class TestAdapterForward:
    def test_fresh_residuals_are_zero_and_shaped(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        ctx = fresh_backbone.encode_captions(["", "Image of class_1"])
        res = adapter_forward(adapter, torch.randn(2, *fresh_backbone.latent_shape), ctx, torch.tensor([3, 700]))
        assert [tuple(m.shape[1:]) for m in res.maps] == fresh_backbone.block_shapes()
        assert all(torch.count_nonzero(m) == 0 for m in res.maps)

    def test_one_step_makes_residuals_nonzero(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        ctx = fresh_backbone.encode_captions(["Image of class_0"])
        opt = torch.optim.Adam(adapter.parameters(), lr=1e-3)
        c = torch.randn(1, *fresh_backbone.latent_shape)
        target = torch.randn(1, *fresh_backbone.latent_shape)
        pred = fresh_backbone.predict_noise(c, torch.tensor([10]), ctx, adapter_forward(adapter, c, ctx, torch.tensor([10])))
        loss = ((pred - target) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        res = adapter_forward(adapter, c, ctx, torch.tensor([10]))
        assert any(torch.count_nonzero(m) > 0 for m in res.maps)

    def test_timestep_out_of_range(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        ctx = fresh_backbone.encode_captions([""])
        with pytest.raises(ValueError):
            adapter_forward(adapter, torch.zeros(1, *fresh_backbone.latent_shape), ctx, torch.tensor([1001]))

    def test_wrong_scale_count(self, fresh_backbone):
        adapter = clone_encoder(fresh_backbone)
        ctx = fresh_backbone.encode_captions([""])
        with pytest.raises(ValueError):
            adapter_forward(adapter, torch.zeros(1, *fresh_backbone.latent_shape), ctx, 5, scales=[1.0])


class TestInject:
    def _acts(self):
        return EncoderOutput([torch.randn(1, 2, 4, 4), torch.randn(1, 3, 2, 2)], torch.randn(1, 3, 2, 2))

    def test_zero_scales(self):
        acts = self._acts()
        res = ControlResiduals([torch.randn_like(b) for b in acts.blocks], [0.0] * 3)
        out = inject_residuals(acts, res)
        assert all(torch.equal(a, b) for a, b in zip(out.blocks, acts.blocks))

    def test_zero_residuals(self):
        acts = self._acts()
        out = inject_residuals(acts, ControlResiduals([torch.zeros_like(b) for b in acts.blocks], [1.0] * 3))
        assert all(torch.equal(a, b) for a, b in zip(out.blocks, acts.blocks))

    def test_residuals_equal_to_activations_double_them(self):
        acts = EncoderOutput([torch.tensor([[[[1.0, -2.0]]]])], torch.tensor([[[[0.5]]]]))
        out = inject_residuals(acts, ControlResiduals([b.clone() for b in acts.blocks], [1.0, 1.0]))
        assert out.skips[0].flatten().tolist() == [2.0, -4.0]
        assert out.mid.flatten().tolist() == [1.0]

    def test_count_mismatch(self):
        acts = self._acts()
        with pytest.raises(ArchitectureMismatchError):
            inject_residuals(acts, ControlResiduals([torch.zeros(1)], [1.0]))

    def test_shape_mismatch(self):
        acts = self._acts()
        maps = [torch.zeros_like(b) for b in acts.blocks]
        maps[1] = torch.zeros(1, 3, 3, 3)
        with pytest.raises(ArchitectureMismatchError):
            inject_residuals(acts, ControlResiduals(maps, [1.0] * 3))

    def test_zero_scales_leave_backbone_output(self, fresh_backbone):
        z = torch.randn(1, *fresh_backbone.latent_shape)
        ctx = fresh_backbone.encode_captions([""])
        res = ControlResiduals([torch.randn(1, *s) for s in fresh_backbone.block_shapes()],
                               [0.0] * len(fresh_backbone.block_shapes()))
        torch.testing.assert_close(fresh_backbone.predict_noise(z, 40, ctx, res),
                                   fresh_backbone.predict_noise(z, 40, ctx), rtol=0, atol=0)


class TestGuessScales:
    def test_endpoints_and_monotone(self):
        s = guess_mode_scales(5)
        assert s[0] == pytest.approx(0.1) and s[-1] == 1.0
        assert all(a < b for a, b in zip(s, s[1:]))
        ratios = [b / a for a, b in zip(s, s[1:])]
        assert max(ratios) - min(ratios) < 1e-12

    def test_single_block(self):
        assert guess_mode_scales(1) == [1.0]


def test_model_groups_all_trainable(fresh_model):
    for group, params in fresh_model.parameter_groups().items():
        assert params and all(p.requires_grad for p in params), group
