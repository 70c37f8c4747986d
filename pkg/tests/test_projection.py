import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from eegcontrol.errors import ConfigurationError
from eegcontrol.projection import (
    EEGProjection,
    ProjectionConfig,
    SubjectLayer,
    init_projection,
    layer_lengths,
    pad_reshape,
    subject_mix,
)

FULL_SCALE = ProjectionConfig((320, 640, 1280, 2560), (5, 2, 2, 2), 3, (4, 64, 64))


def brute_conv_length(length, stride, kernel=3, pad=1):
    """Count kernel placements stepping by ``stride`` across the padded input."""
    return sum(1 for start in range(0, length + 2 * pad) if start % stride == 0 and start + kernel <= length + 2 * pad)


def naive_matmul(m, x):
    c, l = x.shape
    out = np.zeros((m.shape[0], l))
    for i in range(m.shape[0]):
        for j in range(l):
            acc = 0.0
            for k in range(c):
                acc += m[i, k] * x[k, j]
            out[i, j] = acc
    return out


class TestLengths:
    def test_eegcvpr40_lengths(self):
        assert layer_lengths(FULL_SCALE, 440) == [440, 88, 44, 22, 11]

    def test_thoughtviz_lengths(self):
        assert layer_lengths(FULL_SCALE, 32) == [32, 7, 4, 2, 1]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 2000), st.lists(st.integers(1, 6), min_size=1, max_size=4))
    def test_matches_brute_force(self, length, strides):
        cfg = ProjectionConfig(tuple([4] * len(strides)), tuple(strides), 3, (1, 1, 1))
        expected = [length]
        feasible = True
        for s in strides:
            if expected[-1] // s < 1:
                feasible = False
                break
            expected.append(brute_conv_length(expected[-1], s))
        if feasible:
            assert layer_lengths(cfg, length) == expected
        else:
            with pytest.raises(ValueError):
                layer_lengths(cfg, length)

    def test_infeasible_stride_stack(self):
        cfg = ProjectionConfig((320, 640, 1280, 2560), (50, 2, 2, 2), 3, (4, 64, 64))
        with pytest.raises(ConfigurationError):
            init_projection(cfg, 14, seed=0, min_length=32)

    def test_default_config_feasible_at_32(self):
        proj = init_projection(FULL_SCALE, 14, seed=0, min_length=32)
        assert isinstance(proj, EEGProjection)


class TestConfig:
    def test_mismatched_lengths(self):
        with pytest.raises(ConfigurationError):
            ProjectionConfig((1, 2), (1,), 3, (4, 8, 8))

    def test_non_positive(self):
        with pytest.raises(ConfigurationError):
            ProjectionConfig((1, 0), (1, 1), 3, (4, 8, 8))

    def test_even_kernel(self):
        with pytest.raises(ConfigurationError):
            ProjectionConfig((1,), (1,), 4, (4, 8, 8))


class TestPadReshape:
    def test_exact_round_trip(self):
        v = torch.arange(4 * 8 * 8, dtype=torch.float32).reshape(16, 16)
        out = pad_reshape(v, (4, 8, 8))
        assert torch.equal(out.reshape(16, 16), v)

    def test_zero_pad_tail(self):
        feats = torch.arange(1, 2561, dtype=torch.float32).reshape(2560, 1)
        flat = pad_reshape(feats, (4, 64, 64)).reshape(-1)
        assert torch.equal(flat[:2560], feats.reshape(-1))
        assert torch.count_nonzero(flat[2560:]) == 0

    def test_truncate(self):
        feats = torch.arange(2560 * 11, dtype=torch.float32).reshape(2560, 11)
        flat = pad_reshape(feats, (4, 64, 64)).reshape(-1)
        assert torch.equal(flat, feats.reshape(-1)[:16384])

    def test_batched(self):
        feats = torch.randn(3, 5, 7)
        out = pad_reshape(feats, (2, 3, 3))
        for b in range(3):
            assert torch.equal(out[b], pad_reshape(feats[b], (2, 3, 3)))


class TestProjection:
    def test_full_scale_shapes(self):
        for c, l in ((128, 440), (14, 32)):
            out = EEGProjection(c, FULL_SCALE)(torch.randn(1, c, l))
            assert out.shape == (1, 4, 64, 64)

    def test_zero_final_layer_gives_zero_padding_content(self):
        proj = init_projection(FULL_SCALE, 14, seed=0, min_length=32)
        with torch.no_grad():
            proj.convs[-1].weight.zero_()
            proj.convs[-1].bias.zero_()
            out = proj(torch.randn(2, 14, 32))
        assert torch.count_nonzero(out) == 0

    def test_seed_determinism(self):
        cfg = ProjectionConfig((8, 16), (2, 2), 3, (1, 4, 4))
        a = init_projection(cfg, 3, seed=5, min_length=16)
        b = init_projection(cfg, 3, seed=5, min_length=16)
        c = init_projection(cfg, 3, seed=6, min_length=16)
        assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
        assert not torch.equal(a.convs[0].weight, c.convs[0].weight)

    def test_channel_mismatch(self):
        proj = EEGProjection(4, ProjectionConfig((8,), (2,), 3, (1, 2, 2)))
        with pytest.raises(ValueError):
            proj(torch.randn(1, 5, 16))

    def test_silu_after_every_layer(self):
        cfg = ProjectionConfig((3, 3), (1, 1), 3, (1, 3, 4))
        proj = init_projection(cfg, 2, seed=0, min_length=4)
        x = torch.randn(1, 2, 4)
        h = x
        for conv in proj.convs:
            h = torch.nn.functional.silu(torch.nn.functional.conv1d(h, conv.weight, conv.bias, padding=1))
        torch.testing.assert_close(proj(x), h.reshape(1, 1, 3, 4))


class TestSubjectLayer:
    def test_identity_at_init(self):
        layer = SubjectLayer(5, [1, 2])
        x = torch.randn(5, 30)
        assert torch.equal(subject_mix(x, 2, layer), x)

    def test_scaling(self):
        layer = SubjectLayer(3, [4])
        with torch.no_grad():
            layer.matrix(4).mul_(2.0)
        x = torch.randn(3, 10)
        torch.testing.assert_close(subject_mix(x, 4, layer), 2 * x)

    def test_matches_naive_product(self):
        rng = np.random.default_rng(0)
        layer = SubjectLayer(4, [7]).double()
        m = rng.normal(size=(4, 4))
        with torch.no_grad():
            layer.matrix(7).copy_(torch.from_numpy(m))
        x = rng.normal(size=(4, 9))
        out = subject_mix(torch.from_numpy(x), 7, layer).detach().numpy()
        np.testing.assert_allclose(out, naive_matmul(m, x), rtol=0, atol=1e-6)

    def test_batched_subjects_select_their_matrices(self):
        layer = SubjectLayer(2, [1, 2])
        with torch.no_grad():
            layer.matrix(2).mul_(3.0)
        x = torch.randn(2, 2, 5)
        out = layer(x, [1, 2])
        torch.testing.assert_close(out[0], x[0])
        torch.testing.assert_close(out[1], 3 * x[1])

    def test_unknown_subject(self):
        with pytest.raises(ValueError):
            subject_mix(torch.zeros(2, 3), 9, SubjectLayer(2, [1]))
