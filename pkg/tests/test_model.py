"""Network construction, encoder taps, fusion, pyramid, decoder, forward."""

import pytest
import torch

from mbnet.errors import ConfigError, ShapeError
from mbnet.model import (
    DynamicDilatedPyramid,
    MBNet,
    ModelConfig,
    MultiScaleConvBlock,
    build_model,
    replicate_depth,
)

from conftest import TINY


def tiny_model():
    return build_model(ModelConfig(**TINY))


class TestBuild:
    def test_tiny_builds_with_parameters(self, tiny_config):
        model = build_model(tiny_config)
        assert sum(p.numel() for p in model.parameters()) > 0

    def test_even_kernel_size_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(**{**TINY, "kgu_kernel_size": 4})

    def test_non_increasing_stage_channels_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(base_width=8, stage_channels=(8, 16, 16, 64, 128))

    def test_zero_dilation_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(**{**TINY, "dilations": (0, 3, 5)})

    def test_pretrained_flag_requires_initializer(self, tiny_config):
        tiny_config.use_pretrained_backbone = True
        with pytest.raises(ConfigError):
            build_model(tiny_config)

    def test_backbone_initializer_hook_runs(self, tiny_config):
        seen = []
        build_model(tiny_config, backbone_init=seen.append)
        assert len(seen) == 1 and isinstance(seen[0], MBNet)

    def test_default_config_derives_resnet50_widths(self):
        cfg = ModelConfig()
        assert cfg.stage_channels == (64, 256, 512, 1024, 2048)
        assert cfg.stage_blocks == (3, 4, 6, 3)

    def test_tap_strides_are_fixed(self):
        assert ModelConfig().tap_strides == {3: 8, 4: 16, 5: 32}


class TestEncoders:
    def test_rgb_tap_shapes(self):
        taps = tiny_model().encode_rgb(torch.rand(1, 3, 64, 64))
        assert taps.f3.shape == (1, 32, 8, 8)
        assert taps.f4.shape == (1, 64, 4, 4)
        assert taps.f5.shape == (1, 128, 2, 2)

    def test_rectangular_input(self):
        taps = tiny_model().encode_rgb(torch.rand(1, 3, 96, 64))
        assert taps.f3.shape[2:] == (12, 8)

    def test_indivisible_size_rejected(self):
        with pytest.raises(ShapeError):
            tiny_model().encode_rgb(torch.rand(1, 3, 50, 50))

    def test_depth_taps_match_rgb_shapes(self):
        model = tiny_model()
        rgb = model.encode_rgb(torch.rand(1, 3, 64, 64))
        dep = model.encode_depth(torch.rand(1, 1, 64, 64))
        for lvl in (3, 4, 5):
            assert dep.at(lvl).shape == rgb.at(lvl).shape

    def test_depth_replication_constant(self):
        rep = replicate_depth(torch.full((1, 1, 4, 4), 0.25))
        assert rep.shape == (1, 3, 4, 4)
        assert torch.equal(rep, torch.full((1, 3, 4, 4), 0.25))

    def test_streams_are_weight_independent(self):
        model = tiny_model().eval()
        img = torch.rand(1, 3, 64, 64)
        dep = torch.rand(1, 1, 64, 64)
        with torch.no_grad():
            rgb_before = model.encode_rgb(img).f5.clone()
            dep_before = model.encode_depth(dep).f5.clone()
            for p in model.depth_stream.parameters():
                p.add_(1.0)
            assert torch.equal(model.encode_rgb(img).f5, rgb_before)
            assert not torch.equal(model.encode_depth(dep).f5, dep_before)
            for p in model.rgb_stream.parameters():
                p.add_(1.0)
            # depth output only moved because its own weights moved
            dep_after = model.encode_depth(dep).f5.clone()
            for p in model.rgb_stream.parameters():
                p.sub_(1.0)
            assert torch.equal(model.encode_depth(dep).f5, dep_after)


class TestFusion:
    def test_output_shape(self):
        model = tiny_model()
        out = model.fuse(torch.rand(1, 32, 8, 8), torch.rand(1, 32, 8, 8), level=3)
        assert out.shape == (1, 16, 8, 8)

    def test_dense_layer_input_channels(self):
        model = tiny_model()
        dense = model.fusions["3"].dense
        c_concat = 2 * 32
        for i, conv in enumerate(dense.layers):
            assert conv.in_channels == c_concat + i * 8

    def test_spatial_mismatch_raises(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.fuse(torch.rand(1, 32, 8, 8), torch.rand(1, 32, 4, 4), level=3)


class TestKernelGeneration:
    def test_field_shapes_and_dilations(self):
        model = tiny_model()
        fields = model.generate_kernels(torch.rand(1, 16, 8, 8), level=3)
        assert len(fields) == 3
        assert tuple(f.dilation for f in fields) == (1, 3, 5)
        for f in fields:
            assert f.weights.shape == (1, 9, 8, 8)

    def test_zero_input_zero_bias_gives_zero_fields(self):
        model = tiny_model()
        gen = model.pyramids["3"].generator
        with torch.no_grad():
            for conv in gen.dense.layers:
                conv.bias.zero_()
            for head in gen.heads:
                head.bias.zero_()
        for w in gen(torch.zeros(1, 16, 8, 8)):
            assert torch.equal(w, torch.zeros_like(w))

    def test_dense_block_depth_is_four(self):
        model = tiny_model()
        for lvl in ("3", "4", "5"):
            assert len(model.pyramids[lvl].generator.dense.layers) == 4


class TestPyramid:
    def test_output_shape(self):
        pyr = DynamicDilatedPyramid(mid=16, growth=8, k=3, dilations=(1, 3, 5),
                                    decoder_in_ch=64)
        out = pyr(torch.rand(1, 16, 8, 8), torch.rand(1, 64, 8, 8))
        assert out.shape == (1, 16, 8, 8)

    def test_zero_kernels_reduce_to_plain_convolution(self):
        pyr = DynamicDilatedPyramid(mid=8, growth=4, k=3, dilations=(1, 3, 5),
                                    decoder_in_ch=8)
        with torch.no_grad():
            for head in pyr.generator.heads:
                head.weight.zero_()
                head.bias.zero_()
            for conv in pyr.branch_convs:
                conv.weight.zero_()
                conv.weight[:, :, 1, 1] = torch.eye(8)  # identity 3x3
                conv.bias.zero_()
        fe = torch.rand(1, 8, 6, 6)
        dec = torch.rand(1, 8, 6, 6)
        out = pyr(fe, dec)
        assert torch.allclose(out, pyr.combine(pyr.reduce(dec)), atol=1e-6)

    def test_branch_count_matches_dilations(self):
        model = tiny_model()
        assert len(model.pyramids["4"].branch_convs) == 3

    def test_resolution_mismatch_raises(self):
        pyr = DynamicDilatedPyramid(mid=8, growth=4, k=3, dilations=(1,),
                                    decoder_in_ch=8)
        with pytest.raises(ShapeError):
            pyr(torch.rand(1, 8, 6, 6), torch.rand(1, 8, 3, 3))


class TestDecoder:
    def test_residual_shape(self):
        model = tiny_model()
        taps = model.encode_rgb(torch.rand(1, 3, 64, 64))
        outs = (torch.rand(1, 16, 2, 2), torch.rand(1, 16, 4, 4), torch.rand(1, 16, 8, 8))
        assert model.decode(taps, outs).shape == (1, 3, 64, 64)

    def test_zero_head_zero_residual(self):
        model = tiny_model()
        taps = model.encode_rgb(torch.rand(1, 3, 64, 64))
        outs = (torch.rand(1, 16, 2, 2), torch.rand(1, 16, 4, 4), torch.rand(1, 16, 8, 8))
        res = model.decode(taps, outs)
        assert torch.equal(res, torch.zeros_like(res))

    def test_multiscale_kernel_sizes(self):
        block = MultiScaleConvBlock(8, 4, 8)
        assert tuple(b.kernel_size[0] for b in block.branches) == (1, 3, 5)

    def test_misaligned_pyramid_sizes_raise(self):
        model = tiny_model()
        taps = model.encode_rgb(torch.rand(1, 3, 64, 64))
        outs = (torch.rand(1, 16, 2, 2), torch.rand(1, 16, 8, 8), torch.rand(1, 16, 8, 8))
        with pytest.raises(ShapeError):
            model.decode(taps, outs)


class TestForward:
    def test_identity_at_init(self):
        model = tiny_model()
        img = torch.rand(2, 3, 64, 64)
        dep = torch.rand(2, 1, 64, 64)
        assert torch.equal(model(img, dep), img)

    def test_output_in_unit_range(self):
        model = tiny_model()
        with torch.no_grad():
            model.head.weight.normal_(std=0.5)
            model.head.bias.normal_(std=0.5)
        with torch.no_grad():
            out = model(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 64, 64))
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_image_depth_mismatch_raises(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 32, 32))

    def test_output_shape_preserved(self):
        model = tiny_model()
        out = model(torch.rand(1, 3, 96, 64), torch.rand(1, 1, 96, 64))
        assert out.shape == (1, 3, 96, 64)

    def test_gradients_flow_everywhere(self, gradcheck_config):
        model = build_model(gradcheck_config).eval()
        with torch.no_grad():  # move off the zero-init saddle
            for p in model.parameters():
                p.add_(torch.randn_like(p) * 0.05)
        out = model(torch.rand(1, 3, 32, 32), torch.rand(1, 1, 32, 32), clamp=False)
        out.sum().backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name

    def test_gradcheck_config_fits_parameter_budget(self, gradcheck_config):
        model = build_model(gradcheck_config)
        assert sum(p.numel() for p in model.parameters()) <= 50_000


@pytest.mark.slow
def test_default_config_full_resolution_forward():
    model = build_model(ModelConfig()).eval()
    img = torch.rand(1, 3, 1024, 1024)
    dep = torch.rand(1, 1, 1024, 1024)
    with torch.no_grad():
        out = model(img, dep)
    assert out.shape == (1, 3, 1024, 1024)
    assert torch.equal(out, img)  # zero-init head keeps the identity
