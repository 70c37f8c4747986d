"""Pretrained-LDM wrapper exercised with tiny randomly initialized diffusers modules."""

import pytest
import torch

diffusers = pytest.importorskip("diffusers")

from eegcontrol.diffusion.residuals import ControlResiduals  # noqa: E402
from eegcontrol.diffusion.sd import StableDiffusionBackbone  # noqa: E402
from eegcontrol.errors import ArchitectureMismatchError, BackboneLoadError  # noqa: E402
from eegcontrol.model import EEGControlModel, conditioned_noise  # noqa: E402
from eegcontrol.projection import ProjectionConfig  # noqa: E402


class WordTokenizer:
    model_max_length = 6

    def __call__(self, captions, **kwargs):
        ids = [[sum(map(ord, w)) % 50 for w in (c.split() + ["<pad>"] * 6)[:6]] for c in captions]
        return type("Tokens", (), {"input_ids": torch.tensor(ids)})


class TinyText(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.embed = torch.nn.Embedding(50, 16)

    def forward(self, ids):
        return (self.embed(ids),)


@pytest.fixture(scope="module")
def tiny_sd():
    torch.manual_seed(0)
    unet = diffusers.UNet2DConditionModel(
        sample_size=8, in_channels=4, out_channels=4, block_out_channels=(32, 64),
        down_block_types=("CrossAttnDownBlock2D", "DownBlock2D"), up_block_types=("UpBlock2D", "CrossAttnUpBlock2D"),
        cross_attention_dim=16, layers_per_block=1, norm_num_groups=8, attention_head_dim=4)
    vae = diffusers.AutoencoderKL(
        in_channels=3, out_channels=3, latent_channels=4, block_out_channels=(8, 16),
        down_block_types=("DownEncoderBlock2D",) * 2, up_block_types=("UpDecoderBlock2D",) * 2,
        norm_num_groups=8, sample_size=16)
    return StableDiffusionBackbone.from_modules(unet, vae, TinyText(), WordTokenizer()).freeze()


def test_geometry(tiny_sd):
    assert tiny_sd.latent_shape == (4, 8, 8) and tiny_sd.image_size == 16
    # conv_in, two down-block skips with one downsample, one more skip, then the mid block
    assert tiny_sd.block_shapes()[-1] == (64, 4, 4)


def test_no_residuals_matches_raw_unet(tiny_sd):
    z, t = torch.randn(2, 4, 8, 8), torch.tensor([1, 900])
    ctx = tiny_sd.encode_captions(["Image of a", ""])
    with torch.no_grad():
        raw = tiny_sd.unet(z, t - 1, encoder_hidden_states=ctx.tokens).sample
    torch.testing.assert_close(tiny_sd.predict_noise(z, t, ctx), raw)


def test_fresh_adapter_is_transparent(tiny_sd):
    model = EEGControlModel.create(tiny_sd, 8, [1], ProjectionConfig((8, 16, 32, 64), (5, 2, 2, 2), 3, (4, 8, 8)),
                                   min_length=128, seed=0)
    z, t = torch.randn(2, 4, 8, 8), torch.tensor([5, 900])
    ctx = tiny_sd.encode_captions(["Image of a", ""])
    with torch.no_grad():
        a = conditioned_noise(tiny_sd, model, z, t, torch.randn(2, 8, 128), [1, 1], ctx)
        b = tiny_sd.predict_noise(z, t, ctx)
    assert float((a - b).abs().max()) <= 1e-5


def test_residual_count_checked(tiny_sd):
    ctx = tiny_sd.encode_captions([""])
    bad = ControlResiduals([torch.zeros(1, *tiny_sd.block_shapes()[0])], [1.0])
    with pytest.raises(ArchitectureMismatchError):
        tiny_sd.predict_noise(torch.zeros(1, 4, 8, 8), 10, ctx, bad)


def test_vae_round_trip_shape(tiny_sd):
    with torch.no_grad():
        out = tiny_sd.vae_decode(tiny_sd.vae_encode(torch.rand(1, 3, 16, 16), deterministic=True))
    assert out.shape == (1, 3, 16, 16)


def test_missing_weights(tmp_path):
    with pytest.raises(BackboneLoadError):
        StableDiffusionBackbone.load(tmp_path)


def test_v_prediction_rejected(tmp_path):
    for sub in ("unet", "vae", "text_encoder", "tokenizer", "scheduler"):
        (tmp_path / sub).mkdir()
    (tmp_path / "scheduler" / "scheduler_config.json").write_text('{"prediction_type": "v_prediction"}')
    with pytest.raises(BackboneLoadError, match="epsilon"):
        StableDiffusionBackbone.load(tmp_path)


def test_scheduler_config_sets_schedule(tiny_sd):
    bb = StableDiffusionBackbone.from_modules(tiny_sd.unet, tiny_sd.vae, tiny_sd.text_encoder, tiny_sd.tokenizer,
                                              {"num_train_timesteps": 500, "beta_schedule": "linear"})
    assert bb.schedule.T == 500 and bb.schedule.kind == "linear"
