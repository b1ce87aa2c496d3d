import numpy as np
import pytest
import torch

from textforge.diffusion import (
    Denoiser,
    DenoiserConfig,
    DiffusionModels,
    SamplerConfig,
)
from textforge.errors import DataError, DegenerateRegionError
from textforge.geometry import BoundingBoxSet
from textforge.glyphs import CharSegMask
from textforge.layout import LayoutModel, LayoutModelConfig
from textforge.pipeline import (
    TwoStagePipeline,
    caption_token_ids,
    image_tensor,
    load_pipeline,
    region_tensor,
    region_word_boxes,
    save_pipeline,
    to_uint8_hwc,
)
from textforge.tokenizer import default_tokenizer
from textforge.vae import ToyVAE, VAEConfig

SIZE = 32


@pytest.fixture(scope="module")
def pipe():
    torch.manual_seed(0)
    tok = default_tokenizer(32)
    layout = LayoutModel(
        LayoutModelConfig(vocab_size=tok.vocab_size, num_layers=1, dim=32, seq_len=32, num_heads=4)
    )
    vae = ToyVAE(VAEConfig(base_width=16)).eval()
    den = Denoiser(
        DenoiserConfig(
            vocab_size=tok.vocab_size, image_size=SIZE, text_dim=32,
            context_length=32, base_width=16, channel_mults=(1, 2), attn_stages=(1,),
        )
    )
    den.trained.fill_(True)
    return TwoStagePipeline(layout, DiffusionModels(vae=vae, denoiser=den), tokenizer=tok)


def test_context_length_mismatch_rejected():
    tok = default_tokenizer(32)
    layout = LayoutModel(
        LayoutModelConfig(vocab_size=tok.vocab_size, num_layers=1, dim=32, seq_len=32, num_heads=4)
    )
    vae = ToyVAE(VAEConfig(base_width=16))
    den = Denoiser(
        DenoiserConfig(
            vocab_size=tok.vocab_size, image_size=SIZE, text_dim=32,
            context_length=24, base_width=16, channel_mults=(1, 2), attn_stages=(1,),
        )
    )
    with pytest.raises(DataError, match="context"):
        TwoStagePipeline(layout, DiffusionModels(vae=vae, denoiser=den), tokenizer=tok)


def test_caption_tokens_strip_quotes(pipe):
    quoted = pipe.caption_tokens('a sign saying "hello"')
    plain = pipe.caption_tokens("a sign saying hello")
    assert torch.equal(quoted, plain)


def test_caption_token_ids_shape():
    tok = default_tokenizer(32)
    ids = caption_token_ids('say "hi"', tok)
    assert ids.shape == (1, 32)
    assert ids.dtype == torch.long


def test_image_tensor_validation():
    with pytest.raises(DataError):
        image_tensor(np.zeros((SIZE, SIZE), dtype=np.uint8))  # missing channels
    with pytest.raises(DataError):
        image_tensor(np.zeros((SIZE, SIZE + 1, 3), dtype=np.uint8), SIZE)
    t = image_tensor(np.full((SIZE, SIZE, 3), 255, dtype=np.uint8), SIZE)
    assert t.shape == (1, 3, SIZE, SIZE)
    assert t.max().item() == pytest.approx(1.0)


def test_region_tensor_validation():
    with pytest.raises(DataError):
        region_tensor(np.zeros((SIZE, SIZE, 3), dtype=np.uint8))
    with pytest.raises(DataError):
        region_tensor(np.zeros((SIZE + 1, SIZE), dtype=np.uint8), SIZE)
    r = region_tensor(np.eye(SIZE, dtype=np.uint8), SIZE)
    assert r.dtype == torch.bool and r.shape == (1, SIZE, SIZE)


def test_to_uint8_hwc_layout():
    batch = torch.arange(2 * 3 * 4 * 4, dtype=torch.uint8).reshape(2, 3, 4, 4)
    out = to_uint8_hwc(batch)
    assert out.shape == (4, 4, 3)
    assert out[0, 0, 0] == batch[0, 0, 0, 0].item()
    assert out[0, 0, 1] == batch[0, 1, 0, 0].item()


def test_region_word_boxes_stacks_rows():
    region = np.zeros((64, 64), dtype=bool)
    region[10:40, 8:56] = True
    boxes = region_word_boxes(region, 3, 64)
    pix = boxes.to_pixels(64, 64)
    assert len(boxes) == 3
    # rows tile the region's bounding rect top to bottom
    assert pix[0][1] == pytest.approx(10, abs=1)
    assert pix[2][3] == pytest.approx(40, abs=1)
    for row in pix:
        assert row[0] == pytest.approx(8, abs=1)
        assert row[2] == pytest.approx(56, abs=1)


def test_region_word_boxes_empty_region_raises():
    with pytest.raises(DegenerateRegionError):
        region_word_boxes(np.zeros((64, 64), dtype=bool), 2, 64)


def test_render_mask_counts_must_match(pipe):
    boxes = BoundingBoxSet(np.array([[0.1, 0.2, 0.9, 0.6]]))
    with pytest.raises(DataError):
        pipe.render_mask(["two", "words"], boxes)


def test_render_mask_empty_is_empty(pipe):
    mask = pipe.render_mask([], BoundingBoxSet(np.zeros((0, 4))))
    assert mask.grid.shape == (SIZE, SIZE)
    assert not mask.grid.any()


def test_resolve_mask_precedence(pipe):
    explicit = CharSegMask(np.full((SIZE, SIZE), 3, dtype=np.uint8))
    mask, layout = pipe.resolve_mask("ignored", mask=explicit)
    assert mask is explicit and layout is None

    boxes = BoundingBoxSet(np.array([[0.05, 0.2, 0.95, 0.6]]))
    mask, layout = pipe.resolve_mask("ignored", boxes=boxes, keywords=["hi"])
    assert mask.grid.any() and layout is None


def test_resolve_mask_rejects_multiple_sources(pipe):
    explicit = CharSegMask(np.zeros((SIZE, SIZE), dtype=np.uint8))
    boxes = BoundingBoxSet(np.array([[0.05, 0.2, 0.95, 0.6]]))
    with pytest.raises(DataError):
        pipe.resolve_mask("x", boxes=boxes, keywords=["hi"], mask=explicit)


def test_resolve_mask_boxes_need_keywords(pipe):
    boxes = BoundingBoxSet(np.array([[0.05, 0.2, 0.95, 0.6]]))
    with pytest.raises(DataError):
        pipe.resolve_mask("x", boxes=boxes)


def test_resolve_mask_template_needs_segmenter(pipe):
    assert pipe.pixel_segmenter is None
    with pytest.raises(DataError):
        pipe.resolve_mask("x", template_image=np.zeros((SIZE, SIZE, 3), dtype=np.uint8))


def test_mask_tensor_size_check(pipe):
    with pytest.raises(DataError):
        pipe.mask_tensor(CharSegMask(np.zeros((SIZE * 2, SIZE * 2), dtype=np.uint8)))


def test_generate_returns_hwc_uint8(pipe):
    boxes = BoundingBoxSet(np.array([[0.05, 0.2, 0.95, 0.6]]))
    img = pipe.generate(
        'a sign saying "hi"', boxes=boxes, keywords=["hi"],
        sampler=SamplerConfig(steps=2, guidance_scale=1.0, seed=0),
    )
    assert img.shape == (SIZE, SIZE, 3) and img.dtype == np.uint8


def test_inpaint_empty_region_raises(pipe):
    image = np.zeros((SIZE, SIZE, 3), dtype=np.uint8)
    with pytest.raises(DegenerateRegionError):
        pipe.inpaint(image, np.zeros((SIZE, SIZE), dtype=bool), text="hi")


def test_save_load_round_trip(pipe, tmp_path):
    path = tmp_path / "bundle.pt"
    save_pipeline(path, pipe)
    loaded = load_pipeline(path)
    assert loaded.image_size == pipe.image_size
    assert loaded.k_max == pipe.k_max
    # identical weights -> identical sampling
    boxes = BoundingBoxSet(np.array([[0.05, 0.2, 0.95, 0.6]]))
    cfg = SamplerConfig(steps=2, guidance_scale=1.0, seed=3)
    a = pipe.generate('a "hi" sign', boxes=boxes, keywords=["hi"], sampler=cfg)
    b = loaded.generate('a "hi" sign', boxes=boxes, keywords=["hi"], sampler=cfg)
    assert np.array_equal(a, b)
