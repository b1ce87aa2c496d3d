import math

import numpy as np
import pytest
import torch

from textforge.errors import ConfigurationError, DataError
from textforge.glyphs import CharSegMask
from textforge.segmenter import (
    NUM_CHAR_CLASSES,
    CharSegmenter,
    SegmenterConfig,
    char_aware_loss,
    char_cross_entropy,
    latent_segmenter_unet,
    load_char_segmenter,
    mask_to_latent_target,
    pixel_segmenter_unet,
    resize_class_mask,
    save_char_segmenter,
    segment_template_image,
    train_segmenter,
)
from textforge.unet import UNetConfig


@pytest.fixture(scope="module")
def latent_seg():
    torch.manual_seed(0)
    return CharSegmenter(SegmenterConfig(unet=latent_segmenter_unet(base_width=8))).eval()


def test_class_count_is_96():
    assert NUM_CHAR_CLASSES == 96


def test_config_rejects_wrong_class_count():
    bad = UNetConfig(in_channels=3, out_channels=10, base_width=8)
    with pytest.raises(ConfigurationError):
        SegmenterConfig(unet=bad)


def test_config_rejects_unknown_optimizer():
    with pytest.raises(ConfigurationError):
        SegmenterConfig(optimizer="sgd")


def test_logits_shape(latent_seg):
    x = torch.randn(2, 4, 16, 16)
    out = latent_seg.logits(x)
    assert out.shape == (2, 96, 16, 16)


def test_segment_returns_class_map(latent_seg):
    x = torch.randn(1, 4, 16, 16)
    seg = latent_seg.segment(x)
    assert seg.shape == (1, 16, 16)
    assert seg.dtype == torch.int64
    assert seg.min() >= 0 and seg.max() < 96


def test_uniform_logits_give_log_96():
    """With all-equal logits the cross-entropy must be exactly ln(96)."""
    logits = torch.zeros(1, 96, 8, 8)
    target = torch.randint(0, 96, (1, 8, 8))
    loss = char_cross_entropy(logits, target)
    assert loss.item() == pytest.approx(math.log(96), abs=1e-6)


def test_cross_entropy_shape_mismatch_raises():
    with pytest.raises(DataError):
        char_cross_entropy(torch.zeros(1, 96, 8, 8), torch.zeros(1, 4, 4, dtype=torch.long))


def test_char_aware_loss_differentiable(latent_seg):
    """The loss must carry gradient back to the predicted latent, not to the
    frozen segmenter."""
    latent_seg.freeze()
    latent = torch.randn(1, 4, 8, 8, requires_grad=True)
    target = torch.randint(0, 96, (1, 8, 8))
    loss = char_aware_loss(latent, target, latent_seg)
    loss.backward()
    assert latent.grad is not None
    assert latent.grad.abs().sum() > 0
    assert all(not p.requires_grad for p in latent_seg.parameters())


def test_char_aware_loss_gradient_matches_finite_differences(latent_seg):
    """Central finite differences on a handful of latent entries must agree
    with autograd to within 1e-3 relative error."""
    latent_seg.freeze()
    torch.manual_seed(1)
    latent = torch.randn(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    target = torch.randint(0, 96, (1, 8, 8))
    seg64 = latent_seg.double()
    loss = char_aware_loss(latent, target, seg64)
    loss.backward()
    grad = latent.grad.clone()

    eps = 1e-5
    rng = np.random.default_rng(0)
    flat = latent.detach().flatten()
    for idx in rng.choice(flat.numel(), size=12, replace=False):
        bump = torch.zeros_like(flat)
        bump[idx] = eps
        lp = char_aware_loss((flat + bump).reshape(latent.shape), target, seg64)
        lm = char_aware_loss((flat - bump).reshape(latent.shape), target, seg64)
        fd = (lp - lm).item() / (2 * eps)
        an = grad.flatten()[idx].item()
        denom = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / denom <= 1e-3, (idx, fd, an)
    latent_seg.float()


def test_resize_class_mask_nearest():
    mask = np.arange(16, dtype=np.uint8).reshape(4, 4)
    out = resize_class_mask(mask, 2, 2)
    assert out.tolist() == [[0, 2], [8, 10]]
    with pytest.raises(DataError):
        resize_class_mask(np.zeros((2, 2, 2), dtype=np.uint8), 1, 1)


def test_mask_to_latent_target_dtype():
    mask = CharSegMask(np.ones((16, 16), dtype=np.uint8))
    t = mask_to_latent_target(mask, (4, 4))
    assert t.shape == (4, 4)
    assert t.dtype == torch.int64
    assert (t == 1).all()


def test_segment_template_image_shape_check(latent_seg):
    torch.manual_seed(0)
    pix = CharSegmenter(SegmenterConfig(unet=pixel_segmenter_unet(base_width=8)))
    img = np.random.default_rng(0).integers(0, 255, size=(32, 32, 3), dtype=np.uint8)
    out = segment_template_image(pix, img)
    assert out.grid.shape == (32, 32)
    with pytest.raises(DataError):
        segment_template_image(pix, img[:, :, 0])


def test_train_segmenter_learns_constant_mask():
    """A tiny run on a trivially learnable corpus must beat chance."""
    torch.manual_seed(0)
    inputs = torch.cat([torch.zeros(8, 4, 8, 8), torch.ones(8, 4, 8, 8)])
    targets = torch.cat(
        [torch.zeros(8, 8, 8, dtype=torch.long), torch.ones(8, 8, 8, dtype=torch.long)]
    )
    cfg = SegmenterConfig(unet=latent_segmenter_unet(base_width=8), steps=60, seed=0)
    model, meta = train_segmenter(inputs, targets, cfg)
    assert meta["val_pixel_accuracy"] > 0.9


def test_train_segmenter_empty_corpus_raises():
    cfg = SegmenterConfig(unet=latent_segmenter_unet(base_width=8))
    with pytest.raises(DataError):
        train_segmenter(torch.zeros(0, 4, 8, 8), torch.zeros(0, 8, 8), cfg)


def test_save_load_round_trip(tmp_path, latent_seg):
    path = tmp_path / "seg.ckpt"
    save_char_segmenter(path, latent_seg)
    loaded = load_char_segmenter(path)
    x = torch.randn(1, 4, 16, 16)
    assert torch.equal(loaded.segment(x), latent_seg.segment(x))
