import numpy as np
import pytest
import torch

from textforge.errors import ConfigurationError, DataError, TooManyKeywordsError
from textforge.layout import (
    LayoutBatch,
    LayoutModel,
    LayoutModelConfig,
    layout_l1_loss,
    load_layout_model,
    make_optimizer,
    save_layout_model,
    train_layout_step,
)
from textforge.prompts import prepare_prompt


@pytest.fixture(scope="module")
def small_model(tokenizer):
    torch.manual_seed(0)
    cfg = LayoutModelConfig(
        vocab_size=tokenizer.vocab_size, num_layers=1, dim=32, num_heads=4,
        seq_len=tokenizer.context_length,
    )
    return LayoutModel(cfg)


def _tp_tensors(tp):
    return (
        torch.as_tensor(tp.token_ids).unsqueeze(0),
        torch.as_tensor(tp.keyword_flags).unsqueeze(0),
        torch.as_tensor(tp.width_buckets).unsqueeze(0),
    )


def test_config_validation():
    with pytest.raises(ConfigurationError):
        LayoutModelConfig(vocab_size=100, num_layers=0)
    with pytest.raises(ConfigurationError):
        LayoutModelConfig(vocab_size=100, dim=30, num_heads=4)


def test_ffn_dim_defaults_to_double():
    cfg = LayoutModelConfig(vocab_size=100, dim=64, num_heads=4)
    assert cfg.ffn_dim == 128


def test_embedding_built_from_four_terms(small_model, tokenizer):
    tp, _ = prepare_prompt('A sign that says "STOP"', tokenizer)
    ids, flags, buckets = _tp_tensors(tp)
    terms = small_model.embedding_terms(ids, flags, buckets)
    total = small_model.build_embedding(ids, flags, buckets)
    stacked = terms.text_term + terms.pos_term + terms.key_term + terms.width_term
    assert torch.equal(total, stacked)
    assert total.shape == (1, tokenizer.context_length, 32)


def test_width_term_zeroed_when_disabled(tokenizer):
    torch.manual_seed(0)
    cfg = LayoutModelConfig(
        vocab_size=tokenizer.vocab_size, num_layers=1, dim=32, num_heads=4,
        seq_len=tokenizer.context_length, use_width_embedding=False,
    )
    model = LayoutModel(cfg)
    tp, _ = prepare_prompt('A sign that says "WIDE"', tokenizer)
    ids, flags, buckets = _tp_tensors(tp)
    terms = model.embedding_terms(ids, flags, buckets)
    assert terms.width_term.abs().sum() == 0


def test_width_buckets_change_embedding(small_model, tokenizer):
    """Two keywords with different widths must produce different embeddings
    at the flagged position when the width term is active."""
    tp_a, _ = prepare_prompt('A sign reading "iii"', tokenizer)
    tp_b, _ = prepare_prompt('A sign reading "WWW"', tokenizer)
    # same token count; flags at same positions, buckets differ
    ia, fa, ba = _tp_tensors(tp_a)
    ib, fb, bb = _tp_tensors(tp_b)
    assert not np.array_equal(tp_a.width_buckets, tp_b.width_buckets)
    ta = small_model.embedding_terms(ia, fa, ba).width_term
    tb = small_model.embedding_terms(ib, fb, bb).width_term
    assert not torch.equal(ta, tb)


def test_forward_shape_and_range(small_model, tokenizer):
    tp, _ = prepare_prompt('Poster of "ONE" and "TWO"', tokenizer)
    ids, flags, buckets = _tp_tensors(tp)
    gt = torch.rand(1, 2, 4)
    out = small_model(ids, flags, buckets, gt)
    assert out.shape == (1, 2, 4)
    assert (out >= 0).all() and (out <= 1).all()


def test_forward_rejects_too_many_boxes(small_model, tokenizer):
    tp, _ = prepare_prompt('A sign that says "GO"', tokenizer)
    ids, flags, buckets = _tp_tensors(tp)
    with pytest.raises(DataError):
        small_model(ids, flags, buckets, torch.rand(1, 9, 4))


def test_predict_boxes_counts(small_model, tokenizer):
    tp, kws = prepare_prompt('Poster of "ONE" and "TWO"', tokenizer)
    boxes = small_model.predict_boxes(tp, len(kws))
    assert len(boxes) == 2
    assert boxes.boxes.min() >= 0.0 and boxes.boxes.max() <= 1.0


def test_predict_boxes_zero_keywords(small_model, tokenizer):
    tp, _ = prepare_prompt("A plain photo", tokenizer)
    assert len(small_model.predict_boxes(tp, 0)) == 0


def test_predict_boxes_rejects_over_k_max(small_model, tokenizer):
    tp, _ = prepare_prompt('A sign that says "GO"', tokenizer)
    with pytest.raises(TooManyKeywordsError):
        small_model.predict_boxes(tp, 9)


def test_causal_decoding_prefix_stability(small_model, tokenizer):
    """Autoregressive decoding means earlier boxes cannot depend on later
    slots: predicting k=1 and k=3 must agree on the first box."""
    tp, _ = prepare_prompt('Sign "AA" then "BB" then "CC"', tokenizer)
    one = small_model.predict_boxes(tp, 1).boxes
    three = small_model.predict_boxes(tp, 3).boxes
    assert np.allclose(one[0], three[0], atol=1e-6)


def test_teacher_forcing_matches_sequential_when_fed_own_outputs(small_model, tokenizer):
    """Feeding the model's own sequential outputs as 'ground truth' must
    reproduce those same outputs under the causal mask."""
    tp, _ = prepare_prompt('Sign "AA" then "BB" then "CC"', tokenizer)
    seq = small_model.predict_boxes(tp, 3).boxes
    ids, flags, buckets = _tp_tensors(tp)
    out = small_model(ids, flags, buckets, torch.as_tensor(seq, dtype=torch.float32).unsqueeze(0))
    assert np.allclose(out[0].detach().numpy(), seq, atol=1e-5)


def test_l1_loss_counts_only_real_boxes():
    pred = torch.zeros(1, 2, 4)
    target = torch.ones(1, 2, 4)
    mask = torch.tensor([[True, False]])
    assert layout_l1_loss(pred, target, mask).item() == pytest.approx(1.0)


def test_l1_loss_empty_batch_raises():
    with pytest.raises(DataError):
        layout_l1_loss(torch.zeros(1, 2, 4), torch.zeros(1, 2, 4), torch.zeros(1, 2, dtype=torch.bool))


def test_one_training_step_reduces_loss(small_model, tokenizer):
    tp, _ = prepare_prompt('A sign that says "LEARN"', tokenizer)
    ids, flags, buckets = _tp_tensors(tp)
    batch = LayoutBatch(
        token_ids=ids, keyword_flags=flags, width_buckets=buckets,
        boxes=torch.tensor([[[0.2, 0.3, 0.6, 0.5]]]),
        box_mask=torch.ones(1, 1, dtype=torch.bool),
    )
    opt = make_optimizer(small_model)
    losses = [train_layout_step(batch, small_model, opt) for _ in range(20)]
    assert losses[-1] < losses[0]


def test_layout_batch_shape_check():
    with pytest.raises(DataError):
        LayoutBatch(
            token_ids=torch.zeros(1, 8, dtype=torch.long),
            keyword_flags=torch.zeros(1, 8, dtype=torch.long),
            width_buckets=torch.zeros(1, 8, dtype=torch.long),
            boxes=torch.zeros(1, 3, 4),
            box_mask=torch.zeros(1, 2, dtype=torch.bool),
        )


def test_save_load_round_trip(tmp_path, small_model, tokenizer):
    path = tmp_path / "layout.ckpt"
    save_layout_model(path, small_model, meta={"note": "test"})
    loaded = load_layout_model(path)
    assert loaded.config == small_model.config
    tp, _ = prepare_prompt('A sign that says "SAME"', tokenizer)
    a = small_model.predict_boxes(tp, 1).boxes
    b = loaded.predict_boxes(tp, 1).boxes
    assert np.array_equal(a, b)
