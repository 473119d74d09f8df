import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saint import autodiff as ad
from saint.data import Batch
from saint.model import ModelConfig, SaintModel

from helpers import direct_row_attention, model_gradcheck, random_dataset


def small_model(variant="saint", n_cat=2, n_cont=3, dim=8, heads=2, seed=0, **kw):
    ds = random_dataset(m=32, n_cat=n_cat, n_cont=n_cont, seed=seed)
    cfg = ModelConfig.for_variant(variant, dim=dim, heads=heads, **kw)
    return ds, SaintModel(ds.schema, cfg, seed=seed)


def test_config_defaults_follow_variant_table():
    s, i, both = (ModelConfig.for_variant(v) for v in ("saint-s", "saint-i", "saint"))
    assert (s.stages, s.heads) == (6, 8)
    assert (i.stages, i.heads) == (1, 8)
    assert (both.stages, both.heads) == (1, 8)
    assert both.dim == 32
    assert (both.self_head_dim, both.inter_head_dim) == (16, 64)
    assert s.ff_dropout == 0.1 and i.ff_dropout == 0.8 and both.ff_dropout == 0.8
    assert both.dropout_attn == 0.1
    assert both.ff_width == 4 * 32


def test_default_head_dims_fall_back_to_d_over_h():
    cfg = ModelConfig(dim=32, heads=8, d_head_self=None, d_head_inter=None)
    assert cfg.self_head_dim == 4 and cfg.inter_head_dim == 4
    with pytest.raises(ValueError):
        ModelConfig(dim=30, heads=8, d_head_self=None)


def test_variant_block_composition():
    for variant, has_self, has_inter in (("saint_s", True, False), ("saint_i", False, True), ("saint", True, True)):
        _, m = small_model(variant)
        for stage in m.stages:
            assert (stage.self_block is not None) == has_self
            assert (stage.inter_block is not None) == has_inter


def test_embed_shape_sixteen_features_dim_32():
    ds = random_dataset(m=10, n_cat=9, n_cont=7)
    m = SaintModel(ds.schema, ModelConfig.for_variant("saint"))
    assert m.embed(ds.batch(np.arange(5))).shape == (5, 17, 32)


def test_zero_continuous_value_with_zero_bias_embeds_to_zero():
    ds, m = small_model(n_cat=1, n_cont=2)
    b = ds.batch(np.arange(4))
    b.cont[:] = 0.0
    tokens = m.embed(b).data
    assert not tokens[:, 2:, :].any()


def test_categorical_change_is_local_to_its_token():
    ds, m = small_model(n_cat=2, n_cont=2)
    b = ds.batch(np.arange(2))
    b.cat[1] = b.cat[0]
    b.cont[1] = b.cont[0]
    b.cat[1, 1] = (b.cat[0, 1] + 1) % 4
    e = m.embed(b).data
    differs = np.abs(e[0] - e[1]).max(axis=1) > 0
    assert differs.tolist() == [False, False, True, False, False]


def test_embed_rejects_bad_id_with_column_name():
    ds, m = small_model()
    b = ds.batch(np.arange(3))
    b.cat[0, 1] = 99
    with pytest.raises(IndexError, match="cat1"):
        m.embed(b)


def test_single_token_attention_is_one():
    m = SaintModel(random_dataset(m=4).schema, ModelConfig.for_variant("saint_s", dim=8, heads=2, stages=1))
    m.eval()
    attn = m.stages[0].self_block.attn
    sink = {}
    attn(ad.Tensor(np.random.default_rng(0).standard_normal((3, 1, 8))), None, sink)
    np.testing.assert_array_equal(sink["weights"], 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_intersample_matches_direct_row_attention(seed):
    rng = np.random.default_rng(seed)
    b, n, d, h = 5, 3, 4, 2
    ds = random_dataset(m=8, n_cat=1, n_cont=n - 1, seed=seed)
    m = SaintModel(ds.schema, ModelConfig.for_variant("saint_i", dim=d, heads=h, d_head_inter=None,
                                                        dropout_attn=0.0, dropout_ff=0.0), seed=seed)
    m.eval()
    with ad.default_dtype(np.float64):
        x = rng.standard_normal((b, n + 1, d))
        block = m.stages[0].inter_block.attn
        got = block(ad.Tensor(x, dtype=np.float64)).data
    np.testing.assert_allclose(got, direct_row_attention(x, block.attn), atol=1e-5)


def test_intersample_single_row_returns_value_projection():
    ds, m = small_model("saint_i", dropout_attn=0.0, dropout_ff=0.0)
    m.eval()
    x = np.random.default_rng(0).standard_normal((1, m.n_tokens, 8))
    block = m.stages[0].inter_block.attn
    sink = {}
    out = block(ad.Tensor(x), None, sink).data
    attn = block.attn
    expected = (x.reshape(1, -1) @ attn.value.weight.data) @ attn.out.weight.data + attn.out.bias.data
    np.testing.assert_allclose(out.reshape(1, -1), expected, rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(sink["weights"], 1.0)


def test_forward_shapes_for_all_variants():
    for variant in ("saint_s", "saint_i", "saint"):
        ds, m = small_model(variant, stages=2)
        r, rec = m.forward(ds.batch(np.arange(6)), capture=True)
        assert r.shape == (6, 6, 8)
        assert len(rec.self_attention) == 2 and len(rec.intersample) == 2


def test_capture_is_passive():
    ds, m = small_model()
    b = ds.batch(np.arange(6))
    r1, _ = m.forward(b, capture=True, rng=np.random.default_rng(3))
    r2, _ = m.forward(b, capture=False, rng=np.random.default_rng(3))
    assert r1.data.tobytes() == r2.data.tobytes()


def test_attention_rows_are_stochastic():
    ds, m = small_model(stages=2)
    _, rec = m.forward(ds.batch(np.arange(7)), capture=True)
    for w in rec.self_attention + rec.intersample:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-5)
    assert rec.self_attention[0].shape == (7, 2, 6, 6)
    assert rec.intersample[0].shape == (2, 7, 7)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_batch_permutation_equivariance(seed, b):
    ds, m = small_model(seed=seed % 7)
    m.eval()
    batch = ds.batch(np.arange(b))
    perm = np.random.default_rng(seed).permutation(b)
    r, _ = m.forward(batch)
    r_perm, _ = m.forward(batch.take(perm))
    np.testing.assert_allclose(r_perm.data, r.data[perm], atol=1e-5)


def test_column_permutation_leaves_cls_logits_unchanged():
    ds, m = small_model("saint_s", n_cat=3, n_cont=3, stages=2)
    m.eval()
    batch = ds.batch(np.arange(5))
    base = m(batch).data
    cat_perm, cont_perm = np.array([2, 0, 1]), np.array([1, 2, 0])
    cards = m.embedding.cardinalities
    offsets = m.embedding.offsets
    table = m.embedding.cat_table.data
    m.embedding.cat_table.data = np.concatenate([table[offsets[j]:offsets[j] + cards[j]] for j in cat_perm])
    m.embedding.cont_weight.data = m.embedding.cont_weight.data[cont_perm]
    m.embedding.cont_bias.data = m.embedding.cont_bias.data[cont_perm]
    permuted = Batch(batch.cat[:, cat_perm], batch.cont[:, cont_perm], batch.labels, batch.rows)
    np.testing.assert_allclose(m(permuted).data, base, atol=1e-5)


def test_logits_depend_on_cls_only():
    ds, m = small_model()
    r, _ = m.forward(ds.batch(np.arange(4)))
    noisy = r.data.copy()
    noisy[:, 1:, :] += 5.0
    np.testing.assert_array_equal(m.predict(r).data, m.predict(ad.Tensor(noisy)).data)


def test_zero_head_weights_give_uniform_probabilities():
    ds = random_dataset(m=8, n_classes=3)
    m = SaintModel(ds.schema, ModelConfig.for_variant("saint", dim=8, heads=2))
    for p in m.head.parameters():
        p.data[:] = 0
    logits = m(ds.batch(np.arange(4))).data
    assert logits.shape == (4, 3)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, 1 / 3)


def test_binary_task_has_two_logits():
    ds, m = small_model()
    assert m(ds.batch(np.arange(3))).shape == (3, 2)


def test_concat_ablation_skips_continuous_tokens():
    ds, m = small_model(n_cat=2, n_cont=3, cont_embedding="concat")
    assert m.n_tokens == 3
    assert m(ds.batch(np.arange(4))).shape == (4, 2)


def test_positional_encoding_adds_learned_table():
    ds, m = small_model(positional_encoding=True)
    assert m.embedding.position.shape == (m.n_tokens, 8)


def _gradcheck_model(variant, **kw):
    with ad.default_dtype(np.float64):
        ds = random_dataset(m=3, n_cat=1, n_cont=1, card=3, seed=1)
        cfg = ModelConfig.for_variant(variant, dim=4, heads=2, stages=1, d_head_self=None,
                                      d_head_inter=None, dropout_attn=0.0, dropout_ff=0.0, **kw)
        m = SaintModel(ds.schema, cfg, seed=2)
        # spread the parameters so the check is not dominated by near-zero init
        rng = np.random.default_rng(0)
        for p in m.parameters():
            p.data = p.data + rng.standard_normal(p.shape) * 0.5
        batch = ds.batch(np.arange(3))
        return model_gradcheck(m.parameters(), lambda: ad.cross_entropy(m(batch), batch.labels))


@pytest.mark.parametrize("variant", ["saint", "saint_s", "saint_i"])
def test_full_model_gradient_64bit(variant):
    assert _gradcheck_model(variant) < 1e-5
