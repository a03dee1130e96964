import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinre import autodiff as ad
from hinre import layers, model as hm
from hinre.autodiff import ParameterSet, Tensor
from hinre.corpus import Document, Entity, LabelIndex, Mention, build_vocab, document_features
from hinre.model import ABLATIONS, HinModel, ModelConfig, PairRef, parameter_count, param_shapes
from hinre.train import expected_param_delta, featurize

import oracles
from conftest import tiny_setup


def arrays(params):
    return {k: t.data for k, t in params.items()}


def oracle_probs(model, feats, head, tail):
    return oracles.hin_probs(len(feats.word_ids), feats.sentence_spans, feats.entity_spans, feats.word_ids,
                             feats.type_ids, feats.coref_ids, head, tail, arrays(model.params),
                             model.cfg.n_spaces)


# -- end to end against the straight-line reference ---------------------------------


def test_forward_pair_matches_reference_tiny(tiny):
    docs, vocab, cfg, model = tiny
    assert cfg.d == 4 and cfg.n_spaces == 2 and cfg.space_dim == 2 and cfg.n_relations == 3
    assert len(docs[0].sentences) == 2
    feats = featurize(docs, vocab, cfg)[0]
    for h, t in [(0, 1), (1, 0)]:
        got = model.forward_pair(feats, h, t).probs.data[0]
        np.testing.assert_allclose(got, oracle_probs(model, feats, h, t), rtol=0, atol=1e-10)


def test_batched_forward_matches_reference_across_documents():
    docs, vocab, cfg, model = tiny_setup(entities=3, sentences=3, seed=4)
    more = tiny_setup(entities=3, sentences=4, seed=9)[0]
    vocab = build_vocab(docs + more, vocab.relations)
    cfg = cfg.replace(vocab_size=len(vocab.words), n_types=len(vocab.types))
    model = HinModel.create(cfg, np.random.default_rng(2), vocab)
    feats = featurize(docs + more, vocab, cfg)
    enc = model.encode(feats)
    pairs = [PairRef(d, a, b) for d in range(2) for a in range(3) for b in range(3) if a != b]
    probs = model.forward(enc, pairs).probs.data
    for q, row in zip(pairs, probs):
        np.testing.assert_allclose(row, oracle_probs(model, feats[q.doc], q.head, q.tail), rtol=0, atol=1e-10)


def test_eval_forward_is_deterministic(tiny):
    docs, vocab, cfg, model = tiny
    feats = featurize(docs, vocab, cfg)[0]
    a = model.forward_pair(feats, 0, 1).probs.data
    model.clear_cache()
    b = model.forward_pair(feats, 0, 1).probs.data
    assert a.tobytes() == b.tobytes()


def test_encoding_is_cached_in_eval_mode(tiny):
    docs, vocab, cfg, model = tiny
    feats = featurize(docs, vocab, cfg)[0]
    model.forward_pair(feats, 0, 1)
    model.forward_pair(feats, 1, 0)
    assert len(model._cache) == 1


def test_zero_output_layer_gives_one_half(tiny):
    docs, vocab, cfg, model = tiny
    model.params["out.w"].data[:] = 0.0
    model.params["out.b"].data[:] = 0.0
    probs = model.forward_pair(featurize(docs, vocab, cfg)[0], 0, 1).probs.data
    assert (probs == 0.5).all()


def test_pair_must_be_distinct(tiny):
    docs, vocab, cfg, model = tiny
    with pytest.raises(ValueError):
        model.forward_pair(featurize(docs, vocab, cfg)[0], 1, 1)


@pytest.mark.parametrize("flag", ABLATIONS)
def test_every_ablation_runs_forward_and_backward(flag):
    docs, vocab, cfg, _ = tiny_setup(entities=3, sentences=2, seed=3)
    cfg = cfg.replace(**{flag: True})
    model = HinModel.create(cfg, np.random.default_rng(0), vocab)
    feats = featurize(docs, vocab, cfg)
    with ad.Tape() as tape:
        out = model.forward(model.encode(feats), [PairRef(0, 0, 1), PairRef(0, 2, 0)])
        loss = ad.bce(out.probs, np.zeros((2, cfg.n_relations)))
    ad.backward(loss, model.params.trainable().values(), tape=tape)
    assert out.probs.shape == (2, cfg.n_relations)
    assert out.entity_blocks.shape == (2, cfg.entity_input_width)
    assert all(np.isfinite(p.grad).all() for p in model.params.trainable().values())


# -- input embedding and entity representation ----------------------------------------


def test_single_token_input_is_concatenation_of_rows():
    doc = Document("d", [["x"]], [Entity([Mention(0, 0, 1, "x", "PER")])])
    vocab = build_vocab([doc], LabelIndex(["r"]))
    cfg = ModelConfig(vocab_size=len(vocab.words), n_types=len(vocab.types), n_relations=1)
    params = hm.init_params(cfg, np.random.default_rng(0))
    feats = document_features(doc, vocab, cfg.max_entities)
    x = hm.embed_input(feats, params).data
    assert x.shape == (1, 140)
    expect = np.concatenate([params["emb.word"].data[vocab.word_id("x")], params["emb.type"].data[vocab.type_id("PER")],
                             params["emb.coref"].data[1]])
    np.testing.assert_array_equal(x[0], expect)


def test_coreference_and_none_rows():
    doc = Document("d", [["a", "q", "a", "b"]],
                   [Entity([Mention(0, 0, 1, "a", "PER"), Mention(0, 2, 3, "a", "PER")]),
                    Entity([Mention(0, 3, 4, "b", "LOC")])])
    vocab = build_vocab([doc], LabelIndex(["r"]))
    f = document_features(doc, vocab, 4)
    assert f.coref_ids[0] == f.coref_ids[2] != 0
    assert f.type_ids[1] == 0 and f.coref_ids[1] == 0


def test_entity_representation_averages():
    h = np.array([[1.0, 0.0], [3.0, 2.0], [5.0, 8.0], [7.0, -1.0]])
    t = Tensor(h)
    np.testing.assert_array_equal(hm.entity_representation(t, [(2, 3)]).data, h[2])
    np.testing.assert_allclose(hm.entity_representation(t, [(0, 1), (3, 4)]).data, (h[0] + h[3]) / 2)
    np.testing.assert_allclose(hm.entity_representation(t, [(0, 2), (3, 4)]).data, ((h[0] + h[1]) / 2 + h[3]) / 2,
                               atol=1e-15)


# -- entity-level inference ------------------------------------------------------------


def small_entity_params(cfg):
    """Hand-set small integers for d = 2, K = 1, d_s = 2."""
    ps = ParameterSet()
    ps.add("proj.0.w0", [[1.0, -1.0], [2.0, 1.0]])
    ps.add("proj.0.w1", [[1.0, 0.0], [-1.0, 2.0]])
    ps.add("biaffine.0", np.arange(8.0).reshape(2, 2, 2) - 3.0)
    ps.add("emb.dist", np.arange(19 * cfg.dist_dim, dtype=float).reshape(19, cfg.dist_dim) % 5 - 2.0)
    w = cfg.entity_input_width
    ps.add("g_e.0.w", (np.arange(2 * w, dtype=float).reshape(2, w) % 3) - 1.0)
    ps.add("g_e.0.b", [1.0, -2.0])
    ps.add("g_e.1.w", [[1.0, 2.0], [-1.0, 1.0]])
    ps.add("g_e.1.b", [0.0, 1.0])
    return ps


def test_entity_inference_straight_line():
    cfg = ModelConfig(hidden=1, subspaces=1, subspace_dim=2, dist_dim=2, dropout=0.0)
    assert cfg.d == 2 and cfg.space_dim == 2
    ps = small_entity_params(cfg)
    e_a, e_b = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    i_e, g_in = hm.entity_inference(Tensor(e_a), Tensor(e_b), [-5], [5], ps, cfg)
    ref, ref_in = oracles.entity_inference(e_a[0], e_b[0], -7, arrays(ps), 1)
    np.testing.assert_allclose(g_in.data[0], ref_in, rtol=0, atol=1e-12)
    np.testing.assert_allclose(i_e.data[0], ref, rtol=0, atol=1e-12)


def test_entity_inference_identical_entities_give_zero_differences(rng):
    cfg = ModelConfig(hidden=2, subspaces=2, subspace_dim=2, dist_dim=3, dropout=0.0)
    ps = hm.init_params(cfg, rng)
    e = Tensor(rng.standard_normal((1, 4)))
    _, g_in = hm.entity_inference(e, e, [0], [0], ps, cfg)
    ds = cfg.space_dim
    blocks = g_in.data[0]
    for k in range(cfg.n_spaces):
        assert (blocks[k * 4 * ds + ds:k * 4 * ds + 2 * ds] == 0).all()
    assert (blocks[-cfg.dist_dim:] == 0).all()


def test_entity_inference_swap_antisymmetry(rng):
    cfg = ModelConfig(hidden=2, subspaces=2, subspace_dim=3, dist_dim=3, dropout=0.0)
    ps = hm.init_params(cfg, rng)
    a, b = Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal((1, 4)))
    _, fwd = hm.entity_inference(a, b, [-6], [6], ps, cfg)
    _, rev = hm.entity_inference(b, a, [6], [-6], ps, cfg)
    ds = cfg.space_dim
    f, r = fwd.data[0], rev.data[0]
    p = arrays(ps)
    for k in range(cfg.n_spaces):
        o = k * 4 * ds
        np.testing.assert_allclose(r[o + ds:o + 2 * ds], -f[o + ds:o + 2 * ds], atol=1e-14)
        np.testing.assert_allclose(r[o + 2 * ds:o + 3 * ds], f[o + 3 * ds:o + 4 * ds], atol=1e-14)
        a_k, b_k = f[o + 2 * ds:o + 3 * ds], f[o + 3 * ds:o + 4 * ds]
        np.testing.assert_allclose(r[o:o + ds], oracles.biaffine_loops(b_k, a_k, p[f"biaffine.{k}"]), atol=1e-12)
    np.testing.assert_allclose(r[-cfg.dist_dim:], -f[-cfg.dist_dim:], atol=1e-14)


# -- sentence and document inference ---------------------------------------------------


def capture_ffnn(monkeypatch):
    seen = []
    real = layers.ffnn_relu

    def spy(x, params, prefix, *a, **k):
        seen.append((prefix, x.data.copy()))
        return real(x, params, prefix, *a, **k)

    monkeypatch.setattr(layers, "ffnn_relu", spy)
    return seen


def test_sentence_matching_vector(monkeypatch, rng):
    cfg = ModelConfig(hidden=1, dropout=0.0)
    ps = hm.init_params(cfg, rng)
    seen = capture_ffnn(monkeypatch)
    hm.sentence_inference(Tensor([[[1.0, 2.0]]]), Tensor([[3.0, 1.0]]), ps, cfg)
    assert seen[0][0] == "g_s"
    np.testing.assert_array_equal(seen[0][1].reshape(-1), [1, 2, 3, 1, -2, 1, 3, 2])
    seen.clear()
    s = rng.standard_normal(2)
    hm.sentence_inference(Tensor(s.reshape(1, 1, 2)), Tensor(s.reshape(1, 2)), ps, cfg)
    np.testing.assert_array_equal(seen[0][1].reshape(-1), np.concatenate([s, s, [0, 0], s * s]))


def test_no_sentence_inference_passes_sentences_through(rng):
    cfg = ModelConfig(hidden=1, dropout=0.0, no_sentence_inference=True)
    s = Tensor(rng.standard_normal((2, 3, 2)))
    assert hm.sentence_inference(s, Tensor(rng.standard_normal((2, 2))), ParameterSet(), cfg) is s


def doc_params(rng, d, hidden):
    ps = ParameterSet()
    for name, shape in {**layers.lstm_shapes("lstm_d", d, hidden), **layers.attention_shapes("sent_att", d)}.items():
        ps.add(name, rng.standard_normal(shape) * 0.5)
    return ps


def test_document_inference_single_sentence(rng):
    ps = doc_params(rng, 4, 2)
    i_s = rng.standard_normal((1, 1, 4))
    i_d, w = hm.document_inference(Tensor(i_s), [1], ps)
    c = layers.bilstm(Tensor(i_s), [1], ps, "lstm_d").data
    np.testing.assert_array_equal(w.data, [[1.0]])
    np.testing.assert_allclose(i_d.data[0], c[0, 0], atol=1e-15)


def test_document_inference_uniform_and_resummed(rng):
    ps = doc_params(rng, 4, 2)
    i_s = rng.standard_normal((1, 3, 4))
    i_d, w = hm.document_inference(Tensor(i_s), [3], ps)
    p = arrays(ps)
    c = oracles.bilstm_states(list(i_s[0]), p, "lstm_d")
    ref, ref_w = oracles.attention(c, p["sent_att.u"], p["sent_att.w"], p["sent_att.b"])
    np.testing.assert_allclose(i_d.data[0], ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(w.data[0], ref_w, rtol=0, atol=1e-12)
    ps["sent_att.u"].data[:] = 0.0
    _, w = hm.document_inference(Tensor(i_s), [3], ps)
    np.testing.assert_allclose(w.data[0], [1 / 3] * 3, atol=1e-15)


# -- parameter accounting ----------------------------------------------------------------


def test_full_size_bilinear_delta():
    cfg = ModelConfig(hidden=128, subspaces=2, subspace_dim=128)
    assert cfg.d == 256
    delta = parameter_count(cfg.replace(no_bilinear=True)) - parameter_count(cfg)
    assert delta == -2 * 128 ** 3 == -4_194_304


def test_single_space_projection_is_one_square_pair():
    cfg = ModelConfig(hidden=8, subspaces=2, single_space=True)
    shapes = param_shapes(cfg)
    assert shapes["proj.0.w0"] == (16, 16) and shapes["proj.0.w1"] == (16, 16)
    assert "proj.1.w0" not in shapes
    assert hm.projection_count(cfg) == 2 * 16 * 16


def test_live_width_shrinks_with_dropped_blocks():
    cfg = ModelConfig(hidden=4, subspaces=2, subspace_dim=3, dist_dim=5)
    assert cfg.entity_input_width == 2 * 4 * 3 + 5
    assert cfg.replace(no_translation=True).live_entity_input_width == cfg.entity_input_width - 2 * 3
    assert cfg.replace(no_bilinear=True, no_translation=True).live_entity_input_width == 2 * 2 * 3 + 5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 5), st.sampled_from(ABLATIONS),
       st.booleans(), st.booleans())
def test_closed_form_deltas(hidden, k, ds, flag, sent_off, bil_off):
    cfg = ModelConfig(vocab_size=20, n_types=3, n_relations=4, word_dim=3, type_dim=2, coref_dim=2, dist_dim=2,
                      hidden=hidden, subspaces=k, subspace_dim=ds, no_sentence_inference=sent_off,
                      no_bilinear=bil_off)
    actual = parameter_count(cfg.replace(**{flag: True})) - parameter_count(cfg)
    assert actual == expected_param_delta(cfg, flag)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig.from_json({"hiddenn": 3})
    cfg = ModelConfig(hidden=3)
    assert ModelConfig.from_json(cfg.to_json()) == cfg


def test_parameter_names_match_config(tiny):
    _, _, cfg, model = tiny
    assert set(model.params.names()) == set(param_shapes(cfg))
    assert model.params.count() == parameter_count(cfg)
    with pytest.raises(ValueError):
        HinModel(cfg.replace(hidden=3), model.params)
