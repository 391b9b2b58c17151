import io
from dataclasses import replace

import numpy as np
import pytest

from depdistill import autodiff as ad
from depdistill import gradcheck
from depdistill.autodiff import Tensor
from depdistill.conllu import Sentence, build_vocab
from depdistill.errors import ContractViolation, ModelLoadError, SizingError
from depdistill.model import (
    BiaffineParser, ModelConfig, biaffine_arc, biaffine_label, count_params, load_model,
    make_batch, param_shapes, save_model, size_student,
)
from depdistill.training import baseline_loss

TOY = ModelConfig(word_dim=2, upos_dim=2, lstm_dim=4, lstm_layers=1, arc_mlp_dim=3,
                  label_mlp_dim=2, mlp_layers=1, label_count=2, word_vocab_size=10,
                  upos_vocab_size=3, emb_dropout=0.0, dropout=0.0)
SMALL = ModelConfig(word_dim=4, upos_dim=3, lstm_dim=6, lstm_layers=2, arc_mlp_dim=5,
                    label_mlp_dim=3, emb_dropout=0.0, dropout=0.0)


def small_model(sentences, rng, config=SMALL):
    return BiaffineParser.create(config, build_vocab(sentences), rng)


class TestCounting:
    def test_toy_config_frozen_value(self):
        # hand enumeration: embeddings 10*2 + 3*2 = 26; one BiLSTM layer
        # 2 * ((4 + 2) * 8 + 8) = 112; MLPs 2 * (4*3 + 3) + 2 * (4*2 + 2) = 50;
        # arc U + u = 9 + 3; label U + W + b = 8 + 8 + 2.
        assert count_params(TOY) == 218

    def test_matches_instantiated_tensors(self, rng):
        for cfg in (TOY, SMALL, ModelConfig(word_vocab_size=50, mlp_layers=2)):
            from depdistill.model import init_params
            params = init_params(cfg, rng)
            assert count_params(cfg) == sum(p.size for p in params.values())
            assert set(params) == set(param_shapes(cfg))

    def test_doubling_dims_increases_count(self):
        base = ModelConfig(word_vocab_size=300)
        doubled = replace(base, word_dim=200, upos_dim=200, lstm_dim=800, arc_mlp_dim=1000,
                          label_mlp_dim=200)
        assert count_params(doubled) > count_params(base)

    def test_full_config_in_millions(self):
        full = ModelConfig()
        assert 3.0 < count_params(full) / 1e6 < 20


class TestSizing:
    def test_identity(self):
        full = ModelConfig()
        assert size_student(full, 1.0) == full

    @pytest.mark.parametrize("target", [0.2, 0.4, 0.6, 0.8])
    def test_targets_within_one_point(self, target):
        full = ModelConfig()
        student = size_student(full, target)
        frac = count_params(student) / count_params(full)
        assert abs(frac - target) <= 0.01
        assert student.lstm_dim % 2 == 0
        assert student.lstm_layers == full.lstm_layers and student.mlp_layers == full.mlp_layers
        assert min(student.word_dim, student.upos_dim, student.arc_mlp_dim, student.label_mlp_dim) >= 2

    def test_twenty_percent_band(self):
        full = ModelConfig()
        frac = count_params(size_student(full, 0.2)) / count_params(full)
        assert 0.19 <= frac <= 0.21

    def test_monotone(self):
        full = ModelConfig()
        fracs = [count_params(size_student(full, f)) / count_params(full) for f in (0.2, 0.4, 0.6, 0.8)]
        assert fracs == sorted(fracs) and len(set(fracs)) == 4

    def test_invalid(self):
        with pytest.raises(ValueError):
            size_student(ModelConfig(), 0.0)
        with pytest.raises(ValueError):
            size_student(ModelConfig(), 1.5)

    def test_unreachable(self):
        # embeddings of a huge vocabulary cannot shrink below the dimension floor of 2
        cfg = ModelConfig(word_vocab_size=5_000_000)
        with pytest.raises(SizingError) as exc:
            size_student(cfg, 0.005)
        assert exc.value.closest_fraction > 0.015


class TestForward:
    def test_shapes(self, fig1, rng):
        model = small_model([fig1], rng)
        batch = make_batch([fig1], model.vocab)
        ctx = model.encode(batch)
        assert ctx.shape == (1, 9, SMALL.lstm_dim)
        arcs = model.score_arcs(ctx)
        assert arcs.shape == (1, 8, 9)
        labels = model.score_labels(ctx, batch.heads)
        assert labels.shape == (1, 8, len(model.vocab.labels))

    def test_single_token(self, rng):
        s = Sentence(["a"], ["X"], [0], ["root"])
        model = small_model([s], rng)
        assert model.encode(make_batch([s], model.vocab)).shape[1] == 2

    def test_deterministic_without_dropout(self, fig1, rng):
        cfg = replace(SMALL, emb_dropout=0.5, dropout=0.5)
        model = small_model([fig1], rng, cfg)
        batch = make_batch([fig1], model.vocab)
        a = model.forward(batch).arc_scores.data
        b = model.forward(batch).arc_scores.data
        assert np.array_equal(a, b)
        c = model.forward(batch, train=True, rng=np.random.default_rng(0)).arc_scores.data
        assert not np.array_equal(a, c)

    def test_zero_parameters_give_zero_context(self, fig1, rng):
        model = small_model([fig1], rng)
        for t in model.params.values():
            t.data[:] = 0.0
        ctx = model.encode(make_batch([fig1], model.vocab))
        assert np.all(ctx.data == 0.0)
        arcs = model.score_arcs(ctx)
        assert np.all(arcs.data == 0.0)
        labels = model.score_labels(ctx, make_batch([fig1], model.vocab).heads).data
        assert np.all(labels == 0.0)
        np.testing.assert_allclose(ad.softmax_array(labels), 1.0 / labels.shape[-1])

    def test_out_of_vocab_id(self, fig1, rng):
        model = small_model([fig1], rng)
        batch = make_batch([fig1], model.vocab)
        batch.word_ids[0, 1] = 10_000
        with pytest.raises(ContractViolation):
            model.encode(batch)

    def test_head_out_of_range(self, fig1, rng):
        model = small_model([fig1], rng)
        batch = make_batch([fig1], model.vocab)
        ctx = model.encode(batch)
        with pytest.raises(ContractViolation):
            model.score_labels(ctx, np.full((1, 8), 9))

    def test_padding_does_not_change_arc_softmax(self, fig1, rng):
        short = Sentence(["The", "son"], ["DET", "NOUN"], [2, 0], ["det", "root"])
        model = small_model([fig1, short], rng)
        alone = model.forward(make_batch([short], model.vocab)).arc_scores.data[0]
        batch = make_batch([fig1, short], model.vocab)
        padded = model.forward(batch).arc_scores.data[1]
        from depdistill.model import arc_validity
        valid = arc_validity(batch)[1]
        masked = np.where(valid, padded, -np.inf)
        assert np.isneginf(masked[:2, 3:]).all()
        p_pad = ad.softmax_array(masked[:2])
        p_alone = ad.softmax_array(np.where(arc_validity(make_batch([short], model.vocab))[0], alone, -np.inf))
        np.testing.assert_allclose(p_pad[:, :3], p_alone, atol=1e-12)
        assert np.all(p_pad[:, 3:] == 0)


class TestBiaffine:
    def test_scalar_toy(self):
        s = biaffine_arc(Tensor([[[2.0]]]), Tensor([[[3.0]]]), Tensor([[1.0]]), Tensor([1.0]))
        assert s.data.item() == 9.0

    def test_zero_weights(self, rng):
        s = biaffine_arc(Tensor(rng.normal(size=(1, 3, 4))), Tensor(rng.normal(size=(1, 4, 4))),
                         Tensor(np.zeros((4, 4))), Tensor(np.zeros(4)))
        assert np.all(s.data == 0)

    def test_label_toy_prefers_label_one_only_for_root(self):
        # 1-dim features: dep = 1; head vector is 1 for ROOT, -1 for a word.
        # label 1 bilinear weight 2, label 0 weight 0; bias favours label 0 by 1.
        U = Tensor(np.array([[[0.0, 2.0]]]).reshape(1, 2, 1))
        W = Tensor(np.zeros((2, 2)))
        b = Tensor(np.array([1.0, 0.0]))
        dep = Tensor([[[1.0], [1.0]]])
        heads = Tensor([[[1.0], [-1.0]]])
        s = biaffine_label(dep, heads, U, W, b).data[0]
        # ROOT: label0 = 1, label1 = 2; word head: label0 = 1, label1 = -2
        np.testing.assert_allclose(s, [[1.0, 2.0], [1.0, -2.0]])
        assert list(np.argmax(s, axis=-1)) == [1, 0]


class TestFiles:
    def test_round_trip_bit_exact(self, fig1, rng, tmp_path):
        model = small_model([fig1], rng)
        path = tmp_path / "m.bin"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.config == model.config and loaded.vocab == model.vocab
        for k, t in model.params.items():
            assert np.array_equal(loaded.params[k].data, t.data)
        again = tmp_path / "m2.bin"
        save_model(again, loaded)
        assert path.read_bytes() == again.read_bytes()

    def test_bad_magic(self, fig1, rng):
        buf = io.BytesIO()
        save_model(buf, small_model([fig1], rng))
        data = bytearray(buf.getvalue())
        data[0] ^= 0xFF
        with pytest.raises(ModelLoadError):
            load_model(io.BytesIO(bytes(data)))

    def test_truncated_and_version(self, fig1, rng):
        buf = io.BytesIO()
        save_model(buf, small_model([fig1], rng))
        data = buf.getvalue()
        with pytest.raises(ModelLoadError):
            load_model(io.BytesIO(data[:-5]))
        bumped = data[:8] + (99).to_bytes(4, "little") + data[12:]
        with pytest.raises(ModelLoadError):
            load_model(io.BytesIO(bumped))


def randomize_away_from_kinks(model, batch, rng, margin=1e-3):
    """O(1) random weights (biases too) with every ReLU input at least ``margin`` from 0.

    Finite differences straddling a ReLU kink are meaningless, so draw until
    no pre-activation sits near one.
    """
    for _ in range(100):
        for t in model.params.values():
            t.data[:] = rng.normal(scale=0.5, size=t.shape)
        ctx = model.encode(batch)
        pre = [(ctx @ model.params[f"mlp.{name}.0.w"] + model.params[f"mlp.{name}.0.b"]).data
               for name in ("arc_dep", "arc_head", "lab_dep", "lab_head")]
        if min(np.abs(p).min() for p in pre) > margin:
            return
    raise AssertionError("could not draw kink-free parameters")


def test_end_to_end_gradient_three_tokens(rng):
    s = Sentence(["a", "b", "c"], ["DET", "NOUN", "VERB"], [2, 3, 0], ["det", "nsubj", "root"])
    model = small_model([s], rng)
    batch = make_batch([s], model.vocab)
    randomize_away_from_kinks(model, batch, rng)
    tensors = list(model.params.values())
    err = gradcheck.check(lambda: baseline_loss(model, batch).total, tensors, max_entries=25)
    assert err < 1e-4
