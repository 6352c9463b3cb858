"""Generation sub-network: encoder, fusion, attention, decoding, loss."""

import numpy as np
import numpy.testing as npt
import pytest

from empathia.corpus import GenerationVocab
from empathia.errors import InputError
from empathia.seq2seq import (EncoderOutput, Seq2SeqGenerator, attend,
                              fuse_emotion, generation_loss)
from oracles import fd_gradcheck


def make_generator(rng, vocab_size=12, d_model=8, d_emb=5, max_len=16):
    return Seq2SeqGenerator(rng, vocab_size, d_model=d_model, d_emb=d_emb,
                            max_len=max_len, dropout=0.0)


class TestEncodeContext:
    def test_single_token_final_state_equals_only_row(self):
        rng = np.random.default_rng(0)
        gen = make_generator(rng)
        ids = np.array([[5]])
        enc, _ = gen.encode_context(ids, np.array([1]))
        assert enc.states.shape == (1, 1, 8)
        npt.assert_array_equal(enc.h_final[0], enc.states[0, 0])

    def test_final_state_width_is_two_directions(self):
        rng = np.random.default_rng(1)
        gen = Seq2SeqGenerator(rng, vocab_size=30, d_model=768, d_emb=32,
                               max_len=16, dropout=0.0)
        ids = rng.integers(4, 30, size=(2, 5))
        enc, _ = gen.encode_context(ids, np.array([5, 5]))
        assert enc.h_final.shape == (2, 768)
        assert enc.states.shape == (2, 5, 768)
        # forward half comes from the forward GRU (384), backward half from
        # the reversed GRU
        npt.assert_array_equal(enc.h_final[:, :384], enc.states[:, -1, :384])
        npt.assert_array_equal(enc.h_final[:, 384:], enc.states[:, 0, 384:])

    def test_tied_directions_mirror_reversed_input(self):
        rng = np.random.default_rng(2)
        gen = make_generator(rng)
        # tie backward-direction parameters to the forward ones
        gen.p["eb.Wx"][...] = gen.p["ef.Wx"]
        gen.p["eb.Wh"][...] = gen.p["ef.Wh"]
        gen.p["eb.b"][...] = gen.p["ef.b"]
        ids = rng.integers(4, 12, size=(1, 6))
        rev = ids[:, ::-1].copy()
        lengths = np.array([6])
        enc_fwd, _ = gen.encode_context(ids, lengths)
        enc_rev, _ = gen.encode_context(rev, lengths)
        h2 = gen.h2
        npt.assert_array_equal(enc_fwd.h_final[0, :h2],
                               enc_rev.h_final[0, h2:])

    def test_zero_length_is_input_error(self):
        rng = np.random.default_rng(3)
        gen = make_generator(rng)
        with pytest.raises(InputError):
            gen.encode_context(np.zeros((1, 0), dtype=np.int64), np.array([0]))
        with pytest.raises(InputError):
            gen.encode_context(np.zeros((1, 3), dtype=np.int64), np.array([0]))


class TestFuseEmotion:
    def test_mean_of_equal_vectors_is_identity(self):
        v = np.random.default_rng(4).normal(size=(2, 8))
        npt.assert_array_equal(fuse_emotion(v, v.copy()), v)

    def test_opposite_vectors_cancel(self):
        v = np.random.default_rng(5).normal(size=(2, 8))
        npt.assert_array_equal(fuse_emotion(v, -v), np.zeros_like(v))

    def test_hand_computed_mean(self):
        c_e = np.array([[1.0, 2.0]])
        h = np.array([[3.0, 4.0]])
        npt.assert_array_equal(fuse_emotion(c_e, h), [[2.0, 3.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            fuse_emotion(np.zeros((1, 4)), np.zeros((1, 8)))


class TestAttend:
    def test_single_step_gets_full_weight(self):
        rng = np.random.default_rng(6)
        enc = EncoderOutput(states=rng.normal(size=(1, 1, 4)),
                            h_final=np.zeros((1, 4)), mask=np.ones((1, 1)))
        ctx, alpha = attend(rng.normal(size=(1, 4)), enc, rng.normal(size=(4, 4)))
        npt.assert_array_equal(alpha, [[1.0]])
        npt.assert_array_equal(ctx[0], enc.states[0, 0])

    def test_zero_bilinear_gives_uniform(self):
        rng = np.random.default_rng(7)
        enc = EncoderOutput(states=rng.normal(size=(1, 4, 4)),
                            h_final=np.zeros((1, 4)), mask=np.ones((1, 4)))
        ctx, alpha = attend(rng.normal(size=(1, 4)), enc, np.zeros((4, 4)))
        npt.assert_allclose(alpha, 0.25, atol=1e-12)
        npt.assert_allclose(ctx[0], enc.states[0].mean(axis=0), rtol=1e-12)

    def test_hand_computed_bilinear_scores(self):
        states = np.array([[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]])
        W_f = np.array([[0.5, -0.25], [1.0, 0.75]])
        h_dec = np.array([[0.2, -0.4]])
        enc = EncoderOutput(states=states, h_final=np.zeros((1, 2)),
                            mask=np.ones((1, 3)))
        ctx, alpha = attend(h_dec, enc, W_f)
        # brute force: score_i = states_i . (W_f @ h matrix-vector)
        v = W_f @ h_dec[0]
        scores = [states[0, i] @ v for i in range(3)]
        exps = np.exp(scores - np.max(scores))
        expected_alpha = exps / exps.sum()
        expected_ctx = sum(expected_alpha[i] * states[0, i] for i in range(3))
        npt.assert_allclose(alpha[0], expected_alpha, rtol=1e-12)
        npt.assert_allclose(ctx[0], expected_ctx, rtol=1e-12)

    def test_fully_masked_is_input_error(self):
        enc = EncoderOutput(states=np.zeros((1, 3, 4)),
                            h_final=np.zeros((1, 4)), mask=np.zeros((1, 3)))
        with pytest.raises(InputError):
            attend(np.zeros((1, 4)), enc, np.zeros((4, 4)))


class TestDecodeStep:
    def _setup(self, seed=8):
        rng = np.random.default_rng(seed)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(2, 5))
        enc, _ = gen.encode_context(ids, np.array([5, 3]))
        c_e = rng.normal(size=(2, 8))
        h0 = fuse_emotion(c_e, enc.h_final)
        return gen, enc, h0

    def test_distribution_sums_to_one(self):
        gen, enc, h0 = self._setup()
        state = gen.initial_state(h0, 2)
        out, _ = gen.decode_step(state, enc)
        npt.assert_allclose(out.distribution.sum(axis=1), 1.0, atol=1e-5)
        assert np.all(out.distribution >= 0)

    def test_attentional_vector_in_tanh_range(self):
        gen, enc, h0 = self._setup()
        state = gen.initial_state(h0, 2)
        out, _ = gen.decode_step(state, enc)
        assert np.all(out.h_tilde > -1.0) and np.all(out.h_tilde < 1.0)

    def test_two_steps_match_scalar_recurrence(self):
        gen, enc, h0 = self._setup(seed=9)
        p = gen.p
        H, Ed = gen.d, gen.d_emb

        def sigmoid(x):
            return 1.0 / (1.0 + np.exp(-x))

        def scalar_step(prev_tok, h, htprev, b):
            x = np.concatenate([p["emb"][prev_tok], htprev])
            gx = x @ p["dec.Wx"] + p["dec.b"]
            gh = h @ p["dec.Wh"]
            z = sigmoid(gx[:H] + gh[:H])
            r = sigmoid(gx[H:2 * H] + gh[H:2 * H])
            c = np.tanh(gx[2 * H:] + r * gh[2 * H:])
            h_new = (1.0 - z) * c + z * h
            v = p["attn.Wf"] @ h_new
            scores = np.array([enc.states[b, s] @ v
                               for s in range(enc.states.shape[1])])
            scores = np.where(enc.mask[b] > 0, scores, -np.inf)
            e = np.exp(scores - np.max(scores))
            alpha = e / e.sum()
            ctx = np.zeros(H)
            for s in range(enc.states.shape[1]):
                ctx += alpha[s] * enc.states[b, s]
            h_tilde = np.tanh(p["out.Wc"] @ np.concatenate([h_new, ctx]))
            logits = p["out.WV"] @ h_tilde
            ee = np.exp(logits - logits.max())
            return h_new, h_tilde, ee / ee.sum()

        state = gen.initial_state(h0, 2)
        out1, state1 = gen.decode_step(state, enc)
        state1.prev_token = np.array([7, 9])
        out2, _ = gen.decode_step(state1, enc)

        for b in range(2):
            h1, ht1, d1 = scalar_step(GenerationVocab.BOS, h0[b],
                                      np.zeros(H), b)
            npt.assert_allclose(out1.h_tilde[b], ht1, rtol=1e-10)
            npt.assert_allclose(out1.distribution[b], d1, rtol=1e-10)
            h2, ht2, d2 = scalar_step([7, 9][b], h1, ht1, b)
            npt.assert_allclose(out2.h_tilde[b], ht2, rtol=1e-10)
            npt.assert_allclose(out2.distribution[b], d2, rtol=1e-10)


class TestGenerationLoss:
    def _probs(self, picked):
        # build distributions whose gold-token probabilities are `picked`
        V = 5
        T = len(picked)
        probs = np.zeros((1, T, V))
        target = np.zeros((1, T + 1), dtype=np.int64)
        target[0, 0] = GenerationVocab.BOS
        for t, pv in enumerate(picked):
            target[0, t + 1] = 4
            probs[0, t, 4] = pv
            probs[0, t, 1] = 1.0 - pv
        return probs, target

    def test_perfect_prediction_gives_zero(self):
        probs, target = self._probs([1.0, 1.0, 1.0])
        loss, _ = generation_loss(probs, target, np.array([4]))
        assert loss == 0.0

    def test_uniform_over_five(self):
        V, T = 5, 3
        probs = np.full((1, T, V), 1.0 / V)
        target = np.array([[2, 4, 4, 3]])
        loss, _ = generation_loss(probs, target, np.array([4]))
        npt.assert_allclose(loss, np.log(5), rtol=1e-12)

    def test_hand_computed_two_steps(self):
        probs, target = self._probs([0.5, 0.2])
        loss, _ = generation_loss(probs, target, np.array([3]))
        npt.assert_allclose(loss, (np.log(2) + np.log(5)) / 2, rtol=1e-12)

    def test_pad_positions_contribute_nothing(self):
        probs, target = self._probs([0.5, 0.2])
        # extend with a PAD position carrying garbage probabilities
        probs = np.concatenate([probs, np.full((1, 1, 5), 0.01)], axis=1)
        target = np.concatenate([target, [[0]]], axis=1)
        loss, _ = generation_loss(probs, target, np.array([3]))
        npt.assert_allclose(loss, (np.log(2) + np.log(5)) / 2, rtol=1e-12)

    def test_matches_independent_cross_entropy(self):
        # oracle: explicit per-token mean NLL with loops
        rng = np.random.default_rng(10)
        B, T, V = 3, 5, 7
        logits = rng.normal(size=(B, T, V))
        probs = np.exp(logits) / np.exp(logits).sum(axis=2, keepdims=True)
        target = rng.integers(4, V, size=(B, T + 1))
        target[:, 0] = GenerationVocab.BOS
        lengths = np.array([6, 4, 5])
        loss, _ = generation_loss(probs, target, lengths)
        total, count = 0.0, 0
        for b in range(B):
            for t in range(int(lengths[b]) - 1):
                total += -np.log(probs[b, t, target[b, t + 1]])
                count += 1
        npt.assert_allclose(loss, total / count, rtol=1e-10)


class TestGreedyDecode:
    def test_rigged_eos_yields_empty_response(self):
        rng = np.random.default_rng(11)
        gen = make_generator(rng)
        gen.p["out.WV"][...] = -1000.0
        gen.p["out.WV"][GenerationVocab.EOS, :] = 0.0
        ids = rng.integers(4, 12, size=(1, 4))
        out = gen.greedy_decode(ids, np.array([4]), np.zeros((1, 8)))
        assert out == [[]]

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(2, 5))
        c_e = rng.normal(size=(2, 8))
        a = gen.greedy_decode(ids, np.array([5, 4]), c_e)
        b = gen.greedy_decode(ids, np.array([5, 4]), c_e)
        assert a == b

    def test_max_len_cap(self):
        rng = np.random.default_rng(13)
        gen = make_generator(rng)
        gen.p["out.WV"][...] = -1000.0
        gen.p["out.WV"][5, :] = 0.0  # never emits EOS
        ids = rng.integers(4, 12, size=(1, 4))
        out = gen.greedy_decode(ids, np.array([4]), np.zeros((1, 8)), max_len=7)
        assert out == [[5] * 7]
        with pytest.raises(InputError):
            gen.greedy_decode(ids, np.array([4]), np.zeros((1, 8)), max_len=99)


class TestMaskingInvariance:
    def test_pad_extension_is_bit_identical(self):
        rng = np.random.default_rng(14)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(1, 5))
        lengths = np.array([5])
        c_e = rng.normal(size=(1, 8))
        enc, _ = gen.encode_context(ids, lengths)
        h0 = fuse_emotion(c_e, enc.h_final)
        state = gen.initial_state(h0, 1)
        out, _ = gen.decode_step(state, enc)

        padded = np.concatenate([ids, np.zeros((1, 3), dtype=np.int64)], axis=1)
        enc_p, _ = gen.encode_context(padded, lengths)
        h0_p = fuse_emotion(c_e, enc_p.h_final)
        npt.assert_array_equal(h0, h0_p)
        state_p = gen.initial_state(h0_p, 1)
        out_p, _ = gen.decode_step(state_p, enc_p)
        npt.assert_array_equal(out.distribution, out_p.distribution)
        npt.assert_array_equal(out.h_tilde, out_p.h_tilde)

    def test_greedy_decode_pad_invariant(self):
        rng = np.random.default_rng(15)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(1, 5))
        c_e = rng.normal(size=(1, 8))
        a = gen.greedy_decode(ids, np.array([5]), c_e)
        padded = np.concatenate([ids, np.zeros((1, 4), dtype=np.int64)], axis=1)
        b = gen.greedy_decode(padded, np.array([5]), c_e)
        assert a == b


class TestFivePairMemorization:
    def test_overfit_reproduces_each_response(self, tmp_path):
        # memorization experiment, fixed seed: five distinct pairs
        from empathia import synth
        from empathia.corpus import batchify, build_examples, load_corpus
        from empathia.training import TrainConfig, train

        pairs = [("i lost my wallet today", "oh no that is really unfortunate"),
                 ("we won the finals", "wow congratulations to your team"),
                 ("my cat is sick", "i hope your cat gets better soon"),
                 ("i got a promotion", "you earned it well done"),
                 ("the rain ruined our picnic", "maybe next weekend will be sunny")]
        rows = []
        for i, (s, l) in enumerate(pairs):
            rows.extend(synth._conversation_rows(
                f"five:{i}", synth.EMOTIONS_32[i], s, [s, l], "train"))
        corpus = tmp_path / "five.csv"
        synth.write_corpus(str(corpus), rows)
        cfg = TrainConfig(batch_size=1, epochs=60, learning_rate=0.008,
                          dropout_encdec=0.0, dropout_emotion=0.0,
                          grad_clip=1.0, seed=7, d_model=32, encoder_layers=2,
                          encoder_heads=4, d_emb=32, min_freq=1,
                          weight_decay=0.0)
        ckpt = train(cfg, str(corpus), str(tmp_path / "run")).final
        convs, _ = load_corpus(str(corpus), "train")
        examples, _ = build_examples(convs, ckpt.gen_vocab, ckpt.cls_vocab, 80)
        batch = next(batchify(examples, len(examples)))
        decoded, _ = ckpt.model.predict_batch(batch)
        for ex, ids in zip(examples, decoded):
            assert ckpt.gen_vocab.decode(ids) == ex.target_words


class TestJointInputSensitivity:
    def test_emotion_representation_changes_initial_state(self):
        rng = np.random.default_rng(16)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(1, 5))
        enc, _ = gen.encode_context(ids, np.array([5]))
        c_e1 = rng.normal(size=(1, 8))
        c_e2 = c_e1 + rng.normal(size=(1, 8)) * 0.5
        h0_1 = fuse_emotion(c_e1, enc.h_final)
        h0_2 = fuse_emotion(c_e2, enc.h_final)
        assert not np.allclose(h0_1, h0_2)
        s1, _ = gen.decode_step(gen.initial_state(h0_1, 1), enc)
        s2, _ = gen.decode_step(gen.initial_state(h0_2, 1), enc)
        assert not np.allclose(s1.distribution, s2.distribution)


class TestGeneratorGradients:
    def test_fd_check_generator_parameters(self):
        rng = np.random.default_rng(17)
        gen = make_generator(rng)
        ids = rng.integers(4, 12, size=(2, 4))
        lengths = np.array([4, 3])
        c_e = rng.normal(size=(2, 8))
        target = np.array([[2, 5, 6, 3], [2, 7, 3, 0]])
        t_len = np.array([4, 3])

        def loss():
            enc, _ = gen.encode_context(ids, lengths)
            h0 = fuse_emotion(c_e, enc.h_final)
            probs, _ = gen.decode_teacher(enc, h0, target)
            val, _ = generation_loss(probs, target, t_len)
            return val

        gen.zero_grads()
        enc, enc_cache = gen.encode_context(ids, lengths)
        h0 = fuse_emotion(c_e, enc.h_final)
        probs, dec_cache = gen.decode_teacher(enc, h0, target)
        _, _ = generation_loss(probs, target, t_len)
        dh0, d_states = gen.decoder_backward(dec_cache, target, t_len)
        gen.encoder_backward(d_states, dh0 * 0.5, enc_cache)

        named = {name: (arr, grad) for name, arr, grad in gen.param_items()}
        selected = [(n, *named[n]) for n in
                    ("attn.Wf", "out.WV", "out.Wc", "dec.Wx", "dec.Wh",
                     "dec.b", "ef.Wx", "eb.Wh", "emb")]
        checked, failed, worst = fd_gradcheck(loss, selected, rng,
                                              n_coords=10, rel_tol=1e-3)
        assert failed == 0, worst
