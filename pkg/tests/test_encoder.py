"""Emotion classification sub-network: pooling, classifier, backbones."""

import numpy as np
import numpy.testing as npt
import pytest

from empathia import backend
from empathia.encoder import (EmotionHead, TransformerBackbone, classify_emotion,
                              emotion_loss, pool_cls, pool_cls_backward,
                              swap_backbone)
from empathia.errors import ConfigError, InputError, NumericError
from empathia.layers import softmax
from oracles import fd_gradcheck


def make_inputs(rng, B, T, V):
    ids = rng.integers(3, V, size=(B, T))
    ids[:, 0] = 2  # [CLS]
    mask = np.ones((B, T))
    return ids, mask


class TestEncodeLayers:
    def test_stack_shape_is_layers_by_width(self):
        rng = np.random.default_rng(0)
        bb = TransformerBackbone(rng, vocab_size=20, d_model=64, n_layers=12,
                                 n_heads=4, max_len=16)
        ids, mask = make_inputs(rng, 2, 7, 20)
        stack, _ = bb.encoder.forward(ids, mask)
        assert stack.shape == (2, 12, 64)

    def test_deterministic_in_inference_mode(self):
        rng = np.random.default_rng(1)
        bb = TransformerBackbone(rng, vocab_size=15, d_model=32, n_layers=2,
                                 n_heads=4, max_len=16)
        ids, mask = make_inputs(rng, 3, 6, 15)
        s1, _ = bb.encoder.forward(ids, mask)
        s2, _ = bb.encoder.forward(ids, mask)
        npt.assert_array_equal(s1, s2)

    def test_bidirectional_sensitivity_to_later_tokens(self):
        # inputs share [CLS] + first token but differ afterwards: every
        # layer's CLS state must differ (bidirectional context)
        rng = np.random.default_rng(2)
        bb = TransformerBackbone(rng, vocab_size=15, d_model=32, n_layers=2,
                                 n_heads=4, max_len=16)
        ids1, mask = make_inputs(rng, 1, 6, 15)
        ids2 = ids1.copy()
        ids2[0, 2:] = (ids2[0, 2:] % 12) + 3
        assert not np.array_equal(ids1, ids2)
        s1, _ = bb.encoder.forward(ids1, mask)
        s2, _ = bb.encoder.forward(ids2, mask)
        for layer in range(2):
            assert not np.allclose(s1[0, layer], s2[0, layer])

    def test_length_errors(self):
        rng = np.random.default_rng(3)
        bb = TransformerBackbone(rng, vocab_size=15, d_model=32, n_layers=2,
                                 n_heads=4, max_len=8)
        with pytest.raises(InputError):
            bb.encoder.forward(np.zeros((1, 9), dtype=np.int64), np.ones((1, 9)))
        with pytest.raises(InputError):
            bb.encoder.forward(np.zeros((1, 0), dtype=np.int64), np.ones((1, 0)))


class TestPoolCls:
    def test_zero_bilinear_gives_uniform_weights(self):
        rng = np.random.default_rng(4)
        stack = rng.normal(size=(2, 12, 8))
        W_g = np.zeros((8, 8))
        q = rng.normal(size=8)
        c_e, alpha, _ = pool_cls(stack, W_g, q)
        npt.assert_allclose(alpha, 1.0 / 12, atol=1e-12)
        npt.assert_allclose(c_e, stack.mean(axis=1), atol=1e-12)

    def test_injected_log2_score(self):
        # scores (ln 2, 0, ..., 0) over 12 layers -> alpha = (2/13, 1/13, ...)
        stack = np.zeros((1, 12, 4))
        stack[:, :, 0] = 0.0
        stack[0, 0, 0] = np.log(2.0)
        W_g = np.eye(4)
        q = np.array([1.0, 0.0, 0.0, 0.0])
        _, alpha, _ = pool_cls(stack, W_g, q)
        npt.assert_allclose(alpha[0, 0], 2.0 / 13.0, atol=1e-12)
        npt.assert_allclose(alpha[0, 1:], 1.0 / 13.0, atol=1e-12)

    def test_weighted_sum_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        stack = rng.normal(size=(3, 3, 4))
        W_g = rng.normal(size=(4, 4))
        q = rng.normal(size=4)
        c_e, alpha, _ = pool_cls(stack, W_g, q)
        # brute-force with explicit loops
        for b in range(3):
            scores = []
            for l in range(3):
                s = 0.0
                for i in range(4):
                    for j in range(4):
                        s += stack[b, l, i] * W_g[i, j] * q[j]
                scores.append(s)
            mx = max(scores)
            exps = [np.exp(s - mx) for s in scores]
            tot = sum(exps)
            expected = np.zeros(4)
            for l in range(3):
                expected += (exps[l] / tot) * stack[b, l]
            npt.assert_allclose(c_e[b], expected, rtol=1e-12)
            npt.assert_allclose(alpha[b], np.array(exps) / tot, rtol=1e-12)

    def test_one_hot_alpha_selects_layer_row(self):
        # forced scores make alpha exactly one-hot in float64
        stack = np.zeros((1, 3, 4))
        stack[0, 0] = [1.0, 2.0, 3.0, 4.0]
        stack[0, 1] = [5.0, 6.0, 7.0, 8.0]
        stack[0, 2] = [9.0, 1.0, 2.0, 3.0]
        W_g = np.zeros((4, 4))
        W_g[0, 0] = 1.0
        q = np.array([2000.0, 0.0, 0.0, 0.0])
        c_e, alpha, _ = pool_cls(stack, W_g, q)
        npt.assert_array_equal(alpha[0], [0.0, 0.0, 1.0])
        npt.assert_array_equal(c_e[0], stack[0, 2])

    def test_weights_normalized_on_random_passes(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            stack = rng.normal(size=(2, 5, 6))
            W_g = rng.normal(size=(6, 6))
            q = rng.normal(size=6)
            _, alpha, _ = pool_cls(stack, W_g, q)
            assert np.all(alpha >= 0)
            npt.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-5)

    def test_non_finite_stack_raises(self):
        stack = np.zeros((1, 3, 4))
        stack[0, 1, 2] = np.nan
        with pytest.raises(NumericError):
            pool_cls(stack, np.zeros((4, 4)), np.zeros(4))


class TestClassifyEmotion:
    def test_zero_weights_give_uniform(self):
        c_e = np.random.default_rng(7).normal(size=(3, 8))
        probs = classify_emotion(c_e, np.zeros((32, 8)))
        npt.assert_allclose(probs, 1.0 / 32, atol=1e-12)

    def test_dominant_logit_wins(self):
        logits = np.zeros((1, 32))
        logits[0, 17] = 1000.0
        probs = softmax(logits)
        assert np.argmax(probs) == 17
        npt.assert_allclose(probs[0, 17], 1.0, atol=1e-12)

    def test_single_unit_logit_closed_form(self):
        logits = np.zeros((1, 32))
        logits[0, 0] = 1.0
        probs = softmax(logits)
        expected = np.e / (np.e + 31.0)
        npt.assert_allclose(probs[0, 0], expected, rtol=1e-12)
        assert abs(probs[0, 0] - 0.0807) < 1e-4


class TestEmotionLoss:
    def test_perfect_prediction_gives_zero(self):
        probs = np.zeros((3, 4))
        probs[:, 2] = 1.0
        loss, floored = emotion_loss(probs, np.array([2, 2, 2]))
        assert loss == 0.0
        assert floored == 0

    def test_uniform_distribution(self):
        probs = np.full((5, 32), 1.0 / 32)
        loss, _ = emotion_loss(probs, np.zeros(5, dtype=np.int64))
        npt.assert_allclose(loss, np.log(32), rtol=1e-12)

    def test_hand_computed_mean(self):
        probs = np.array([[0.5, 0.5], [0.25, 0.75]])
        loss, _ = emotion_loss(probs, np.array([0, 0]))
        npt.assert_allclose(loss, (np.log(2) + np.log(4)) / 2, rtol=1e-12)

    def test_zero_probability_clamped_with_counter(self):
        probs = np.array([[0.0, 1.0]])
        loss, floored = emotion_loss(probs, np.array([0]))
        assert floored == 1
        npt.assert_allclose(loss, -np.log(1e-12))

    def test_gold_id_out_of_range(self):
        with pytest.raises(InputError):
            emotion_loss(np.full((1, 4), 0.25), np.array([4]))


class TestSwapBackbone:
    def test_bi_lstm_keeps_representation_width(self):
        rng = np.random.default_rng(8)
        bb = swap_backbone("bi-lstm", rng, vocab_size=20, d_model=768,
                           d_emb=32, max_len=16)
        ids, mask = make_inputs(rng, 2, 5, 20)
        c_e, alpha, _ = bb.forward(ids, mask)
        assert c_e.shape == (2, 768)
        assert alpha is None

    def test_attn_backbone_single_token_weight(self):
        rng = np.random.default_rng(9)
        bb = swap_backbone("bi-lstm-attn", rng, vocab_size=20, d_model=32,
                           d_emb=16, max_len=16)
        ids = np.full((1, 1), 2, dtype=np.int64)
        mask = np.ones((1, 1))
        c_e, alpha, _ = bb.forward(ids, mask)
        npt.assert_array_equal(alpha, [[1.0]])
        assert c_e.shape == (1, 32)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            swap_backbone("rnn", np.random.default_rng(0), vocab_size=10)

    def test_transformer_pooling_weights_shape(self):
        rng = np.random.default_rng(10)
        bb = swap_backbone("pretrained-transformer", rng, vocab_size=20,
                           d_model=32, n_layers=3, n_heads=4, max_len=16)
        ids, mask = make_inputs(rng, 2, 5, 20)
        c_e, alpha, _ = bb.forward(ids, mask)
        assert alpha.shape == (2, 3)
        npt.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-10)


class TestOverfitToyClassifier:
    def test_loss_below_threshold_within_200_steps(self):
        # 32 examples, one per class, each with a distinct signature token
        rng = np.random.default_rng(11)
        n_classes = 32
        V = n_classes + 3
        bb = TransformerBackbone(rng, vocab_size=V, d_model=32, n_layers=2,
                                 n_heads=4, max_len=8)
        head = EmotionHead(rng, 32, n_classes, dropout=0.0)
        ids = np.zeros((n_classes, 4), dtype=np.int64)
        ids[:, 0] = 2
        for k in range(n_classes):
            ids[k, 1] = 3 + k
            ids[k, 2:] = 3 + (k + 1) % n_classes
        mask = np.ones((n_classes, 4))
        gold = np.arange(n_classes)

        from empathia.training import AdamW
        params = bb.param_items() + head.p.items("head.")
        opt = AdamW(params, lr=3e-3, weight_decay=0.0, grad_clip=5.0)
        loss = None
        for step in range(200):
            bb.zero_grads()
            head.p.zero_grads()
            c_e, _, cache = bb.forward(ids, mask)
            probs, hcache = head.forward(c_e)
            loss, _ = emotion_loss(probs, gold)
            if loss < 0.05:
                break
            dc_e = head.backward(hcache, gold)
            bb.backward(dc_e, cache)
            opt.step()
        assert loss < 0.05, f"loss stuck at {loss}"


class TestPoolingGradients:
    def test_fd_check_on_tiny_instance(self):
        # d=4, L=3, 4 classes: analytic grads of the emotion NLL w.r.t.
        # W_g, q, W_E vs central differences
        rng = np.random.default_rng(12)
        d, L, C, B = 4, 3, 4, 2
        stack = rng.normal(size=(B, L, d))
        W_g = rng.normal(size=(d, d))
        q = rng.normal(size=d)
        W_E = rng.normal(size=(C, d))
        gold = np.array([1, 3])

        def forward_loss():
            c_e, _, _ = pool_cls(stack, W_g, q)
            probs = classify_emotion(c_e, W_E)
            loss, _ = emotion_loss(probs, gold)
            return loss

        c_e, alpha, cache = pool_cls(stack, W_g, q)
        probs = classify_emotion(c_e, W_E)
        dlogits = probs.copy()
        dlogits[np.arange(B), gold] -= 1.0
        dlogits /= B
        dW_E = dlogits.T @ c_e
        dc_e = dlogits @ W_E
        _, dW_g, dq = pool_cls_backward(dc_e, cache, W_g, q)

        grads = [("W_g", W_g, dW_g), ("q", q, dq), ("W_E", W_E, dW_E)]
        checked, failed, worst = fd_gradcheck(
            forward_loss, grads, rng, n_coords=16, rel_tol=1e-3)
        assert failed == 0, worst


class TestBackboneRegression:
    # identical 5-epoch toy training, fixed seed, one value per backbone;
    # values frozen from the pinned-numpy run
    EXPECTED_F1 = {
        "pretrained-transformer": 0.001893939393939394,
        "bi-lstm": 0.008934407096171802,
        "bi-lstm-attn": 0.0026595744680851063,
    }

    @pytest.mark.slow
    def test_three_backbones_give_distinct_f1(self, tmp_path):
        from empathia import synth
        from empathia.training import TrainConfig, evaluate, train
        from conftest import TOY_ABLATION

        saved = backend.get_backend()
        backend.set_backend("numpy")
        try:
            corpus = tmp_path / "abl_small.csv"
            synth.write_corpus(str(corpus), synth.ablation_rows(128, 64, seed=1))
            f1s = {}
            for kind in ("pretrained-transformer", "bi-lstm", "bi-lstm-attn"):
                cfg = TrainConfig(**{**TOY_ABLATION, "epochs": 5, "seed": 7,
                                     "backbone": kind})
                result = train(cfg, str(corpus), str(tmp_path / f"run_{kind}"))
                report = evaluate(result.final, str(corpus), "test")
                f1s[kind] = report.macro_f1
        finally:
            backend.set_backend(saved)
        assert len(set(f1s.values())) == 3, f1s
        for kind, expected in self.EXPECTED_F1.items():
            if expected is not None:
                npt.assert_allclose(f1s[kind], expected, atol=1e-9), f1s
