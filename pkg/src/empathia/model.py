"""End-to-end joint model: shared encoder-classifier + emotion-fused generator.

One training forward pass computes both losses from shared inputs: the
classifier tokens produce the emotion representation, which feeds the
emotion softmax head and, averaged with the context encoder's final state,
the decoder's initial state. The total loss is
``emotion_loss_weight * L_emo + L_gen``; both heads backpropagate into the
shared representation.
"""

import numpy as np

from .corpus import Batch
from .encoder import EmotionHead, emotion_loss, swap_backbone
from .errors import NumericError
from .seq2seq import Seq2SeqGenerator, fuse_emotion, generation_loss


class JointModel:
    def __init__(self, rng, gen_vocab_size, cls_vocab_size, n_labels,
                 backbone="pretrained-transformer", d_model=768,
                 encoder_layers=12, encoder_heads=12, d_emb=300, max_len=80,
                 dropout_encdec=0.3, dropout_emotion=0.1,
                 emotion_loss_weight=1.0):
        self.n_labels = n_labels
        self.max_len = max_len
        self.emotion_loss_weight = emotion_loss_weight
        self.backbone = swap_backbone(
            backbone, rng, cls_vocab_size, d_model=d_model,
            n_layers=encoder_layers, n_heads=encoder_heads, max_len=max_len,
            d_emb=d_emb)
        self.emo_head = EmotionHead(rng, d_model, n_labels,
                                    dropout=dropout_emotion)
        self.generator = Seq2SeqGenerator(rng, gen_vocab_size, d_model=d_model,
                                          d_emb=d_emb, max_len=max_len,
                                          dropout=dropout_encdec)
        self.floored_log_count = 0  # probability-floor warning counter

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def param_items(self):
        return (self.backbone.param_items("bb.")
                + self.emo_head.p.items("emo.")
                + self.generator.param_items("gen."))

    def zero_grads(self):
        self.backbone.zero_grads()
        self.emo_head.p.zero_grads()
        self.generator.zero_grads()

    def param_dict(self):
        return {name: arr for name, arr, _ in self.param_items()}

    def load_param_dict(self, data):
        for name, arr, _ in self.param_items():
            arr[...] = data[name]

    # ------------------------------------------------------------------
    # training
    # ------------------------------------------------------------------

    def forward_train(self, batch: Batch, rng):
        """Compute (loss_total, loss_emo, loss_gen, caches) with dropout on."""
        c_e, _, bb_cache = self.backbone.forward(batch.classifier,
                                                 batch.classifier_mask)
        emo_probs, head_cache = self.emo_head.forward(c_e, rng)
        loss_emo, fl_e = emotion_loss(emo_probs, batch.emotion_ids)
        enc, enc_cache = self.generator.encode_context(
            batch.context, batch.context_lengths, drop_rng=rng)
        h0 = fuse_emotion(c_e, enc.h_final)
        gen_probs, dec_cache = self.generator.decode_teacher(
            enc, h0, batch.target, drop_rng=rng)
        loss_gen, fl_g = generation_loss(gen_probs, batch.target,
                                         batch.target_lengths)
        self.floored_log_count += fl_e + fl_g
        loss_total = self.emotion_loss_weight * loss_emo + loss_gen
        caches = (bb_cache, head_cache, enc_cache, dec_cache)
        return loss_total, loss_emo, loss_gen, caches

    def backward(self, batch: Batch, caches):
        """Accumulate gradients of the joint loss into every parameter."""
        bb_cache, head_cache, enc_cache, dec_cache = caches
        dc_e = self.emo_head.backward(head_cache, batch.emotion_ids)
        dc_e = dc_e * self.emotion_loss_weight
        dh0, d_enc_states = self.generator.decoder_backward(
            dec_cache, batch.target, batch.target_lengths)
        # fusion: h0 = (C_E + h_final) / 2
        dc_e = dc_e + dh0 * 0.5
        self.generator.encoder_backward(d_enc_states, dh0 * 0.5, enc_cache)
        self.backbone.backward(dc_e, bb_cache)

    def train_step_losses(self, batch: Batch, rng):
        """Forward + backward; returns the three losses."""
        loss_total, loss_emo, loss_gen, caches = self.forward_train(batch, rng)
        if not np.isfinite(loss_total):
            raise NumericError(
                f"non-finite training loss (emo={loss_emo}, gen={loss_gen})")
        self.backward(batch, caches)
        return loss_total, loss_emo, loss_gen

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def classify(self, cls_ids, cls_mask):
        """Inference-mode emotion distribution [B, n_labels]."""
        c_e, alpha, _ = self.backbone.forward(cls_ids, cls_mask)
        probs, _ = self.emo_head.forward(c_e)
        return probs, c_e, alpha

    def predict_batch(self, batch: Batch, max_len=None):
        """Greedy responses + emotion distributions for a padded batch."""
        emo_probs, c_e, _ = self.classify(batch.classifier,
                                          batch.classifier_mask)
        decoded = self.generator.greedy_decode(batch.context,
                                               batch.context_lengths, c_e,
                                               max_len)
        return decoded, emo_probs

    def predict_single(self, ctx_ids, cls_ids, max_len=None):
        """Response token ids + emotion distribution for one context."""
        ctx = np.asarray(ctx_ids, dtype=np.int64)[None, :]
        lengths = np.array([len(ctx_ids)], dtype=np.int64)
        cls = np.asarray(cls_ids, dtype=np.int64)[None, :]
        cls_mask = np.ones_like(cls, dtype=np.float64)
        emo_probs, c_e, _ = self.classify(cls, cls_mask)
        decoded = self.generator.greedy_decode(ctx, lengths, c_e, max_len)
        return decoded[0], emo_probs[0]

    def eval_losses(self, batch: Batch):
        """Dropout-free losses on a batch (validation)."""
        c_e, _, _ = self.backbone.forward(batch.classifier,
                                          batch.classifier_mask)
        emo_probs, _ = self.emo_head.forward(c_e)
        loss_emo, _ = emotion_loss(emo_probs, batch.emotion_ids)
        enc, _ = self.generator.encode_context(batch.context,
                                               batch.context_lengths)
        h0 = fuse_emotion(c_e, enc.h_final)
        gen_probs, _ = self.generator.decode_teacher(enc, h0, batch.target)
        loss_gen, _ = generation_loss(gen_probs, batch.target,
                                      batch.target_lengths)
        return (self.emotion_loss_weight * loss_emo + loss_gen,
                loss_emo, loss_gen)
