"""Generation sub-network: Bi-GRU context encoder and attentive GRU decoder.

The context encoder concatenates per-step states from two opposite-direction
GRUs (half width each); its final state is the concatenation of the last
forward state and the first-position backward state. The decoder's initial
state is the elementwise mean of the emotion representation and that final
state; decoding runs with input feeding (previous attentional vector
concatenated to the token embedding) and bilinear attention over the encoder
states, followed by a tanh projection and a softmax over the generation
vocabulary. Training uses teacher forcing; inference decodes greedily.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import GenerationVocab
from .errors import InputError
from .layers import (apply_dropout, dropout_mask, embedding_backward,
                     masked_softmax, normal_init, softmax, xavier)

LOG_FLOOR = 1e-12


@dataclass
class EncoderOutput:
    states: np.ndarray   # [B, T, d] per-step states (dropout applied in training)
    h_final: np.ndarray  # [B, d]
    mask: np.ndarray     # [B, T] {0,1}


@dataclass
class DecoderState:
    h_dec: np.ndarray        # [B, d]
    h_tilde_prev: np.ndarray  # [B, d] previous attentional vector (input feeding)
    prev_token: np.ndarray   # [B] int64


@dataclass
class StepOutput:
    h_tilde: np.ndarray      # [B, d]
    distribution: np.ndarray  # [B, V]
    attention: np.ndarray    # [B, T_src]


def fuse_emotion(c_e, h_final):
    """Elementwise mean of the emotion representation and encoder final state."""
    if c_e.shape != h_final.shape:
        raise InputError(
            f"emotion representation {c_e.shape} and encoder state "
            f"{h_final.shape} must share a shape")
    return (c_e + h_final) / 2.0


def attend(h_dec, enc: EncoderOutput, W_f):
    """Bilinear attention scores, masked softmax, context vector.

    Reference implementation of one attention application; the training path
    runs the same math inside the decoder kernel.
    """
    if not np.any(enc.mask > 0):
        raise InputError("attention needs at least one unmasked encoder step")
    v = h_dec @ W_f.T
    scores = np.einsum("btd,bd->bt", enc.states, v)
    alpha = masked_softmax(scores, enc.mask, axis=-1)
    context = np.einsum("bt,btd->bd", alpha, enc.states)
    return context, alpha


def generation_loss(step_probs, target_ids, target_lengths, floor=LOG_FLOOR):
    """Teacher-forced NLL, averaged over non-PAD target positions.

    ``step_probs`` are the per-step vocabulary distributions [B, T-1, V]
    aligned with ``target_ids[:, 1:]``. Returns (loss, floored_count).
    """
    gold = target_ids[:, 1:]
    B, Tm1 = gold.shape
    valid = (np.arange(Tm1)[None, :] < (target_lengths - 1)[:, None])
    picked = np.take_along_axis(step_probs, gold[:, :, None], axis=2)[:, :, 0]
    n_floored = int(np.sum((picked < floor) & valid))
    logp = np.log(np.maximum(picked, floor))
    n_valid = int(np.sum(valid))
    if n_valid == 0:
        raise InputError("no non-PAD target positions in batch")
    loss = float(-np.sum(logp * valid) / n_valid)
    return loss, n_floored


class Seq2SeqGenerator:
    """Bi-GRU encoder + attentive input-feeding GRU decoder."""

    def __init__(self, rng, vocab_size, d_model=768, d_emb=300, max_len=80,
                 dropout=0.3):
        if d_model % 2 != 0:
            raise InputError("d_model must be even (two encoder directions)")
        self.d = d_model
        self.h2 = d_model // 2
        self.d_emb = d_emb
        self.max_len = max_len
        self.dropout = dropout
        self.vocab_size = vocab_size
        from .encoder import ParamSet
        p = self.p = ParamSet()
        p.add("emb", normal_init(rng, (vocab_size, d_emb)))
        for d in ("ef", "eb"):  # encoder forward / backward directions
            p.add(f"{d}.Wx", xavier(rng, (d_emb, 3 * self.h2)))
            p.add(f"{d}.Wh", xavier(rng, (self.h2, 3 * self.h2)))
            p.add(f"{d}.b", np.zeros(3 * self.h2))
        p.add("dec.Wx", xavier(rng, (d_emb + d_model, 3 * d_model)))
        p.add("dec.Wh", xavier(rng, (d_model, 3 * d_model)))
        p.add("dec.b", np.zeros(3 * d_model))
        p.add("attn.Wf", xavier(rng, (d_model, d_model)))
        p.add("out.Wc", xavier(rng, (d_model, 2 * d_model)))
        p.add("out.WV", xavier(rng, (vocab_size, d_model)))

    def param_items(self, prefix=""):
        return self.p.items(prefix)

    def zero_grads(self):
        self.p.zero_grads()

    # ------------------------------------------------------------------
    # encoder
    # ------------------------------------------------------------------

    def encode_context(self, ctx_ids, lengths, drop_rng=None):
        """Returns (EncoderOutput, cache). ``drop_rng=None`` = inference mode."""
        B, T = ctx_ids.shape
        if T == 0 or np.any(lengths < 1):
            raise InputError("context must hold at least one token")
        true_len = int(np.max(lengths))
        if true_len < T:
            # appended all-PAD columns must be invisible bit-for-bit; BLAS
            # kernel choice depends on shapes, so strip them up front
            ctx_ids = ctx_ids[:, :true_len]
            T = true_len
        if T > self.max_len:
            raise InputError(f"context length {T} exceeds maximum {self.max_len}")
        p = self.p
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
        E = np.ascontiguousarray(p["emb"][ctx_ids].transpose(1, 0, 2))
        mT = np.ascontiguousarray(mask.T)
        h0 = np.zeros((B, self.h2))
        fwd = kernels.gru_forward(E, h0, p["ef.Wx"], p["ef.Wh"], p["ef.b"], mT)
        Erev = np.ascontiguousarray(E[::-1])
        mrev = np.ascontiguousarray(mT[::-1])
        bwd = kernels.gru_forward(Erev, h0, p["eb.Wx"], p["eb.Wh"], p["eb.b"], mrev)
        Hf = fwd[0]
        Hb = bwd[0][::-1]
        states = np.concatenate((Hf, Hb), axis=2).transpose(1, 0, 2)  # [B,T,d]
        # forward state is frozen at each row's true last step; the reversed
        # run's final state has consumed the row from its end to position 0
        h_final = np.concatenate((Hf[-1], bwd[0][-1]), axis=1)
        dmask = dropout_mask(drop_rng, states.shape, self.dropout) \
            if drop_rng is not None else None
        enc = EncoderOutput(states=apply_dropout(states, dmask),
                            h_final=h_final, mask=mask)
        cache = (ctx_ids, E, mT, Erev, mrev, fwd, bwd, dmask)
        return enc, cache

    def encoder_backward(self, d_states, dh_final, cache):
        """d_states: [B, T, d] grads on (dropped) per-step states."""
        p = self.p
        ctx_ids, E, mT, Erev, mrev, fwd, bwd, dmask = cache
        B = ctx_ids.shape[0]
        d_states = apply_dropout(d_states, dmask)
        dS = d_states.transpose(1, 0, 2)
        dHf = np.ascontiguousarray(dS[:, :, :self.h2])
        dHb_rev = np.ascontiguousarray(dS[::-1, :, self.h2:])
        h0 = np.zeros((B, self.h2))
        dEf, _, dWxf, dWhf, dbf = kernels.gru_backward(
            E, h0, p["ef.Wx"], p["ef.Wh"], p["ef.b"], mT,
            *fwd, dHf, np.ascontiguousarray(dh_final[:, :self.h2]))
        dEb, _, dWxb, dWhb, dbb = kernels.gru_backward(
            Erev, h0, p["eb.Wx"], p["eb.Wh"], p["eb.b"], mrev,
            *bwd, dHb_rev, np.ascontiguousarray(dh_final[:, self.h2:]))
        p.grad("ef.Wx")[...] += dWxf
        p.grad("ef.Wh")[...] += dWhf
        p.grad("ef.b")[...] += dbf
        p.grad("eb.Wx")[...] += dWxb
        p.grad("eb.Wh")[...] += dWhb
        p.grad("eb.b")[...] += dbb
        dE = dEf + dEb[::-1]
        embedding_backward(p.grad("emb"), ctx_ids.T, dE)

    # ------------------------------------------------------------------
    # decoder
    # ------------------------------------------------------------------

    def decode_teacher(self, enc: EncoderOutput, h0, target_ids, drop_rng=None):
        """Teacher-forced distributions for positions 1..T-1 of the target.

        Returns (probs [B, T-1, V], cache).
        """
        p = self.p
        inp = target_ids[:, :-1]
        B, Tm1 = inp.shape
        E = np.ascontiguousarray(p["emb"][inp].transpose(1, 0, 2))
        ht0 = np.zeros((B, self.d))
        dec = kernels.attn_decoder_forward(
            E, h0, ht0, enc.states, enc.mask,
            p["dec.Wx"], p["dec.Wh"], p["dec.b"], p["attn.Wf"], p["out.Wc"])
        Htil = dec[1].transpose(1, 0, 2)  # [B, T-1, d]
        dmask = dropout_mask(drop_rng, Htil.shape, self.dropout) \
            if drop_rng is not None else None
        Hdrop = apply_dropout(Htil, dmask)
        logits = Hdrop @ p["out.WV"].T
        probs = softmax(logits, axis=-1)
        cache = (inp, E, ht0, dec, Hdrop, dmask, probs, enc, h0)
        return probs, cache

    def decoder_backward(self, cache, target_ids, target_lengths):
        """Backward of the teacher-forced generation loss.

        Accumulates parameter grads and returns (dh0, d_enc_states) so the
        caller can route gradients into emotion fusion and the encoder.
        """
        p = self.p
        inp, E, ht0, dec, Hdrop, dmask, probs, enc, h0 = cache
        Hd, Htil, Alpha, Ctx, Z, R, C = dec
        gold = target_ids[:, 1:]
        B, Tm1 = gold.shape
        valid = (np.arange(Tm1)[None, :] < (target_lengths - 1)[:, None])
        n_valid = float(np.sum(valid))
        dlogits = probs.copy()
        np.put_along_axis(dlogits, gold[:, :, None],
                          np.take_along_axis(dlogits, gold[:, :, None], axis=2) - 1.0,
                          axis=2)
        dlogits *= valid[:, :, None] / n_valid
        dl2 = dlogits.reshape(-1, self.vocab_size)
        p.grad("out.WV")[...] += dl2.T @ Hdrop.reshape(-1, self.d)
        dHdrop = dlogits @ p["out.WV"]
        dHtil = apply_dropout(dHdrop, dmask)
        dHtil_ext = np.ascontiguousarray(dHtil.transpose(1, 0, 2))
        (dE, dh0, dht0, dHenc, dWx, dWh, db, dWf, dWc) = kernels.attn_decoder_backward(
            E, h0, ht0, enc.states, enc.mask,
            p["dec.Wx"], p["dec.Wh"], p["dec.b"], p["attn.Wf"], p["out.Wc"],
            Hd, Htil, Alpha, Ctx, Z, R, C, dHtil_ext)
        p.grad("dec.Wx")[...] += dWx
        p.grad("dec.Wh")[...] += dWh
        p.grad("dec.b")[...] += db
        p.grad("attn.Wf")[...] += dWf
        p.grad("out.Wc")[...] += dWc
        embedding_backward(p.grad("emb"), inp.T, dE)
        return dh0, dHenc

    def decode_step(self, state: DecoderState, enc: EncoderOutput):
        """One inference step; returns (StepOutput, next DecoderState)."""
        p = self.p
        B = state.h_dec.shape[0]
        E = p["emb"][state.prev_token][None, :, :]
        Hd, Htil, Alpha, _, _, _, _ = kernels.attn_decoder_forward(
            np.ascontiguousarray(E), state.h_dec, state.h_tilde_prev,
            enc.states, enc.mask,
            p["dec.Wx"], p["dec.Wh"], p["dec.b"], p["attn.Wf"], p["out.Wc"])
        h_tilde = Htil[0]
        dist = softmax(h_tilde @ p["out.WV"].T, axis=-1)
        out = StepOutput(h_tilde=h_tilde, distribution=dist, attention=Alpha[0])
        new_state = DecoderState(h_dec=Hd[0], h_tilde_prev=h_tilde,
                                 prev_token=state.prev_token)
        return out, new_state

    def initial_state(self, h0, batch_size):
        return DecoderState(
            h_dec=h0,
            h_tilde_prev=np.zeros((batch_size, self.d)),
            prev_token=np.full(batch_size, GenerationVocab.BOS, dtype=np.int64))

    def greedy_decode(self, ctx_ids, lengths, c_e, max_len=None):
        """Greedy argmax decoding; returns a list of token-id lists.

        Ties break toward the lowest token id (argmax picks the first
        maximum); BOS/EOS never appear in the returned sequences.
        """
        max_len = self.max_len if max_len is None else max_len
        if max_len > self.max_len:
            raise InputError(f"max_len {max_len} exceeds model maximum {self.max_len}")
        enc, _ = self.encode_context(ctx_ids, lengths)
        h0 = fuse_emotion(c_e, enc.h_final)
        B = ctx_ids.shape[0]
        state = self.initial_state(h0, B)
        done = np.zeros(B, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(B)]
        for _ in range(max_len):
            out, state = self.decode_step(state, enc)
            nxt = np.argmax(out.distribution, axis=-1)
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == GenerationVocab.EOS:
                    done[b] = True
                else:
                    outputs[b].append(int(nxt[b]))
            if done.all():
                break
            state.prev_token = np.where(done, GenerationVocab.EOS, nxt)
        return outputs
