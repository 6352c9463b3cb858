"""Emotion classification sub-network.

A bidirectional transformer encoder produces a [CLS] hidden state per layer;
the stack is pooled with learned bilinear softmax weights into the emotion
representation, which a linear softmax head classifies into the emotion set.
Two recurrent backbones (final-state Bi-LSTM and Bi-LSTM with additive token
attention) are swappable behind the same representation interface for
ablation runs.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, InputError
from .layers import (apply_dropout, dropout_mask, embedding_backward, gelu,
                     gelu_backward, layer_norm, layer_norm_backward,
                     masked_softmax, nll_from_probs, normal_init,
                     require_finite, softmax, softmax_backward,
                     strip_trailing_pads, xavier)

BACKBONE_KINDS = ("pretrained-transformer", "bi-lstm", "bi-lstm-attn")


class ParamSet:
    """Named parameter arrays with matching gradient buffers."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name, arr):
        arr = np.asarray(arr, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self.values[name]

    def grad(self, name):
        return self.grads[name]

    def items(self, prefix=""):
        return [(prefix + n, self.values[n], self.grads[n])
                for n in sorted(self.values)]

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0


def _validate_classifier_input(ids, max_len):
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise InputError("classifier input must be a non-empty [B, T] id matrix")
    if ids.shape[1] > max_len:
        raise InputError(
            f"classifier sequence length {ids.shape[1]} exceeds maximum {max_len}")


class TransformerEncoder:
    """Pre-trained-style bidirectional encoder; depth and width configurable.

    Per layer: multi-head self-attention with key-side padding mask,
    residual + layer norm, GELU feed-forward, residual + layer norm.
    Padded key positions receive exact-zero attention weight.
    """

    def __init__(self, rng, vocab_size, d_model=768, n_layers=12, n_heads=12,
                 max_len=80):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.dh = d_model // n_heads
        self.d_ff = 4 * d_model
        self.max_len = max_len
        p = self.p = ParamSet()
        p.add("tok_emb", normal_init(rng, (vocab_size, d_model)))
        p.add("pos_emb", normal_init(rng, (max_len, d_model)))
        p.add("ln0_g", np.ones(d_model))
        p.add("ln0_b", np.zeros(d_model))
        for i in range(n_layers):
            for nm in ("Wq", "Wk", "Wv", "Wo"):
                p.add(f"L{i}.{nm}", normal_init(rng, (d_model, d_model)))
                p.add(f"L{i}.{nm[1]}b", np.zeros(d_model))
            p.add(f"L{i}.W1", normal_init(rng, (self.d_ff, d_model)))
            p.add(f"L{i}.b1", np.zeros(self.d_ff))
            p.add(f"L{i}.W2", normal_init(rng, (d_model, self.d_ff)))
            p.add(f"L{i}.b2", np.zeros(d_model))
            p.add(f"L{i}.ln1_g", np.ones(d_model))
            p.add(f"L{i}.ln1_b", np.zeros(d_model))
            p.add(f"L{i}.ln2_g", np.ones(d_model))
            p.add(f"L{i}.ln2_b", np.zeros(d_model))

    def forward(self, ids, mask):
        """ids: [B, T] int; mask: [B, T] {0,1}. Returns (stack [B, L, d], cache)."""
        _validate_classifier_input(ids, self.max_len)
        p = self.p
        B, T = ids.shape
        X0 = p["tok_emb"][ids] + p["pos_emb"][:T]
        X, ln0c = layer_norm(X0, p["ln0_g"], p["ln0_b"])
        stack = np.empty((B, self.n_layers, self.d))
        layer_caches = []
        kmask = mask[:, None, None, :]
        for i in range(self.n_layers):
            Xin = X
            Q = Xin @ p[f"L{i}.Wq"].T + p[f"L{i}.qb"]
            K = Xin @ p[f"L{i}.Wk"].T + p[f"L{i}.kb"]
            V = Xin @ p[f"L{i}.Wv"].T + p[f"L{i}.vb"]
            Qh = Q.reshape(B, T, self.n_heads, self.dh).transpose(0, 2, 1, 3)
            Kh = K.reshape(B, T, self.n_heads, self.dh).transpose(0, 2, 1, 3)
            Vh = V.reshape(B, T, self.n_heads, self.dh).transpose(0, 2, 1, 3)
            scores = Qh @ Kh.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
            P = masked_softmax(scores, kmask, axis=-1)
            Ah = P @ Vh
            A = Ah.transpose(0, 2, 1, 3).reshape(B, T, self.d)
            O = A @ p[f"L{i}.Wo"].T + p[f"L{i}.ob"]
            X1, ln1c = layer_norm(Xin + O, p[f"L{i}.ln1_g"], p[f"L{i}.ln1_b"])
            F1 = X1 @ p[f"L{i}.W1"].T + p[f"L{i}.b1"]
            G = gelu(F1)
            F2 = G @ p[f"L{i}.W2"].T + p[f"L{i}.b2"]
            X2, ln2c = layer_norm(X1 + F2, p[f"L{i}.ln2_g"], p[f"L{i}.ln2_b"])
            stack[:, i, :] = X2[:, 0, :]
            layer_caches.append((Xin, Qh, Kh, Vh, P, A, X1, F1, G, ln1c, ln2c))
            X = X2
        return stack, (ids, mask, ln0c, layer_caches)

    def backward(self, dstack, cache):
        p = self.p
        ids, mask, ln0c, layer_caches = cache
        B, T = ids.shape
        dX = np.zeros((B, T, self.d))
        for i in range(self.n_layers - 1, -1, -1):
            Xin, Qh, Kh, Vh, P, A, X1, F1, G, ln1c, ln2c = layer_caches[i]
            dX2 = dX
            dX2[:, 0, :] += dstack[:, i, :]
            dsum2, dg, db = layer_norm_backward(dX2, ln2c, p[f"L{i}.ln2_g"])
            p.grad(f"L{i}.ln2_g")[...] += dg
            p.grad(f"L{i}.ln2_b")[...] += db
            dX1 = dsum2.copy()
            dF2 = dsum2
            dF2_2d = dF2.reshape(-1, self.d)
            p.grad(f"L{i}.W2")[...] += dF2_2d.T @ G.reshape(-1, self.d_ff)
            p.grad(f"L{i}.b2")[...] += dF2_2d.sum(axis=0)
            dG = dF2 @ p[f"L{i}.W2"]
            dF1 = gelu_backward(dG, F1)
            dF1_2d = dF1.reshape(-1, self.d_ff)
            p.grad(f"L{i}.W1")[...] += dF1_2d.T @ X1.reshape(-1, self.d)
            p.grad(f"L{i}.b1")[...] += dF1_2d.sum(axis=0)
            dX1 += dF1 @ p[f"L{i}.W1"]
            dsum1, dg, db = layer_norm_backward(dX1, ln1c, p[f"L{i}.ln1_g"])
            p.grad(f"L{i}.ln1_g")[...] += dg
            p.grad(f"L{i}.ln1_b")[...] += db
            dXin = dsum1.copy()
            dO = dsum1
            dO_2d = dO.reshape(-1, self.d)
            p.grad(f"L{i}.Wo")[...] += dO_2d.T @ A.reshape(-1, self.d)
            p.grad(f"L{i}.ob")[...] += dO_2d.sum(axis=0)
            dA = dO @ p[f"L{i}.Wo"]
            dAh = dA.reshape(B, T, self.n_heads, self.dh).transpose(0, 2, 1, 3)
            dP = dAh @ Vh.transpose(0, 1, 3, 2)
            dVh = P.transpose(0, 1, 3, 2) @ dAh
            dscores = softmax_backward(dP, P)
            dQh = dscores @ Kh / np.sqrt(self.dh)
            dKh = dscores.transpose(0, 1, 3, 2) @ Qh / np.sqrt(self.dh)
            for dZh, wname, bname in ((dQh, "Wq", "qb"), (dKh, "Wk", "kb"),
                                      (dVh, "Wv", "vb")):
                dZ = dZh.transpose(0, 2, 1, 3).reshape(B, T, self.d)
                dZ_2d = dZ.reshape(-1, self.d)
                p.grad(f"L{i}.{wname}")[...] += dZ_2d.T @ Xin.reshape(-1, self.d)
                p.grad(f"L{i}.{bname}")[...] += dZ_2d.sum(axis=0)
                dXin += dZ @ p[f"L{i}.{wname}"]
            dX = dXin
        dX0, dg, db = layer_norm_backward(dX, ln0c, p["ln0_g"])
        p.grad("ln0_g")[...] += dg
        p.grad("ln0_b")[...] += db
        embedding_backward(p.grad("tok_emb"), ids, dX0)
        p.grad("pos_emb")[:T] += dX0.sum(axis=0)

    def load_weights(self, npz_path):
        """Copy pretrained arrays (matched by parameter name) into place."""
        data = np.load(npz_path)
        for name in self.p.values:
            if name in data.files:
                if data[name].shape != self.p[name].shape:
                    raise ConfigError(
                        f"pretrained weight {name} has shape {data[name].shape}, "
                        f"expected {self.p[name].shape}")
                self.p[name][...] = data[name]


def pool_cls(stack, W_g, q):
    """Layer-weighted [CLS] pooling.

    score_l = stack_l^T W_g q, alpha = softmax(scores), C_E = sum alpha_l stack_l.
    Returns (C_E [B, d], alpha [B, L], cache).
    """
    require_finite(stack, "layer CLS stack")
    v = W_g @ q
    scores = stack @ v
    alpha = softmax(scores, axis=-1)
    c_e = np.einsum("bl,bld->bd", alpha, stack)
    return c_e, alpha, (stack, v, alpha)


def pool_cls_backward(dc_e, cache, W_g, q):
    """Returns (dstack, dW_g, dq)."""
    stack, v, alpha = cache
    dstack = alpha[:, :, None] * dc_e[:, None, :]
    dalpha = np.einsum("bld,bd->bl", stack, dc_e)
    dscores = softmax_backward(dalpha, alpha)
    dstack += dscores[:, :, None] * v[None, None, :]
    dv = np.einsum("bl,bld->d", dscores, stack)
    dW_g = np.outer(dv, q)
    dq = W_g.T @ dv
    return dstack, dW_g, dq


def classify_emotion(c_e, W_E):
    """Softmax over a bias-free linear map of the emotion representation."""
    return softmax(c_e @ W_E.T, axis=-1)


def emotion_loss(probs, gold_ids, floor=1e-12):
    """Mean NLL of the gold class; returns (loss, floored_count)."""
    gold_ids = np.asarray(gold_ids)
    if np.any(gold_ids < 0) or np.any(gold_ids >= probs.shape[1]):
        raise InputError("gold emotion id out of range")
    loss, _, n_floored = nll_from_probs(probs, gold_ids, floor)
    return loss, n_floored


class EmotionHead:
    """Dropout + linear + softmax classifier over the emotion representation."""

    def __init__(self, rng, d_model, n_labels, dropout=0.1):
        self.p = ParamSet()
        self.p.add("W_E", xavier(rng, (n_labels, d_model)))
        self.dropout = dropout

    def forward(self, c_e, rng=None):
        """rng=None means inference mode (no dropout)."""
        mask = dropout_mask(rng, c_e.shape, self.dropout) if rng is not None else None
        dropped = apply_dropout(c_e, mask)
        probs = classify_emotion(dropped, self.p["W_E"])
        return probs, (dropped, probs, mask)

    def backward(self, cache, gold_ids):
        """Gradient of mean NLL; returns dC_E."""
        dropped, probs, mask = cache
        B = probs.shape[0]
        dlogits = probs.copy()
        dlogits[np.arange(B), gold_ids] -= 1.0
        dlogits /= B
        self.p.grad("W_E")[...] += dlogits.T @ dropped
        d_dropped = dlogits @ self.p["W_E"]
        return apply_dropout(d_dropped, mask)


class TransformerBackbone:
    """Transformer encoder + layer-weighted CLS pooling."""

    kind = "pretrained-transformer"

    def __init__(self, rng, vocab_size, d_model=768, n_layers=12, n_heads=12,
                 max_len=80, d_emb=None):
        self.encoder = TransformerEncoder(rng, vocab_size, d_model, n_layers,
                                          n_heads, max_len)
        self.p = ParamSet()
        self.p.add("W_g", xavier(rng, (d_model, d_model)))
        self.p.add("q", rng.normal(size=d_model) / np.sqrt(d_model))

    def forward(self, ids, mask):
        ids, mask = strip_trailing_pads(ids, mask)
        stack, enc_cache = self.encoder.forward(ids, mask)
        c_e, alpha, pool_cache = pool_cls(stack, self.p["W_g"], self.p["q"])
        return c_e, alpha, (enc_cache, pool_cache)

    def backward(self, dc_e, cache):
        enc_cache, pool_cache = cache
        dstack, dW_g, dq = pool_cls_backward(dc_e, pool_cache,
                                             self.p["W_g"], self.p["q"])
        self.p.grad("W_g")[...] += dW_g
        self.p.grad("q")[...] += dq
        self.encoder.backward(dstack, enc_cache)

    def param_items(self, prefix=""):
        return (self.encoder.p.items(prefix + "enc.")
                + self.p.items(prefix + "pool."))

    def zero_grads(self):
        self.encoder.p.zero_grads()
        self.p.zero_grads()


class _BiLSTMBase:
    def __init__(self, rng, vocab_size, d_model, d_emb, max_len):
        if d_model % 2 != 0:
            raise ConfigError("d_model must be even for a bidirectional backbone")
        self.d = d_model
        self.h = d_model // 2
        self.d_emb = d_emb
        self.max_len = max_len
        p = self.p = ParamSet()
        p.add("emb", normal_init(rng, (vocab_size, d_emb)))
        for d in ("fwd", "bwd"):
            p.add(f"{d}.Wx", xavier(rng, (d_emb, 4 * self.h)))
            p.add(f"{d}.Wh", xavier(rng, (self.h, 4 * self.h)))
            p.add(f"{d}.b", np.zeros(4 * self.h))

    def _run_states(self, ids, mask):
        """Bidirectional per-step states [B, T, d] plus kernel caches."""
        p = self.p
        B, T = ids.shape
        E = p["emb"][ids].transpose(1, 0, 2)  # [T, B, E]
        mT = np.ascontiguousarray(mask.T)
        h0 = np.zeros((B, self.h))
        c0 = np.zeros((B, self.h))
        fwd = kernels.lstm_forward(E, h0, c0, p["fwd.Wx"], p["fwd.Wh"],
                                   p["fwd.b"], mT)
        Erev = np.ascontiguousarray(E[::-1])
        mrev = np.ascontiguousarray(mT[::-1])
        bwd = kernels.lstm_forward(Erev, h0, c0, p["bwd.Wx"], p["bwd.Wh"],
                                   p["bwd.b"], mrev)
        Hf = fwd[0]
        Hb = bwd[0][::-1]
        states = np.concatenate((Hf, Hb), axis=2).transpose(1, 0, 2)  # [B,T,d]
        return states, (ids, mask, E, mT, Erev, mrev, fwd, bwd)

    def _backward_states(self, dstates, cache):
        """dstates: [B, T, d] grads on the concatenated per-step states."""
        p = self.p
        ids, mask, E, mT, Erev, mrev, fwd, bwd = cache
        B, T = ids.shape
        d = dstates.transpose(1, 0, 2)  # [T, B, d]
        dHf = np.ascontiguousarray(d[:, :, :self.h])
        dHb = np.ascontiguousarray(d[::-1, :, self.h:])
        zero = np.zeros((B, self.h))
        h0 = np.zeros((B, self.h))
        dE_f, _, _, dWxf, dWhf, dbf = kernels.lstm_backward(
            E, h0, h0, p["fwd.Wx"], p["fwd.Wh"], p["fwd.b"], mT,
            *fwd, dHf, zero, zero)
        dE_b, _, _, dWxb, dWhb, dbb = kernels.lstm_backward(
            Erev, h0, h0, p["bwd.Wx"], p["bwd.Wh"], p["bwd.b"], mrev,
            *bwd, dHb, zero, zero)
        p.grad("fwd.Wx")[...] += dWxf
        p.grad("fwd.Wh")[...] += dWhf
        p.grad("fwd.b")[...] += dbf
        p.grad("bwd.Wx")[...] += dWxb
        p.grad("bwd.Wh")[...] += dWhb
        p.grad("bwd.b")[...] += dbb
        dE = dE_f + dE_b[::-1]
        embedding_backward(p.grad("emb"), ids.T, dE)

    def param_items(self, prefix=""):
        return self.p.items(prefix)

    def zero_grads(self):
        self.p.zero_grads()


class BiLSTMBackbone(_BiLSTMBase):
    """Final-state concatenation projected to the representation width."""

    kind = "bi-lstm"

    def __init__(self, rng, vocab_size, d_model, d_emb, max_len):
        super().__init__(rng, vocab_size, d_model, d_emb, max_len)
        self.p.add("proj.W", xavier(rng, (d_model, d_model)))
        self.p.add("proj.b", np.zeros(d_model))

    def forward(self, ids, mask):
        ids, mask = strip_trailing_pads(ids, mask)
        _validate_classifier_input(ids, self.max_len)
        states, cache = self._run_states(ids, mask)
        # forward state is frozen at the true last step; backward state at
        # position 0 has consumed the whole sequence
        h_final = np.concatenate((states[:, -1, :self.h], states[:, 0, self.h:]),
                                 axis=1)
        c_e = h_final @ self.p["proj.W"].T + self.p["proj.b"]
        return c_e, None, (states.shape, cache, h_final)

    def backward(self, dc_e, fwd_cache):
        shape, cache, h_final = fwd_cache
        self.p.grad("proj.W")[...] += dc_e.T @ h_final
        self.p.grad("proj.b")[...] += dc_e.sum(axis=0)
        dh_final = dc_e @ self.p["proj.W"]
        dstates = np.zeros(shape)
        dstates[:, -1, :self.h] = dh_final[:, :self.h]
        dstates[:, 0, self.h:] = dh_final[:, self.h:]
        self._backward_states(dstates, cache)


class BiLSTMAttnBackbone(_BiLSTMBase):
    """Additive token attention pooled over the per-step states."""

    kind = "bi-lstm-attn"

    def __init__(self, rng, vocab_size, d_model, d_emb, max_len):
        super().__init__(rng, vocab_size, d_model, d_emb, max_len)
        self.p.add("attn.Wa", xavier(rng, (d_model, d_model)))
        self.p.add("attn.ba", np.zeros(d_model))
        self.p.add("attn.v", rng.normal(size=d_model) / np.sqrt(d_model))

    def forward(self, ids, mask):
        ids, mask = strip_trailing_pads(ids, mask)
        _validate_classifier_input(ids, self.max_len)
        states, cache = self._run_states(ids, mask)
        U = np.tanh(states @ self.p["attn.Wa"].T + self.p["attn.ba"])
        scores = U @ self.p["attn.v"]
        alpha = masked_softmax(scores, mask, axis=-1)
        c_e = np.einsum("bt,btd->bd", alpha, states)
        return c_e, alpha, (states, U, alpha, cache)

    def backward(self, dc_e, fwd_cache):
        states, U, alpha, cache = fwd_cache
        p = self.p
        dstates = alpha[:, :, None] * dc_e[:, None, :]
        dalpha = np.einsum("btd,bd->bt", states, dc_e)
        dscores = softmax_backward(dalpha, alpha)
        p.grad("attn.v")[...] += np.einsum("bt,btd->d", dscores, U)
        dU = dscores[:, :, None] * p["attn.v"][None, None, :]
        dpre = dU * (1.0 - U * U)
        dpre_2d = dpre.reshape(-1, self.d)
        p.grad("attn.Wa")[...] += dpre_2d.T @ states.reshape(-1, self.d)
        p.grad("attn.ba")[...] += dpre_2d.sum(axis=0)
        dstates += dpre @ p["attn.Wa"]
        self._backward_states(dstates, cache)


def swap_backbone(kind, rng, vocab_size, d_model=768, n_layers=12, n_heads=12,
                  max_len=80, d_emb=300):
    """Build a classifier backbone; the representation interface is shared."""
    if kind == "pretrained-transformer":
        return TransformerBackbone(rng, vocab_size, d_model, n_layers, n_heads,
                                   max_len)
    if kind == "bi-lstm":
        return BiLSTMBackbone(rng, vocab_size, d_model, d_emb, max_len)
    if kind == "bi-lstm-attn":
        return BiLSTMAttnBackbone(rng, vocab_size, d_model, d_emb, max_len)
    raise ConfigError(f"unknown backbone kind {kind!r}; expected one of {BACKBONE_KINDS}")
