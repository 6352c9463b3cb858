"""Hot recurrent kernels: GRU, LSTM and the attentive decoder loop.

Each kernel is written once as a numpy function (python loop over time,
vectorized over the batch) and compiled with numba for the fast path. The
un-jitted function is the pure-numpy fallback; :mod:`empathia.backend`
selects which one runs. ``benchmarks/bench_kernels.py`` compares the two.

Conventions shared by all kernels:
  * arrays are float64, time-major ``[T, B, ...]``;
  * masks are float64 in {0, 1}; a masked step freezes the recurrent state
    (``h_t = h_{t-1}``), which keeps padded batches bit-identical to their
    unpadded equivalents;
  * GRU gate order is (update z, reset r, candidate c) with the reset gate
    applied to the recurrent term after the matmul:
    ``c = tanh(x@Wxc + b_c + r * (h@Whc))`` and ``h' = (1-z)*c + z*h``;
  * LSTM gate order is (i, f, g, o) with ``c' = f*c + i*g``, ``h' = o*tanh(c')``.

Kernel bodies are self-contained (no helper calls) so the same source
compiles under numba nopython mode and runs as plain numpy.
"""

import numpy as np

from .backend import jit, using_numba


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def _gru_forward(X, h0, Wx, Wh, b, mask):
    T, B, _ = X.shape
    H = h0.shape[1]
    Hs = np.empty((T, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    C = np.empty((T, B, H))
    h = h0.copy()
    for t in range(T):
        gx = X[t] @ Wx + b
        gh = h @ Wh
        z = 1.0 / (1.0 + np.exp(-(gx[:, :H] + gh[:, :H])))
        r = 1.0 / (1.0 + np.exp(-(gx[:, H:2 * H] + gh[:, H:2 * H])))
        c = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        hnew = (1.0 - z) * c + z * h
        m = mask[t].copy().reshape(B, 1)
        h = m * hnew + (1.0 - m) * h
        Z[t] = z
        R[t] = r
        C[t] = c
        Hs[t] = h
    return Hs, Z, R, C


def _gru_backward(X, h0, Wx, Wh, b, mask, Hs, Z, R, C, dHs, dh_last):
    T, B, I = X.shape
    H = h0.shape[1]
    Whc = np.ascontiguousarray(Wh[:, 2 * H:])
    dX = np.empty((T, B, I))
    dWx = np.zeros(Wx.shape)
    dWh = np.zeros(Wh.shape)
    db = np.zeros(b.shape)
    dh = dh_last.copy()
    for t in range(T - 1, -1, -1):
        dht = dh + dHs[t]
        m = mask[t].copy().reshape(B, 1)
        dhp = m * dht
        dhfr = (1.0 - m) * dht
        if t > 0:
            hprev = Hs[t - 1]
        else:
            hprev = h0
        z = Z[t]
        r = R[t]
        c = C[t]
        dz = dhp * (hprev - c)
        dc = dhp * (1.0 - z)
        dhprev = dhp * z
        ghc = hprev @ Whc
        dpre_c = dc * (1.0 - c * c)
        dr = dpre_c * ghc
        dghc = dpre_c * r
        dpre_z = dz * z * (1.0 - z)
        dpre_r = dr * r * (1.0 - r)
        dgx = np.concatenate((dpre_z, dpre_r, dpre_c), axis=1)
        dgh = np.concatenate((dpre_z, dpre_r, dghc), axis=1)
        dX[t] = dgx @ Wx.T
        dWx += X[t].T @ dgx
        db += np.sum(dgx, 0)
        dWh += hprev.T @ dgh
        dh = dgh @ Wh.T + dhprev + dhfr
    return dX, dh, dWx, dWh, db


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def _lstm_forward(X, h0, c0, Wx, Wh, b, mask):
    T, B, _ = X.shape
    H = h0.shape[1]
    Hs = np.empty((T, B, H))
    Cs = np.empty((T, B, H))
    Ig = np.empty((T, B, H))
    Fg = np.empty((T, B, H))
    Gg = np.empty((T, B, H))
    Og = np.empty((T, B, H))
    h = h0.copy()
    cell = c0.copy()
    for t in range(T):
        gx = X[t] @ Wx + b
        gh = h @ Wh
        i = 1.0 / (1.0 + np.exp(-(gx[:, :H] + gh[:, :H])))
        f = 1.0 / (1.0 + np.exp(-(gx[:, H:2 * H] + gh[:, H:2 * H])))
        g = np.tanh(gx[:, 2 * H:3 * H] + gh[:, 2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-(gx[:, 3 * H:] + gh[:, 3 * H:])))
        cnew = f * cell + i * g
        hnew = o * np.tanh(cnew)
        m = mask[t].copy().reshape(B, 1)
        cell = m * cnew + (1.0 - m) * cell
        h = m * hnew + (1.0 - m) * h
        Ig[t] = i
        Fg[t] = f
        Gg[t] = g
        Og[t] = o
        Cs[t] = cell
        Hs[t] = h
    return Hs, Cs, Ig, Fg, Gg, Og


def _lstm_backward(X, h0, c0, Wx, Wh, b, mask, Hs, Cs, Ig, Fg, Gg, Og,
                   dHs, dh_last, dc_last):
    T, B, I = X.shape
    H = h0.shape[1]
    dX = np.empty((T, B, I))
    dWx = np.zeros(Wx.shape)
    dWh = np.zeros(Wh.shape)
    db = np.zeros(b.shape)
    dh = dh_last.copy()
    dc = dc_last.copy()
    for t in range(T - 1, -1, -1):
        dht = dh + dHs[t]
        m = mask[t].copy().reshape(B, 1)
        dhp = m * dht
        dhfr = (1.0 - m) * dht
        dcp = m * dc
        dcfr = (1.0 - m) * dc
        if t > 0:
            hprev = Hs[t - 1]
            cprev = Cs[t - 1]
        else:
            hprev = h0
            cprev = c0
        i = Ig[t]
        f = Fg[t]
        g = Gg[t]
        o = Og[t]
        tc = np.tanh(Cs[t])
        do = dhp * tc
        dcn = dcp + dhp * o * (1.0 - tc * tc)
        di = dcn * g
        df = dcn * cprev
        dg = dcn * i
        dcprev = dcn * f + dcfr
        dpre_i = di * i * (1.0 - i)
        dpre_f = df * f * (1.0 - f)
        dpre_g = dg * (1.0 - g * g)
        dpre_o = do * o * (1.0 - o)
        dgate = np.concatenate((dpre_i, dpre_f, dpre_g, dpre_o), axis=1)
        dX[t] = dgate @ Wx.T
        dWx += X[t].T @ dgate
        db += np.sum(dgate, 0)
        dWh += hprev.T @ dgate
        dh = dgate @ Wh.T + dhfr
        dc = dcprev
    return dX, dh, dc, dWx, dWh, db


# ---------------------------------------------------------------------------
# Attentive decoder with input feeding
# ---------------------------------------------------------------------------

def _attn_decoder_forward(E, h0, ht0, Henc, enc_mask, Wx, Wh, b, Wf, Wc):
    T, B, Ed = E.shape
    H = h0.shape[1]
    S = Henc.shape[1]
    Hd = np.empty((T, B, H))
    Htil = np.empty((T, B, H))
    Alpha = np.empty((T, B, S))
    Ctx = np.empty((T, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    C = np.empty((T, B, H))
    h = h0.copy()
    htprev = ht0.copy()
    for t in range(T):
        x = np.concatenate((E[t], htprev), axis=1)
        gx = x @ Wx + b
        gh = h @ Wh
        z = 1.0 / (1.0 + np.exp(-(gx[:, :H] + gh[:, :H])))
        r = 1.0 / (1.0 + np.exp(-(gx[:, H:2 * H] + gh[:, H:2 * H])))
        c = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        h = (1.0 - z) * c + z * h
        # Luong-style bilinear attention over encoder states; masked softmax
        # computes exact zeros at padded positions so padding cannot perturb
        # the context vector.
        v = h @ Wf.T
        ctx = np.zeros((B, H))
        for bi in range(B):
            sc = Henc[bi] @ v[bi]
            mrow = enc_mask[bi]
            mx = -1e300
            for s in range(S):
                if mrow[s] > 0.0 and sc[s] > mx:
                    mx = sc[s]
            tot = 0.0
            for s in range(S):
                if mrow[s] > 0.0:
                    e = np.exp(sc[s] - mx)
                else:
                    e = 0.0
                Alpha[t, bi, s] = e
                tot += e
            for s in range(S):
                a = Alpha[t, bi, s] / tot
                Alpha[t, bi, s] = a
                if a != 0.0:
                    ctx[bi] = ctx[bi] + a * Henc[bi, s]
        cat = np.concatenate((h, ctx), axis=1)
        htil = np.tanh(cat @ Wc.T)
        Z[t] = z
        R[t] = r
        C[t] = c
        Hd[t] = h
        Ctx[t] = ctx
        Htil[t] = htil
        htprev = htil
    return Hd, Htil, Alpha, Ctx, Z, R, C


def _attn_decoder_backward(E, h0, ht0, Henc, enc_mask, Wx, Wh, b, Wf, Wc,
                           Hd, Htil, Alpha, Ctx, Z, R, C, dHtil_ext):
    T, B, Ed = E.shape
    H = h0.shape[1]
    S = Henc.shape[1]
    Whc = np.ascontiguousarray(Wh[:, 2 * H:])
    dE = np.empty((T, B, Ed))
    dHenc = np.zeros(Henc.shape)
    dWx = np.zeros(Wx.shape)
    dWh = np.zeros(Wh.shape)
    db = np.zeros(b.shape)
    dWf = np.zeros(Wf.shape)
    dWc = np.zeros(Wc.shape)
    dh_carry = np.zeros((B, H))
    dht_carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dhtil = dHtil_ext[t] + dht_carry
        h = Hd[t]
        htil = Htil[t]
        dpre = dhtil * (1.0 - htil * htil)
        cat = np.concatenate((h, Ctx[t]), axis=1)
        dWc += dpre.T @ cat
        dcat = dpre @ Wc
        dh = dcat[:, :H].copy() + dh_carry
        dctx = np.ascontiguousarray(dcat[:, H:])
        # attention backward
        v = h @ Wf.T
        dv = np.empty((B, H))
        for bi in range(B):
            alpha = Alpha[t, bi]
            Hb = Henc[bi]
            dalpha = Hb @ dctx[bi]
            dot = 0.0
            for s in range(S):
                dot += alpha[s] * dalpha[s]
            ds = alpha * (dalpha - dot)
            for s in range(S):
                a = alpha[s]
                if a != 0.0:
                    dHenc[bi, s] = dHenc[bi, s] + a * dctx[bi] + ds[s] * v[bi]
            dv[bi] = ds @ Hb
        dWf += dv.T @ h
        dh += dv @ Wf
        # GRU step backward (decoder steps are never masked)
        if t > 0:
            hprev = Hd[t - 1]
            htprev = Htil[t - 1]
        else:
            hprev = h0
            htprev = ht0
        z = Z[t]
        r = R[t]
        c = C[t]
        dz = dh * (hprev - c)
        dc = dh * (1.0 - z)
        dhprev = dh * z
        ghc = hprev @ Whc
        dpre_c = dc * (1.0 - c * c)
        dr = dpre_c * ghc
        dghc = dpre_c * r
        dpre_z = dz * z * (1.0 - z)
        dpre_r = dr * r * (1.0 - r)
        dgx = np.concatenate((dpre_z, dpre_r, dpre_c), axis=1)
        dgh = np.concatenate((dpre_z, dpre_r, dghc), axis=1)
        x = np.concatenate((E[t], htprev), axis=1)
        dWx += x.T @ dgx
        db += np.sum(dgx, 0)
        dWh += hprev.T @ dgh
        dx = dgx @ Wx.T
        dE[t] = dx[:, :Ed]
        dht_carry = np.ascontiguousarray(dx[:, Ed:])
        dh_carry = dgh @ Wh.T + dhprev
    return dE, dh_carry, dht_carry, dHenc, dWx, dWh, db, dWf, dWc


_gru_forward_nb = jit(_gru_forward)
_gru_backward_nb = jit(_gru_backward)
_lstm_forward_nb = jit(_lstm_forward)
_lstm_backward_nb = jit(_lstm_backward)
_attn_decoder_forward_nb = jit(_attn_decoder_forward)
_attn_decoder_backward_nb = jit(_attn_decoder_backward)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_forward(X, h0, Wx, Wh, b, mask):
    impl = _gru_forward_nb if using_numba() else _gru_forward
    return impl(_c(X), _c(h0), _c(Wx), _c(Wh), _c(b), _c(mask))


def gru_backward(X, h0, Wx, Wh, b, mask, Hs, Z, R, C, dHs, dh_last):
    impl = _gru_backward_nb if using_numba() else _gru_backward
    return impl(_c(X), _c(h0), _c(Wx), _c(Wh), _c(b), _c(mask),
                _c(Hs), _c(Z), _c(R), _c(C), _c(dHs), _c(dh_last))


def lstm_forward(X, h0, c0, Wx, Wh, b, mask):
    impl = _lstm_forward_nb if using_numba() else _lstm_forward
    return impl(_c(X), _c(h0), _c(c0), _c(Wx), _c(Wh), _c(b), _c(mask))


def lstm_backward(X, h0, c0, Wx, Wh, b, mask, Hs, Cs, Ig, Fg, Gg, Og,
                  dHs, dh_last, dc_last):
    impl = _lstm_backward_nb if using_numba() else _lstm_backward
    return impl(_c(X), _c(h0), _c(c0), _c(Wx), _c(Wh), _c(b), _c(mask),
                _c(Hs), _c(Cs), _c(Ig), _c(Fg), _c(Gg), _c(Og),
                _c(dHs), _c(dh_last), _c(dc_last))


def attn_decoder_forward(E, h0, ht0, Henc, enc_mask, Wx, Wh, b, Wf, Wc):
    impl = _attn_decoder_forward_nb if using_numba() else _attn_decoder_forward
    return impl(_c(E), _c(h0), _c(ht0), _c(Henc), _c(enc_mask),
                _c(Wx), _c(Wh), _c(b), _c(Wf), _c(Wc))


def attn_decoder_backward(E, h0, ht0, Henc, enc_mask, Wx, Wh, b, Wf, Wc,
                          Hd, Htil, Alpha, Ctx, Z, R, C, dHtil_ext):
    impl = _attn_decoder_backward_nb if using_numba() else _attn_decoder_backward
    return impl(_c(E), _c(h0), _c(ht0), _c(Henc), _c(enc_mask),
                _c(Wx), _c(Wh), _c(b), _c(Wf), _c(Wc),
                _c(Hd), _c(Htil), _c(Alpha), _c(Ctx), _c(Z), _c(R), _c(C),
                _c(dHtil_ext))
