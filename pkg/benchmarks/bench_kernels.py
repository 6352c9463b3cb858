"""Benchmark the recurrent kernels: numba-jitted vs pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Times the GRU forward/backward and the attentive decoder loop at a toy size
and at the full-scale model size, printing per-call milliseconds and the
speedup of the jitted path. The first numba call per kernel includes JIT
compilation and is excluded via warmup.
"""

import argparse
import time

import numpy as np

from empathia import backend, kernels


def timeit(fn, repeats):
    fn()  # warmup (and JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench_case(name, T, B, I, H, S, repeats):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(T, B, I))
    h0 = np.zeros((B, H))
    Wx = rng.normal(size=(I, 3 * H)) * 0.1
    Wh = rng.normal(size=(H, 3 * H)) * 0.1
    b = np.zeros(3 * H)
    mask = np.ones((T, B))
    E = rng.normal(size=(T, B, I))
    ht0 = np.zeros((B, H))
    Henc = rng.normal(size=(B, S, H))
    emask = np.ones((B, S))
    WxD = rng.normal(size=(I + H, 3 * H)) * 0.1
    Wf = rng.normal(size=(H, H)) * 0.1
    Wc = rng.normal(size=(H, 2 * H)) * 0.1
    dHs = rng.normal(size=(T, B, H))
    dh = rng.normal(size=(B, H))

    fwd_cache = {}

    def gru_fwd():
        fwd_cache["gru"] = kernels.gru_forward(X, h0, Wx, Wh, b, mask)

    def gru_bwd():
        kernels.gru_backward(X, h0, Wx, Wh, b, mask, *fwd_cache["gru"],
                             dHs, dh)

    def dec_fwd():
        fwd_cache["dec"] = kernels.attn_decoder_forward(
            E, h0, ht0, Henc, emask, WxD, Wh, b, Wf, Wc)

    def dec_bwd():
        kernels.attn_decoder_backward(E, h0, ht0, Henc, emask, WxD, Wh, b,
                                      Wf, Wc, *fwd_cache["dec"], dHs)

    rows = []
    for label, fn in (("gru_forward", gru_fwd), ("gru_backward", gru_bwd),
                      ("decoder_forward", dec_fwd),
                      ("decoder_backward", dec_bwd)):
        times = {}
        for be in ("numpy", "numba") if backend.HAVE_NUMBA else ("numpy",):
            backend.set_backend(be)
            times[be] = timeit(fn, repeats)
        speedup = (times["numpy"] / times["numba"]
                   if "numba" in times else float("nan"))
        rows.append((label, times.get("numpy"), times.get("numba"), speedup))

    print(f"\n{name}  (T={T} B={B} in={I} hidden={H} src={S})")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, t_np, t_nb, sp in rows:
        nb = f"{t_nb:10.2f}" if t_nb is not None else "       n/a"
        spv = f"{sp:8.1f}x" if t_nb is not None else "      n/a"
        print(f"{label:<18}{t_np:10.2f}{nb}{spv}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if not backend.HAVE_NUMBA:
        print("numba not installed: timing the numpy fallback only")
    bench_case("toy scale", T=20, B=32, I=32, H=32, S=20,
               repeats=max(args.repeats, 20))
    bench_case("full scale", T=40, B=32, I=300, H=768, S=40,
               repeats=args.repeats)


if __name__ == "__main__":
    main()
