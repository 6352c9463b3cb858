import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from empathia import synth
from empathia.corpus import Batch, batchify, build_examples, load_corpus
from empathia.training import TrainConfig, train

# Locked toy configuration: 2-layer/32-dim encoder, 30 epochs, fixed seed.
TOY_MEMORIZATION = dict(
    batch_size=4, epochs=30, learning_rate=0.008, weight_decay=0.0,
    grad_clip=1.0, dropout_encdec=0.0, dropout_emotion=0.0, max_len=80,
    seed=7, backbone="pretrained-transformer", d_model=32, encoder_layers=2,
    encoder_heads=4, d_emb=32, min_freq=1)

TOY_ABLATION = dict(
    batch_size=32, epochs=8, learning_rate=0.003, weight_decay=0.0,
    grad_clip=5.0, dropout_encdec=0.0, dropout_emotion=0.0, max_len=80,
    d_model=32, encoder_layers=2, encoder_heads=4, d_emb=32, min_freq=1)


@pytest.fixture(scope="session")
def mem_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "memorization.csv"
    synth.write_corpus(str(path), synth.memorization_rows(50))
    return str(path)


@pytest.fixture(scope="session")
def mem_result(mem_corpus_path, tmp_path_factory):
    """The toy memorization training run (reused across test modules)."""
    out = tmp_path_factory.mktemp("mem_run")
    return train(TrainConfig(**TOY_MEMORIZATION), mem_corpus_path, str(out))


@pytest.fixture(scope="session")
def mem_checkpoint(mem_result):
    return mem_result.final


@pytest.fixture(scope="session")
def mem_examples(mem_corpus_path, mem_checkpoint):
    convs, _ = load_corpus(mem_corpus_path, "train")
    examples, _ = build_examples(convs, mem_checkpoint.gen_vocab,
                                 mem_checkpoint.cls_vocab,
                                 mem_checkpoint.config.max_len)
    return examples


def random_batch(rng, B=3, Tc=5, Ts=4, Tt=5, Vg=12, Vc=9, n_labels=4):
    """A random padded batch for toy-model tests."""
    ctx = rng.integers(4, Vg, size=(B, Tc))
    ctx_len = rng.integers(2, Tc + 1, size=B)
    ctx_len[0] = Tc
    cls = rng.integers(3, Vc, size=(B, Ts))
    cls[:, 0] = 2
    cls_len = rng.integers(2, Ts + 1, size=B)
    cls_len[0] = Ts
    cls_mask = (np.arange(Ts)[None, :] < cls_len[:, None]).astype(np.float64)
    tgt = rng.integers(4, Vg, size=(B, Tt))
    tgt[:, 0] = 2
    tgt_len = rng.integers(3, Tt + 1, size=B)
    tgt_len[0] = Tt
    for b in range(B):
        tgt[b, tgt_len[b] - 1] = 3
        tgt[b, tgt_len[b]:] = 0
    emo = rng.integers(0, n_labels, size=B)
    return Batch(context=ctx, context_lengths=ctx_len, classifier=cls,
                 classifier_mask=cls_mask, target=tgt, target_lengths=tgt_len,
                 emotion_ids=emo)


def decode_all(ckpt, examples, batch_size=16):
    """Greedy-decode every example with a checkpoint's model."""
    decoded = []
    for batch in batchify(examples, batch_size):
        d, _ = ckpt.model.predict_batch(batch)
        decoded.extend(d)
    return decoded
