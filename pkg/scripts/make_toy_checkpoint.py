"""Build a toy checkpoint from a synthetic corpus.

Usage: python scripts/make_toy_checkpoint.py <out_dir>

Writes <out_dir>/corpus.csv and trains the 2-layer/32-dim toy model on it
(about 10 seconds on one core). The resulting checkpoint directory
<out_dir>/run/last can be served with:

    empathia serve --ckpt <out_dir>/run/last --port 8080

The frontend end-to-end test uses this script to get a live service.
"""

import os
import sys

from empathia import synth
from empathia.training import TrainConfig, train

TOY = dict(batch_size=4, epochs=30, learning_rate=0.008, weight_decay=0.0,
           grad_clip=1.0, dropout_encdec=0.0, dropout_emotion=0.0,
           max_len=80, seed=7, backbone="pretrained-transformer", d_model=32,
           encoder_layers=2, encoder_heads=4, d_emb=32, min_freq=1)


def main():
    if len(sys.argv) != 2:
        print(__doc__)
        return 1
    out_dir = sys.argv[1]
    os.makedirs(out_dir, exist_ok=True)
    corpus = os.path.join(out_dir, "corpus.csv")
    synth.write_corpus(corpus, synth.memorization_rows(50))
    result = train(TrainConfig(**TOY), corpus, os.path.join(out_dir, "run"),
                   log=print)
    print(f"corpus:     {corpus}")
    print(f"checkpoint: {result.final_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
