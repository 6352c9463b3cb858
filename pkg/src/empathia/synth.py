"""Synthetic corpus generators for desk-scale runs and tests.

The real corpus is large and external; these generators produce small CSV
files in the same format (including the ``_comma_`` escape and a ``split``
column) so the full pipeline can be exercised end to end on one core.
"""

import csv

import numpy as np

EMOTIONS_32 = (
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive",
    "ashamed", "caring", "confident", "content", "devastated", "disappointed",
    "disgusted", "embarrassed", "excited", "faithful", "furious", "grateful",
    "guilty", "hopeful", "impressed", "jealous", "joyful", "lonely",
    "nostalgic", "prepared", "proud", "sad", "sentimental", "surprised",
    "terrified", "trusting",
)

_FILLER = ("the", "day", "was", "long", "and", "my", "week", "kept", "going",
           "with", "many", "things", "at", "home", "work", "then", "some",
           "people", "came", "by", "house", "road", "town", "morning")

_SUFFIX = ("so", "that", "is", "how", "it", "went")


def write_corpus(path, rows):
    """Write corpus rows (dicts) as a CSV with a ``split`` column."""
    fields = ("conv_id", "utterance_idx", "context", "prompt", "utterance",
              "split")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _conversation_rows(conv_id, emotion, prompt, turns, split):
    rows = []
    for i, text in enumerate(turns, start=1):
        rows.append({"conv_id": conv_id, "utterance_idx": i,
                     "context": emotion, "prompt": prompt, "utterance": text,
                     "split": split})
    return rows


_TOPICS = ("garden", "exam", "trip", "dog", "party", "job", "game", "movie",
           "storm", "dinner")


def memorization_rows(n_conversations=50, split="train"):
    """Tiny deterministic corpus for overfitting experiments.

    Each conversation pairs a topic with an emotion; the response is a
    function of that pair, and topic/emotion cycles are coprime enough that
    every context is distinct, so a model that memorizes the training set
    can reproduce each response exactly.
    """
    rows = []
    for i in range(n_conversations):
        emotion = EMOTIONS_32[i % len(EMOTIONS_32)]
        topic = _TOPICS[i % len(_TOPICS)]
        speaker = f"my {topic} made me feel {emotion} yesterday"
        listener = f"that {topic} sounds really {emotion} to me"
        rows.extend(_conversation_rows(f"mem:{i}", emotion, speaker,
                                       [speaker, listener], split))
    return rows


def ablation_rows(n_train=500, n_test=160, seed=0, filler_len=14):
    """Balanced corpus where the emotion is signalled by one token buried in
    shared filler, with a fixed common suffix.

    The signature token lands at a random early-to-mid position, so models
    that can attend over token positions recover it easily while a
    final-state-only encoder must carry it across the distractor suffix.
    """
    rng = np.random.default_rng(seed)
    rows = []

    def make(n, split, start):
        for i in range(n):
            emotion = EMOTIONS_32[i % len(EMOTIONS_32)]
            words = list(rng.choice(_FILLER, size=filler_len))
            pos = int(rng.integers(0, max(1, filler_len - len(_SUFFIX))))
            words.insert(pos, emotion)
            words.extend(_SUFFIX)
            speaker = " ".join(words)
            listener = f"i hear that you are feeling {emotion}"
            rows.extend(_conversation_rows(f"abl:{split}:{start + i}", emotion,
                                           speaker, [speaker, listener], split))

    make(n_train, "train", 0)
    make(n_test, "test", n_train)
    return rows
