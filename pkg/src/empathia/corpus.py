"""Corpus ingestion, vocabularies, example construction and batching.

The corpus format is a CSV with columns ``conv_id``, ``utterance_idx``,
``context`` (the emotion name), ``prompt`` and ``utterance``; commas inside
utterances are escaped as ``_comma_``. A file may either carry an optional
``split`` column tagging each row, or live in a directory as
``train.csv`` / ``valid.csv`` / ``test.csv``.

Two tokenizations run side by side: the generation side uses a corpus-built
word vocabulary (PAD/UNK/BOS/EOS reserved), the classifier side uses its own
vocabulary with a leading ``[CLS]`` token. Both share the same word-level
tokenizer, lowercased, punctuation split off.
"""

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusFormatError, EmptyCorpusError, ConfigError, UnknownLabelError

REQUIRED_COLUMNS = ("conv_id", "utterance_idx", "context", "prompt", "utterance")
SPLITS = ("train", "valid", "test")

SPEAKER = "speaker"
LISTENER = "listener"

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased word-level tokens with punctuation split off."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def truncate_left(tokens: list[str], max_len: int) -> list[str]:
    """Keep the most recent ``max_len`` tokens."""
    return tokens[-max_len:] if len(tokens) > max_len else tokens


@dataclass(frozen=True)
class EmotionLabel:
    id: int
    name: str


class LabelMap:
    """Fixed id<->name bijection over the emotion classes."""

    def __init__(self, names: list[str]):
        self.names = list(names)
        self._ids = {n: i for i, n in enumerate(self.names)}
        if len(self._ids) != len(self.names):
            raise CorpusFormatError("duplicate emotion names in label set")

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._ids

    def encode(self, name: str) -> int:
        if name not in self._ids:
            raise UnknownLabelError(f"unknown emotion name: {name!r}")
        return self._ids[name]

    def label(self, name: str) -> EmotionLabel:
        return EmotionLabel(self.encode(name), name)

    def name(self, idx: int) -> str:
        return self.names[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for n in self.names:
                f.write(n + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.strip()])

    @classmethod
    def from_names(cls, names):
        return cls(sorted(set(names)))


@dataclass
class Conversation:
    conv_id: str
    emotion: EmotionLabel
    prompt: str
    utterances: list[tuple[str, str]]  # (speaker_role, text)


@dataclass
class TrainingExample:
    conv_id: str
    context_words: list[str]
    target_words: list[str]
    emotion: EmotionLabel
    context_tokens: list[int] | None = None
    classifier_tokens: list[int] | None = None
    target_tokens: list[int] | None = None


@dataclass
class Batch:
    context: np.ndarray        # [B, T_ctx] int64
    context_lengths: np.ndarray
    classifier: np.ndarray     # [B, T_cls] int64
    classifier_mask: np.ndarray  # [B, T_cls] float64 in {0,1}
    target: np.ndarray         # [B, T_tgt] int64 (BOS ... EOS, PAD-padded)
    target_lengths: np.ndarray
    emotion_ids: np.ndarray    # [B] int64

    @property
    def size(self):
        return self.context.shape[0]


class GenerationVocab:
    """Word-level vocabulary for the generator: PAD=0, UNK=1, BOS=2, EOS=3."""

    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

    def __init__(self, tokens: list[str]):
        self.itos = list(self.RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusFormatError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def encode(self, words: list[str]) -> list[int]:
        unk = self.UNK
        return [self.stoi.get(w, unk) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path):
        # one token per line; line number = id - reserved offset
        with open(path, "w", encoding="utf-8") as f:
            for t in self.itos[len(self.RESERVED):]:
                f.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.strip()])


class ClassifierVocab:
    """Word-level vocabulary for the classifier: [PAD]=0, [UNK]=1, [CLS]=2."""

    PAD, UNK, CLS = 0, 1, 2
    RESERVED = ("[PAD]", "[UNK]", "[CLS]")

    def __init__(self, tokens: list[str]):
        self.itos = list(self.RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, words: list[str], max_len: int) -> list[int]:
        """``[CLS]`` + ids of the most recent words, capped at ``max_len``."""
        kept = truncate_left(words, max_len - 1)
        unk = self.UNK
        return [self.CLS] + [self.stoi.get(w, unk) for w in kept]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.itos[len(self.RESERVED):]:
                f.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.strip()])


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise EmptyCorpusError(f"empty corpus file: {path}")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise CorpusFormatError(
                f"corpus file {path} is missing columns: {', '.join(missing)}")
        has_split = "split" in reader.fieldnames
        rows = list(reader)
    if not rows:
        raise EmptyCorpusError(f"no data rows in corpus file: {path}")
    return rows, has_split


def _group_conversations(rows):
    groups: dict[str, list[dict]] = {}
    order = []
    for row in rows:
        cid = row["conv_id"]
        if cid not in groups:
            groups[cid] = []
            order.append(cid)
        groups[cid].append(row)
    return order, groups


def _rows_to_conversation(cid, rows, label_map):
    try:
        rows = sorted(rows, key=lambda r: int(r["utterance_idx"]))
    except (TypeError, ValueError) as e:
        raise CorpusFormatError(
            f"conversation {cid!r} has a non-integer utterance_idx") from e
    emotions = {r["context"] for r in rows}
    if len(emotions) != 1:
        raise CorpusFormatError(
            f"conversation {cid!r} carries multiple emotion names: {sorted(emotions)}")
    emotion = label_map.label(rows[0]["context"])
    utterances = []
    for i, r in enumerate(rows):
        role = SPEAKER if i % 2 == 0 else LISTENER
        utterances.append((role, r["utterance"].replace("_comma_", ",")))
    if not utterances:
        raise CorpusFormatError(f"conversation {cid!r} has no utterances")
    return Conversation(conv_id=cid, emotion=emotion,
                        prompt=rows[0]["prompt"].replace("_comma_", ","),
                        utterances=utterances)


def load_corpus(path, split: str) -> tuple[list[Conversation], LabelMap]:
    """Load one split of the corpus.

    ``path`` is either a directory holding ``<split>.csv`` files or a single
    CSV (optionally with a ``split`` column). Returns the split's
    conversations and the label map derived from the training data; emotion
    names outside that set in a non-train split raise
    :class:`UnknownLabelError`.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")

    if os.path.isdir(path):
        file_path = os.path.join(path, f"{split}.csv")
        if not os.path.exists(file_path):
            raise CorpusFormatError(f"no {split}.csv under {path}")
        rows, _ = _read_rows(file_path)
        train_path = os.path.join(path, "train.csv")
        if split != "train" and os.path.exists(train_path):
            train_rows, _ = _read_rows(train_path)
            label_map = LabelMap.from_names(r["context"] for r in train_rows)
        else:
            label_map = LabelMap.from_names(r["context"] for r in rows)
        split_rows = rows
    else:
        rows, has_split = _read_rows(path)
        if has_split:
            split_rows = [r for r in rows if r["split"] == split]
            train_rows = [r for r in rows if r["split"] == "train"]
            label_source = train_rows if train_rows else rows
        else:
            split_rows = rows
            label_source = rows
        label_map = LabelMap.from_names(r["context"] for r in label_source)

    order, groups = _group_conversations(split_rows)
    conversations = []
    for cid in order:
        conversations.append(_rows_to_conversation(cid, groups[cid], label_map))
    return conversations, label_map


def context_words_for_turn(utterance_texts: list[str]) -> list[str]:
    """Tokenized concatenation of every utterance preceding the turn."""
    words: list[str] = []
    for text in utterance_texts:
        words.extend(tokenize(text))
    return words


def encode_context_pair(utterance_texts, gen_vocab: GenerationVocab,
                        cls_vocab: ClassifierVocab, max_len: int):
    """Shared context construction for training and serving.

    Returns (context_ids, classifier_ids, truncated_context_words): the
    generation side keeps the most recent ``max_len`` tokens, the classifier
    side prepends [CLS] and keeps the most recent ``max_len - 1``.
    """
    words = context_words_for_turn(utterance_texts)
    ctx_words = truncate_left(words, max_len)
    return gen_vocab.encode(ctx_words), cls_vocab.encode(words, max_len), ctx_words


def build_examples(conversations, gen_vocab: GenerationVocab | None = None,
                   cls_vocab: ClassifierVocab | None = None,
                   max_len: int = 80) -> tuple[list[TrainingExample], int]:
    """One example per listener turn; returns ``(examples, skipped)``.

    The context is the full preceding history, left-truncated to ``max_len``
    tokens (most recent kept). When vocabularies are given, the id fields are
    filled in; otherwise only the word fields are populated (the form
    :func:`build_vocab` consumes).
    """
    examples = []
    skipped = 0
    for conv in conversations:
        produced = 0
        for i, (role, text) in enumerate(conv.utterances):
            if role != LISTENER:
                continue
            preceding = [t for _, t in conv.utterances[:i]]
            ctx = truncate_left(context_words_for_turn(preceding), max_len)
            tgt = tokenize(text)[:max_len - 2]
            if not ctx or not tgt:
                continue
            ex = TrainingExample(conv_id=conv.conv_id, context_words=ctx,
                                 target_words=tgt, emotion=conv.emotion)
            if gen_vocab is not None and cls_vocab is not None:
                ctx_ids, cls_ids, _ = encode_context_pair(
                    preceding, gen_vocab, cls_vocab, max_len)
                ex.context_tokens = ctx_ids
                ex.classifier_tokens = cls_ids
                ex.target_tokens = ([GenerationVocab.BOS]
                                    + gen_vocab.encode(tgt)
                                    + [GenerationVocab.EOS])
            examples.append(ex)
            produced += 1
        if produced == 0:
            skipped += 1
    return examples, skipped


def _count_tokens(examples):
    counts: dict[str, int] = {}
    for ex in examples:
        for w in ex.context_words:
            counts[w] = counts.get(w, 0) + 1
        for w in ex.target_words:
            counts[w] = counts.get(w, 0) + 1
    return counts


def build_vocab(examples, min_freq: int = 2) -> GenerationVocab:
    """Generation vocabulary over the train-split examples.

    Tokens with frequency >= ``min_freq`` are kept, ordered by descending
    frequency with lexicographic tie-break, after the reserved ids.
    """
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    counts = _count_tokens(examples)
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return GenerationVocab(kept)


def build_classifier_vocab(examples, min_freq: int = 1) -> ClassifierVocab:
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    counts = _count_tokens(examples)
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return ClassifierVocab(kept)


def _pad_matrix(seqs, pad_id):
    width = max(len(s) for s in seqs)
    mat = np.full((len(seqs), width), pad_id, dtype=np.int64)
    lengths = np.empty(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        mat[i, :len(s)] = s
        lengths[i] = len(s)
    return mat, lengths


def batchify(examples, batch_size: int, shuffle_seed: int | None = None):
    """Yield padded :class:`Batch` objects; deterministic given the seed.

    The final partial batch is emitted. With ``shuffle_seed=None`` the input
    order is preserved.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.arange(len(examples))
    if shuffle_seed is not None:
        idx = np.random.default_rng(shuffle_seed).permutation(idx)
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in idx[start:start + batch_size]]
        ctx, ctx_len = _pad_matrix([ex.context_tokens for ex in chunk],
                                   GenerationVocab.PAD)
        cls, cls_len = _pad_matrix([ex.classifier_tokens for ex in chunk],
                                   ClassifierVocab.PAD)
        cls_mask = (np.arange(cls.shape[1])[None, :] < cls_len[:, None]).astype(np.float64)
        tgt, tgt_len = _pad_matrix([ex.target_tokens for ex in chunk],
                                   GenerationVocab.PAD)
        emo = np.array([ex.emotion.id for ex in chunk], dtype=np.int64)
        yield Batch(context=ctx, context_lengths=ctx_len,
                    classifier=cls, classifier_mask=cls_mask,
                    target=tgt, target_lengths=tgt_len, emotion_ids=emo)
