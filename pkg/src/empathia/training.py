"""Joint training loop, optimizer, checkpointing and evaluation.

The total loss is ``emotion_loss_weight * L_emo + L_gen`` optimized with
AdamW (decoupled weight decay on matrix-shaped parameters) under global
gradient-norm clipping. Seeding is fully deterministic: parameter init
derives from the config seed, and each epoch re-derives its shuffle and
dropout streams from (seed, epoch), which makes interrupted runs resumable
bit-for-bit.

A checkpoint directory holds: ``params.npz`` (model + optimizer arrays +
epoch index), ``vocab.txt``, ``cls_vocab.txt``, ``labels.txt``,
``config.cfg`` (key=value text) and ``metrics.jsonl`` (one JSON object per
epoch).
"""

import dataclasses
import json
import os
import shutil

import numpy as np

from .corpus import (ClassifierVocab, GenerationVocab, LabelMap, batchify,
                     build_classifier_vocab, build_examples, build_vocab,
                     load_corpus)
from .errors import (CheckpointError, ConfigError, EmpathiaError,
                     EmptyCorpusError, NumericError)
from .layers import global_norm
from .metrics import EvalReport, bleu, emotion_accuracy, emotion_f1
from .model import JointModel

_INIT_TAG = 101
_SHUFFLE_TAG = 211
_DROPOUT_TAG = 307


@dataclasses.dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 0.0001
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    dropout_encdec: float = 0.3
    dropout_emotion: float = 0.1
    max_len: int = 80
    seed: int = 13
    backbone: str = "pretrained-transformer"
    d_model: int = 768
    encoder_layers: int = 12
    encoder_heads: int = 12
    d_emb: int = 300
    min_freq: int = 2
    emotion_loss_weight: float = 1.0
    encoder_weights: str = ""

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 < self.learning_rate < 1.0):
            raise ConfigError("learning_rate must lie in (0, 1)")
        for name in ("dropout_encdec", "dropout_emotion"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0 (0 disables clipping)")
        if self.max_len < 4:
            raise ConfigError("max_len must be >= 4")
        if self.min_freq < 1:
            raise ConfigError("min_freq must be >= 1")
        if self.emotion_loss_weight < 0:
            raise ConfigError("emotion_loss_weight must be >= 0")
        from .encoder import BACKBONE_KINDS
        if self.backbone not in BACKBONE_KINDS:
            raise ConfigError(
                f"unknown backbone {self.backbone!r}; expected one of {BACKBONE_KINDS}")
        if self.encoder_weights and self.backbone != "pretrained-transformer":
            raise ConfigError(
                "encoder_weights only applies to the pretrained-transformer backbone")
        return self

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for fld in dataclasses.fields(self):
                f.write(f"{fld.name}={getattr(self, fld.name)}\n")

    @classmethod
    def load(cls, path, overrides=None):
        values = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
        return cls.from_mapping(values, overrides)

    @classmethod
    def from_mapping(cls, values, overrides=None):
        field_types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in field_types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, field_types[key], key)
        cfg = cls(**kwargs)
        if overrides:
            for key, val in overrides.items():
                if key not in field_types:
                    raise ConfigError(f"unknown config key {key!r}")
                setattr(cfg, key, val)
        return cfg.validate()


def _coerce(raw, ftype, key):
    if isinstance(raw, (int, float)):
        return raw
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from e


class AdamW:
    """Adam with decoupled weight decay and global-norm gradient clipping.

    Weight decay applies to matrix-shaped parameters only (embeddings and
    weight matrices), not to biases, gains or vectors.
    """

    def __init__(self, param_items, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, grad_clip=1.0):
        self.params = list(param_items)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p, _ in self.params}
        self.v = {name: np.zeros_like(p) for name, p, _ in self.params}

    def step(self):
        scale = 1.0
        if self.grad_clip > 0:
            norm = global_norm([g for _, _, g in self.params])
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, p, g in self.params:
            grad = g * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * grad
            v *= self.b2
            v += (1.0 - self.b2) * grad * grad
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay > 0 and p.ndim >= 2:
                update = update + self.weight_decay * p
            p -= self.lr * update

    def state_arrays(self):
        out = {"opt.t": np.array(self.t, dtype=np.int64)}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, data):
        self.t = int(data["opt.t"])
        for name in self.m:
            self.m[name][...] = data[f"opt.m.{name}"]
            self.v[name][...] = data[f"opt.v.{name}"]


def joint_step(model, optimizer, batch, rng):
    """One optimizer update on the joint loss; returns the three losses."""
    model.zero_grads()
    losses = model.train_step_losses(batch, rng)
    optimizer.step()
    return losses


def build_model(config: TrainConfig, gen_vocab_size, cls_vocab_size, n_labels):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _INIT_TAG]))
    model = JointModel(
        rng, gen_vocab_size, cls_vocab_size, n_labels,
        backbone=config.backbone, d_model=config.d_model,
        encoder_layers=config.encoder_layers,
        encoder_heads=config.encoder_heads, d_emb=config.d_emb,
        max_len=config.max_len, dropout_encdec=config.dropout_encdec,
        dropout_emotion=config.dropout_emotion,
        emotion_loss_weight=config.emotion_loss_weight)
    if config.encoder_weights:
        model.backbone.encoder.load_weights(config.encoder_weights)
    return model


class Checkpoint:
    """A loaded checkpoint directory."""

    FILES = ("params.npz", "vocab.txt", "cls_vocab.txt", "labels.txt",
             "config.cfg", "metrics.jsonl")

    def __init__(self, path, config, model, gen_vocab, cls_vocab, labels,
                 epoch, history, raw_arrays=None):
        self.path = path
        self.config = config
        self.model = model
        self.gen_vocab = gen_vocab
        self.cls_vocab = cls_vocab
        self.labels = labels
        self.epoch = epoch
        self.history = history
        self.raw_arrays = raw_arrays

    @classmethod
    def load(cls, path):
        for fname in ("params.npz", "vocab.txt", "cls_vocab.txt",
                      "labels.txt", "config.cfg"):
            if not os.path.exists(os.path.join(path, fname)):
                raise CheckpointError(f"checkpoint {path} is missing {fname}")
        config = TrainConfig.load(os.path.join(path, "config.cfg"))
        gen_vocab = GenerationVocab.load(os.path.join(path, "vocab.txt"))
        cls_vocab = ClassifierVocab.load(os.path.join(path, "cls_vocab.txt"))
        labels = LabelMap.load(os.path.join(path, "labels.txt"))
        model = build_model(config, len(gen_vocab), len(cls_vocab), len(labels))
        with np.load(os.path.join(path, "params.npz")) as data:
            arrays = {k: data[k] for k in data.files}
        model.load_param_dict(arrays)
        epoch = int(arrays.get("_epoch", 0))
        history = []
        hist_path = os.path.join(path, "metrics.jsonl")
        if os.path.exists(hist_path):
            with open(hist_path, encoding="utf-8") as f:
                history = [json.loads(line) for line in f if line.strip()]
        return cls(path, config, model, gen_vocab, cls_vocab, labels, epoch,
                   history, raw_arrays=arrays)


def save_checkpoint(path, model, config, gen_vocab, cls_vocab, labels, epoch,
                    history, optimizer=None):
    os.makedirs(path, exist_ok=True)
    arrays = dict(model.param_dict())
    arrays["_epoch"] = np.array(epoch, dtype=np.int64)
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    tmp = os.path.join(path, "params.npz.tmp")
    for attempt in (1, 2):  # retry disk writes once before aborting
        try:
            with open(tmp, "wb") as f:
                np.savez(f, **arrays)
            os.replace(tmp, os.path.join(path, "params.npz"))
            break
        except OSError:
            if attempt == 2:
                raise
    gen_vocab.save(os.path.join(path, "vocab.txt"))
    cls_vocab.save(os.path.join(path, "cls_vocab.txt"))
    labels.save(os.path.join(path, "labels.txt"))
    config.save(os.path.join(path, "config.cfg"))
    with open(os.path.join(path, "metrics.jsonl"), "w", encoding="utf-8") as f:
        for entry in history:
            f.write(json.dumps(entry) + "\n")
    return path


@dataclasses.dataclass
class TrainResult:
    final: Checkpoint
    final_path: str
    best_path: str
    history: list


def _epoch_shuffle_seed(seed, epoch):
    return int(np.random.SeedSequence([seed, _SHUFFLE_TAG, epoch])
               .generate_state(1)[0])


def _epoch_dropout_rng(seed, epoch):
    return np.random.default_rng(
        np.random.SeedSequence([seed, _DROPOUT_TAG, epoch]))


def train(config: TrainConfig, data_path, out_dir, resume_from=None,
          log=None) -> TrainResult:
    """Run the full training schedule and checkpoint every epoch.

    Writes ``<out_dir>/last`` each epoch and copies it to ``<out_dir>/best``
    whenever the validation loss improves (training loss when no validation
    split exists). Returns the final checkpoint and the best-checkpoint path.
    """
    config.validate()
    log = log or (lambda msg: None)

    if resume_from is not None:
        ckpt = Checkpoint.load(resume_from)
        model = ckpt.model
        gen_vocab, cls_vocab, labels = ckpt.gen_vocab, ckpt.cls_vocab, ckpt.labels
        start_epoch = ckpt.epoch
        history = list(ckpt.history)
        train_convs, _ = load_corpus(data_path, "train")
        train_convs = _relabel(train_convs, labels)
    else:
        train_convs, labels = load_corpus(data_path, "train")
        raw_examples, _ = build_examples(train_convs, max_len=config.max_len)
        gen_vocab = build_vocab(raw_examples, config.min_freq)
        cls_vocab = build_classifier_vocab(raw_examples)
        start_epoch = 0
        history = []
        model = build_model(config, len(gen_vocab), len(cls_vocab), len(labels))

    train_examples, n_skipped = build_examples(train_convs, gen_vocab,
                                               cls_vocab, config.max_len)
    if n_skipped:
        log(f"skipped {n_skipped} conversations without listener turns")
    if not train_examples:
        raise EmptyCorpusError(
            "training corpus yields no usable examples (no listener turns)")

    valid_examples = None
    try:
        valid_convs, _ = load_corpus(data_path, "valid")
        valid_convs = _relabel(valid_convs, labels)
        valid_examples, _ = build_examples(valid_convs, gen_vocab, cls_vocab,
                                           config.max_len)
        if not valid_examples:
            valid_examples = None
    except EmpathiaError:
        valid_examples = None

    optimizer = AdamW(model.param_items(), lr=config.learning_rate,
                      weight_decay=config.weight_decay,
                      grad_clip=config.grad_clip)
    if resume_from is not None and "opt.t" in ckpt.raw_arrays:
        optimizer.load_state_arrays(ckpt.raw_arrays)

    last_path = os.path.join(out_dir, "last")
    best_path = os.path.join(out_dir, "best")
    best_loss = np.inf
    for entry in history:
        key = "valid_loss" if "valid_loss" in entry else "train_loss"
        if entry.get(key) is not None and entry[key] < best_loss:
            best_loss = entry[key]

    if start_epoch == 0 and config.epochs == 0:
        save_checkpoint(last_path, model, config, gen_vocab, cls_vocab,
                        labels, 0, history, optimizer)
        shutil.rmtree(best_path, ignore_errors=True)
        shutil.copytree(last_path, best_path)
        return TrainResult(Checkpoint.load(last_path), last_path, best_path,
                           history)

    for epoch in range(start_epoch + 1, config.epochs + 1):
        drop_rng = _epoch_dropout_rng(config.seed, epoch)
        shuffle_seed = _epoch_shuffle_seed(config.seed, epoch)
        sums = np.zeros(3)
        n_batches = 0
        for b_idx, batch in enumerate(
                batchify(train_examples, config.batch_size, shuffle_seed)):
            try:
                losses = joint_step(model, optimizer, batch, drop_rng)
            except NumericError as e:
                raise NumericError(
                    f"epoch {epoch} batch {b_idx}: {e}") from e
            sums += losses
            n_batches += 1
        entry = {"epoch": epoch,
                 "train_loss": float(sums[0] / n_batches),
                 "train_loss_emo": float(sums[1] / n_batches),
                 "train_loss_gen": float(sums[2] / n_batches)}
        if valid_examples is not None:
            v_losses = np.zeros(3)
            nv = 0
            for batch in batchify(valid_examples, config.batch_size):
                v_losses += model.eval_losses(batch)
                nv += 1
            report = evaluate_examples(model, valid_examples, gen_vocab,
                                       labels, config.batch_size)
            entry.update({"valid_loss": float(v_losses[0] / nv),
                          "valid_loss_emo": float(v_losses[1] / nv),
                          "valid_loss_gen": float(v_losses[2] / nv),
                          "valid_avg_bleu": report.bleu.avg_bleu,
                          "valid_macro_f1": report.macro_f1,
                          "valid_accuracy": report.accuracy})
        history.append(entry)
        log(f"epoch {epoch}: " + " ".join(
            f"{k}={v:.4f}" for k, v in entry.items() if k != "epoch"))
        save_checkpoint(last_path, model, config, gen_vocab, cls_vocab,
                        labels, epoch, history, optimizer)
        sel = entry.get("valid_loss", entry["train_loss"])
        if sel < best_loss:
            best_loss = sel
            shutil.rmtree(best_path, ignore_errors=True)
            shutil.copytree(last_path, best_path)
    if not os.path.exists(best_path) and os.path.exists(last_path):
        shutil.copytree(last_path, best_path)
    return TrainResult(Checkpoint.load(last_path), last_path, best_path,
                       history)


def _relabel(conversations, labels: LabelMap):
    """Re-encode conversation emotions against a fixed label map."""
    for conv in conversations:
        conv.emotion = labels.label(conv.emotion.name)
    return conversations


def evaluate_examples(model, examples, gen_vocab, labels, batch_size=32,
                      max_len=None) -> EvalReport:
    """Greedy-decode and classify every example; aggregate the metrics.

    ``model`` needs only ``predict_batch(batch, max_len)``; the trained
    joint model and test doubles both satisfy it.
    """
    candidates = []
    references = []
    pred_ids = []
    gold_ids = []
    for batch in batchify(examples, batch_size):
        decoded, emo_probs = model.predict_batch(batch, max_len)
        for ids in decoded:
            candidates.append(gen_vocab.decode(ids))
        pred_ids.extend(np.argmax(emo_probs, axis=-1).tolist())
        gold_ids.extend(batch.emotion_ids.tolist())
    for ex in examples:
        references.append(ex.target_words)
    score = bleu(candidates, references)
    macro, table = emotion_f1(pred_ids, gold_ids, num_classes=len(labels),
                              label_names=labels.names)
    weighted, _ = emotion_f1(pred_ids, gold_ids, num_classes=len(labels),
                             average="weighted", label_names=labels.names)
    acc = emotion_accuracy(pred_ids, gold_ids)
    return EvalReport(
        bleu=score, macro_f1=macro, weighted_f1=weighted, accuracy=acc,
        per_class=table, example_count=len(examples),
        notes={"tokenization": "lowercased word-level, punctuation split",
               "bleu_scale": "0-1 (x100 in CLI tables)",
               "f1_average": "macro over classes present in gold or pred"})


def evaluate(ckpt: Checkpoint, data_path, split) -> EvalReport:
    """Evaluate a checkpoint on one corpus split."""
    convs, _ = load_corpus(data_path, split)
    convs = _relabel(convs, ckpt.labels)
    examples, _ = build_examples(convs, ckpt.gen_vocab, ckpt.cls_vocab,
                                 ckpt.config.max_len)
    return evaluate_examples(ckpt.model, examples, ckpt.gen_vocab,
                             ckpt.labels, ckpt.config.batch_size)
