"""Evaluation metrics: corpus BLEU, emotion F1 and accuracy, report rendering.

BLEU is corpus-level with modified (clipped) n-gram precision, geometric
mean over orders 1..n and the multiplicative brevity penalty
``exp(1 - r/c)`` for c < r. A zero precision gets add-one smoothing
(numerator and denominator), recorded per order in the score. The headline
AVG BLEU is the arithmetic mean of BLEU-1..4.

Macro F1 averages per-class F1 over classes that occur in the gold labels
or the predictions; classes absent from both are excluded (their F1 is
undefined, not zero). A support-weighted average is available as an option.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def _ngram_counts(tokens, n):
    counts: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i:i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


@dataclass
class BleuScore:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    avg_bleu: float
    brevity_penalty: float
    precisions: list[float]
    smoothed_orders: list[int]
    candidate_length: int
    reference_length: int
    smoothing: str = "add-one-on-zero-precision"

    def as_dict(self):
        return {
            "bleu_1": self.bleu_1, "bleu_2": self.bleu_2,
            "bleu_3": self.bleu_3, "bleu_4": self.bleu_4,
            "avg_bleu": self.avg_bleu,
            "brevity_penalty": self.brevity_penalty,
            "precisions": self.precisions,
            "smoothed_orders": self.smoothed_orders,
            "candidate_length": self.candidate_length,
            "reference_length": self.reference_length,
            "smoothing": self.smoothing,
        }


def bleu(candidates, references, max_order=4, smooth=True) -> BleuScore:
    """Corpus-level BLEU over token lists, one reference per candidate."""
    if len(candidates) == 0:
        raise InputError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise InputError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}")
    matches = [0] * max_order
    totals = [0] * max_order
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            cgrams = _ngram_counts(cand, n)
            rgrams = _ngram_counts(ref, n)
            totals[n - 1] += max(0, len(cand) - n + 1)
            for g, c in cgrams.items():
                matches[n - 1] += min(c, rgrams.get(g, 0))

    precisions = []
    smoothed_orders = []
    for n in range(max_order):
        if totals[n] == 0:
            precisions.append(0.0)
        elif matches[n] == 0 and smooth:
            precisions.append((matches[n] + 1) / (totals[n] + 1))
            smoothed_orders.append(n + 1)
        else:
            precisions.append(matches[n] / totals[n])

    if cand_len == 0:
        bp = 0.0
    elif cand_len < ref_len:
        bp = math.exp(1.0 - ref_len / cand_len)
    else:
        bp = 1.0

    scores = []
    for n in range(1, max_order + 1):
        ps = precisions[:n]
        if any(p == 0.0 for p in ps):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in ps) / n))
    b1, b2, b3, b4 = scores
    return BleuScore(bleu_1=b1, bleu_2=b2, bleu_3=b3, bleu_4=b4,
                     avg_bleu=(b1 + b2 + b3 + b4) / 4.0,
                     brevity_penalty=bp, precisions=precisions,
                     smoothed_orders=smoothed_orders,
                     candidate_length=cand_len, reference_length=ref_len)


@dataclass
class ClassScores:
    label_id: int
    label_name: str
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int

    def as_dict(self):
        return {"label_id": self.label_id, "label_name": self.label_name,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "support": self.support,
                "predicted": self.predicted}


def emotion_f1(pred, gold, num_classes=32, average="macro", label_names=None):
    """Per-class P/R/F1 and the macro (or support-weighted) average.

    Classes with no gold and no predicted instances are excluded from the
    average; classes with gold but no correct predictions contribute 0.
    Returns (averaged_f1, per_class_table).
    """
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise InputError(
            f"pred/gold length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes
                      or gold.min() < 0 or gold.max() >= num_classes):
        raise InputError("label id out of range")
    if average not in ("macro", "weighted"):
        raise InputError(f"unknown average {average!r}")

    table = []
    present_f1 = []
    weights = []
    for k in range(num_classes):
        tp = int(np.sum((pred == k) & (gold == k)))
        fp = int(np.sum((pred == k) & (gold != k)))
        fn = int(np.sum((pred != k) & (gold == k)))
        support = tp + fn
        predicted = tp + fp
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        name = label_names[k] if label_names else str(k)
        table.append(ClassScores(k, name, precision, recall, f1, support,
                                 predicted))
        if support > 0 or predicted > 0:
            present_f1.append(f1)
            weights.append(support)
    if not present_f1:
        return 0.0, table
    if average == "weighted":
        total = sum(weights)
        if total == 0:
            return 0.0, table
        return float(sum(f * w for f, w in zip(present_f1, weights)) / total), table
    return float(sum(present_f1) / len(present_f1)), table


def emotion_accuracy(pred, gold):
    """Fraction of exactly matching labels."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise InputError(
            f"pred/gold length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise InputError("accuracy of an empty prediction list is undefined")
    return float(np.mean(pred == gold))


@dataclass
class EvalReport:
    bleu: BleuScore
    macro_f1: float
    weighted_f1: float
    accuracy: float
    per_class: list[ClassScores]
    example_count: int
    notes: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "bleu": self.bleu.as_dict(),
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "per_class": [c.as_dict() for c in self.per_class],
            "example_count": self.example_count,
            "notes": self.notes,
        }

    def to_json(self, indent=None):
        return json.dumps(self.as_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d):
        b = d["bleu"]
        score = BleuScore(
            bleu_1=b["bleu_1"], bleu_2=b["bleu_2"], bleu_3=b["bleu_3"],
            bleu_4=b["bleu_4"], avg_bleu=b["avg_bleu"],
            brevity_penalty=b["brevity_penalty"], precisions=b["precisions"],
            smoothed_orders=b["smoothed_orders"],
            candidate_length=b["candidate_length"],
            reference_length=b["reference_length"], smoothing=b["smoothing"])
        per_class = [ClassScores(c["label_id"], c["label_name"], c["precision"],
                                 c["recall"], c["f1"], c["support"],
                                 c["predicted"])
                     for c in d["per_class"]]
        return cls(bleu=score, macro_f1=d["macro_f1"],
                   weighted_f1=d["weighted_f1"], accuracy=d["accuracy"],
                   per_class=per_class, example_count=d["example_count"],
                   notes=d.get("notes", {}))

    def to_table(self):
        """Aligned text table; BLEU and F1 reported on the x100 scale."""
        rows = [
            ("AVG BLEU", f"{self.bleu.avg_bleu * 100:.2f}"),
            ("BLEU-1", f"{self.bleu.bleu_1 * 100:.2f}"),
            ("BLEU-2", f"{self.bleu.bleu_2 * 100:.2f}"),
            ("BLEU-3", f"{self.bleu.bleu_3 * 100:.2f}"),
            ("BLEU-4", f"{self.bleu.bleu_4 * 100:.2f}"),
            ("EMO F1", f"{self.macro_f1 * 100:.2f}"),
            ("EMO F1 (weighted)", f"{self.weighted_f1 * 100:.2f}"),
            ("EMO ACCURACY", f"{self.accuracy * 100:.2f}"),
            ("EXAMPLES", str(self.example_count)),
        ]
        width = max(len(k) for k, _ in rows)
        vwidth = max(len(v) for _, v in rows)
        sep = "-" * (width + vwidth + 5)
        lines = [sep]
        for k, v in rows:
            lines.append(f"| {k.ljust(width)} {v.rjust(vwidth)} |")
        lines.append(sep)
        return "\n".join(lines)
