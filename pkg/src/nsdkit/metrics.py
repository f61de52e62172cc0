"""Scoring: token F1, conlleval-style exact span F1, the ROSE family, and
the NS error-category breakdown.

All scores are micro-averaged percentages in [0, 100]. Span extraction
follows the conlleval chunking convention: B-x opens a span, I-x continues
a span of the same type, and an I-x that does not continue one (after O,
after a different type, or at sequence start) opens a new span. Tags that
carry no B-/I- prefix and are not O (the unified "NS" label, or "ENT" for
binary taggers) form one span per contiguous run.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

TagSeq = Sequence[str]

ROSE_PROPORTIONS = (0.25, 0.5, 0.75, 1.0)


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Span:
    type: str
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad span bounds {self.start}..{self.end}")


@dataclass(frozen=True)
class Prf:
    """Precision/recall/F1 as percentages, with the raw micro counts."""

    precision: float
    recall: float
    f1: float
    tp: int = 0
    pred: int = 0
    gold: int = 0

    @classmethod
    def from_counts(cls, tp: int, pred: int, gold: int) -> "Prf":
        p = 100.0 * tp / pred if pred else 0.0
        r = 100.0 * tp / gold if gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, pred, gold)


def extract_spans(tags: TagSeq) -> list[Span]:
    spans: list[Span] = []
    cur_type: str | None = None
    cur_unified = False
    cur_start = 0

    def close(end: int):
        nonlocal cur_type
        if cur_type is not None:
            spans.append(Span(cur_type, cur_start, end))
            cur_type = None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i - 1)
        elif tag.startswith("B-"):
            close(i - 1)
            cur_type, cur_unified, cur_start = tag[2:], False, i
        elif tag.startswith("I-"):
            if cur_type == tag[2:] and not cur_unified:
                continue
            close(i - 1)
            cur_type, cur_unified, cur_start = tag[2:], False, i
        else:  # unified tag (NS, ENT): contiguous equal tags are one span
            if cur_type == tag and cur_unified:
                continue
            close(i - 1)
            cur_type, cur_unified, cur_start = tag, True, i
    close(len(tags) - 1)
    return spans


def _check_aligned(pred: Sequence[TagSeq], gold: Sequence[TagSeq]):
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gold)} gold utterances")
    for i, (p, g) in enumerate(zip(pred, gold)):
        if len(p) != len(g):
            raise LengthMismatch(f"utterance {i}: {len(p)} predicted vs {len(g)} gold tags")


def token_f1(pred: Sequence[TagSeq], gold: Sequence[TagSeq], label: str) -> Prf:
    """Micro token-level P/R/F1 for one tag label over aligned corpora."""
    _check_aligned(pred, gold)
    tp = n_pred = n_gold = 0
    for pseq, gseq in zip(pred, gold):
        for pt, gt in zip(pseq, gseq):
            if pt == label:
                n_pred += 1
                if gt == label:
                    tp += 1
            if gt == label:
                n_gold += 1
    return Prf.from_counts(tp, n_pred, n_gold)


def token_f1_per_label(pred: Sequence[TagSeq], gold: Sequence[TagSeq]) -> dict[str, Prf]:
    _check_aligned(pred, gold)
    tp: Counter[str] = Counter()
    n_pred: Counter[str] = Counter()
    n_gold: Counter[str] = Counter()
    for pseq, gseq in zip(pred, gold):
        for pt, gt in zip(pseq, gseq):
            n_pred[pt] += 1
            n_gold[gt] += 1
            if pt == gt:
                tp[pt] += 1
    labels = sorted(set(n_pred) | set(n_gold))
    return {lb: Prf.from_counts(tp[lb], n_pred[lb], n_gold[lb]) for lb in labels}


def span_counts(
    pred: Sequence[TagSeq], gold: Sequence[TagSeq]
) -> tuple[Counter, Counter, Counter]:
    """Per-type (tp, pred, gold) span counts under exact-match."""
    _check_aligned(pred, gold)
    tp: Counter[str] = Counter()
    n_pred: Counter[str] = Counter()
    n_gold: Counter[str] = Counter()
    for pseq, gseq in zip(pred, gold):
        pspans, gspans = set(extract_spans(pseq)), set(extract_spans(gseq))
        for s in pspans:
            n_pred[s.type] += 1
        for s in gspans:
            n_gold[s.type] += 1
        for s in pspans & gspans:
            tp[s.type] += 1
    return tp, n_pred, n_gold


def span_f1(
    pred: Sequence[TagSeq],
    gold: Sequence[TagSeq],
    classes: Iterable[str] | None = None,
) -> Prf:
    """Exact-span-match micro P/R/F1, optionally restricted to a class set."""
    tp, n_pred, n_gold = span_counts(pred, gold)
    if classes is None:
        keys = set(n_pred) | set(n_gold)
    else:
        keys = set(classes)
    return Prf.from_counts(
        sum(tp[k] for k in keys),
        sum(n_pred[k] for k in keys),
        sum(n_gold[k] for k in keys),
    )


def span_f1_per_class(pred: Sequence[TagSeq], gold: Sequence[TagSeq]) -> dict[str, Prf]:
    tp, n_pred, n_gold = span_counts(pred, gold)
    keys = sorted(set(n_pred) | set(n_gold))
    return {k: Prf.from_counts(tp[k], n_pred[k], n_gold[k]) for k in keys}


@dataclass(frozen=True)
class RoseResult:
    proportion: float
    raw_precision: float
    raw_recall: float
    raw_f1: float
    reported: float  # (raw_f1 + NS span F1) / 2
    no_gold_spans: bool = False


def rose(pred: Sequence[TagSeq], gold: Sequence[TagSeq], p: float) -> RoseResult:
    """Restriction-oriented span evaluation at proportion p.

    A gold NS span of length L counts correct when at least p*L of its
    tokens are predicted NS; prediction overflow past the span boundary is
    not punished. A predicted NS span scores when it overlaps at least one
    correct gold span. The reported value averages the raw F1 with the
    exact-match NS span F1 so that over-long predictions cannot win.
    """
    if not 0 < p <= 1:
        raise ValueError(f"proportion must be in (0, 1], got {p}")
    _check_aligned(pred, gold)

    n_gold = n_correct = n_pred = n_pred_hit = 0
    for pseq, gseq in zip(pred, gold):
        gold_ns = [s for s in extract_spans(gseq) if s.type == "NS"]
        pred_ns = [s for s in extract_spans(pseq) if s.type == "NS"]
        correct = []
        for s in gold_ns:
            length = s.end - s.start + 1
            hits = sum(1 for i in range(s.start, s.end + 1) if pseq[i] == "NS")
            if hits >= p * length:
                correct.append(s)
        n_gold += len(gold_ns)
        n_correct += len(correct)
        n_pred += len(pred_ns)
        n_pred_hit += sum(
            1
            for ps in pred_ns
            if any(ps.start <= cs.end and cs.start <= ps.end for cs in correct)
        )

    if n_gold == 0:
        return RoseResult(p, 0.0, 0.0, 0.0, 0.0, no_gold_spans=True)
    precision = 100.0 * n_pred_hit / n_pred if n_pred else 0.0
    recall = 100.0 * n_correct / n_gold
    raw_f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ns_span = span_f1(pred, gold, classes=["NS"]).f1
    return RoseResult(p, precision, recall, raw_f1, (raw_f1 + ns_span) / 2)


def rose_family(
    pred: Sequence[TagSeq],
    gold: Sequence[TagSeq],
    proportions: Sequence[float] = ROSE_PROPORTIONS,
) -> tuple[dict[float, RoseResult], float]:
    """ROSE at each proportion plus the mean of the reported values."""
    results = {p: rose(pred, gold, p) for p in proportions}
    mean = sum(r.reported for r in results.values()) / len(results)
    return results, mean


ERROR_ROWS = ("prediction_is_ns", "target_is_ns")
ERROR_COLS = ("O", "open_vocabulary", "other")


@dataclass(frozen=True)
class ErrorCategoryTable:
    """Token-level NS errors bucketed by what the non-NS side was."""

    percentages: dict[str, dict[str, float]]
    counts: dict[str, dict[str, int]]
    total_errors: int

    @property
    def no_errors(self) -> bool:
        return self.total_errors == 0


def _error_bucket(tag: str, open_vocab: set[str]) -> str:
    if tag == "O":
        return "O"
    slot_type = tag[2:] if tag.startswith(("B-", "I-")) else tag
    return "open_vocabulary" if slot_type in open_vocab else "other"


def error_analysis(
    pred: Sequence[TagSeq],
    gold: Sequence[TagSeq],
    open_vocab_types: Iterable[str] = (),
) -> ErrorCategoryTable:
    """Bucket tokens where exactly one of prediction/gold is NS."""
    _check_aligned(pred, gold)
    open_vocab = set(open_vocab_types)
    counts = {row: {col: 0 for col in ERROR_COLS} for row in ERROR_ROWS}
    for pseq, gseq in zip(pred, gold):
        for pt, gt in zip(pseq, gseq):
            if (pt == "NS") == (gt == "NS"):
                continue
            if pt == "NS":
                counts["prediction_is_ns"][_error_bucket(gt, open_vocab)] += 1
            else:
                counts["target_is_ns"][_error_bucket(pt, open_vocab)] += 1
    total = sum(sum(row.values()) for row in counts.values())
    pct = {
        row: {col: (100.0 * n / total if total else 0.0) for col, n in cols.items()}
        for row, cols in counts.items()
    }
    return ErrorCategoryTable(pct, counts, total)


@dataclass(frozen=True)
class MetricsReport:
    token_per_class: dict[str, Prf]
    span_per_class: dict[str, Prf]
    ind_span_f1: Prf
    nsd_span_f1: Prf
    nsd_token_f1: Prf
    rose: dict[float, RoseResult]
    rose_mean: float
    error_table: ErrorCategoryTable

    def to_dict(self) -> dict:
        def prf(v: Prf) -> dict:
            return {
                "precision": v.precision,
                "recall": v.recall,
                "f1": v.f1,
                "tp": v.tp,
                "pred": v.pred,
                "gold": v.gold,
            }

        return {
            "token_per_class": {k: prf(v) for k, v in self.token_per_class.items()},
            "span_per_class": {k: prf(v) for k, v in self.span_per_class.items()},
            "ind_span_f1": prf(self.ind_span_f1),
            "nsd_span_f1": prf(self.nsd_span_f1),
            "nsd_token_f1": prf(self.nsd_token_f1),
            "rose": {
                str(p): {
                    "raw_precision": r.raw_precision,
                    "raw_recall": r.raw_recall,
                    "raw_f1": r.raw_f1,
                    "reported": r.reported,
                    "no_gold_spans": r.no_gold_spans,
                }
                for p, r in self.rose.items()
            },
            "rose_mean": self.rose_mean,
            "error_table": {
                "percentages": self.error_table.percentages,
                "counts": self.error_table.counts,
                "total_errors": self.error_table.total_errors,
            },
        }


def build_report(
    pred: Sequence[TagSeq],
    gold: Sequence[TagSeq],
    open_vocab_types: Iterable[str] = (),
) -> MetricsReport:
    span_classes = span_f1_per_class(pred, gold)
    ind_classes = [c for c in span_classes if c != "NS"]
    rose_results, rose_mean = rose_family(pred, gold)
    return MetricsReport(
        token_per_class=token_f1_per_label(pred, gold),
        span_per_class=span_classes,
        ind_span_f1=span_f1(pred, gold, classes=ind_classes),
        nsd_span_f1=span_f1(pred, gold, classes=["NS"]),
        nsd_token_f1=token_f1(pred, gold, "NS"),
        rose=rose_results,
        rose_mean=rose_mean,
        error_table=error_analysis(pred, gold, open_vocab_types),
    )


def format_report(report: MetricsReport) -> str:
    """Aligned text table with percentages at two decimals."""
    lines = []
    lines.append(f"{'metric':<28}{'P':>8}{'R':>8}{'F1':>8}")
    for name, prf in (
        ("IND Span F1", report.ind_span_f1),
        ("NSD Span F1", report.nsd_span_f1),
        ("NSD Token F1", report.nsd_token_f1),
    ):
        lines.append(f"{name:<28}{prf.precision:>8.2f}{prf.recall:>8.2f}{prf.f1:>8.2f}")
    for p in sorted(report.rose):
        r = report.rose[p]
        lines.append(f"{f'ROSE-{int(p * 100)}%':<28}{'':>8}{'':>8}{r.reported:>8.2f}")
    lines.append(f"{'ROSE-mean':<28}{'':>8}{'':>8}{report.rose_mean:>8.2f}")
    lines.append("")
    lines.append(f"{'class (span)':<28}{'P':>8}{'R':>8}{'F1':>8}{'gold':>7}")
    for cls, prf in sorted(report.span_per_class.items()):
        lines.append(
            f"{cls:<28}{prf.precision:>8.2f}{prf.recall:>8.2f}{prf.f1:>8.2f}{prf.gold:>7}"
        )
    if not report.error_table.no_errors:
        lines.append("")
        lines.append(f"{'NS errors (%)':<22}" + "".join(f"{c:>18}" for c in ERROR_COLS))
        for row in ERROR_ROWS:
            cells = report.error_table.percentages[row]
            lines.append(
                f"{row:<22}" + "".join(f"{cells[c]:>18.2f}" for c in ERROR_COLS)
            )
    return "\n".join(lines)
