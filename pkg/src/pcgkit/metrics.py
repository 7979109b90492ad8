"""Evaluation metrics: confusion counts, sensitivity/specificity, and their
mean (balanced accuracy, reported as MAcc).

ABNORMAL is the positive class. Metric properties return full-precision
percentages; report rendering rounds to two decimals with half-up decimal
arithmetic computed straight from the integer counts, so printed values
never suffer binary-float rounding artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext

from .core import Label
from .errors import ValidationError

CSV_HEADER = "classifier,features,accuracy,sensitivity,specificity,macc"


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts with ABNORMAL as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValidationError("confusion counts must be non-negative")
        if self.total == 0:
            raise ValidationError("empty evaluation")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return 100.0 * (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float | None:
        if self.tp + self.fn == 0:
            return None
        return 100.0 * self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float | None:
        if self.tn + self.fp == 0:
            return None
        return 100.0 * self.tn / (self.tn + self.fp)

    @property
    def macc(self) -> float | None:
        if self.sensitivity is None or self.specificity is None:
            return None
        return (self.sensitivity + self.specificity) / 2.0

    @property
    def undefined_fields(self) -> list[str]:
        missing = []
        if self.sensitivity is None:
            missing += ["sensitivity", "macc"]
        if self.specificity is None:
            missing += ["specificity"]
            if "macc" not in missing:
                missing.append("macc")
        return missing

    def _exact(self, metric: str) -> Decimal | None:
        """Metric as an exact Decimal percentage computed from the counts."""
        with localcontext() as ctx:
            ctx.prec = 50
            sens = (
                Decimal(100) * self.tp / (self.tp + self.fn) if self.tp + self.fn else None
            )
            spec = (
                Decimal(100) * self.tn / (self.tn + self.fp) if self.tn + self.fp else None
            )
            if metric == "accuracy":
                return Decimal(100) * (self.tp + self.tn) / self.total
            if metric == "sensitivity":
                return sens
            if metric == "specificity":
                return spec
            if metric == "macc":
                if sens is None or spec is None:
                    return None
                return (sens + spec) / 2
        raise ValidationError(f"unknown metric {metric!r}")

    def rounded(self, metric: str) -> Decimal | None:
        value = self._exact(metric)
        if value is None:
            return None
        return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)

    def _fmt(self, metric: str) -> str:
        value = self.rounded(metric)
        return "n/a" if value is None else str(value)

    def to_text(self) -> str:
        lines = [
            "confusion matrix (positive = ABNORMAL):",
            f"  TP={self.tp}  FN={self.fn}",
            f"  FP={self.fp}  TN={self.tn}",
            f"accuracy:    {self._fmt('accuracy')} %",
            f"sensitivity: {self._fmt('sensitivity')} %",
            f"specificity: {self._fmt('specificity')} %",
            f"macc:        {self._fmt('macc')} %",
        ]
        if self.undefined_fields:
            lines.append(f"undefined (single-class input): {', '.join(self.undefined_fields)}")
        return "\n".join(lines)

    def to_csv_row(self, classifier: str, features: str) -> str:
        return ",".join(
            [
                classifier,
                features,
                self._fmt("accuracy"),
                self._fmt("sensitivity"),
                self._fmt("specificity"),
                self._fmt("macc"),
            ]
        )


def evaluate(predictions) -> EvalReport:
    """Fold (true, predicted) label pairs into an EvalReport.

    Labels may be :class:`Label` members or their 0/1 integer values.
    """
    tp = tn = fp = fn = 0
    for truth, pred in predictions:
        truth = Label(truth)
        pred = Label(pred)
        if truth is Label.ABNORMAL:
            if pred is Label.ABNORMAL:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Label.ABNORMAL:
                fp += 1
            else:
                tn += 1
    return EvalReport(tp=tp, tn=tn, fp=fp, fn=fn)
