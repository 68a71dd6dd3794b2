"""ICBHI specificity / sensitivity / score and their aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyClass, InvalidLabel
from .icbhi import AgeGroup, Device, Label, Location, Sex

N_CLASSES = len(Label)
ADVENTITIOUS = (Label.CRACKLE, Label.WHEEZE, Label.BOTH)

SLICE_ATTRIBUTES = {
    "Age": ("age_group", list(AgeGroup)),
    "Sex": ("sex", list(Sex)),
    "Loc": ("location", list(Location)),
    "Dev": ("device", list(Device)),
}


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int]) -> np.ndarray:
    """4x4 counts; rows are true classes, columns predictions."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred differ in length")
    if t.size and (t.min() < 0 or t.max() >= N_CLASSES or p.min() < 0 or p.max() >= N_CLASSES):
        raise InvalidLabel("labels must lie in 0..3")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


# Ratios are kept rational until the final rounding so that Sp, Se and
# Score are each the correctly rounded value of their exact definition.


def _specificity(cm) -> Fraction:
    cm = np.asarray(cm)
    total = int(cm[Label.NORMAL].sum())
    if total == 0:
        raise EmptyClass("no Normal cycles: specificity undefined")
    return Fraction(100 * int(cm[Label.NORMAL, Label.NORMAL]), total)


def _sensitivity(cm) -> Fraction:
    cm = np.asarray(cm)
    rows = list(ADVENTITIOUS)
    total = int(cm[rows].sum())
    if total == 0:
        raise EmptyClass("no adventitious cycles: sensitivity undefined")
    return Fraction(100 * sum(int(cm[c, c]) for c in rows), total)


def specificity(cm) -> float:
    return float(_specificity(cm))


def sensitivity(cm) -> float:
    """Exact-class hits among Crackle/Wheeze/Both over all adventitious cycles."""
    return float(_sensitivity(cm))


def icbhi_score(sp: float, se: float) -> float:
    return (sp + se) / 2.0


@dataclass(frozen=True)
class Scores:
    sp: float
    se: float
    score: float

    @classmethod
    def from_cm(cls, cm) -> "Scores":
        sp, se = _specificity(cm), _sensitivity(cm)
        return cls(float(sp), float(se), float((sp + se) / 2))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    var: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Aggregate":
        # Population statistics over the seed runs.
        v = np.asarray(values, dtype=np.float64)
        return cls(float(v.mean()), float(v.std()), float(v.var()))


def aggregate(per_seed: Sequence[Scores]) -> dict[str, Aggregate]:
    """Mean/std/var of each metric across seeds; Score is never rebuilt from mean Sp/Se."""
    return {k: Aggregate.of([getattr(s, k) for s in per_seed]) for k in ("sp", "se", "score")}


@dataclass(frozen=True)
class SliceRow:
    attribute: str
    value: str
    n: int
    ratio: float
    sp: Optional[float]
    se: Optional[float]
    score: Optional[float]

    @property
    def absent(self) -> bool:
        return self.n == 0


def _opt(x: Optional[Fraction]) -> Optional[float]:
    return None if x is None else float(x)


def slice_by_metadata(y_true, y_pred, metas: Sequence, attribute: str) -> list[SliceRow]:
    """Per-class Score over the test cycles sharing one metadata value.

    Classes with no test cycles come back with ``n == 0`` and no metrics;
    a slice without Normal (or adventitious) cycles keeps the computable half
    and leaves the other, and the Score, as ``None``.
    """
    field, values = SLICE_ATTRIBUTES[attribute]
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    keys = np.array([getattr(m, field).value for m in metas])
    rows = []
    for value in values:
        mask = keys == value.value
        n = int(mask.sum())
        if n == 0:
            rows.append(SliceRow(attribute, value.value, 0, 0.0, None, None, None))
            continue
        cm = confusion_matrix(t[mask], p[mask])
        try:
            sp = _specificity(cm)
        except EmptyClass:
            sp = None
        try:
            se = _sensitivity(cm)
        except EmptyClass:
            se = None
        score = float((sp + se) / 2) if sp is not None and se is not None else None
        rows.append(SliceRow(attribute, value.value, n, 100.0 * n / len(t), _opt(sp), _opt(se), score))
    return rows
