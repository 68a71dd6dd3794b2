from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bts.errors import EmptyClass, InvalidLabel
from bts.icbhi import AgeGroup, Device, Location, Sex
from bts.metrics import (
    Aggregate,
    Scores,
    aggregate,
    confusion_matrix,
    icbhi_score,
    sensitivity,
    slice_by_metadata,
    specificity,
)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 0, 1, 2, 3, 3], [0, 1, 1, 2, 0, 3])
    assert cm.tolist() == [[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 1]]
    assert cm.sum() == 6
    with pytest.raises(InvalidLabel):
        confusion_matrix([0, 4], [0, 0])
    with pytest.raises(InvalidLabel):
        confusion_matrix([0, 1], [0, -1])


def test_specificity_examples():
    cm = np.zeros((4, 4), dtype=int)
    cm[0] = [79, 7, 7, 7]
    assert specificity(cm) == 79.0
    assert specificity(np.diag([5, 1, 1, 1])) == 100.0
    with pytest.raises(EmptyClass):
        specificity(np.diag([0, 1, 1, 1]))


def test_sensitivity_examples():
    cm = np.zeros((4, 4), dtype=int)
    cm[1] = [100, 300, 200, 49]
    cm[2] = [200, 50, 100, 35]
    cm[3] = [40, 30, 23, 50]
    assert cm[1:].sum(axis=1).tolist() == [649, 385, 143]
    assert sensitivity(cm) == pytest.approx(100 * 450 / 1177)
    assert round(sensitivity(cm), 2) == 38.23
    assert sensitivity(np.diag([3, 2, 2, 2])) == 100.0
    # crackle predicted as wheeze is a miss
    assert sensitivity(confusion_matrix([1, 2], [2, 2])) == 50.0
    with pytest.raises(EmptyClass):
        sensitivity(np.diag([3, 0, 0, 0]))


def test_score_examples():
    assert icbhi_score(81.40, 45.67) == pytest.approx(63.535)
    assert icbhi_score(100, 100) == 100
    assert round(icbhi_score(80.85, 44.67), 2) == 62.76


@given(st.floats(0, 100), st.floats(0, 100))
def test_score_symmetric(a, b):
    assert icbhi_score(a, b) == icbhi_score(b, a)


def test_aggregate_uses_per_seed_scores():
    per_seed = [Scores(80.0, 46.0, 63.0), Scores(82.0, 46.0, 64.0), Scores(80.0, 46.0, 63.0),
                Scores(82.0, 46.0, 64.0), Scores(81.0, 46.4, 63.7)]
    agg = aggregate(per_seed)
    assert agg["score"].mean == pytest.approx(63.54)
    values = np.array([63, 64, 63, 64, 63.7])
    assert agg["score"].var == pytest.approx(((values - values.mean()) ** 2).mean())
    assert agg["score"].std == pytest.approx(agg["score"].var ** 0.5)
    assert Aggregate.of([62.5] * 5) == Aggregate(62.5, 0.0, 0.0)


def meta(age=AgeGroup.ADULT, sex=Sex.MALE, loc=Location.TRACHEA, dev=Device.MEDITRON):
    return SimpleNamespace(age_group=age, sex=sex, location=loc, device=dev)


def test_slice_single_class_equals_global():
    y_true = [0, 0, 1, 2, 3, 0]
    y_pred = [0, 1, 1, 0, 3, 0]
    metas = [meta()] * 6
    (adult, child) = slice_by_metadata(y_true, y_pred, metas, "Age")
    glob = Scores.from_cm(confusion_matrix(y_true, y_pred))
    assert (adult.value, adult.n, adult.ratio) == ("Adult", 6, 100.0)
    assert (adult.sp, adult.se, adult.score) == (glob.sp, glob.se, glob.score)
    assert child.absent and child.score is None


def test_slice_rows_cover_every_class():
    metas = [meta(dev=Device.AKGC417L), meta(dev=Device.MEDITRON), meta(dev=Device.MEDITRON)]
    rows = slice_by_metadata([0, 1, 0], [0, 1, 1], metas, "Dev")
    by_value = {r.value: r for r in rows}
    assert set(by_value) == {d.value for d in Device}
    assert by_value["LittC2SE"].absent
    akg = by_value["AKGC417L"]
    assert (akg.n, akg.sp, akg.se, akg.score) == (1, 100.0, None, None)
    med = by_value["Meditron"]
    assert med.ratio == pytest.approx(200 / 3)
    assert (med.sp, med.se, med.score) == (0.0, 100.0, 50.0)
    assert sum(r.n for r in rows) == 3
