import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from litenext.data import write_png
from litenext.metrics import (
    ConfusionCounts,
    MetricReport,
    betainc,
    confusion,
    evaluate_folder,
    f_score,
    metrics_from_counts,
    paired_t_test,
    score_sample,
)


def test_confusion_extremes():
    ones = np.ones((4, 5), dtype=np.uint8)
    c = confusion(ones, ones)
    assert (c.tp, c.fp, c.fn, c.tn) == (20, 0, 0, 0)
    t = np.zeros((4, 5), dtype=np.uint8)
    t[1:3] = 1
    c = confusion(1 - t, t)
    assert c.tp == 0 and c.tn == 0


def test_confusion_matches_loop(rng):
    p = (rng.random((9, 7)) < 0.5).astype(int)
    t = (rng.random((9, 7)) < 0.5).astype(int)
    counts = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for a, b in zip(p.ravel(), t.ravel()):
        key = ("t" if a == b else "f") + ("p" if a else "n")
        counts[key] += 1
    c = confusion(p, t)
    assert (c.tp, c.fp, c.fn, c.tn) == (counts["tp"], counts["fp"], counts["fn"], counts["tn"])
    assert c.total == p.size


def test_confusion_validation():
    with pytest.raises(ValueError, match="binary"):
        confusion(np.full((2, 2), 2), np.ones((2, 2)))
    with pytest.raises(ValueError, match="shapes"):
        confusion(np.ones((2, 2)), np.ones((2, 3)))


def test_metrics_arithmetic():
    dsc, iou, p, r = metrics_from_counts(ConfusionCounts(8, 2, 2, 0))
    assert dsc == pytest.approx(0.8) and iou == pytest.approx(2 / 3)
    assert p == pytest.approx(0.8) and r == pytest.approx(0.8)
    assert metrics_from_counts(ConfusionCounts(0, 0, 0, 10)) == (0.0, 0.0, 0.0, 0.0)


def test_f_score():
    assert f_score(0.4, 0.4) == pytest.approx(0.4)
    assert f_score(1.0, 0.0) == 0.0
    assert f_score(0.0, 0.0) == 0.0
    assert f_score(0.8, 0.6) == pytest.approx(0.685714, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_dsc_iou_identity(tp, fp, fn):
    if tp + fp + fn == 0:
        return
    dsc, iou, _, _ = metrics_from_counts(ConfusionCounts(tp, fp, fn, 0, eps=0.0))
    assert abs(dsc - 2 * iou / (1 + iou)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (6, 6), elements=st.integers(0, 1)), arrays(np.uint8, (6, 6), elements=st.integers(0, 1)))
def test_transpose_swaps_precision_and_recall(p, t):
    _, _, prec, rec = metrics_from_counts(confusion(p, t))
    _, _, prec2, rec2 = metrics_from_counts(confusion(t, p))
    assert (prec, rec) == (rec2, prec2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (6, 6), elements=st.integers(0, 1)), arrays(np.uint8, (6, 6), elements=st.integers(0, 1)))
def test_adding_a_true_positive_never_hurts(p, t):
    missed = np.argwhere((t == 1) & (p == 0))
    if not len(missed):
        return
    d0, i0, _, _ = metrics_from_counts(confusion(p, t))
    p2 = p.copy()
    p2[tuple(missed[0])] = 1
    d1, i1, _, _ = metrics_from_counts(confusion(p2, t))
    assert d1 >= d0 and i1 >= i0


# t-test ----------------------------------------------------------------------------
def test_t_test_reference_case():
    res = paired_t_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert res.t == pytest.approx(2 * np.sqrt(3), abs=1e-3)
    assert res.df == 2
    assert res.p == pytest.approx(0.0742, abs=1e-3)


def test_t_test_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    for t, df in [(3.4641016151377544, 2), (0.3, 5), (2.2, 17), (-1.7, 9), (6.0, 40)]:
        x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
        ref = mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, x, regularized=True)
        from litenext.metrics import t_two_tailed_p

        assert abs(t_two_tailed_p(t, df) - float(ref)) < 1e-10


def test_betainc_endpoints_and_symmetry():
    assert betainc(2.0, 3.0, 0.0) == 0.0 and betainc(2.0, 3.0, 1.0) == 1.0
    assert betainc(2.5, 1.5, 0.3) == pytest.approx(1 - betainc(1.5, 2.5, 0.7), abs=1e-12)
    with pytest.raises(ValueError):
        betainc(1.0, 1.0, 1.5)


def test_t_test_identical_and_errors():
    assert paired_t_test([0.5, 0.7, 0.9], [0.5, 0.7, 0.9]).p == 1.0
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 8, elements=st.floats(0, 1)),
    arrays(np.float64, 8, elements=st.floats(0, 1)),
    st.floats(-5, 5),
)
def test_t_test_properties(a, b, c):
    r = paired_t_test(a, b)
    assert 0.0 < r.p <= 1.0 or (r.p == 0.0 and np.isinf(r.t))
    swapped = paired_t_test(b, a)
    assert swapped.p == pytest.approx(r.p, abs=1e-12)
    assert swapped.t == pytest.approx(-r.t, abs=1e-9) or np.isinf(r.t)
    if np.std(a - b) > 1e-6:
        assert paired_t_test(a + c, b + c).p == pytest.approx(r.p, abs=1e-8)


# reports ---------------------------------------------------------------------------
def _folder(tmp_path, name, masks):
    for stem, m in masks.items():
        write_png(tmp_path / name / f"{stem}.png", (np.asarray(m) * 255).astype(np.uint8))
    return tmp_path / name


def test_evaluate_folder_perfect(tmp_path):
    m = np.zeros((8, 8), dtype=np.uint8)
    m[2:5, 2:6] = 1
    pred = _folder(tmp_path, "pred", {"a": m})
    truth = _folder(tmp_path, "truth", {"a": m})
    rep = evaluate_folder(pred, truth)
    assert len(rep.samples) == 1
    for v in rep.means.values():
        assert v == pytest.approx(1.0, abs=1e-6)


def test_evaluate_folder_aggregates_and_order(tmp_path, rng):
    masks = {f"s{i}": (rng.random((10, 10)) < 0.5).astype(np.uint8) for i in (3, 1, 2)}
    preds = {k: (rng.random((10, 10)) < 0.5).astype(np.uint8) for k in masks}
    rep = evaluate_folder(_folder(tmp_path, "p", preds), _folder(tmp_path, "t", masks))
    assert [s.id for s in rep.samples] == ["s1", "s2", "s3"]
    hand = [score_sample(k, preds[k], masks[k]) for k in sorted(masks)]
    for metric in ("dsc", "iou", "precision", "recall"):
        assert rep.means[metric] == pytest.approx(np.mean([getattr(h, metric) for h in hand]))


def test_evaluate_folder_lists_unmatched(tmp_path):
    m = np.ones((4, 4), dtype=np.uint8)
    pred = _folder(tmp_path, "p", {"a": m, "extra": m})
    truth = _folder(tmp_path, "t", {"a": m})
    with pytest.raises(ValueError, match="extra"):
        evaluate_folder(pred, truth)


def test_prediction_threshold_at_half(tmp_path):
    write_png(tmp_path / "p" / "a.png", np.array([[127, 128]], dtype=np.uint8))
    write_png(tmp_path / "t" / "a.png", np.array([[0, 255]], dtype=np.uint8))
    rep = evaluate_folder(tmp_path / "p", tmp_path / "t")
    c = rep.samples[0].counts
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 0, 1)


def test_report_round_trip_and_csv(tmp_path, rng):
    samples = [score_sample(f"x{i}", rng.random((5, 5)) < 0.5, rng.random((5, 5)) < 0.5) for i in range(4)]
    rep = MetricReport(samples)
    rep.compare(MetricReport(list(samples)))
    assert all(p == 1.0 for p in rep.p_values.values())
    jp, cp = rep.write(tmp_path / "report.json")
    back = MetricReport.read(jp)
    assert back.means == rep.means and back.p_values == rep.p_values
    rows = cp.read_text().splitlines()
    assert rows[0] == "metric,mean,p_value"
    assert [r.split(",")[0] for r in rows[1:]] == ["dsc", "iou", "precision", "recall", "f_score"]
    assert json.loads(jp.read_text())["aggregate"]["n"] == 4


def test_compare_rejects_different_sample_sets(rng):
    a = MetricReport([score_sample("a", np.ones((2, 2)), np.ones((2, 2)))] * 2)
    b = MetricReport([score_sample("b", np.ones((2, 2)), np.ones((2, 2)))] * 2)
    with pytest.raises(ValueError, match="differ"):
        a.compare(b)
