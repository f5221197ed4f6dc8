import itertools
import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disclabel.errors import EmptyEvaluation
from disclabel.io import LabelSet
from disclabel.metrics import (REPORT_SCHEMA, compute_metrics, evaluate_predictions, match_points,
                               write_report)


def brute_force_match(gt, pred, radius=5.0, spacing=(1.0, 1.0)):
    """Enumerate every injective gt -> pred assignment within the radius and keep the
    lexicographically best one, scoring ground truth in ascending row order."""
    g, p = np.asarray(gt, float).reshape(-1, 2), np.asarray(pred, float).reshape(-1, 2)
    gts = sorted(range(len(g)), key=lambda i: (g[i, 0], g[i, 1], i))

    def dist(i, j):
        return math.hypot((p[j, 0] - g[i, 0]) * spacing[0], (p[j, 1] - g[i, 1]) * spacing[1])

    best_key, best = None, None
    options = [None] + list(range(len(p)))
    for combo in itertools.product(options, repeat=len(g)):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        if any(j is not None and dist(i, j) >= radius for i, j in zip(range(len(g)), combo)):
            continue
        key = tuple((0, dist(i, combo[i]), p[combo[i], 0], p[combo[i], 1], combo[i]) if combo[i] is not None else (1,)
                    for i in gts)
        if best_key is None or key < best_key:
            best_key, best = key, combo
    pairs = {(i, j) for i, j in enumerate(best) if j is not None}
    return pairs


def test_hand_case_one():
    r = match_points([(10, 50), (30, 50)], [(10.5, 50), (29, 50), (50, 50)])
    assert [(m.gt_index, m.pred_index, m.euclid_mm) for m in r.matches] == [(0, 0, 0.5), (1, 1, 1.0)]
    assert r.false_positives == [2]
    assert r.false_negatives == []
    rep = compute_metrics([r])
    assert rep["fnr"] == 0
    assert rep["fpr"] == pytest.approx(1 / 3)
    assert rep["dist_mean_mm"] == pytest.approx(0.75)


def test_hand_case_grouped_duplicate():
    r = match_points([(20, 50)], [(21, 50), (19, 50)])
    assert [(m.gt_index, m.pred_index) for m in r.matches] == [(0, 1)]
    assert r.false_positives == [0]


def test_no_predictions():
    r = match_points([(10, 5), (30, 5)], [])
    assert r.matches == [] and r.false_negatives == [0, 1]
    rep = compute_metrics([r])
    assert rep["fnr"] == 1.0 and rep["fpr"] == 0.0
    assert rep["dist_mean_mm"] is None


def test_perfect():
    gt = [(10, 5), (30, 7), (52, 9)]
    rep = compute_metrics([match_points(gt, gt)])
    assert (rep["fnr"], rep["fpr"], rep["dist_mean_mm"]) == (0.0, 0.0, 0.0)


def test_radius_is_exclusive_and_in_mm():
    assert match_points([(10, 0)], [(15, 0)]).false_positives == [0]
    assert len(match_points([(10, 0)], [(14.9, 0)]).matches) == 1
    # 0.5 mm rows: 9 px apart is 4.5 mm
    r = match_points([(10, 0)], [(19, 0)], spacing_mm=(0.5, 1.0))
    assert r.matches[0].si_mm == pytest.approx(4.5)


def test_si_distance_is_row_component():
    r = match_points([(10, 10)], [(12, 13)])
    assert r.matches[0].euclid_mm == pytest.approx(math.hypot(2, 3))
    assert r.matches[0].si_mm == pytest.approx(2.0)


def test_labelset_inputs():
    gt = LabelSet.from_coords([(10, 5), (30, 5)])
    r = match_points(gt, LabelSet.from_coords([(11, 5)]))
    assert len(r.matches) == 1 and r.false_negatives == [1]


def test_empty_evaluation():
    with pytest.raises(EmptyEvaluation):
        compute_metrics([])


def random_instance(rng, max_points=8, extent=25.0):
    ng = int(rng.integers(0, max_points + 1))
    npred = int(rng.integers(0, max_points + 1 - ng)) if ng < max_points else 0
    gt = rng.uniform(0, extent, size=(ng, 2)).round(1)
    pred = rng.uniform(0, extent, size=(npred, 2)).round(1)
    return gt, pred


def check_conservation(r):
    preds = [m.pred_index for m in r.matches] + list(r.false_positives)
    gts = [m.gt_index for m in r.matches] + list(r.false_negatives)
    assert sorted(preds) == list(range(r.n_pred))
    assert sorted(gts) == list(range(r.n_gt))


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(500):
        gt, pred = random_instance(rng)
        r = match_points(gt, pred)
        check_conservation(r)
        assert {(m.gt_index, m.pred_index) for m in r.matches} == brute_force_match(gt, pred)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conservation_and_order_invariance(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 60, size=(int(rng.integers(0, 10)), 2))
    pred = rng.uniform(0, 60, size=(int(rng.integers(0, 12)), 2))
    r = match_points(gt, pred)
    check_conservation(r)
    pg, pp = rng.permutation(len(gt)), rng.permutation(len(pred))
    r2 = match_points(gt[pg], pred[pp])
    pairs = {(tuple(gt[m.gt_index]), tuple(pred[m.pred_index])) for m in r.matches}
    pairs2 = {(tuple(gt[pg][m.gt_index]), tuple(pred[pp][m.pred_index])) for m in r2.matches}
    assert pairs == pairs2
    rep = compute_metrics([r, r2])
    assert 0 <= rep["fnr"] <= 1 and 0 <= rep["fpr"] <= 1


def test_per_contrast_and_schema(tmp_path):
    gt = LabelSet.from_coords([(10, 50), (30, 50)])
    pairs = [
        ("a", "T1w", gt, [(10.5, 50), (29, 50), (50, 50)], (1.0, 1.0)),
        ("b", "T2w", gt, [], (1.0, 1.0)),
    ]
    report, rows = evaluate_predictions(pairs, split="val")
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["per_contrast"]["T1w"]["fpr"] == pytest.approx(1 / 3)
    assert report["per_contrast"]["T2w"]["fnr"] == 1.0
    assert report["fnr"] == pytest.approx(0.5)
    path = write_report(tmp_path, report, rows)
    assert json.loads(path.read_text())["split"] == "val"
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0] == "sample,n_gt,n_pred,fp,fn,mean_si_mm"
    assert lines[1] == "a,2,3,1,0,0.75"
    assert lines[2] == "b,2,0,0,2,"
