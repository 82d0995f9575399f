import numpy as np
import pytest

from cytogate.folds import CohortTable, CohortRow, FoldPlan, SplitError, make_folds


def twenty_patient_cohort():
    """20 patients, 28 slides, both sites and both disease statuses."""
    rows = []
    rng = np.random.default_rng(99)
    slides_per_patient = [1] * 14 + [2] * 5 + [4]  # 28 slides total
    sid = 0
    for p, n_slides in enumerate(slides_per_patient):
        for k in range(n_slides):
            rows.append(CohortRow(
                slide_id=f"slide{sid}",
                patient_id=f"patient{p}",
                site="ascending_colon" if (p + k) % 2 == 0 else "terminal_ileum",
                disease="normal" if (p + k) % 3 == 0 else "diseased",
            ))
            sid += 1
    return CohortTable(rows)


def assert_valid_plan(plan, cohort):
    patients = set(cohort.patients)
    all_tests = []
    for fold in plan.folds:
        tr, va, te = fold["train"], fold["val"], fold["test"]
        assert (len(tr), len(va), len(te)) == (12, 4, 4)
        assert not (set(tr) & set(va)) and not (set(tr) & set(te)) and not (set(va) & set(te))
        all_tests.extend(te)
        for subset in (tr, va, te):
            slides = cohort.slides_of(subset)
            assert {s.site for s in slides} == {"ascending_colon", "terminal_ileum"}
            assert {s.disease for s in slides} == {"normal", "diseased"}
    assert len(all_tests) == len(set(all_tests)) == len(patients)
    assert set(all_tests) == patients


def test_twenty_patient_cohort_valid():
    cohort = twenty_patient_cohort()
    plan = make_folds(cohort, seed=7)
    assert len(plan.folds) == 5
    assert_valid_plan(plan, cohort)


def test_deterministic_given_seed():
    cohort = twenty_patient_cohort()
    p1 = make_folds(cohort, seed=3)
    p2 = make_folds(cohort, seed=3)
    assert p1.folds == p2.folds


def test_different_seeds_differ():
    cohort = twenty_patient_cohort()
    assert make_folds(cohort, seed=1).folds != make_folds(cohort, seed=2).folds


def test_single_site_cohort_names_constraint():
    rows = [
        CohortRow(f"s{i}", f"p{i}", "ascending_colon",
                  "normal" if i % 2 else "diseased")
        for i in range(20)
    ]
    with pytest.raises(SplitError, match="site"):
        make_folds(CohortTable(rows), seed=0)


def test_wrong_patient_count():
    rows = [CohortRow(f"s{i}", f"p{i}", "ascending_colon", "normal") for i in range(7)]
    with pytest.raises(SplitError, match="patients"):
        make_folds(CohortTable(rows), seed=0)


def test_duplicate_slide_ids_rejected():
    rows = [CohortRow("s1", "p1", "ascending_colon", "normal")] * 2
    with pytest.raises(SplitError, match="unique"):
        CohortTable(rows)


def test_multi_slide_patient_stays_together():
    cohort = twenty_patient_cohort()
    plan = make_folds(cohort, seed=5)
    # patient19 has 4 slides; wherever the patient lands, all slides follow
    for fold in plan.folds:
        homes = [k for k in ("train", "val", "test") if "patient19" in fold[k]]
        assert len(homes) == 1


def test_fold_plan_json_round_trip(tmp_path):
    cohort = twenty_patient_cohort()
    plan = make_folds(cohort, seed=7)
    plan.to_json(tmp_path / "plan.json")
    assert FoldPlan.from_json(tmp_path / "plan.json").folds == plan.folds
