"""Constrained patient-level 5-fold cross-validation splits.

Every train/val/test subset of every fold must contain at least one slide
from each site and each disease status; test sets partition the patient
set. Search is seeded shuffle + rejection sampling with a bounded retry
budget, which is plenty at cohort sizes around 20 patients.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RETRY_BUDGET = 10_000


class SplitError(Exception):
    pass


@dataclass(frozen=True)
class CohortRow:
    slide_id: str
    patient_id: str
    site: str
    disease: str


@dataclass
class CohortTable:
    rows: list[CohortRow]

    def __post_init__(self):
        ids = [r.slide_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise SplitError("slide ids must be unique")

    @property
    def patients(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.patient_id)
        return list(seen)

    def slides_of(self, patients) -> list[CohortRow]:
        ps = set(patients)
        return [r for r in self.rows if r.patient_id in ps]

    @classmethod
    def from_csv(cls, path) -> "CohortTable":
        with open(path, newline="") as f:
            rows = [
                CohortRow(r["slide_id"], r["patient_id"], r["site"], r["disease"])
                for r in csv.DictReader(f)
            ]
        return cls(rows)


@dataclass
class FoldPlan:
    folds: list[dict]  # {"train": [...], "val": [...], "test": [...]}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"folds": self.folds}, indent=2))

    @classmethod
    def from_json(cls, path) -> "FoldPlan":
        return cls(json.loads(Path(path).read_text())["folds"])


def _covers(cohort: CohortTable, patients, sites, diseases) -> bool:
    slides = cohort.slides_of(patients)
    return set(s.site for s in slides) >= sites and set(
        s.disease for s in slides
    ) >= diseases


def make_folds(
    cohort: CohortTable,
    seed: int,
    n_folds: int = 5,
    sizes: tuple[int, int, int] = (12, 4, 4),
) -> FoldPlan:
    """Draw a FoldPlan satisfying the site/disease coverage constraints.

    sizes = (train, val, test) patient counts per fold. Deterministic for
    a given seed; raises SplitError naming the violated constraint when
    the cohort cannot satisfy it within the retry budget.
    """
    patients = cohort.patients
    n_train, n_val, n_test = sizes
    if len(patients) != n_train + n_val + n_test:
        raise SplitError(
            f"cohort has {len(patients)} patients, sizes {sizes} need "
            f"{n_train + n_val + n_test}"
        )
    if n_folds * n_test != len(patients):
        raise SplitError(
            f"{n_folds} test sets of {n_test} patients cannot partition "
            f"{len(patients)} patients"
        )
    sites = {r.site for r in cohort.rows}
    diseases = {r.disease for r in cohort.rows}
    for need, have in (("site", sites), ("disease status", diseases)):
        if len(have) < 2:
            raise SplitError(
                f"cohort covers only one {need} ({sorted(have)}); every "
                f"subset must contain both"
            )

    rng = np.random.default_rng(seed)
    for _ in range(RETRY_BUDGET):
        order = list(np.array(patients)[rng.permutation(len(patients))])
        test_sets = [order[i * n_test : (i + 1) * n_test] for i in range(n_folds)]
        folds = []
        ok = True
        for i in range(n_folds):
            rest = [p for p in order if p not in set(test_sets[i])]
            rest = list(np.array(rest)[rng.permutation(len(rest))])
            val, tr = rest[:n_val], rest[n_val : n_val + n_train]
            for subset in (tr, val, test_sets[i]):
                if not _covers(cohort, subset, sites, diseases):
                    ok = False
                    break
            if not ok:
                break
            folds.append({"train": sorted(tr), "val": sorted(val),
                          "test": sorted(test_sets[i])})
        if ok:
            return FoldPlan(folds)
    raise SplitError(
        f"no plan satisfying site+disease coverage in every subset found "
        f"within {RETRY_BUDGET} retries"
    )
