"""Shared fixtures: schema-exact miniature raw files and real-data gating.

The miniature Adult / COMPAS files reproduce the raw formats (column
layout, comment lines, label punctuation, missing-value tokens, filter
violations) so the full ingestion pipeline is exercised without the real
datasets.  Tests that need the real data look for it under
FAIRSMOOTH_DATA_DIR (default ./data) and skip with an explicit reason when
it is absent.
"""

import os

import numpy as np
import pytest

DATA_DIR = os.environ.get("FAIRSMOOTH_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "data"))

ADULT_DIR = os.path.join(DATA_DIR, "adult")
COMPAS_CSV = os.path.join(DATA_DIR, "compas", "compas-scores-two-years.csv")


def has_adult() -> bool:
    return os.path.exists(os.path.join(ADULT_DIR, "adult.data")) and os.path.exists(
        os.path.join(ADULT_DIR, "adult.test")
    )


def has_compas() -> bool:
    return os.path.exists(COMPAS_CSV)


requires_adult = pytest.mark.skipif(
    not has_adult(),
    reason="raw UCI Adult files not found under FAIRSMOOTH_DATA_DIR/adult "
    "(this sandbox has no network access to fetch them; see README)",
)
requires_compas = pytest.mark.skipif(
    not has_compas(),
    reason="raw ProPublica COMPAS file not found under FAIRSMOOTH_DATA_DIR/compas "
    "(this sandbox has no network access to fetch it; see README)",
)


def _adult_row(age, workclass, education_num, marital, occupation, relationship,
               race, sex, gain, loss, hours, country, income):
    return (
        f"{age}, {workclass}, 77516, Bachelors, {education_num}, {marital}, "
        f"{occupation}, {relationship}, {race}, {sex}, {gain}, {loss}, {hours}, "
        f"{country}, {income}"
    )


@pytest.fixture(scope="session")
def mini_adult_dir(tmp_path_factory):
    """Tiny Adult directory in the raw format: 48 train + 24 test rows."""
    root = tmp_path_factory.mktemp("adult_raw")
    gen = np.random.default_rng(1234)
    marital_opts = ["Married-civ-spouse", "Never-married", "Divorced"]
    occupation_opts = ["Exec-managerial", "Craft-repair", "Sales", "?"]
    relationship_opts = ["Husband", "Not-in-family", "Own-child", "Wife", "Unmarried", "Other-relative"]
    workclass_opts = ["Private", "Self-emp-not-inc", "State-gov", "?"]

    def rows(n, test_file):
        out = []
        for i in range(n):
            # cycle sex/race/label so every (group, label) cell is populated
            sex = "Male" if i % 2 == 0 else "Female"
            race = "White" if i % 3 != 0 else "Black"
            income = ">50K" if i % 4 == 0 else "<=50K"
            if test_file:
                income += "."
            out.append(
                _adult_row(
                    age=int(gen.integers(18, 80)),
                    workclass=workclass_opts[i % len(workclass_opts)],
                    education_num=int(gen.integers(3, 16)),
                    marital=marital_opts[i % len(marital_opts)],
                    occupation=occupation_opts[i % len(occupation_opts)],
                    relationship=relationship_opts[i % len(relationship_opts)],
                    race=race,
                    sex=sex,
                    gain=int(gen.integers(0, 2)) * 5000,
                    loss=int(gen.integers(0, 2)) * 1500,
                    hours=int(gen.integers(20, 60)),
                    country="United-States" if i % 5 != 0 else "Mexico",
                    income=income,
                )
            )
        return out

    (root / "adult.data").write_text("\n".join(rows(48, False)) + "\n")
    test_lines = ["|1x3 Cross validator"] + rows(24, True) + [""]
    (root / "adult.test").write_text("\n".join(test_lines))
    return str(root)


@pytest.fixture(scope="session")
def mini_compas_csv(tmp_path_factory):
    """Tiny COMPAS file with rows that violate each documented filter."""
    import pandas as pd

    root = tmp_path_factory.mktemp("compas_raw")
    gen = np.random.default_rng(99)
    n = 60
    frame = pd.DataFrame(
        {
            "id": np.arange(n),
            "name": [f"person {i}" for i in range(n)],
            "first": ["f"] * n,
            "last": ["l"] * n,
            "dob": ["1970-01-01"] * n,
            "sex": ["Male" if i % 2 == 0 else "Female" for i in range(n)],
            "age": gen.integers(18, 70, n),
            "age_cat": [
                ["Less than 25", "25 - 45", "Greater than 45"][i % 3] for i in range(n)
            ],
            "race": [
                ["African-American", "Caucasian", "African-American", "Hispanic"][i % 4]
                for i in range(n)
            ],
            "juv_fel_count": gen.integers(0, 3, n),
            "juv_misd_count": gen.integers(0, 3, n),
            "juv_other_count": gen.integers(0, 2, n),
            "priors_count": gen.integers(0, 12, n),
            "c_charge_degree": [["F", "M"][i % 2] for i in range(n)],
            "days_b_screening_arrest": gen.integers(-10, 10, n),
            "is_recid": [0 if i % 3 else 1 for i in range(n)],
            "score_text": [["Low", "Medium", "High"][i % 3] for i in range(n)],
            "two_year_recid": [(i // 2) % 2 for i in range(n)],
            "c_jail_in": ["2013-01-01 05:00:00"] * n,
            "c_jail_out": [f"2013-01-{(i % 20) + 1:02d} 05:00:00" for i in range(n)],
        }
    )
    # rows that must be dropped by each filter
    drop = frame.iloc[:4].copy()
    drop.loc[drop.index[0], "days_b_screening_arrest"] = 45
    drop.loc[drop.index[1], "days_b_screening_arrest"] = -45
    drop.loc[drop.index[2], "is_recid"] = -1
    drop.loc[drop.index[3], "c_charge_degree"] = "O"
    full = pd.concat([frame, drop], ignore_index=True)
    path = root / "compas-scores-two-years.csv"
    full.to_csv(path, index=False)
    return str(path)
