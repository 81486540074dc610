"""Dataset ingestion: Adult and COMPAS to binary-feature group datasets.

The raw files are never downloaded by this package; point the loaders (or
the FAIRSMOOTH_DATA_DIR environment variable) at

* ``adult/`` containing the UCI census files ``adult.data`` and
  ``adult.test`` (14 attributes plus the income label, comma separated);
* ``compas/compas-scores-two-years.csv`` from the ProPublica analysis.

Both pipelines emit exactly binary features: Adult is reduced to 18 columns
(documented thresholds at full-dataset medians plus merged one-hot bins) and
COMPAS to 10.  Preprocessing is deterministic, so the processed CSV written
by ``save_processed`` is byte-identical across runs and its SHA-256 is
recorded in a manifest as a regression anchor.  No claim of bit-parity with
any third-party preprocessing toolkit is made.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import rng

DATA_DIR_ENV = "FAIRSMOOTH_DATA_DIR"
PROCESSED_VERSION = 1

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]

ADULT_FEATURES = [
    "age_above_median",
    "workclass_private",
    "workclass_self_employed",
    "workclass_government",
    "workclass_other",
    "education_num_above_median",
    "married",
    "occupation_white_collar",
    "relationship_husband",
    "relationship_not_in_family",
    "relationship_other_relative",
    "relationship_own_child",
    "relationship_unmarried",
    "relationship_wife",
    "capital_gain_positive",
    "capital_loss_positive",
    "hours_above_median",
    "native_us",
]

COMPAS_FEATURES = [
    "age_under_25",
    "age_over_45",
    "juvenile_felony",
    "juvenile_misdemeanor",
    "juvenile_other",
    "any_priors",
    "priors_above_median",
    "many_priors",
    "felony_charge",
    "long_jail_stay",
]

_PII_COLUMNS = ("name", "first", "last", "dob")


class DataFormatError(ValueError):
    """Raised for malformed raw rows, with file name and line number."""


@dataclass(frozen=True)
class GroupedDataset:
    """Feature matrix with per-row group id, binary label and split flag.

    Group ids are 0-based positions into ``group_names``; the groups are
    disjoint and cover the rows by construction.
    """

    name: str
    features: np.ndarray
    groups: np.ndarray
    labels: np.ndarray
    in_train: np.ndarray
    feature_names: tuple[str, ...]
    group_names: tuple[str, ...]

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        groups = np.asarray(self.groups, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64)
        in_train = np.asarray(self.in_train, dtype=bool)
        n = features.shape[0]
        if features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {features.shape}")
        if groups.shape != (n,) or labels.shape != (n,) or in_train.shape != (n,):
            raise ValueError("features, groups, labels and in_train must share row count")
        if len(self.feature_names) != features.shape[1]:
            raise ValueError(
                f"{len(self.feature_names)} feature names for {features.shape[1]} columns"
            )
        k = len(self.group_names)
        if k < 1:
            raise ValueError("need at least one group")
        if n and (groups.min() < 0 or groups.max() >= k):
            raise ValueError(f"group ids must lie in [0, {k}), got range "
                             f"[{groups.min()}, {groups.max()}]")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        for gid in range(k):
            if not np.any((groups == gid) & in_train):
                raise ValueError(
                    f"group {self.group_names[gid]!r} has no rows in the training split"
                )
        for arr in (features, groups, labels, in_train):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "in_train", in_train)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "group_names", tuple(self.group_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def indices(self, group: int | None = None, split: str | None = None) -> np.ndarray:
        mask = np.ones(self.n_rows, dtype=bool)
        if group is not None:
            mask &= self.groups == group
        if split == "train":
            mask &= self.in_train
        elif split == "test":
            mask &= ~self.in_train
        elif split is not None:
            raise ValueError(f"unknown split {split!r}")
        return np.nonzero(mask)[0]

    def train_arrays(self, group: int) -> tuple[np.ndarray, np.ndarray]:
        rows = self.indices(group=group, split="train")
        return self.features[rows], self.labels[rows].astype(np.float64)

    def test_rows(self) -> np.ndarray:
        return self.indices(split="test")

    def subset(self, rows: np.ndarray, name: str | None = None) -> "GroupedDataset":
        rows = np.asarray(rows)
        return GroupedDataset(
            name=name or self.name,
            features=self.features[rows],
            groups=self.groups[rows],
            labels=self.labels[rows],
            in_train=self.in_train[rows],
            feature_names=self.feature_names,
            group_names=self.group_names,
        )

    def group_counts(self, split: str | None = None) -> list[int]:
        return [len(self.indices(group=g, split=split)) for g in range(self.n_groups)]


def stratified_split(
    groups: np.ndarray,
    labels: np.ndarray,
    test_fraction: float,
    master_seed: int,
) -> np.ndarray:
    """Boolean in_train mask, stratified by (group, label) cells."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n = len(groups)
    in_train = np.ones(n, dtype=bool)
    for gid in np.unique(groups):
        for label in (0, 1):
            cell = np.nonzero((groups == gid) & (labels == label))[0]
            if len(cell) == 0:
                continue
            gen = rng.generator(master_seed, "data-split", int(gid), int(label))
            order = gen.permutation(len(cell))
            n_test = int(len(cell) * test_fraction + 0.5)
            in_train[cell[order[:n_test]]] = False
    return in_train


def _parse_adult_file(path: str, skip_comment: bool) -> list[list[str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            if skip_comment and text.startswith("|"):
                continue
            fields = [f.strip() for f in text.split(",")]
            if len(fields) != len(ADULT_COLUMNS):
                raise DataFormatError(
                    f"{os.path.basename(path)}:{lineno}: expected "
                    f"{len(ADULT_COLUMNS)} fields, got {len(fields)}"
                )
            rows.append(fields)
    return rows


def load_adult(
    path: str,
    attribute: str = "sex",
    test_fraction: float = 0.2,
    split_seed: int = 0,
) -> GroupedDataset:
    """Load UCI Adult from a directory holding adult.data and adult.test.

    Produces 18 binary features; rows with missing categorical values are
    kept (missing workclass folds into the workclass_other bin, missing
    occupation / native-country map to 0 in their indicator columns), so
    the full 48,842 rows survive.  The protected attribute is ``sex``
    (Female / Male) or ``race`` (binarized Other / White); it is excluded
    from the features.
    """
    train_file = os.path.join(path, "adult.data")
    test_file = os.path.join(path, "adult.test")
    for f in (train_file, test_file):
        if not os.path.exists(f):
            raise FileNotFoundError(f"raw Adult file not found: {f}")
    rows = _parse_adult_file(train_file, skip_comment=False)
    rows += _parse_adult_file(test_file, skip_comment=True)
    frame = pd.DataFrame(rows, columns=ADULT_COLUMNS)
    for col in ("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"):
        frame[col] = pd.to_numeric(frame[col], errors="raise")

    age_median = float(frame["age"].median())
    edu_median = float(frame["education-num"].median())
    hours_median = float(frame["hours-per-week"].median())
    self_employed = {"Self-emp-not-inc", "Self-emp-inc"}
    government = {"Federal-gov", "Local-gov", "State-gov"}
    white_collar = {"Exec-managerial", "Prof-specialty", "Sales", "Adm-clerical", "Tech-support"}
    married = {"Married-civ-spouse", "Married-AF-spouse"}

    cols = {
        "age_above_median": frame["age"] > age_median,
        "workclass_private": frame["workclass"] == "Private",
        "workclass_self_employed": frame["workclass"].isin(self_employed),
        "workclass_government": frame["workclass"].isin(government),
        "workclass_other": ~frame["workclass"].isin(self_employed | government | {"Private"}),
        "education_num_above_median": frame["education-num"] > edu_median,
        "married": frame["marital-status"].isin(married),
        "occupation_white_collar": frame["occupation"].isin(white_collar),
        "relationship_husband": frame["relationship"] == "Husband",
        "relationship_not_in_family": frame["relationship"] == "Not-in-family",
        "relationship_other_relative": frame["relationship"] == "Other-relative",
        "relationship_own_child": frame["relationship"] == "Own-child",
        "relationship_unmarried": frame["relationship"] == "Unmarried",
        "relationship_wife": frame["relationship"] == "Wife",
        "capital_gain_positive": frame["capital-gain"] > 0,
        "capital_loss_positive": frame["capital-loss"] > 0,
        "hours_above_median": frame["hours-per-week"] > hours_median,
        "native_us": frame["native-country"] == "United-States",
    }
    features = np.stack([cols[name].to_numpy(dtype=np.float64) for name in ADULT_FEATURES], axis=1)
    labels = (frame["income"].str.rstrip(".") == ">50K").to_numpy(dtype=np.int64)

    if attribute == "sex":
        group_names = ("Female", "Male")
        groups = (frame["sex"] == "Male").to_numpy(dtype=np.int64)
    elif attribute == "race":
        group_names = ("Other", "White")
        groups = (frame["race"] == "White").to_numpy(dtype=np.int64)
    else:
        raise ValueError(f"unknown protected attribute {attribute!r}; expected sex or race")

    in_train = stratified_split(groups, labels, test_fraction, split_seed)
    return GroupedDataset(
        name=f"adult-{attribute}",
        features=features,
        groups=groups,
        labels=labels,
        in_train=in_train,
        feature_names=tuple(ADULT_FEATURES),
        group_names=group_names,
    )


def load_compas(
    path: str,
    attribute: str = "race",
    test_fraction: float = 0.2,
    split_seed: int = 0,
) -> GroupedDataset:
    """Load the ProPublica two-year recidivism file and apply its filters.

    Keeps cases with a charge date within 30 days of arrest, drops ordinary
    traffic offenses and rows without a usable score or recidivism flag
    (6,172 of the 7,214 raw rows survive).  The label is 1 when the person
    did NOT reoffend within two years.  Identity columns (name, first,
    last, dob) are discarded before any processing.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"raw COMPAS file not found: {path}")
    try:
        frame = pd.read_csv(path, low_memory=False)
    except Exception as exc:  # pragma: no cover - depends on corrupt input
        raise DataFormatError(f"{os.path.basename(path)}: {exc}") from exc
    frame = frame.drop(columns=[c for c in _PII_COLUMNS if c in frame.columns])

    required = [
        "sex", "age_cat", "race", "juv_fel_count", "juv_misd_count", "juv_other_count",
        "priors_count", "c_charge_degree", "days_b_screening_arrest", "is_recid",
        "score_text", "two_year_recid", "c_jail_in", "c_jail_out",
    ]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataFormatError(f"{os.path.basename(path)}: missing columns {missing}")

    kept = frame[
        (frame["days_b_screening_arrest"] <= 30)
        & (frame["days_b_screening_arrest"] >= -30)
        & (frame["is_recid"] != -1)
        & (frame["c_charge_degree"] != "O")
        & (frame["score_text"] != "N/A")
    ].reset_index(drop=True)

    priors = kept["priors_count"].to_numpy(dtype=np.float64)
    jail_in = pd.to_datetime(kept["c_jail_in"], errors="coerce")
    jail_out = pd.to_datetime(kept["c_jail_out"], errors="coerce")
    stay_days = (jail_out - jail_in).dt.total_seconds().to_numpy() / 86400.0
    stay_days = np.where(np.isfinite(stay_days), stay_days, 0.0)
    priors_median = float(np.median(priors))
    stay_median = float(np.median(stay_days))

    cols = {
        "age_under_25": (kept["age_cat"] == "Less than 25").to_numpy(),
        "age_over_45": (kept["age_cat"] == "Greater than 45").to_numpy(),
        "juvenile_felony": (kept["juv_fel_count"] > 0).to_numpy(),
        "juvenile_misdemeanor": (kept["juv_misd_count"] > 0).to_numpy(),
        "juvenile_other": (kept["juv_other_count"] > 0).to_numpy(),
        "any_priors": priors > 0,
        "priors_above_median": priors > priors_median,
        "many_priors": priors > 5,
        "felony_charge": (kept["c_charge_degree"] == "F").to_numpy(),
        "long_jail_stay": stay_days > stay_median,
    }
    features = np.stack(
        [np.asarray(cols[name], dtype=np.float64) for name in COMPAS_FEATURES], axis=1
    )
    labels = (kept["two_year_recid"] == 0).to_numpy(dtype=np.int64)

    if attribute == "race":
        group_names = ("African-American", "Other")
        groups = (kept["race"] != "African-American").to_numpy(dtype=np.int64)
    elif attribute == "sex":
        group_names = ("Female", "Male")
        groups = (kept["sex"] == "Male").to_numpy(dtype=np.int64)
    else:
        raise ValueError(f"unknown protected attribute {attribute!r}; expected sex or race")

    in_train = stratified_split(groups, labels, test_fraction, split_seed)
    return GroupedDataset(
        name=f"compas-{attribute}",
        features=features,
        groups=groups,
        labels=labels,
        in_train=in_train,
        feature_names=tuple(COMPAS_FEATURES),
        group_names=group_names,
    )


def partition_test(
    ds: GroupedDataset,
    fractions: list[float],
    master_seed: int,
) -> list[np.ndarray]:
    """Overlapping test subsets, one per fraction, sampled without
    replacement within each subset.  Returns absolute row indices."""
    test_rows = ds.test_rows()
    out = []
    for i, fraction in enumerate(fractions):
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"partition fraction must lie in (0, 1], got {fraction}")
        size = int(len(test_rows) * fraction)
        gen = rng.generator(master_seed, "partition", i)
        pick = gen.choice(len(test_rows), size=size, replace=False)
        out.append(np.sort(test_rows[pick]))
    return out


def resample_group_ratio(
    ds: GroupedDataset,
    target_ratio: float,
    master_seed: int,
    group: int = 0,
) -> GroupedDataset:
    """Downsample one training group so ``group``'s training share hits
    ``target_ratio`` (within one row).  The test split is untouched and no
    group is ever upsampled; two-group datasets only.
    """
    if ds.n_groups != 2:
        raise ValueError(
            f"group-ratio resampling is defined for two groups, got {ds.n_groups}"
        )
    if not 0.1 <= target_ratio <= 0.9:
        raise ValueError(
            f"target ratio must lie in [0.1, 0.9] (reachable by downsampling), got {target_ratio}"
        )
    other = 1 - group
    rows_designated = ds.indices(group=group, split="train")
    rows_other = ds.indices(group=other, split="train")
    n_d, n_o = len(rows_designated), len(rows_other)
    current = n_d / (n_d + n_o)
    drop_rows = np.empty(0, dtype=np.int64)
    if abs(current - target_ratio) * (n_d + n_o) < 1.0:
        pass  # already within one row of the target
    elif target_ratio < current:
        keep = int(round(target_ratio * n_o / (1.0 - target_ratio)))
        if keep < 1:
            raise ValueError(
                f"target {target_ratio} unreachable: would empty group "
                f"{ds.group_names[group]!r}; achievable range is "
                f"[{1 / (1 + n_o):.4f}, {current:.4f}] by downsampling it"
            )
        gen = rng.generator(master_seed, "resample", "designated")
        drop = gen.choice(n_d, size=n_d - keep, replace=False)
        drop_rows = rows_designated[drop]
    else:
        keep = int(round(n_d * (1.0 - target_ratio) / target_ratio))
        if keep < 1:
            raise ValueError(
                f"target {target_ratio} unreachable: would empty group "
                f"{ds.group_names[other]!r}; achievable range is "
                f"[{current:.4f}, {n_d / (n_d + 1):.4f}] by downsampling it"
            )
        gen = rng.generator(master_seed, "resample", "other")
        drop = gen.choice(n_o, size=n_o - keep, replace=False)
        drop_rows = rows_other[drop]
    keep_mask = np.ones(ds.n_rows, dtype=bool)
    keep_mask[drop_rows] = False
    return ds.subset(np.nonzero(keep_mask)[0], name=f"{ds.name}-ratio{target_ratio:g}")


def save_processed(ds: GroupedDataset, out_dir: str) -> tuple[str, str]:
    """Write the processed dataset CSV plus a manifest with its checksum."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{ds.name}_v{PROCESSED_VERSION}.csv")
    header = list(ds.feature_names) + ["group", "label", "split"]
    lines = [",".join(header)]
    for i in range(ds.n_rows):
        values = [str(int(v)) for v in ds.features[i]]
        values.append(ds.group_names[ds.groups[i]])
        values.append(str(int(ds.labels[i])))
        values.append("train" if ds.in_train[i] else "test")
        lines.append(",".join(values))
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    with open(csv_path, "wb") as handle:
        handle.write(payload)
    manifest = {
        "schema_version": PROCESSED_VERSION,
        "dataset": ds.name,
        "rows": ds.n_rows,
        "n_features": ds.n_features,
        "feature_names": list(ds.feature_names),
        "group_names": list(ds.group_names),
        "group_counts": ds.group_counts(),
        "train_rows": int(ds.in_train.sum()),
        "label_positive_count": int(ds.labels.sum()),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    manifest_path = os.path.join(out_dir, f"{ds.name}_v{PROCESSED_VERSION}.manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    return csv_path, manifest_path


def load_processed(csv_path: str, name: str | None = None) -> GroupedDataset:
    """Read a CSV produced by save_processed back into a GroupedDataset."""
    frame = pd.read_csv(csv_path)
    meta = ("group", "label", "split")
    feature_names = tuple(c for c in frame.columns if c not in meta)
    group_names = tuple(sorted(frame["group"].unique()))
    name_to_id = {g: i for i, g in enumerate(group_names)}
    return GroupedDataset(
        name=name or os.path.splitext(os.path.basename(csv_path))[0],
        features=frame[list(feature_names)].to_numpy(dtype=np.float64),
        groups=np.array([name_to_id[g] for g in frame["group"]], dtype=np.int64),
        labels=frame["label"].to_numpy(dtype=np.int64),
        in_train=(frame["split"] == "train").to_numpy(),
        feature_names=feature_names,
        group_names=group_names,
    )
