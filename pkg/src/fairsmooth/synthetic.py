"""Built-in synthetic two-group task for tests, sweeps and verification.

Each group is linearly separable, but along a different direction: group 0
labels by the sign of the first feature, group 1 by the sign of the second.
With no coupling the two group classifiers therefore drift apart, which
makes the task a sharp probe of the parameter-coupling term.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .data import GroupedDataset


def make_two_group_task(
    master_seed: int = 0,
    n_per_group: int = 400,
    n_features: int = 2,
    test_fraction: float = 0.25,
) -> GroupedDataset:
    gen = rng.generator(master_seed, "synthetic")
    features = gen.normal(size=(2 * n_per_group, n_features))
    groups = np.repeat(np.array([0, 1]), n_per_group)
    labels = np.where(groups == 0, features[:, 0] > 0.0, features[:, 1 % n_features] > 0.0)
    order = gen.permutation(2 * n_per_group)
    features, groups, labels = features[order], groups[order], labels[order]
    n_test = int(2 * n_per_group * test_fraction)
    in_train = np.ones(2 * n_per_group, dtype=bool)
    in_train[:n_test] = False
    return GroupedDataset(
        name="synthetic-two-group",
        features=features,
        groups=groups,
        labels=labels.astype(np.int64),
        in_train=in_train,
        feature_names=tuple(f"x{i}" for i in range(n_features)),
        group_names=("g0", "g1"),
    )
