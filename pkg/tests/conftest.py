import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from structiso import datamodel as dm
from structiso import monitor, simgen

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_psd(rng, m, rank=None):
    rank = m if rank is None else rank
    b = rng.standard_normal((m, rank))
    return b @ b.T / rank


class Scenario:
    """Monitoring model, standardized test set and flagged batch for one seed."""

    def __init__(self, seed, fault):
        self.sim = simgen.generate(simgen.SimConfig(seed=seed, fault=fault))
        self.model = monitor.fit_monitoring_model(self.sim.train, n_components=5)
        self.z = dm.standardize(self.model.standardizer, self.sim.test).values
        self.detection = monitor.detect(self.model.pca, self.model.limits, self.z)
        self.batch = self.z[self.detection.flagged]
        self.spe = self.model.matrix("spe")


@pytest.fixture(scope="session")
def bias_scenario():
    return Scenario(0, simgen.SensorBias())


@pytest.fixture(scope="session")
def mult_scenario():
    return Scenario(0, simgen.Multiplicative())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_partition(rng, m, cover=True):
    from structiso.structure import BlockPartition

    perm = rng.permutation(m)
    cuts = np.sort(rng.choice(np.arange(1, m), size=min(m - 1, rng.integers(1, 4)), replace=False))
    blocks = [tuple(sorted(int(i) for i in b)) for b in np.split(perm, cuts)]
    if not cover:
        blocks = [b for b in blocks if len(b) > 1][:2] or [tuple(sorted(int(i) for i in perm[:2]))]
    return BlockPartition(tuple(blocks), m)


def random_tree(rng, m):
    """Random nested tree over ``m`` leaves with longest-path heights."""
    from structiso.structure import SparsityTree

    items = [{"variable": int(i)} for i in rng.permutation(m)]
    while len(items) > 1:
        take = int(min(len(items), rng.integers(2, 4)))
        kids, items = items[:take], items[take:]
        items.insert(int(rng.integers(0, len(items) + 1)), {"children": kids})
    return SparsityTree.from_nested(items[0])


def random_spec(family, rng, m, lam=1.0):
    from structiso.structure import (Clustered, GroupLasso, Lasso, PartialSupport,
                                     SparseGroupLasso, SupportSpec, Tree)

    if family == "lasso":
        return Lasso(lam)
    if family == "support":
        t = rng.choice(m, size=int(rng.integers(1, m)), replace=False)
        return PartialSupport(lam, SupportSpec(tuple(int(i) for i in t), m))
    if family == "group":
        return GroupLasso(lam, random_partition(rng, m))
    if family == "sparse-group":
        return SparseGroupLasso(lam, float(rng.uniform(0.1, 0.9)), random_partition(rng, m))
    if family == "cluster":
        return Clustered(lam, lam * float(rng.uniform(0.5, 2.0)), random_partition(rng, m, cover=False))
    return Tree(lam, random_tree(rng, m))


def random_instance(family, rng, m_max=10, k_max=5):
    """Random batch, PSD matrix and spec with a weight that leaves a non-trivial solution."""
    m = int(rng.integers(3, m_max + 1))
    k = int(rng.integers(1, k_max + 1))
    mat = random_psd(rng, m, rank=int(rng.integers(max(1, m // 2), m + 1)))
    batch = rng.standard_normal((k, m)) + rng.standard_normal(m)
    lam = float(rng.uniform(0.05, 0.6)) * np.abs(2 * mat @ batch.mean(axis=0)).max()
    return batch, mat, random_spec(family, rng, m, lam)


FAMILIES = ("lasso", "support", "group", "sparse-group", "cluster", "tree")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
