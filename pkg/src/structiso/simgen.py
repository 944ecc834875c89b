"""Fifteen-variable, four-block simulation benchmark with injectable faults.

Variables are numbered 1..15 in the equations below (``x1`` is column 0).

    block 1: x1, x2 ~ N(0,1)
             x6  = 0.6 x1 + 0.4 x2 + 0.03 e
             x7  = 0.4 x1 + 0.3 x2 + 0.3 x6 + 0.02 e
             x10 = 0.2 x1 + 0.5 x2 + 0.1 x6 + 0.2 x7 + 0.01 e
    block 2: x3 ~ N(0,1)
             x11 = 0.8 x3 + 0.03 e
             x15 = 0.3 x3 + 0.7 x11 + 0.01 e
    block 3: x4 ~ N(0,1)
             x9  = 0.7 x4 + 0.02 e
             x13 = 0.6 x4 + 0.4 x9 + 0.02 e
    block 4: x5 ~ N(0,1)
             x8  = 0.8 x5 + 0.02 e
             x12 = 0.5 x5 + 0.5 x8 + 0.03 e
             x14 = 0.2 x5 + 0.4 x8 + 0.4 x12 + 0.01 e

Every ``e`` is a fresh standard normal draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datamodel import DataMatrix
from .structure import BlockPartition, SparsityTree

N_VARS = 15
VARIABLE_NAMES = tuple(f"x{i}" for i in range(1, N_VARS + 1))

# (target, {source: coefficient}, noise scale), 1-based, in generation order
EQUATIONS = (
    (6, {1: 0.6, 2: 0.4}, 0.03),
    (7, {1: 0.4, 2: 0.3, 6: 0.3}, 0.02),
    (10, {1: 0.2, 2: 0.5, 6: 0.1, 7: 0.2}, 0.01),
    (11, {3: 0.8}, 0.03),
    (15, {3: 0.3, 11: 0.7}, 0.01),
    (9, {4: 0.7}, 0.02),
    (13, {4: 0.6, 9: 0.4}, 0.02),
    (8, {5: 0.8}, 0.02),
    (12, {5: 0.5, 8: 0.5}, 0.03),
    (14, {5: 0.2, 8: 0.4, 12: 0.4}, 0.01),
)
SOURCES = (1, 2, 3, 4, 5)
TABLE1_BLOCKS = ((1, 2, 6, 7, 10), (3, 11, 15), (4, 9, 13), (5, 8, 12, 14))


@dataclass(frozen=True)
class SensorBias:
    variable: int = 7  # 1-based
    delta: float = -1.5


@dataclass(frozen=True)
class Multiplicative:
    factors: tuple = ((2, 0.5), (3, 0.8), (15, 0.6))  # (1-based variable, factor)

    def __post_init__(self):
        for var, c in self.factors:
            if not 0 < c <= 1:
                raise ValueError(f"factor for x{var} must lie in (0, 1], got {c}")


Fault = Optional[object]


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_train: int = 700
    n_test: int = 300
    fault_start_index: int = 100
    fault: Fault = None

    def __post_init__(self):
        if not 0 <= self.fault_start_index < self.n_test:
            raise ValueError("fault_start_index must lie in [0, n_test)")
        if self.n_train < 2 or self.n_test < 1:
            raise ValueError("need n_train >= 2 and n_test >= 1")


@dataclass(frozen=True)
class GroundTruth:
    faulty_variables: tuple  # 0-based
    blocks: BlockPartition
    tree: SparsityTree


@dataclass(frozen=True)
class Simulation:
    train: DataMatrix
    test: DataMatrix
    truth: GroundTruth
    config: SimConfig = field(default=None)


def draw(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` fault-free raw samples."""
    x = np.zeros((n, N_VARS))
    for s in SOURCES:
        x[:, s - 1] = rng.standard_normal(n)
    for target, coefs, noise in EQUATIONS:
        col = noise * rng.standard_normal(n)
        for src, c in coefs.items():
            col += c * x[:, src - 1]
        x[:, target - 1] = col
    return x


def apply_fault(x: np.ndarray, fault, start: int) -> np.ndarray:
    """Return a copy of raw samples with ``fault`` applied from row ``start`` on."""
    x = x.copy()
    if fault is None:
        return x
    if isinstance(fault, SensorBias):
        x[start:, fault.variable - 1] += fault.delta
    elif isinstance(fault, Multiplicative):
        for var, c in fault.factors:
            x[start:, var - 1] *= c
    else:
        raise TypeError(f"unknown fault {fault!r}")
    return x


def faulty_variables(fault) -> tuple:
    if fault is None:
        return ()
    if isinstance(fault, SensorBias):
        return (fault.variable - 1,)
    return tuple(sorted(var - 1 for var, _ in fault.factors))


def table1_partition() -> BlockPartition:
    return BlockPartition(tuple(tuple(i - 1 for i in b) for b in TABLE1_BLOCKS), N_VARS)


def paper_tree() -> SparsityTree:
    """Leaves under one node per block, block nodes under the root (heights 0, 0.5, 1)."""
    return SparsityTree.from_partition(table1_partition(), block_height=0.5)


def generate(cfg: SimConfig) -> Simulation:
    """Training and test sets drawn from one seeded generator.

    The training rows are drawn first, then the test rows; the fault touches
    only the test rows from ``fault_start_index`` on, so columns the fault
    does not name match the fault-free draw exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    train = draw(cfg.n_train, rng)
    test = apply_fault(draw(cfg.n_test, rng), cfg.fault, cfg.fault_start_index)
    truth = GroundTruth(faulty_variables(cfg.fault), table1_partition(), paper_tree())
    return Simulation(DataMatrix(train, VARIABLE_NAMES), DataMatrix(test, VARIABLE_NAMES), truth, cfg)
