import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from structiso import simgen
from structiso.structure import GroupLasso, Tree, validate


def test_block2_relation_exact():
    x = simgen.draw(700, np.random.default_rng(0))
    # regenerate the noise from the same stream: columns are drawn in a fixed order
    rng = np.random.default_rng(0)
    src = {s: rng.standard_normal(700) for s in simgen.SOURCES}
    noise = {}
    for target, _, scale in simgen.EQUATIONS:
        noise[target] = scale * rng.standard_normal(700)
    assert np.array_equal(x[:, 0], src[1])
    resid = x[:, 14] - (0.3 * x[:, 2] + 0.7 * x[:, 10])
    assert np.allclose(resid, noise[15], atol=1e-14)


@given(st.integers(0, 2**31))
def test_all_relations_hold(seed):
    x = simgen.draw(50, np.random.default_rng(seed))
    for target, coefs, scale in simgen.EQUATIONS:
        pred = sum(c * x[:, s - 1] for s, c in coefs.items())
        resid = x[:, target - 1] - pred
        assert np.all(np.abs(resid) <= 6 * scale)


def test_x3_x11_correlation():
    x = simgen.generate(simgen.SimConfig(seed=5)).train.values
    assert np.corrcoef(x[:, 2], x[:, 10])[0, 1] >= 0.99


def test_fault_free_same_law():
    sim = simgen.generate(simgen.SimConfig(seed=6))
    a, b = sim.train.values, sim.test.values
    se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * se)


@given(st.integers(0, 2**31))
def test_same_seed_bit_identical(seed):
    a = simgen.generate(simgen.SimConfig(seed=seed, n_train=20, n_test=10, fault_start_index=3))
    b = simgen.generate(simgen.SimConfig(seed=seed, n_train=20, n_test=10, fault_start_index=3))
    assert np.array_equal(a.train.values, b.train.values)
    assert np.array_equal(a.test.values, b.test.values)


@pytest.mark.parametrize("fault, touched", [(simgen.SensorBias(), [6]),
                                            (simgen.Multiplicative(), [1, 2, 14])])
def test_fault_touches_only_named_columns(fault, touched):
    clean = simgen.generate(simgen.SimConfig(seed=3))
    bad = simgen.generate(simgen.SimConfig(seed=3, fault=fault))
    assert np.array_equal(clean.train.values, bad.train.values)
    other = [j for j in range(15) if j not in touched]
    assert np.array_equal(clean.test.values[:, other], bad.test.values[:, other])
    assert np.array_equal(clean.test.values[:100], bad.test.values[:100])
    assert bad.truth.faulty_variables == tuple(touched)


def test_fault_values():
    clean = simgen.generate(simgen.SimConfig(seed=3)).test.values
    bias = simgen.generate(simgen.SimConfig(seed=3, fault=simgen.SensorBias())).test.values
    mult = simgen.generate(simgen.SimConfig(seed=3, fault=simgen.Multiplicative())).test.values
    assert np.allclose(bias[100:, 6], clean[100:, 6] - 1.5, atol=1e-15)
    for j, c in ((1, 0.5), (2, 0.8), (14, 0.6)):
        assert np.array_equal(mult[100:, j], clean[100:, j] * c)


def test_table1_partition():
    p = simgen.table1_partition()
    assert p.sizes == (5, 3, 3, 4) and sum(p.sizes) == 15
    assert p.covers and p.problems() == []
    assert p.blocks[0] == (0, 1, 5, 6, 9)
    assert validate(GroupLasso(1.0, p), 15) == []


def test_paper_tree():
    t = simgen.paper_tree()
    assert len(t.leaves) == 15 and len(t) == 20
    assert t.problems(15) == []
    heights = sorted({n.height for n in t.nodes})
    assert heights == [0.0, 0.5, 1.0]
    blocks = [t.nodes[c].group for c in t.nodes[t.root].children]
    assert blocks == list(simgen.table1_partition().blocks)
    assert validate(Tree(1.0, t), 15) == []


@pytest.mark.parametrize("kwargs", [{"fault_start_index": 300}, {"n_train": 1},
                                    {"n_test": 0}])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        simgen.SimConfig(**kwargs)


def test_invalid_factor():
    with pytest.raises(ValueError):
        simgen.Multiplicative(((2, 1.5),))
