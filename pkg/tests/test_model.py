import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import dualgibbs as dg
from dualgibbs import oracle
from dualgibbs.model import ModelFormatError, model_from_text, model_to_text

from conftest import exact_p1, random_model


def test_energy_single_variable_is_zero():
    m = dg.Model()
    m.add_variable(2, np.zeros(2))
    assert dg.energy(m, [0]) == 0.0
    assert dg.energy(m, [1]) == 0.0


def test_energy_single_edge_log_table():
    m = dg.Model()
    m.add_variable(2)
    m.add_variable(2)
    m.add_factor((0, 1), np.array([[1.0, math.exp(-1.0)], [math.exp(-1.0), 1.0]]))
    assert dg.energy(m, [0, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert dg.energy(m, [0, 0]) == pytest.approx(0.0, abs=1e-15)


def test_energy_grid_all_zeros():
    m = dg.build_grid_ising(2, 2, 0.5)
    assert dg.energy(m, np.zeros(4, dtype=int)) == pytest.approx(0.0, abs=1e-15)


def test_energy_validates_state():
    m = dg.build_grid_ising(2, 2, 0.5)
    with pytest.raises(ValueError):
        dg.energy(m, [0, 0, 0])
    with pytest.raises(ValueError):
        dg.energy(m, [0, 0, 0, 5])


def test_grid_builder_sizes():
    m = dg.build_grid_ising(1, 2, 0.0)
    assert m.n_vars == 2 and m.n_factors == 1
    (f,) = m.factors.values()
    assert np.allclose(f.table, 1.0)

    m = dg.build_grid_ising(2, 2, 0.7)
    assert m.n_vars == 4 and m.n_factors == 4

    m = dg.build_grid_ising(50, 50, 0.3)
    assert m.n_vars == 2500 and m.n_factors == 4900


def test_random_graph_counts_and_determinism():
    m = dg.build_random_graph(1000, 2, seed=5)
    assert m.n_vars == 1000 and m.n_factors == 2000
    pairs = {(f.u, f.v) for f in m.factors.values()}
    assert len(pairs) == 2000  # distinct simple edges

    a = dg.build_random_graph(4, 1, seed=9)
    b = dg.build_random_graph(4, 1, seed=9)
    assert [(f.u, f.v) for f in a.factors.values()] == [(f.u, f.v) for f in b.factors.values()]
    for fa, fb in zip(a.factors.values(), b.factors.values()):
        assert np.array_equal(fa.table, fb.table)
    c = dg.build_random_graph(4, 1, seed=10)
    assert any(
        not np.array_equal(fa.table, fc.table)
        for fa, fc in zip(a.factors.values(), c.factors.values())
    )


def test_random_graph_large_k():
    m = dg.build_random_graph(1000, 64, seed=0)
    assert m.n_factors == 64000


def test_random_graph_infeasible():
    with pytest.raises(ValueError):
        dg.build_random_graph(4, 2, seed=0)  # needs 8 > 6 distinct pairs


def test_full_ising_edge_counts():
    assert dg.build_full_ising(100, 0.01).n_factors == 4950
    assert dg.build_full_ising(2, 0.5).n_factors == 1
    assert dg.build_full_ising(30, 0.012).n_factors == 435


def test_add_then_remove_restores_factor_set():
    m = dg.build_grid_ising(3, 3, 0.2)
    before = {fid: f.table.copy() for fid, f in m.factors.items()}
    fid = m.add_factor((0, 8), np.full((2, 2), 2.0))
    m.remove_factor(fid)
    assert set(m.factors) == set(before)
    for k, tab in before.items():
        assert np.array_equal(m.factors[k].table, tab)
    # handles are never reused
    fid2 = m.add_factor((0, 8), np.full((2, 2), 2.0))
    assert fid2 != fid


def test_add_factor_changes_oracle_marginals():
    m = dg.build_grid_ising(3, 3, 0.25, np.linspace(-0.5, 0.5, 9))
    before = exact_p1(m)
    m.add_factor((0, 8), np.array([[4.0, 0.5], [0.5, 4.0]]))
    after = exact_p1(m)
    assert not np.allclose(before, after, atol=1e-6)


def test_remove_all_factors_leaves_unary_sum():
    m = random_model(3)
    for fid in list(m.factors):
        m.remove_factor(fid)
    x = np.ones(m.n_vars, dtype=int)
    expected = sum(v.unary[1] for v in m.variables)
    assert dg.energy(m, x) == pytest.approx(expected, abs=1e-12)


def test_remove_unknown_factor():
    m = dg.build_grid_ising(2, 2, 0.1)
    with pytest.raises(KeyError):
        m.remove_factor(999)


def test_add_factor_rejects_bad_tables():
    m = dg.build_grid_ising(2, 2, 0.1)
    with pytest.raises(ValueError):
        m.add_factor((0, 1), np.array([[1.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        m.add_factor((0, 0), np.ones((2, 2)))
    with pytest.raises(ValueError):
        m.add_factor((0, 9), np.ones((2, 2)))


def test_edit_cost_is_local():
    """Adjacency touches per edit depend on endpoint degrees, not model size."""
    small = dg.build_grid_ising(3, 3, 0.2)
    big = dg.build_grid_ising(20, 20, 0.2)
    costs = []
    for m in (small, big):
        m.edit_touch_count = 0
        fid = m.add_factor((0, 1), np.full((2, 2), 2.0))
        m.remove_factor(fid)
        costs.append(m.edit_touch_count)
    assert costs[0] == costs[1]


def test_clamp_nothing_is_identity():
    m = random_model(4)
    c = dg.clamp(m, {})
    assert c.n_vars == m.n_vars and set(c.factors) == set(m.factors)
    x = np.zeros(m.n_vars, dtype=int)
    assert dg.energy(c, x) == pytest.approx(dg.energy(m, x), abs=1e-12)


def test_clamp_single_edge_absorbs_column():
    m = dg.Model()
    m.add_variable(2)
    m.add_variable(2)
    tab = np.array([[1.0, 2.0], [3.0, 4.0]])
    m.add_factor((0, 1), tab)
    c = dg.clamp(m, {1: 1})
    assert c.n_vars == 1 and c.n_factors == 0
    assert np.allclose(c.variables[0].unary, np.log(tab[:, 1]))


def test_clamp_middle_of_chain_matches_conditional():
    m = dg.Model()
    for i in range(3):
        m.add_variable(2, np.array([0.0, 0.3 * i]))
    m.add_factor((0, 1), np.exp(np.random.default_rng(0).normal(size=(2, 2))))
    m.add_factor((1, 2), np.exp(np.random.default_rng(1).normal(size=(2, 2))))
    c = dg.clamp(m, {1: 1})
    assert c.n_factors == 0  # chain splits into two independent variables
    # conditional marginals of the original given x_1 = 1
    summ = oracle.exact_summary(m, keep_joint=True)
    mask = summ.states[:, 1] == 1
    p = summ.joint[mask]
    p = p / p.sum()
    cond0 = np.array([p[summ.states[mask][:, 0] == k].sum() for k in range(2)])
    cond2 = np.array([p[summ.states[mask][:, 2] == k].sum() for k in range(2)])
    got = oracle.exact_summary(c).marginals
    assert np.allclose(got[0], cond0, atol=1e-12)
    assert np.allclose(got[1], cond2, atol=1e-12)


def test_clamp_commutes_with_conditioning_random_models():
    for seed in range(5):
        m = random_model(seed, n_lo=3, n_hi=4)
        evidence = {0: 1}
        c = dg.clamp(m, evidence)
        summ = oracle.exact_summary(m, keep_joint=True)
        mask = summ.states[:, 0] == 1
        p = summ.joint[mask]
        p = p / p.sum()
        sub_states = summ.states[mask][:, c.source_ids]
        got = oracle.exact_summary(c).marginals
        for j in range(c.n_vars):
            cond = np.array([p[sub_states[:, j] == k].sum() for k in range(2)])
            assert np.allclose(got[j], cond, atol=1e-12)


def test_clamp_tracks_log_mass():
    m = random_model(7, n_lo=3, n_hi=3)
    c = dg.clamp(m, {0: 1, 1: 0})
    # summing the clamped model's mass reproduces the original restricted mass
    summ = oracle.exact_summary(m, keep_joint=True)
    mask = (summ.states[:, 0] == 1) & (summ.states[:, 1] == 0)
    from scipy.special import logsumexp

    restricted = logsumexp(oracle.state_logps(m, summ.states[mask]))
    assert oracle.exact_logZ(c) == pytest.approx(float(restricted), abs=1e-12)


def test_clamp_unknown_variable():
    m = dg.build_grid_ising(2, 2, 0.1)
    with pytest.raises(ValueError):
        dg.clamp(m, {17: 0})


def test_serialization_roundtrip_exact():
    m = random_model(12, n_lo=3, n_hi=4)
    text = model_to_text(m)
    m2 = model_from_text(text)
    assert model_to_text(m2) == text
    x = np.ones(m.n_vars, dtype=int)
    assert dg.energy(m2, x) == dg.energy(m, x)


@given(st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=2, max_size=2),
       st.lists(st.floats(min_value=0.01, max_value=100, allow_nan=False), min_size=4, max_size=4))
def test_serialization_roundtrip_property(unary, table):
    m = dg.Model()
    m.add_variable(2, np.array(unary))
    m.add_variable(2)
    m.add_factor((0, 1), np.array(table).reshape(2, 2))
    m2 = model_from_text(model_to_text(m))
    assert np.array_equal(m2.variables[0].unary, m.variables[0].unary)
    assert np.array_equal(m2.factors[0].table, m.factors[0].table)


def test_parse_error_reports_line_number():
    text = "vars 2\nunary 0 0.0 0.0\nunary 1 0.0 0.0\nfactor 0 0 1 1.0 -2.0 1.0 1.0\n"
    with pytest.raises(ModelFormatError, match="line 4"):
        model_from_text(text)
    with pytest.raises(ModelFormatError, match="vars"):
        model_from_text("unary 0 0.0 0.0\n")


def test_strict_positivity_of_mass():
    m = random_model(21)
    states = oracle.enumerate_states(m.cardinalities())
    lp = oracle.state_logps(m, states)
    assert np.all(np.isfinite(lp))
