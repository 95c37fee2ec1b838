import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import dualgibbs as dg
from dualgibbs import oracle
from dualgibbs.duality import (
    DualFactor,
    MixtureComponent,
    RankOneMixture,
    dual_model_from_text,
    dual_model_to_text,
    entrywise_mixture,
    sw_form_coupling,
)

from conftest import random_model

positive_entry = st.floats(min_value=-2.5, max_value=2.5, allow_nan=False).map(math.exp)


def random_positive_tables(n, seed):
    rng = np.random.default_rng(seed)
    return np.exp(rng.standard_normal((n, 2, 2)))


# ---------------------------------------------------------------------------
# symmetric factorization
# ---------------------------------------------------------------------------


def test_symmetric_factor_all_ones_is_rank_one():
    B = dg.symmetric_factor(np.ones((2, 2)))
    assert np.allclose(B, math.sqrt(2) / 2, atol=1e-15)
    assert np.allclose(B @ B.T, np.ones((2, 2)), atol=1e-14)


def test_symmetric_factor_known_angle():
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    B = dg.symmetric_factor(P)
    # angle pi/12: sqrt(2) * (cos, sin) = (1.36603, 0.36603)
    assert B[0, 0] == pytest.approx(1.3660254037844386, abs=1e-12)
    assert B[0, 1] == pytest.approx(0.3660254037844386, abs=1e-12)
    assert B[1, 0] == pytest.approx(B[0, 1], abs=1e-15)
    assert np.allclose(B @ B.T, P, atol=1e-13)


def test_symmetric_factor_random_psd_family():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = math.exp(rng.standard_normal())
        d = math.exp(rng.standard_normal())
        # offdiag below sqrt(ad) keeps det >= 0
        c = math.sqrt(a * d) * rng.uniform(0.05, 1.0)
        P = np.array([[a, c], [c, d]])
        B = dg.symmetric_factor(P)
        assert np.all(B > 0)
        assert np.max(np.abs(B @ B.T - P)) <= 1e-12 * max(1.0, np.max(P))


def test_symmetric_factor_rejects_bad_input():
    with pytest.raises(ValueError, match="symmetric"):
        dg.symmetric_factor(np.array([[1.0, 2.0], [1.0, 1.0]]))
    with pytest.raises(ValueError, match="determinant"):
        dg.symmetric_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="positive"):
        dg.symmetric_factor(np.array([[1.0, -1.0], [-1.0, 1.0]]))


# ---------------------------------------------------------------------------
# general positive factorization
# ---------------------------------------------------------------------------


def test_factorize_positive_all_ones():
    B, C = dg.factorize_positive(np.ones((2, 2)))
    assert np.allclose(B @ C.T, np.ones((2, 2)), atol=1e-13)
    assert np.all(B > 0) and np.all(C > 0)


def test_factorize_positive_negative_determinant():
    P = np.array([[1.0, 2.0], [3.0, 4.0]])
    B, C = dg.factorize_positive(P)
    assert np.max(np.abs(B @ C.T - P)) <= 1e-10 * P.max()
    assert np.all(B > 0) and np.all(C > 0)


def test_factorize_positive_rank_one_gives_equal_columns():
    u = np.array([1.0, 3.0])
    v = np.array([2.0, 0.5])
    P = np.outer(u, v)
    B, C = dg.factorize_positive(P)
    assert np.max(np.abs(B @ C.T - P)) <= 1e-10 * P.max()
    assert np.allclose(C[:, 0], C[:, 1], atol=1e-9)


def test_factorize_positive_random_corpus():
    for P in random_positive_tables(1000, seed=42):
        B, C = dg.factorize_positive(P)
        assert np.all(B > 0) and np.all(C > 0)
        assert np.max(np.abs(B @ C.T - P)) <= 1e-10 * P.max()


def test_factorize_positive_rejects_nonpositive_and_tiny():
    with pytest.raises(ValueError):
        dg.factorize_positive(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="effectively zero"):
        dg.factorize_positive(np.array([[1.0, 1.0], [1.0, 1e-30]]))


@given(st.tuples(positive_entry, positive_entry, positive_entry, positive_entry))
def test_factorize_positive_property(entries):
    P = np.array(entries).reshape(2, 2)
    B, C = dg.factorize_positive(P)
    assert np.all(B > 0) and np.all(C > 0)
    assert np.max(np.abs(B @ C.T - P)) <= 1e-10 * P.max()


# ---------------------------------------------------------------------------
# dual parameters
# ---------------------------------------------------------------------------


def test_dual_params_trivial():
    d = dg.dual_params(np.ones((2, 2)), np.ones((2, 2)))
    assert (d.alpha1, d.alpha2, d.q, d.beta1, d.beta2) == (0, 0, 0, 0, 0)


def test_dual_params_known_example():
    B = np.array([[1.0, 1.0], [2.0, 1.0]])
    C = np.array([[1.0, 1.0], [1.0, 2.0]])
    d = dg.dual_params(B, C)
    assert d.alpha1 == pytest.approx(math.log(2), abs=1e-15)
    assert d.alpha2 == 0.0
    assert d.q == 0.0
    assert d.beta1 == pytest.approx(-math.log(2), abs=1e-15)
    assert d.beta2 == pytest.approx(math.log(2), abs=1e-15)
    # summing the two mixture components reproduces B C^T entry for entry
    assert np.max(np.abs(d.reconstruct() - B @ C.T)) <= 1e-12


def test_dual_params_random_reconstruction():
    rng = np.random.default_rng(3)
    for _ in range(300):
        B = np.exp(rng.standard_normal((2, 2)))
        C = np.exp(rng.standard_normal((2, 2)))
        d = dg.dual_params(B, C)
        P = B @ C.T
        assert np.max(np.abs(d.reconstruct() - P)) <= 1e-10 * P.max()


def test_gauge_invariance_under_table_scaling():
    rng = np.random.default_rng(8)
    for _ in range(100):
        P = np.exp(rng.standard_normal((2, 2)))
        d1 = dg.dual_params(*dg.factorize_positive(P))
        d7 = dg.dual_params(*dg.factorize_positive(7.0 * P))
        assert d7.beta1 == pytest.approx(d1.beta1, abs=1e-12)
        assert d7.beta2 == pytest.approx(d1.beta2, abs=1e-12)
        assert d7.log_scale - d1.log_scale == pytest.approx(math.log(7), abs=1e-10)


def test_independence_detection_rank_one_tables():
    rng = np.random.default_rng(5)
    for _ in range(100):
        P = np.outer(np.exp(rng.standard_normal(2)), np.exp(rng.standard_normal(2)))
        d = dg.dual_params(*dg.factorize_positive(P))
        assert abs(d.beta1) <= 1e-9
        assert abs(d.beta2) <= 1e-9


# ---------------------------------------------------------------------------
# bond decompositions
# ---------------------------------------------------------------------------


def _sw_table(w, k=2):
    t = np.full((k, k), math.exp(-w))
    np.fill_diagonal(t, 1.0)
    return t


def test_sw_decompose_weights():
    mix = dg.sw_decompose(math.log(2))
    assert np.allclose(mix.weights, [0.5, 0.5], atol=1e-15)
    mix = dg.sw_decompose(1.0)
    assert mix.weights[0] == pytest.approx(0.36788, abs=1e-5)
    assert mix.weights[1] == pytest.approx(0.63212, abs=1e-5)
    assert np.max(np.abs(mix.table() - _sw_table(1.0))) <= 1e-12


def test_sw_decompose_weak_coupling_limit():
    mix = dg.sw_decompose(1e-9)
    assert mix.weights[0] == pytest.approx(1.0, abs=1e-8)
    assert mix.weights[1] == pytest.approx(0.0, abs=1e-8)


def test_sw_decompose_rank1_representation():
    for k in (2, 3, 5):
        mix = dg.sw_decompose(0.8, k, representation="rank1")
        assert mix.dual_cardinality == 1 + k
        assert not any(c.bond for c in mix.components)
        assert np.max(np.abs(mix.table() - _sw_table(0.8, k))) <= 1e-12


def test_sw_decompose_rejects_nonpositive_coupling():
    with pytest.raises(ValueError):
        dg.sw_decompose(0.0)
    with pytest.raises(ValueError):
        dg.sw_decompose(-1.0)


def test_higdon_decompose_reconstruction():
    mix = dg.higdon_decompose(1.0, 0.3)
    assert mix.dual_cardinality == 3
    assert sum(c.bond for c in mix.components) == 1
    assert np.max(np.abs(mix.table() - _sw_table(1.0))) <= 1e-10


def test_higdon_small_alpha_approaches_plain_dual():
    mix = dg.higdon_decompose(1.0, 1e-9)
    assert mix.components[2].weight == pytest.approx(0.0, abs=1e-8)
    assert np.max(np.abs(mix.table() - _sw_table(1.0))) <= 1e-10


def test_higdon_alpha_at_feasibility_edge():
    w = 1.0
    alpha = 1.0 - math.exp(-w)  # first term becomes rank-deficient
    mix = dg.higdon_decompose(w, alpha)
    assert np.max(np.abs(mix.table() - _sw_table(w))) <= 1e-10


def test_higdon_rejects_infeasible_alpha():
    with pytest.raises(ValueError):
        dg.higdon_decompose(1.0, 0.9)
    with pytest.raises(ValueError):
        dg.higdon_decompose(1.0, -0.1)


def test_entrywise_mixture_general_table():
    rng = np.random.default_rng(0)
    t = np.exp(rng.standard_normal((3, 2)))
    mix = entrywise_mixture(t)
    assert mix.dual_cardinality == 6
    assert np.max(np.abs(mix.table() - t)) <= 1e-14


def test_sw_form_detection():
    assert sw_form_coupling(_sw_table(0.7)) == pytest.approx((0.7, 1.0))
    w, d = sw_form_coupling(3.0 * _sw_table(0.7, 3))
    assert (w, d) == pytest.approx((0.7, 3.0))
    assert sw_form_coupling(np.array([[1.0, 0.5], [0.4, 1.0]])) is None
    assert sw_form_coupling(np.array([[1.0, 2.0], [2.0, 1.0]])) is None  # repulsive


# ---------------------------------------------------------------------------
# dual models
# ---------------------------------------------------------------------------


def test_dualize_empty_model():
    m = dg.Model()
    m.add_variable(2)
    dm = dg.dualize_model(m)
    assert len(dm.dual_cardinalities()) == 0


def test_dualize_grid_marginalization_identity(grid33):
    dm = dg.dualize_model(grid33)
    summ = oracle.exact_dual_joint(dm)
    from scipy.special import logsumexp

    lp_marg = logsumexp(summ.log_joint, axis=1)
    lp_ref = oracle.state_logps(grid33, summ.x_states)
    # single proportionality constant, relative error < 1e-9
    assert np.max(np.abs(lp_marg - lp_ref)) <= 1e-9


def test_dualize_locality_on_edit(grid33):
    dm = dg.dualize_model(grid33)
    before = {fid: dm.duals[fid] for fid in dm.duals}
    fid = dm.add_factor((0, 8), np.exp(np.random.default_rng(1).normal(size=(2, 2))))
    for old, d in before.items():
        assert dm.duals[old] is d
    dm.remove_factor(fid)
    fresh = dg.dualize_model(dm.base)
    assert np.allclose(np.concatenate(dm.unary_eff), np.concatenate(fresh.unary_eff), atol=1e-12)


def test_dualize_model_names_offending_factor():
    m = dg.build_grid_ising(2, 2, 0.1)
    text = dg.model.model_to_text(m).replace("factor 3 ", "factor 3 ", 1)
    m2 = dg.model.model_from_text(text)
    m2.factors[3].table[0, 0] = 1e-30  # sneaks past parse-time positivity
    with pytest.raises(ValueError, match="factor 3"):
        dg.dualize_model(m2)


def test_potts_factor_routed_to_bond_expansion():
    m = dg.Model()
    m.add_variable(3)
    m.add_variable(3)
    m.add_factor((0, 1), 2.0 * _sw_table(0.9, 3))
    dm = dg.dualize_model(m)
    mix = dm.duals[0]
    assert isinstance(mix, RankOneMixture)
    assert mix.dual_cardinality == 4
    summ = oracle.exact_dual_joint(dm)
    from scipy.special import logsumexp

    assert np.max(np.abs(logsumexp(summ.log_joint, axis=1)
                         - oracle.state_logps(m, summ.x_states))) <= 1e-10


def test_general_multistate_factor_uses_entrywise_mixture():
    m = dg.Model()
    m.add_variable(3)
    m.add_variable(2)
    rng = np.random.default_rng(2)
    m.add_factor((0, 1), np.exp(rng.standard_normal((3, 2))))
    dm = dg.dualize_model(m)
    assert dm.duals[0].dual_cardinality == 6
    summ = oracle.exact_dual_joint(dm)
    from scipy.special import logsumexp

    assert np.max(np.abs(logsumexp(summ.log_joint, axis=1)
                         - oracle.state_logps(m, summ.x_states))) <= 1e-10


def test_reconstruction_invariant_random_models():
    for seed in range(20):
        m = random_model(seed)
        dm = dg.dualize_model(m)
        for fid, d in dm.duals.items():
            table = m.factors[fid].table
            recon = d.reconstruct() if isinstance(d, DualFactor) else d.table()
            assert np.max(np.abs(recon - table)) <= 1e-10 * table.max()


def test_set_dual_rejects_mismatched_reconstruction():
    m = dg.build_grid_ising(1, 2, 0.5)
    dm = dg.dualize_model(m)
    with pytest.raises(ValueError, match="reconstruct"):
        dm.set_dual(0, DualFactor(0.0, 0.0, 5.0, 1.0, 1.0, 0.0))


def test_mixture_component_validation():
    with pytest.raises(ValueError, match="weight"):
        RankOneMixture([MixtureComponent(0.0, np.ones(2), np.ones(2))], (2, 2))
    with pytest.raises(ValueError, match="nonzero"):
        RankOneMixture([MixtureComponent(1.0, np.zeros(2), np.ones(2))], (2, 2))
    with pytest.raises(ValueError, match="equal cardinalities"):
        RankOneMixture([MixtureComponent(1.0, bond=True)], (2, 3))


def test_dual_model_serialization_roundtrip(grid33):
    dm = dg.dualize_model(grid33)
    dm.add_factor((0, 4), _sw_table(0.6), method="sw")
    text = dual_model_to_text(dm)
    dm2 = dual_model_from_text(text)
    assert dual_model_to_text(dm2) == text
    # packed joint behavior matches
    s1 = oracle.exact_dual_joint(dm)
    s2 = oracle.exact_dual_joint(dm2)
    assert np.max(np.abs(s1.log_joint - s2.log_joint)) <= 1e-12
