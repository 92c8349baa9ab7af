"""Statistics, regression, dependence trees, and matrix chains.

The numeric fixtures reuse the four-tuple-per-relation chain database with
values mapped to small integers, so every floating-point operation is exact
and the pinned triples can be asserted with plain equality.
"""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fivm.apps import (
    Binned,
    DivergenceError,
    MIMatrix,
    RegressionConfig,
    build_covariance_query,
    build_matrix_chain,
    chow_liu_tree,
    covariance_matrix,
    export_chow_liu_csv,
    export_covariance_csv,
    export_mi_csv,
    export_theta_csv,
    mcm_rank_update,
    mutual_information_matrix,
    second_moment_matrix,
    train_linear_regression,
)
from fivm.ivm import RuntimeState, UpdateDelta
from fivm.queries import VariableOrder
from fivm.rings import (
    CovarianceTriple,
    covariance_dense,
    covariance_ring,
    relational_payload,
    ring_negate,
    ring_one,
)
from fivm.viewtree import plan_view_tree

# T is declared before S so the slot numbering follows the alphabet:
# A=1, B=2, C=3, D=4, E=5 in first-appearance order.
CHAIN_STAT_RELS = [("R", ("A", "B")), ("T", ("C", "D")), ("S", ("A", "C", "E"))]
CHAIN_ORDER = VariableOrder([["A", ["B"], ["C", ["D"], ["E"]]]])

NUM_ROWS = {
    "R": [(1.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)],
    "S": [(1.0, 1.0, 1.0), (1.0, 1.0, 2.0), (1.0, 2.0, 3.0), (2.0, 2.0, 4.0)],
    "T": [(1.0, 1.0), (2.0, 2.0), (2.0, 3.0), (3.0, 4.0)],
}

MIX_ROWS = {
    "R": [(1.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)],
    "S": [(1.0, "c1", 1.0), (1.0, "c1", 2.0), (1.0, "c2", 3.0), (2.0, "c2", 4.0)],
    "T": [("c1", 1.0), ("c2", 2.0), ("c2", 3.0), ("c3", 4.0)],
}


def rp(schema, entries):
    return relational_payload(schema, entries)


def stats_state(relations, kinds, data, order):
    cq = build_covariance_query(relations, kinds)
    tree = plan_view_tree(cq.query, order, updatable=tuple(n for n, _ in relations))
    state = RuntimeState(tree)
    one = ring_one(cq.query.ring)
    state.load({name: [(tuple(k), one) for k in rows] for name, rows in data.items()})
    return cq, state


def root_triple(state):
    return state.result().payload(())


def entries_form(value):
    """Uniform comparison form: payloads and plain numbers as entry dicts."""
    if value is None:
        return {}
    if hasattr(value, "entries"):
        return dict(value.entries)
    if isinstance(value, dict):
        return {k: v for k, v in value.items() if v}
    return {(): value} if value else {}


def assert_triple_matches_oracle(spec, slots, triple, tables, categorical=()):
    c, s, q = oracles.statistics(tables, slots, categorical)
    assert entries_form(triple.c) == entries_form(c)
    for j in range(1, len(slots) + 1):
        assert entries_form(triple.s.get(j)) == entries_form(s[j]), f"slot {j}"
    for i in range(1, len(slots) + 1):
        for j in range(i, len(slots) + 1):
            got = entries_form(triple.Q.get((i, j)))
            assert got == entries_form(q[(i, j)]), f"pair {(i, j)}"


def num_tables(data, relations):
    schemas = dict((n, s) for n, s in relations)
    return [(schemas[n], {tuple(k): 1 for k in rows}) for n, rows in data.items()]


# ---------------------------------------------------------------------------
# query compilation


def test_slots_follow_first_appearance():
    cq = build_covariance_query(CHAIN_STAT_RELS, {v: "continuous" for v in "ABCDE"})
    assert cq.slots == ("A", "B", "C", "D", "E")
    assert cq.query.ring.base == "real"
    assert cq.query.free == ()


def test_untagged_variables_only_count():
    cq = build_covariance_query(CHAIN_STAT_RELS, {"D": "continuous"})
    assert cq.slots == ("D",)
    modes = {v: l.mode for v, l in cq.query.lifts.items()}
    assert modes["D"] == "covariance_continuous"
    assert all(m == "to_one" for v, m in modes.items() if v != "D")


def test_one_categorical_switches_the_base():
    cq = build_covariance_query(CHAIN_STAT_RELS, {"C": "categorical", "D": "continuous"})
    assert cq.query.ring.base == "relational"


@pytest.mark.parametrize(
    "kinds, message",
    [
        ({"Z": "continuous"}, "unknown variables"),
        ({}, "no variable was tagged"),
        ({"D": "weird"}, "unknown column kind"),
    ],
)
def test_compilation_rejects_bad_kinds(kinds, message):
    with pytest.raises(ValueError, match=message):
        build_covariance_query(CHAIN_STAT_RELS, kinds)


def test_binned_columns_group_by_bin_index():
    b = Binned(0.0, 1.0, bins=4)
    assert [b.bin_of(x) for x in (-0.5, 0.0, 0.25, 0.999, 1.0, 5.0)] == [0, 0, 1, 3, 3, 3]
    cq, state = stats_state(
        [("R", ("X",))],
        {"X": Binned(0.0, 1.0, bins=4)},
        {"R": [(0.1,), (0.35,), (0.9,), (0.9,)]},
        VariableOrder([["X"]]),
    )
    triple = root_triple(state)
    assert triple.s[1] == rp(("X",), {(0,): 1, (1,): 1, (3,): 2})


def test_binned_validates_its_range():
    with pytest.raises(ValueError):
        Binned(1.0, 1.0)
    with pytest.raises(ValueError):
        Binned(0.0, 1.0, bins=0)


# ---------------------------------------------------------------------------
# maintained statistics triples, pinned by hand


def test_leaf_view_triples_over_the_chain():
    _, state = stats_state(
        CHAIN_STAT_RELS, {v: "continuous" for v in "ABCDE"}, NUM_ROWS, CHAIN_ORDER
    )
    assert dict(state.views["V@D(T)"].entries) == {
        (1.0,): CovarianceTriple(1.0, {4: 1.0}, {(4, 4): 1.0}),
        (2.0,): CovarianceTriple(2.0, {4: 5.0}, {(4, 4): 13.0}),
        (3.0,): CovarianceTriple(1.0, {4: 4.0}, {(4, 4): 16.0}),
    }


def test_inner_view_triple_for_one_group():
    _, state = stats_state(
        CHAIN_STAT_RELS, {v: "continuous" for v in "ABCDE"}, NUM_ROWS, CHAIN_ORDER
    )
    # group a=2 joins one S row (c=2, e=4) with two T rows (d=2 and d=3)
    assert state.views["V@C(S+T)"].payload((2.0,)) == CovarianceTriple(
        2.0,
        {3: 4.0, 4: 5.0, 5: 8.0},
        {
            (3, 3): 8.0,
            (3, 4): 10.0,
            (3, 5): 16.0,
            (4, 4): 13.0,
            (4, 5): 20.0,
            (5, 5): 32.0,
        },
    )


def test_grouped_scalars_for_a_categorical_column():
    kinds = {"A": "continuous", "B": "continuous", "C": "categorical",
             "D": "continuous", "E": "continuous"}
    _, state = stats_state(CHAIN_STAT_RELS, kinds, MIX_ROWS, CHAIN_ORDER)
    assert state.views["V@C(S+T)"].payload((2.0,)) == CovarianceTriple(
        rp((), {(): 2}),
        {3: rp(("C",), {("c2",): 2}), 4: rp((), {(): 5.0}), 5: rp((), {(): 8.0})},
        {
            (3, 3): rp(("C",), {("c2",): 2}),
            (3, 4): rp(("C",), {("c2",): 5.0}),
            (3, 5): rp(("C",), {("c2",): 8.0}),
            (4, 4): rp((), {(): 13.0}),
            (4, 5): rp((), {(): 20.0}),
            (5, 5): rp((), {(): 32.0}),
        },
    )


def test_root_triple_matches_scan_oracle():
    cq, state = stats_state(
        CHAIN_STAT_RELS, {v: "continuous" for v in "ABCDE"}, NUM_ROWS, CHAIN_ORDER
    )
    assert_triple_matches_oracle(
        cq.query.ring, cq.slots, root_triple(state), num_tables(NUM_ROWS, CHAIN_STAT_RELS)
    )


def test_mixed_root_triple_matches_scan_oracle():
    kinds = {"A": "continuous", "B": "continuous", "C": "categorical",
             "D": "continuous", "E": "continuous"}
    cq, state = stats_state(CHAIN_STAT_RELS, kinds, MIX_ROWS, CHAIN_ORDER)
    assert_triple_matches_oracle(
        cq.query.ring,
        cq.slots,
        root_triple(state),
        num_tables(MIX_ROWS, CHAIN_STAT_RELS),
        categorical=("C",),
    )


def test_triple_maintenance_under_insert_and_delete():
    cq, state = stats_state(
        CHAIN_STAT_RELS, {v: "continuous" for v in "ABCDE"}, NUM_ROWS, CHAIN_ORDER
    )
    spec = cq.query.ring
    one = ring_one(spec)
    state.apply_batch(
        [UpdateDelta("T", (((2.0, 9.0), one), ((1.0, 1.0), ring_negate(spec, one))))]
    )
    updated = dict(NUM_ROWS)
    updated["T"] = [(2.0, 2.0), (2.0, 3.0), (3.0, 4.0), (2.0, 9.0)]
    assert_triple_matches_oracle(
        spec, cq.slots, root_triple(state), num_tables(updated, CHAIN_STAT_RELS)
    )


# ---------------------------------------------------------------------------
# one-hot equivalence


def categorical_vs_onehot(rows, categories):
    """Run the same dataset through a categorical slot and through
    explicit 0/1 indicator columns; return both engine-side triples."""
    _, cat_state = stats_state(
        [("R", ("X", "Y"))],
        {"X": "categorical", "Y": "continuous"},
        {"R": [(x, float(y)) for x, y in rows]},
        VariableOrder([["X", ["Y"]]]),
    )
    ind_vars = tuple(f"I{i}" for i in range(len(categories)))
    expanded = [
        tuple(1.0 if x == c else 0.0 for c in categories) + (float(y),)
        for x, y in rows
    ]
    nest = ["Y"]
    for v in reversed(ind_vars):
        nest = [v, nest]
    cq, hot_state = stats_state(
        [("R1", ind_vars + ("Y",))],
        {v: "continuous" for v in ind_vars + ("Y",)},
        {"R1": expanded},
        VariableOrder([nest]),
    )
    return root_triple(cat_state), (cq.query.ring, root_triple(hot_state))


def assert_onehot_equivalent(rows, categories):
    cat, (hot_spec, hot) = categorical_vs_onehot(rows, categories)
    c, s, q = covariance_dense(hot_spec, hot)
    m = len(categories)
    assert entries_form(cat.c) == ({(): c} if c else {})
    assert entries_form(cat.s.get(1)) == {
        (x,): s[i] for i, x in enumerate(categories) if s[i]
    }
    assert entries_form(cat.s.get(2)) == ({(): s[m]} if s[m] else {})
    assert entries_form(cat.Q.get((1, 1))) == {
        (x,): q[i][i] for i, x in enumerate(categories) if q[i][i]
    }
    for i, x in enumerate(categories):
        for j in range(i + 1, m):
            assert q[i][j] == 0.0, "indicator columns never co-fire"
    assert entries_form(cat.Q.get((1, 2))) == {
        (x,): q[i][m] for i, x in enumerate(categories) if q[i][m]
    }
    assert entries_form(cat.Q.get((2, 2))) == ({(): q[m][m]} if q[m][m] else {})


def test_onehot_equivalence_on_a_pinned_dataset():
    rows = [("p", 1), ("p", 2), ("q", 3), ("r", 4), ("r", 4)]
    assert_onehot_equivalent(rows, ("p", "q", "r"))


@settings(max_examples=25, deadline=None)
@given(
    rows=st.lists(
        st.tuples(st.sampled_from(["a", "b"]), st.integers(-3, 3)), min_size=1, max_size=8
    )
)
def test_onehot_equivalence_on_random_data(rows):
    assert_onehot_equivalent(rows, ("a", "b"))


# ---------------------------------------------------------------------------
# moment and covariance matrices


def test_second_moment_matrix_layout():
    cq, state = stats_state(
        [("R", ("X", "Y"))],
        {"X": "continuous", "Y": "continuous"},
        {"R": [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]},
        VariableOrder([["X", ["Y"]]]),
    )
    moments = second_moment_matrix(cq.query.ring, cq.slots, root_triple(state))
    assert np.array_equal(
        moments, np.array([[3.0, 6.0, 12.0], [6.0, 14.0, 28.0], [12.0, 28.0, 56.0]])
    )


def test_covariance_matrix_of_two_points():
    cq, state = stats_state(
        [("R", ("X", "Y"))],
        {"X": "continuous", "Y": "continuous"},
        {"R": [(0.0, 0.0), (2.0, 4.0)]},
        VariableOrder([["X", ["Y"]]]),
    )
    cov = covariance_matrix(cq.query.ring, cq.slots, root_triple(state))
    assert np.array_equal(cov, np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_moment_matrix_needs_a_real_base():
    spec = covariance_ring(1, base="relational")
    triple = ring_one(spec)
    with pytest.raises(ValueError, match="real scalar base"):
        second_moment_matrix(spec, ("X",), triple)


def test_moment_matrix_checks_the_slot_count():
    spec = covariance_ring(2)
    with pytest.raises(ValueError, match="2 slots expected"):
        second_moment_matrix(spec, ("X",), ring_one(spec))


def test_covariance_of_nothing_is_an_error():
    spec = covariance_ring(1)
    empty = CovarianceTriple(0.0, {}, {})
    with pytest.raises(ValueError, match="empty population"):
        covariance_matrix(spec, ("X",), empty)


# ---------------------------------------------------------------------------
# regression


GRID_ROWS = [
    (float(a), float(b), float(3 + 2 * a - b)) for a in range(4) for b in range(4)
]


def grid_stats():
    return stats_state(
        [("R", ("X1", "X2", "Y"))],
        {v: "continuous" for v in ("X1", "X2", "Y")},
        {"R": GRID_ROWS},
        VariableOrder([["X1", ["X2", ["Y"]]]]),
    )


def test_regression_recovers_planted_coefficients():
    cq, state = grid_stats()
    config = RegressionConfig("Y", ("X1", "X2"), step_size=0.01)
    result = train_linear_regression(cq.query.ring, cq.slots, root_triple(state), config)
    assert result.converged
    xs = np.array([r[:2] for r in GRID_ROWS])
    ys = np.array([r[2] for r in GRID_ROWS])
    direct = oracles.least_squares(xs, ys)
    for got, want in zip(
        (result.theta["intercept"], result.theta["X1"], result.theta["X2"]), direct
    ):
        assert got == pytest.approx(want, abs=1e-6)
    assert direct == pytest.approx([3.0, 2.0, -1.0], abs=1e-9)


def test_warm_start_resumes_from_a_prior_fit():
    cq, state = grid_stats()
    config = RegressionConfig("Y", ("X1", "X2"), step_size=0.01)
    spec, slots, triple = cq.query.ring, cq.slots, root_triple(state)
    cold = train_linear_regression(spec, slots, triple, config)
    warm_config = RegressionConfig("Y", ("X1", "X2"), step_size=0.01, warm_start=True)
    warm = train_linear_regression(spec, slots, triple, warm_config, prior=cold.theta)
    assert warm.converged
    assert warm.iterations < cold.iterations
    for name in ("intercept", "X1", "X2"):
        assert warm.theta[name] == pytest.approx(cold.theta[name], abs=1e-8)


def test_oversized_steps_raise_instead_of_looping():
    cq, state = grid_stats()
    config = RegressionConfig("Y", ("X1", "X2"), step_size=1.0)
    with pytest.raises(DivergenceError) as info:
        train_linear_regression(cq.query.ring, cq.slots, root_triple(state), config)
    err = info.value
    assert err.step_size == 1.0
    assert len(err.norms) == 11
    assert err.norms[-1] > err.norms[0]


def test_iteration_cap_reports_no_convergence():
    cq, state = grid_stats()
    config = RegressionConfig(
        "Y", ("X1", "X2"), step_size=1e-7, gradient_threshold=1e-9, max_iterations=3
    )
    result = train_linear_regression(cq.query.ring, cq.slots, root_triple(state), config)
    assert not result.converged
    assert result.iterations == 3


def test_regression_config_validation():
    with pytest.raises(ValueError, match="label cannot also be a feature"):
        RegressionConfig("Y", ("Y", "X1"))
    with pytest.raises(ValueError, match="duplicate feature"):
        RegressionConfig("Y", ("X1", "X1"))
    with pytest.raises(ValueError, match="step size"):
        RegressionConfig("Y", ("X1",), step_size=0.0)
    cq, state = grid_stats()
    with pytest.raises(ValueError, match="not a slot"):
        train_linear_regression(
            cq.query.ring, cq.slots, root_triple(state), RegressionConfig("Z", ("X1",))
        )


# ---------------------------------------------------------------------------
# mutual information and the dependence tree


def pair_stats(rows):
    return stats_state(
        [("R", ("X", "Y"))],
        {"X": "categorical", "Y": "categorical"},
        {"R": rows},
        VariableOrder([["X", ["Y"]]]),
    )


def test_identical_columns_score_ln_two():
    cq, state = pair_stats({"R": [(0, 0), (1, 1)]}["R"])
    mi = mutual_information_matrix(cq.query.ring, cq.slots, root_triple(state))
    assert mi[0, 1] == pytest.approx(math.log(2.0), abs=1e-15)
    assert mi[0, 0] == 0.0
    assert mi.labels == ("X", "Y")


def test_product_distribution_scores_zero():
    cq, state = pair_stats([(x, y) for x in (0, 1) for y in (0, 1)])
    mi = mutual_information_matrix(cq.query.ring, cq.slots, root_triple(state))
    assert abs(mi[0, 1]) < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    joint=st.dictionaries(
        st.tuples(st.integers(0, 2), st.integers(0, 2)),
        st.integers(1, 4),
        min_size=1,
        max_size=9,
    )
)
def test_mutual_information_matches_the_oracle(joint):
    rows = [k for k, n in joint.items() for _ in range(n)]
    cq, state = pair_stats(rows)
    mi = mutual_information_matrix(cq.query.ring, cq.slots, root_triple(state))
    want = oracles.mutual_information(joint)
    assert mi[0, 1] == pytest.approx(want, abs=1e-12)
    assert mi[1, 0] == mi[0, 1]


def test_mutual_information_rejects_real_bases():
    spec = covariance_ring(2)
    with pytest.raises(ValueError, match="categorical slots"):
        mutual_information_matrix(spec, ("X", "Y"), ring_one(spec))


def test_mutual_information_of_nothing_is_an_error():
    spec = covariance_ring(2, base="relational")
    empty = CovarianceTriple(relational_payload((), {}), {}, {})
    with pytest.raises(ValueError, match="empty population"):
        mutual_information_matrix(spec, ("X", "Y"), empty)


def test_tree_follows_the_strongest_links():
    mi = MIMatrix(
        ("X", "Y", "Z"),
        ((0.0, 0.9, 0.1), (0.9, 0.0, 0.5), (0.1, 0.5, 0.0)),
    )
    tree = chow_liu_tree(mi)
    assert tree.edges == ((0, 1), (1, 2))
    assert tree.weight == pytest.approx(1.4)
    assert tree.named_edges() == [("X", "Y"), ("Y", "Z")]


def test_tree_ties_break_toward_low_indices():
    mi = MIMatrix(("X", "Y", "Z"), ((0.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.5, 0.5, 0.0)))
    assert chow_liu_tree(mi).edges == ((0, 1), (0, 2))


def test_tree_of_nothing_is_an_error():
    with pytest.raises(ValueError):
        chow_liu_tree(MIMatrix((), ()))


@settings(max_examples=25, deadline=None)
@given(data=st.data(), m=st.integers(2, 5))
def test_tree_weight_is_the_spanning_maximum(data, m):
    weights = [[0.0] * m for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            w = data.draw(st.integers(0, 20)) / 4.0
            weights[i][j] = weights[j][i] = w
    mi = MIMatrix(tuple(f"V{i}" for i in range(m)), tuple(map(tuple, weights)))
    tree = chow_liu_tree(mi)
    assert len(tree.edges) == m - 1
    assert tree.weight == pytest.approx(oracles.best_spanning_tree_weight(weights))
    assert tree.weight == pytest.approx(sum(weights[a][b] for a, b in tree.edges))


# ---------------------------------------------------------------------------
# matrix chains


def test_textbook_chain_splits_the_cheap_way():
    mc = build_matrix_chain((10, 100, 5, 50))
    assert mc.bracketing == ((1, 2), 3)
    assert mc.cost == 7500
    assert mc.order.to_nested() == [["X1", ["X4", ["X3", "X2"]]]]
    assert mc.query.free == ("X1", "X4")
    assert [d.name for d in mc.query.relations] == ["A1", "A2", "A3"]


def test_equal_chains_balance_and_lean_left():
    four = build_matrix_chain((8, 8, 8, 8, 8))
    assert four.bracketing == ((1, 2), (3, 4))
    assert four.cost == 1536
    assert four.order.to_nested() == [["X1", ["X5", ["X3", "X2", "X4"]]]]
    three = build_matrix_chain((4, 4, 4, 4))
    assert three.bracketing == (1, (2, 3))
    assert three.cost == 128


def test_single_matrix_chain_is_trivial():
    mc = build_matrix_chain((3, 4))
    assert mc.bracketing == 1
    assert mc.cost == 0
    assert mc.matrix_count == 1
    assert mc.order.to_nested() == [["X1", "X2"]]


def test_chain_validation():
    with pytest.raises(ValueError):
        build_matrix_chain((5,))
    with pytest.raises(ValueError):
        build_matrix_chain((3, 0, 2))


@settings(max_examples=40, deadline=None)
@given(dims=st.lists(st.integers(1, 9), min_size=3, max_size=6))
def test_chain_cost_is_the_exhaustive_minimum(dims):
    mc = build_matrix_chain(dims)
    best, winners = oracles.min_chain_cost(dims)
    assert mc.cost == best
    assert mc.bracketing in winners


def chain_runtime(dims, seed=7):
    mc = build_matrix_chain(dims)
    names = tuple(f"A{i}" for i in range(1, mc.matrix_count + 1))
    tree = plan_view_tree(mc.query, mc.order, updatable=names)
    state = RuntimeState(tree)
    rng = np.random.default_rng(seed)
    mats = [
        rng.integers(-3, 4, size=(dims[i], dims[i + 1])).astype(float)
        for i in range(len(dims) - 1)
    ]
    data = {}
    for name, m in zip(names, mats):
        data[name] = [
            ((r, c), float(m[r, c]))
            for r in range(m.shape[0])
            for c in range(m.shape[1])
            if m[r, c] != 0.0
        ]
    state.load(data)
    return state, mats


def to_dense(state, shape):
    out = np.zeros(shape)
    for (r, c), v in state.result().entries.items():
        out[r, c] = v
    return out


def test_chain_root_is_the_product():
    dims = (3, 4, 2, 5)
    state, mats = chain_runtime(dims)
    assert np.array_equal(to_dense(state, (3, 5)), oracles.chain_product(mats))


def test_rank_one_updates_track_the_dense_product():
    dims = (3, 4, 2, 5)
    state, mats = chain_runtime(dims)
    u = [1.0, 0.0, -2.0, 1.0]
    v = {0: 2.0, 1: -1.0}
    touched = mcm_rank_update(state, 2, u, v)
    assert touched > 0
    mats[1] += np.outer(u, [v.get(j, 0.0) for j in range(dims[2])])
    assert np.array_equal(to_dense(state, (3, 5)), oracles.chain_product(mats))


def test_zero_rank_updates_do_nothing():
    state, mats = chain_runtime((3, 4, 2, 5))
    before = to_dense(state, (3, 5))
    assert mcm_rank_update(state, 1, [0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]) == 0
    assert np.array_equal(to_dense(state, (3, 5)), before)


def test_rank_updates_need_a_real_matrix():
    state, _ = chain_runtime((3, 4, 2, 5))
    with pytest.raises(ValueError, match="no matrix named A9"):
        mcm_rank_update(state, 9, [1.0], [1.0])


# ---------------------------------------------------------------------------
# exports


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_covariance_export_round_trips(tmp_path):
    cq, state = stats_state(
        [("R", ("X", "Y"))],
        {"X": "continuous", "Y": "continuous"},
        {"R": [(0.0, 0.0), (2.0, 4.0)]},
        VariableOrder([["X", ["Y"]]]),
    )
    path = tmp_path / "cov.csv"
    export_covariance_csv(str(path), cq.query.ring, cq.slots, root_triple(state))
    rows = read_csv(path)
    assert rows[0] == ["", "X", "Y"]
    assert [float(x) for x in rows[1][1:]] == [1.0, 2.0]
    assert [float(x) for x in rows[2][1:]] == [2.0, 4.0]


def test_mi_and_tree_exports(tmp_path):
    mi = MIMatrix(("X", "Y"), ((0.0, 0.25), (0.25, 0.0)))
    mi_path = tmp_path / "mi.csv"
    export_mi_csv(str(mi_path), mi)
    assert read_csv(mi_path) == [["", "X", "Y"], ["X", "0.0", "0.25"], ["Y", "0.25", "0.0"]]
    tree = chow_liu_tree(mi)
    tree_path = tmp_path / "tree.csv"
    export_chow_liu_csv(str(tree_path), tree, mi)
    assert read_csv(tree_path) == [["from", "to", "score"], ["X", "Y", "0.25"]]


def test_theta_export(tmp_path):
    cq, state = grid_stats()
    config = RegressionConfig("Y", ("X1", "X2"), step_size=0.01)
    result = train_linear_regression(cq.query.ring, cq.slots, root_triple(state), config)
    path = tmp_path / "theta.csv"
    export_theta_csv(str(path), result)
    rows = read_csv(path)
    assert rows[0] == ["coefficient", "value"]
    got = {name: float(val) for name, val in rows[1:]}
    assert got["intercept"] == pytest.approx(3.0, abs=1e-6)
    assert got["X1"] == pytest.approx(2.0, abs=1e-6)
    assert got["X2"] == pytest.approx(-1.0, abs=1e-6)
