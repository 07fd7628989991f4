import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multidefault.errors import ConfigurationError, DomainError, StructuralError
from multidefault.scenarios import (
    DecomposedProcess,
    DefaultVector,
    NameSet,
    ScenarioState,
    classify_masks,
    classify_path,
    decomposed_eval,
    enumerate_scenarios,
    supersets,
)


def test_enumeration_counts_and_order():
    sc = enumerate_scenarios(3)
    assert len(sc) == 8
    assert [len(s) for s in sc] == [0, 1, 1, 1, 2, 2, 2, 3]
    assert len({s.bits for s in sc}) == 8


@pytest.mark.parametrize("n", [0, 17, 2.5])
def test_name_count_out_of_range(n):
    with pytest.raises(ConfigurationError):
        enumerate_scenarios(n)


def test_nameset_algebra():
    a = NameSet.of(4, [0, 2])
    assert a.indices == (0, 2) and len(a) == 2 and 2 in a and 1 not in a
    assert a.complement().indices == (1, 3)
    assert a.union(1).indices == (0, 1, 2)
    assert a.minus(NameSet.of(4, [2])).indices == (0,)
    assert a.union(a.complement()).is_full()
    assert a.label() == "{1,3}"
    with pytest.raises(DomainError):
        NameSet.of(2, [2])


def test_supersets():
    J = NameSet.of(3, [1])
    sup = supersets(J)
    assert [s.label() for s in sup] == ["{2}", "{1,2}", "{2,3}", "{1,2,3}"]
    assert all(s.issuperset(J) for s in sup)


times = st.lists(st.floats(0.01, 20.0), min_size=1, max_size=6, unique=True)


@given(times, st.floats(0.0, 25.0))
def test_scenarios_partition_paths(ts, t):
    """Every path lies in exactly one scenario at every time."""
    s = DefaultVector(tuple(ts))
    n = s.n
    hits = [I for I in enumerate_scenarios(n) if classify_path(s, t).I == I]
    assert len(hits) == 1
    mask = classify_masks(np.array([ts]), t)[0]
    assert mask == hits[0].bits


@given(times, st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_scenario_monotone_in_time(ts, t1, dt):
    s = DefaultVector(tuple(ts))
    early, late = classify_path(s, t1).I, classify_path(s, t1 + dt).I
    assert late.issuperset(early)


def test_predictable_classification_excludes_jump_time():
    s = DefaultVector((1.0, 3.0))
    assert classify_path(s, 1.0).I.indices == (0,)
    assert classify_path(s, 1.0, predictable=True).I.indices == ()


def test_default_vector_rejects_ties_and_nonpositive():
    with pytest.raises(DomainError):
        DefaultVector((1.0, 1.0))
    with pytest.raises(DomainError):
        DefaultVector((0.0, 1.0))


def test_scenario_state_validation():
    with pytest.raises(DomainError):
        ScenarioState(NameSet.of(2, [0]), (2.0,), 1.0)
    with pytest.raises(DomainError):
        ScenarioState(NameSet.of(2, [0]), (), 1.0)
    st_ = ScenarioState(NameSet.of(2, [0, 1]), (0.5, 0.8), 1.0)
    assert st_.latest == 0.8


def test_decomposed_process_eval_and_missing_entry():
    p = DecomposedProcess.from_function(2, lambda I, t, s_I: (len(I), s_I))
    assert decomposed_eval(p, 2.0, DefaultVector((1.0, 5.0))) == (1, (1.0,))
    with pytest.raises(StructuralError):
        DecomposedProcess(2, {0: lambda t, s: 0})
