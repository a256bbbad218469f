"""The invariant suites must pass clean and catch injected faults."""

import numpy as np
import pytest

from gpldla import selfcheck as S
from gpldla.errors import ContractError


def test_all_suites_pass_on_clean_code():
    results, ok = S.run_selfcheck(seed=0)
    assert ok
    assert len(results) == 8
    assert all(r.passed for r in results)
    names = [r.name for r in results]
    assert len(set(names)) == len(names)


def test_suites_are_seed_stable():
    a, _ = S.run_selfcheck(seed=3)
    b, _ = S.run_selfcheck(seed=3)
    assert [(r.name, r.passed, r.detail) for r in a] == \
           [(r.name, r.passed, r.detail) for r in b]


@pytest.mark.parametrize("mode,expected_name", [
    ("prior-norm-scale", "norm"),
    ("curvature-sign", "curvature"),
])
def test_fault_injection_is_caught_by_the_right_suite(mode, expected_name):
    results, ok = S.run_selfcheck(seed=0, mutate=mode)
    assert not ok
    failed = [r.name for r in results if not r.passed]
    assert failed, "fault went unnoticed"
    assert any(expected_name in name for name in failed)


def test_format_table_marks_failures():
    results, _ = S.run_selfcheck(seed=0, mutate="curvature-sign")
    table = S.format_table(results)
    assert "FAIL" in table and "PASS" in table
    assert table.splitlines()[0].startswith("check")


def test_flatten_unflatten_round_trip():
    groups = [{"w": np.arange(6.0).reshape(2, 3), "b": np.ones(3)},
              {"s": np.asarray(2.5)}]
    vec, layout = S.flatten_params(groups)
    assert vec.size == 10
    back = S.unflatten_params(vec, layout, [2, 1])
    assert np.array_equal(back[0]["w"], groups[0]["w"])
    assert np.array_equal(back[0]["b"], groups[0]["b"])
    assert back[1]["s"].shape == ()
    assert float(back[1]["s"]) == 2.5


def test_unknown_fault_mode_rejected():
    with pytest.raises(ContractError):
        S.run_selfcheck(seed=0, mutate="gremlins")
