from __future__ import annotations

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgxsupply.ci import (
    WEEK,
    Attempt,
    BuildMatrix,
    CiRecord,
    CommandRunner,
    DuplicateAxisValue,
    EmptyAxis,
    FailureCategory,
    PipelineConfig,
    RunnerUnavailable,
    ScriptedRunner,
    attempts_from_records,
    daily_sweep,
    expand_matrix,
    run_ci,
    weekly_aggregate,
    weekly_csv,
)

CONFIGS = expand_matrix(BuildMatrix())


def weekly_history(fixtures):
    """One attempt per reference count, placed mid-week."""
    weeks = json.loads((fixtures / "weekly_history.json").read_text())
    history = []
    for w in weeks:
        t = (w["week"] - 1) * WEEK + WEEK // 2
        history += [Attempt(t, i < w["failed"]) for i in range(w["total"])]
    return weeks, history


def test_default_matrix():
    assert len(CONFIGS) == 8 and len(set(CONFIGS)) == 8
    assert CONFIGS[0] == PipelineConfig("cargo", "ubuntu-16.04", "release")


def test_single_config_matrix():
    assert len(expand_matrix(BuildMatrix(("cargo",), ("u",), ("debug",)))) == 1


def test_matrix_validation():
    with pytest.raises(DuplicateAxisValue):
        expand_matrix(BuildMatrix(("cargo", "cargo")))
    with pytest.raises(EmptyAxis):
        expand_matrix(BuildMatrix(build_types=()))


def test_all_pass():
    records = run_ci("lib", CONFIGS, ScriptedRunner())
    assert len(records) == 8 and all(r.passed for r in records)


def test_transient_retry_then_pass():
    runner = ScriptedRunner({"lib": ["network", "pass"]})
    (r,) = run_ci("lib", CONFIGS[:1], runner, retry_budget=2)
    assert r.passed and r.attempts == 2


def test_deterministic_never_retried():
    runner = ScriptedRunner({"lib": ["deterministic"]})
    (r,) = run_ci("lib", CONFIGS[:1], runner, retry_budget=5)
    assert r.category is FailureCategory.DETERMINISTIC and len(runner.calls) == 1


def test_unknown_kind_is_deterministic():
    (r,) = run_ci("lib", CONFIGS[:1], ScriptedRunner({"lib": ["segfault"]}))
    assert r.category is FailureCategory.DETERMINISTIC


def test_runner_missing():
    with pytest.raises(RunnerUnavailable):
        run_ci("lib", CONFIGS, None)


def test_parallel_order_is_stable():
    runner = ScriptedRunner({f"lib:{CONFIGS[3].label}": ["external"]})
    seq = run_ci("lib", CONFIGS, runner)
    par = run_ci("lib", CONFIGS, ScriptedRunner({f"lib:{CONFIGS[3].label}": ["external"]}), max_parallel=4)
    assert [r.to_dict() for r in seq] == [r.to_dict() for r in par]
    assert seq[3].category is FailureCategory.EXTERNAL_DEPENDENCY_BREAKAGE


def test_record_category_iff_fail():
    ok = CiRecord("lib", CONFIGS[0], 0)
    assert ok.passed and ok.outcome == "pass"
    r = CiRecord("lib", CONFIGS[0], 0, FailureCategory.DETERMINISTIC)
    assert r.outcome == "fail" and CiRecord.from_dict(r.to_dict()) == r


def sweep(failing, total=159, threshold=0.25):
    libs = [f"lib{i:03d}" for i in range(total)]
    runner = ScriptedRunner({lib: ["external"] for lib in libs[:failing]})
    return daily_sweep(libs, CONFIGS[:1], runner, now=0, mass_failure_threshold=threshold)


def test_mass_failure_day():
    _, event = sweep(58)
    assert event is not None and event.count == 58 and event.suspected_external


def test_small_failure_day():
    assert sweep(3)[1] is None


def test_empty_sweep():
    assert daily_sweep([], CONFIGS, ScriptedRunner(), now=0) == ([], None)


def test_weekly_rates(fixtures):
    weeks, history = weekly_history(fixtures)
    reports = weekly_aggregate(history)
    assert reports[0].rate == Fraction(1, 2)
    assert reports[31].rate == Fraction(249, 1001)
    assert round(reports[31].failure_rate, 4) == 0.2488
    for w, r in zip(weeks, reports):
        assert (r.total_attempts, r.failed_attempts) == (w["total"], w["failed"])
        if w["week"] >= 27:
            assert 0.02 <= r.failure_rate <= 0.55


def test_empty_week_and_csv():
    reports = weekly_aggregate([Attempt(2 * WEEK, True)])
    assert [(r.total_attempts, r.failure_rate) for r in reports] == [(0, 0), (0, 0), (1, 1.0)]
    assert weekly_csv(reports).splitlines() == [
        "week,total,failed,rate", "1,0,0,0.0000", "2,0,0,0.0000", "3,1,1,1.0000",
    ]


def test_attempts_collapse_per_library():
    runner = ScriptedRunner({f"a:{CONFIGS[0].label}": ["deterministic"]})
    records = run_ci("a", CONFIGS, runner, when=5) + run_ci("b", CONFIGS, runner, when=5)
    assert attempts_from_records(records) == [Attempt(5, True, "a"), Attempt(5, False, "b")]


def test_command_runner(tmp_path):
    ok = CommandRunner("true")
    assert ok("lib", CONFIGS[0]) == "pass"
    assert CommandRunner("false")("lib", CONFIGS[0]) == "deterministic"
    with pytest.raises(RunnerUnavailable):
        CommandRunner("definitely-not-a-binary-xyz")("lib", CONFIGS[0])


axis = st.lists(st.text("abcdef", min_size=1, max_size=3), min_size=1, max_size=4, unique=True)


@settings(max_examples=100, deadline=None)
@given(axis, axis, axis)
def test_matrix_product(a, b, c):
    configs = expand_matrix(BuildMatrix(tuple(a), tuple(b), tuple(c)))
    assert len(configs) == len(set(configs)) == len(a) * len(b) * len(c)


outcome = st.sampled_from(["pass", "network", "deterministic", "external"])


@settings(max_examples=200, deadline=None)
@given(st.lists(outcome, min_size=1, max_size=6), st.integers(0, 4))
def test_retry_bound(script, budget):
    runner = ScriptedRunner({"lib": script})
    (r,) = run_ci("lib", CONFIGS[:1], runner, retry_budget=budget)
    assert len(runner.calls) <= 1 + budget
    if script[0] != "network":
        assert len(runner.calls) == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20 * WEEK), st.booleans()), max_size=60))
def test_aggregate_conserves(items):
    reports = weekly_aggregate([Attempt(t, f) for t, f in items])
    assert sum(r.total_attempts for r in reports) == len(items)
    assert all(r.failed_attempts <= r.total_attempts for r in reports)
