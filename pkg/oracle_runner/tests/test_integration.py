"""Drive the runner through the primary pipeline's subprocess client."""

from __future__ import annotations

import sys

import pytest

fxbook_validator = pytest.importorskip("fxbook.validator")

NUMS_TABLE = {"source_id": "nums", "headers_in_row1": True, "rows": [["Val"], [1], [2], [3]]}


def test_subprocess_runner_against_real_runner():
    runner = fxbook_validator.SubprocessRunner([sys.executable, "-m", "oracle_runner"])
    try:
        resp = runner.run(NUMS_TABLE, "df['Val'].sum()", timeout_ms=5000)
        assert resp["status"] == "ok" and resp["value"] == 6
        resp = runner.run(NUMS_TABLE, "while True: pass", timeout_ms=500)
        assert resp["status"] == "timeout"
        resp = runner.run(NUMS_TABLE, "open('x','w')", timeout_ms=2000)
        assert resp["status"] == "error"
    finally:
        runner.close()


def test_cross_validate_full_loop(teams_grid=None):
    from fxbook.engine import Plain
    from fxbook.genpipe import SynSample
    from fxbook.grid import Grid
    from fxbook.validator import EquivalencePolicy, cross_validate, execute_filter

    grid = Grid.from_rows(
        [["Team", "Wins"], ["Boston Red Sox", 86], ["Texas Rangers", 79]], source_id="teams"
    )
    sample = SynSample(
        func="MATCH",
        demo_argument="lookup_value <required>",
        query="Position of Boston Red Sox?",
        func_explanation="e",
        step_by_step=[],
        answer="1",
        formula='=MATCH("Boston Red Sox", A2:A3, 0)',
        structure=["lookup_value <required>"],
        table_id="teams",
    )
    assert execute_filter(sample, grid) == Plain(1.0)
    code = "result = df['Team'].tolist().index('Boston Red Sox')"  # 0-indexed
    runner = fxbook_validator.SubprocessRunner([sys.executable, "-m", "oracle_runner"])
    try:
        verdict = cross_validate(sample, grid, code, runner, EquivalencePolicy())
    finally:
        runner.close()
    assert verdict.kind == "validated"
