"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line per criterion."""

import pytest

from chiralab.acceptance import CRITERIA, CriterionResult, run_criterion, tolerance_scales


@pytest.mark.parametrize("cid", sorted(CRITERIA), ids=[f"{c}-{CRITERIA[c][0]}" for c in sorted(CRITERIA)])
def test_criterion(cid, capsys):
    # explicit empty scales: the environment override must not relax this run
    res = run_criterion(cid, scales={})
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


def test_override_parsing():
    assert tolerance_scales(None) == {}
    assert tolerance_scales("  ") == {}
    assert tolerance_scales("0.5") == {0: 0.5}
    assert tolerance_scales("2=0.1, 5=3") == {2: 0.1, 5: 3.0}
    with pytest.raises(ValueError):
        tolerance_scales("2=-1")
    with pytest.raises(ValueError):
        tolerance_scales("x")


def test_tightened_tolerance_fails():
    assert not run_criterion(1, {1: 1e-30}).passed
    assert run_criterion(1, {}).passed


def test_result_line_format():
    line = CriterionResult(3, "demo", False, "x=1", 1.25, 10.0).line()
    assert line == "[FAIL] 3. demo (1.2s / 10s): x=1"


def test_unknown_criterion():
    with pytest.raises(KeyError):
        run_criterion(99, {})
