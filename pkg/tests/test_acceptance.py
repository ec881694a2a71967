"""Acceptance criteria at their stated tolerances, one test per criterion."""

import pytest

from ebe.acceptance import CRITERIA


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = CRITERIA[number]()
    with capsys.disabled():
        print(f"\n{res.line()}")
    assert res.passed, res.to_json()
