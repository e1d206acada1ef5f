"""The twelve acceptance criteria, one test each, at their stated tolerances."""
import pytest

from ideal_dispatch.acceptance import CRITERIA


@pytest.mark.parametrize("name,check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_criterion(name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {name}: {detail}")
    assert ok, detail
