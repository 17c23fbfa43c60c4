"""One test per acceptance criterion; each prints a single PASS/FAIL line.

The lines are also repeated in the terminal summary so they survive output
capture.  Runs are cached inside ``flocklab.acceptance`` so criteria sharing a
simulation pay for it once.
"""

import pytest

from flocklab.acceptance import CRITERIA, run_one

SLOW = {3, 4, 5, 8, 13, 14}


def _param(num, title):
    marks = [pytest.mark.slow] if num in SLOW else []
    return pytest.param(num, id=f"criterion_{num:02d}_{title.replace(' ', '_')}", marks=marks)


@pytest.mark.parametrize("number", [_param(n, t) for n, t, _ in CRITERIA])
def test_criterion(number, acceptance_log):
    res = run_one(number)
    line = res.line()
    print(line)
    acceptance_log.append(line)
    assert res.passed, line
