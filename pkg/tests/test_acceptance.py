"""End-to-end acceptance gate: one test per shipped guarantee.

Each case defers to the package's self-check so the CLI `selftest` command
and this suite stay in lockstep, asserts the pass, and enforces the
documented runtime budget. Run with `-s` (or read the captured output) for
the one-line-per-criterion summary.
"""

import pytest

from flowsteer.selfcheck import CRITERIA, run_criteria

BUDGET_SECONDS = {
    1: 5.0,
    2: 1.0,
    3: 5.0,
    4: 1.0,
    5: 10.0,
    6: 10.0,
    7: 60.0,
    8: 30.0,
    9: 20.0,
    10: 5.0,
    11: 5.0,
    12: 10.0,
}


@pytest.mark.parametrize(
    "number,name", [(num, name) for num, name, _ in CRITERIA], ids=lambda v: str(v)
)
def test_criterion(number, name):
    (result,) = run_criteria([number])
    state = "PASS" if result.ok else "FAIL"
    print(f"criterion {number:02d} {name}: {state} ({result.seconds:.2f}s) {result.detail}")
    assert result.ok, f"criterion {number} ({name}): {result.detail}"
    assert result.seconds < BUDGET_SECONDS[number], (
        f"criterion {number} took {result.seconds:.2f}s, budget {BUDGET_SECONDS[number]}s"
    )


def test_all_criteria_covered():
    assert [num for num, _, _ in CRITERIA] == list(range(1, 13))
