import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion label -> (passed, detail); filled by the acceptance tests
CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion.

    Usage: ``criterion(3, passed, "detail")``; the summary line is printed at
    the end of the session whether or not the test asserts afterwards.
    ``passed=None`` records a skipped variant.
    """
    def record(label, passed, detail):
        CRITERIA[str(label)] = (None if passed is None else bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    def order(label):
        head, _, tail = label.partition(" ")
        return int(head), tail

    for label in sorted(CRITERIA, key=order):
        passed, detail = CRITERIA[label]
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}")
