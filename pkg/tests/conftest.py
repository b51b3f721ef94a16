import re

import numpy as np
import pytest

from sepsim.data import (SyntheticDynamicsSpec, generate_synthetic_cohort,
                         prepare_cohorts)

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per numbered acceptance criterion."""
    verdicts = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match is None:
                continue
            number = int(match.group(1))
            verdicts[number] = verdicts.get(number, True) and status == "passed"
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(verdicts):
        word = "PASS" if verdicts[number] else "FAIL"
        terminalreporter.write_line(f"criterion {number:02d}: {word}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def raw_cohort():
    """Small raw synthetic cohort shared by read-only tests."""
    spec = SyntheticDynamicsSpec.default(seed=42)
    return generate_synthetic_cohort(spec, 24)


@pytest.fixture(scope="session")
def prepared(raw_cohort):
    """(train, val, stats) from the shared cohort; treat as read-only."""
    return prepare_cohorts(raw_cohort, fraction=0.8, seed=42)
