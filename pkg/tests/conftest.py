import pytest

from fracbench.plant import design_plant
from fracbench.tuning import Family, FrequencySpec, tune

# filled by the acceptance module, printed at the end of the session
VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def plant():
    return design_plant()


@pytest.fixture(scope="session")
def spec():
    return FrequencySpec()


@pytest.fixture(scope="session")
def tuned_fopid(plant, spec):
    return tune(plant, spec, Family.FOPID)


@pytest.fixture(scope="session")
def tuned_iopid(plant, spec):
    return tune(plant, spec, Family.IOPID)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
