import warnings

import pytest
from hypothesis import HealthCheck, settings

from shapiro_bjj.potential import default_spec
from shapiro_bjj.spectral import Model, TwoModeValidityWarning, build_parameter_table

settings.register_profile("repo", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def spec():
    return default_spec()


@pytest.fixture(scope="session")
def table(spec):
    """Single-particle parameters over the excursion of the fifth resonance drive."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TwoModeValidityWarning)
        return build_parameter_table(spec, spec.lambda0 - 0.18, spec.lambda0 + 0.18,
                                     model=Model.STANDARD)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.REPORT, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
