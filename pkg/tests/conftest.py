import numpy as np
import pytest

from aicp.data import TABLE1_MODEL, MockConfig, generate_mock


@pytest.fixture(scope="session")
def fig1_mock():
    """The SNR-10 toy configuration: (DataSet, truth)."""
    return generate_mock(MockConfig(TABLE1_MODEL, snr_peak=10.0, seed=42))


@pytest.fixture(scope="session")
def snr100_mock():
    return generate_mock(MockConfig(TABLE1_MODEL, snr_peak=100.0, seed=42))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def default_suite(tmp_path_factory):
    """Figure suite at the default configuration (a few minutes)."""
    from aicp.experiments import ExperimentConfig, run_figure_suite

    out = tmp_path_factory.mktemp("suite_a")
    manifest = run_figure_suite(ExperimentConfig(output_dir=str(out)))
    return out, manifest


_ACCEPTANCE_LINES = {}


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion; printed at the end."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
