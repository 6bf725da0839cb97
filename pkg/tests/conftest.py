import numpy as np
import pytest

_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


def pytest_runtest_logreport(report):
    # collect acceptance criterion outcomes for the end-of-run summary
    if report.when != "call":
        return
    name = report.location[2]
    if "test_acceptance" in report.nodeid and name.startswith("test_A"):
        criterion = name.split("_")[1]
        _ACCEPTANCE_RESULTS[criterion] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for criterion in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{criterion}: {_ACCEPTANCE_RESULTS[criterion]}")


def naive_dft(x):
    """O(n^2) reference DFT: bins[k] = sum_t x[t] exp(-2i pi k t / n)."""
    x = np.asarray(x, dtype=complex)
    n = len(x)
    t = np.arange(n)
    k = t[:, None]
    return (x[None, :] * np.exp(-2j * np.pi * k * t[None, :] / n)).sum(axis=1)


def freq_response_db(taps, f_hz, fs):
    """Magnitude response in dB at one frequency, straight from the definition."""
    t = np.arange(len(taps))
    h = np.sum(taps * np.exp(-2j * np.pi * f_hz * t / fs))
    return 20.0 * np.log10(abs(h) + 1e-300)
