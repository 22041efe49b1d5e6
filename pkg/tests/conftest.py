import numpy as np
import pytest

from dgcal.dataset import DomainDataset


def make_dataset(n_per_domain=(10,), d=2, k=3, seed=0, with_logits=True, names=None):
    rng = np.random.default_rng(seed)
    names = names or [f"dom{i}" for i in range(len(n_per_domain))]
    tags = [t for t, n in zip(names, n_per_domain) for _ in range(n)]
    n = len(tags)
    logits = rng.normal(size=(n, k)) * 2 if with_logits else np.zeros((n, 0))
    return DomainDataset(rng.normal(size=(n, d)), logits, rng.integers(k, size=n), tags, k)


@pytest.fixture
def small_ds():
    return make_dataset((6, 4), d=2, k=3, names=["art", "clipart"])


# ---------------------------------------------------------------- acceptance summary

# criterion number -> measured detail, filled in by tests/test_acceptance.py
ACCEPTANCE_DETAIL = {}
_acceptance = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        n = int(name.split("_")[2])
        title = " ".join(name.split("_")[3:])
        verdict = "PASS" if _acceptance[name] == "passed" else "FAIL"
        detail = ACCEPTANCE_DETAIL.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {title}" + (f"  [{detail}]" if detail else ""))
