import time

import pytest
import torch

# criterion title per acceptance test, in reporting order
ACCEPTANCE = {}
_outcomes = {}


def acceptance(title):
    """Mark a test as an acceptance criterion; its outcome is listed at the end of the run."""

    def wrap(fn):
        ACCEPTANCE[fn.__name__] = title
        return fn

    return wrap


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if name not in ACCEPTANCE:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        prev = _outcomes.get(name)
        if prev is None or prev[0] == "PASS":
            _outcomes[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, title in ACCEPTANCE.items():
        if name in _outcomes:
            status, detail = _outcomes[name]
            terminalreporter.write_line(f"{status}  {title}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="session")
def trained_toy(tmp_path_factory):
    """Toy network trained with the default training settings; shared across tests."""
    from satvos.train import TrainConfig, train

    out = tmp_path_factory.mktemp("toy_training")
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    net, records = train("toy", TrainConfig(), out)
    return {"net": net, "records": records, "dir": out, "seconds": time.perf_counter() - t0}
