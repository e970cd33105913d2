import pytest

CRITERIA = {
    1: "adhesion law exactness",
    2: "adhesion dominance over gravity",
    3: "mechanics oracles",
    4: "metrics oracles",
    5: "AOR monotonicity in gamma",
    6: "calibration self-consistency",
    7: "spreading trends",
    8: "determinism",
}
_results = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_results] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, checks)`` records a criterion outcome and asserts it.

    ``checks`` maps a short label to ``(ok, detail)``.
    """
    results = request.config.stash[_results]

    def record(number, checks):
        ok = all(passed for passed, _ in checks.values())
        detail = "; ".join(f"{k}: {d}{'' if p else ' FAIL'}" for k, (p, d) in checks.items())
        results[number] = (ok, detail)
        failed = [k for k, (p, _) in checks.items() if not p]
        assert ok, f"criterion {number} failed: {', '.join(failed)}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_results]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
        else:
            terminalreporter.write_line(f"[FAIL] {n}. {name}: not run or errored")
