import contextlib
import time

import pytest

# criterion number -> (passed, seconds, note); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``with criterion(n, "title", limit=s):`` records PASS/FAIL (and the runtime bound) for one criterion."""

    @contextlib.contextmanager
    def run(number, title, limit=None):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            note = ""
            if limit is not None:
                note = f"{elapsed:.2f}s < {limit}s"
                if elapsed >= limit:
                    ok = False
                    note = f"{elapsed:.2f}s exceeds {limit}s"
            ACCEPTANCE[number] = (ok, title, note)
            line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}" + (f" ({note})" if note else "")
            print(line)
        if limit is not None and elapsed >= limit:
            pytest.fail(f"criterion {number} took {elapsed:.2f}s, bound is {limit}s")

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, note = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}" + (f" ({note})" if note else "")
        )
