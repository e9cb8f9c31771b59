import time

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Criterion:
    """Collects named checks for one acceptance criterion and a runtime budget."""

    def __init__(self, number: int, title: str, budget_seconds: float | None):
        self.number, self.title, self.budget = number, title, budget_seconds
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc is not None:
            self.checks.append((f"raised {exc_type.__name__}: {exc}", False))
        if self.budget is not None:
            self.check(f"runtime {elapsed:.1f}s < {self.budget:g}s", elapsed < self.budget)
        ok = all(flag for _, flag in self.checks)
        detail = "; ".join(f"{label}{'' if flag else ' [FAILED]'}" for label, flag in self.checks)
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc is None:
            failed = [label for label, flag in self.checks if not flag]
            assert not failed, f"criterion {self.number} failed: {failed}"
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
