import itertools

import numpy as np
import pytest

from hiko.channel import make_rng


def all_messages(k: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8)


def gf2_rank(rows: np.ndarray) -> int:
    a = np.array(rows, dtype=np.uint8) % 2
    rank = 0
    for col in range(a.shape[1]):
        pivot = next((i for i in range(rank, a.shape[0]) if a[i, col]), None)
        if pivot is None:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        for i in range(a.shape[0]):
            if i != rank and a[i, col]:
                a[i] ^= a[rank]
        rank += 1
    return rank


def monomial_generator(m: int, r: int) -> np.ndarray:
    """Textbook RM generator: evaluations of all monomials of degree <= r on F_2^m."""
    points = np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.uint8)
    rows = []
    for deg in range(r + 1):
        for subset in itertools.combinations(range(m), deg):
            rows.append(np.prod(points[:, list(subset)], axis=1) if subset else np.ones(len(points)))
    return np.array(rows, dtype=np.uint8).reshape(-1, 2**m)


@pytest.fixture
def rng():
    return make_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its measured values."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::" not in getattr(rep, "nodeid", "") or rep.when != "call" and outcome != "error":
                continue
            detail = dict(rep.user_properties).get("detail", "")
            name = rep.nodeid.split("::")[-1]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", detail))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(lines, key=lambda t: int(t[0].split("_")[1])):
        terminalreporter.write_line(f"{status}  {name}  {detail}")
