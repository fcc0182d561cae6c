"""Collects one verdict line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

import pytest

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    start = time.perf_counter()
    status, note = "PASS", ""
    try:
        yield
    except pytest.skip.Exception as exc:
        status, note = "SKIP", f" ({exc.msg})"
        raise
    except BaseException as exc:
        status, note = "FAIL", f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        raise
    finally:
        line = f"criterion {number} [{status}] {title} in {time.perf_counter() - start:.2f}s{note}"
        LINES.append(line)
        print(line)
