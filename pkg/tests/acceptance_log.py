"""Shared record of acceptance outcomes, printed by the terminal-summary hook."""

import contextlib
import time

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    info = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        info.setdefault("time", f"{time.perf_counter() - start:.1f}s")
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        RESULTS[number] = (ok, title, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})")
