"""Collects one PASS/FAIL line per acceptance criterion."""

LINES: list[str] = []


def record(number, title, ok, detail, elapsed, limit=None):
    budget = f" (limit {limit:g} s)" if limit is not None else ""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail} | {elapsed:.2f} s{budget}"
    LINES.append(line)
    print(line)
    return ok
