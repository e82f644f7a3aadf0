"""Collects one verdict line per acceptance criterion for the summary."""

import sys

LINES: list[str] = []


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    LINES.append(line)
    print(line, file=sys.__stderr__, flush=True)
