"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES = []


def report(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")
    print(line)
    LINES.append(line)
    return passed
