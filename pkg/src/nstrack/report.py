"""CSV/JSON output of convergence tables and check reports."""

import csv
import io
import json

from .experiments import ConvergenceTable, InfSupReport


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _payload(obj, checks=()):
    """Return ``(columns, rows)`` for a table-like object."""
    if isinstance(obj, ConvergenceTable):
        return list(obj.columns), obj.rows()
    if obj and isinstance(obj[0], InfSupReport):
        rows = []
        for rep in obj:
            for lvl, h, b, l0 in zip(rep.levels, rep.h, rep.beta, rep.kernel_eigenvalue):
                rows.append([rep.pair.value, lvl[0], lvl[1], h, b, l0])
        return ["pair", "nx", "ny", "h", "beta_h", "lambda_const_mode"], rows
    return ["check", "passed", "value", "threshold"], \
        [[c.name, c.passed, c.value, c.threshold] for c in checks]


def render(obj, fmt="csv", checks=()):
    columns, rows = _payload(obj, checks)
    if fmt == "json":
        body = {"columns": columns, "rows": rows}
        if checks:
            body["checks"] = [{"name": c.name, "passed": bool(c.passed), "value": c.value,
                               "threshold": c.threshold} for c in checks]
        # json writes floats with repr, the shortest exact round-trip form
        return json.dumps(body, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_report(obj, path, fmt="csv", checks=()):
    """Write ``obj`` (a table, inf-sup reports, or only ``checks``) to ``path``."""
    text = render(obj, fmt, checks)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def read_json_table(path):
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    return ConvergenceTable.from_rows(body["columns"], body["rows"])

