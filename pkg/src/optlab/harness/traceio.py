"""CSV serialization of metric traces.

Floats use 17 significant digits so every float64 round-trips exactly;
lines end with LF and the decimal separator is always ``.``.
"""
from ..trace import COLUMNS, MetricTrace

HEADER = ",".join(COLUMNS)
_INT_COLS = {"step", "grads", "proxes", "wall_ns"}


def _fmt(name, v):
    if name in _INT_COLS:
        return str(int(v))
    return format(float(v), ".17g")


def trace_to_csv(trace):
    lines = [HEADER]
    for row in trace.rows:
        lines.append(",".join(_fmt(c, v) for c, v in zip(COLUMNS, row)))
    return "\n".join(lines) + "\n"


def write_csv(trace, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(trace_to_csv(trace))


def csv_to_trace(text):
    lines = text.split("\n")
    if lines[0] != HEADER:
        raise ValueError(f"unexpected CSV header {lines[0]!r}")
    trace = MetricTrace()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(parts)}")
        trace.rows.append(tuple(int(p) if c in _INT_COLS else float(p) for c, p in zip(COLUMNS, parts)))
    return trace


def read_csv(path):
    with open(path, encoding="ascii", newline="") as fh:
        return csv_to_trace(fh.read())


def strip_wall(text):
    """CSV text without the ``wall_ns`` column, for determinism checks."""
    return "\n".join(line.rsplit(",", 1)[0] for line in text.split("\n"))
