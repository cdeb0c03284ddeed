"""Per-round metric records and their CSV form."""

import io
import math

import numpy as np


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class MetricsTrace:
    """Rows of named columns; ``to_csv`` output depends only on the values."""

    def __init__(self, columns, rows=None, meta=None):
        self.columns = tuple(columns)
        self.rows = [] if rows is None else list(rows)
        self.meta = dict(meta or {})

    def append(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(values))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    @property
    def final(self):
        return dict(zip(self.columns, self.rows[-1])) if self.rows else {}

    def where(self, **match):
        keep = [r for r in self.rows
                if all(r[self.columns.index(k)] == v for k, v in match.items())]
        return MetricsTrace(self.columns, keep, self.meta)

    def to_csv(self, path=None, comments=()):
        buf = io.StringIO()
        for c in comments:
            buf.write(f"# {c}\n")
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(format_value(v) for v in r) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def __repr__(self):
        return f"MetricsTrace(columns={self.columns}, rows={len(self.rows)})"
