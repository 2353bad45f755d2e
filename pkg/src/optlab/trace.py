"""Per-run metric records shared by every solver."""
import time

import numpy as np

COLUMNS = ("step", "grads", "proxes", "bits", "f_gap", "dist_sq", "wall_ns")


class MetricTrace:
    """Rows of ``(step, grads, proxes, bits, f_gap, dist_sq, wall_ns)``.

    ``extras`` holds additional per-row series (for instance the iterate
    deviation of Local SGD); ``x`` is the final iterate and ``iterates``
    the recorded iterates when the solver was asked to keep them.
    """

    def __init__(self, metadata=None):
        self.rows = []
        self.metadata = dict(metadata or {})
        self.extras = {}
        self.iterates = []
        self.x = None
        self._t0 = time.perf_counter_ns()

    def record(self, step, grads=0, proxes=0, bits=0.0, f_gap=np.nan, dist_sq=np.nan, **extras):
        wall = time.perf_counter_ns() - self._t0
        self.rows.append((int(step), int(grads), int(proxes), float(bits),
                          float(f_gap), float(dist_sq), int(wall)))
        for k, v in extras.items():
            self.extras.setdefault(k, []).append(v)

    def column(self, name):
        j = COLUMNS.index(name)
        return np.array([r[j] for r in self.rows])

    def extra(self, name):
        return np.asarray(self.extras[name])

    def __len__(self):
        return len(self.rows)

    def same_metrics(self, other):
        """Row-wise equality ignoring ``wall_ns``."""
        return [r[:-1] for r in self.rows] == [r[:-1] for r in other.rows]

    def __repr__(self):
        return f"MetricTrace({len(self.rows)} rows)"


class Monitor:
    """Computes ``f_gap`` and ``dist_sq`` for a trace when a reference is known."""

    def __init__(self, f, psi=None, x_star=None, f_star=None, keep_iterates=False):
        self.f, self.psi = f, psi
        self.x_star = None if x_star is None else np.asarray(x_star, float)
        self.f_star = f_star
        self.keep_iterates = keep_iterates

    def metrics(self, x):
        f_gap = np.nan
        if self.f_star is not None:
            val = self.f.value(x)
            if self.psi is not None:
                val += self.psi.value(x)
            f_gap = val - self.f_star
        dist = np.nan if self.x_star is None else float(np.sum((x - self.x_star) ** 2))
        return f_gap, dist

    def record(self, trace, x, step, grads=0, proxes=0, bits=0.0, **extras):
        f_gap, dist = self.metrics(x)
        trace.record(step, grads, proxes, bits, f_gap, dist, **extras)
        if self.keep_iterates:
            trace.iterates.append(np.array(x, copy=True))
        trace.x = np.array(x, copy=True)


class NumericalFailure(FloatingPointError):
    """A solver produced non-finite iterates or detected divergence."""
