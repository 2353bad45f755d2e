"""Stochastic gradient estimators with a common ``next(x)`` interface.

Variants
--------
full_gd   exact gradient
sgd       minibatch with replacement
svrg      loopful SVRG, reference refreshed every ``loop`` calls (default 2n)
saga      table of the last gradient seen for every component
lsvrg     loopless SVRG, reference refreshed with probability ``prob`` (default 1/n)

Component gradients are rescaled by ``n / mass`` so that every estimator
is unbiased for ``grad f`` whatever the objective's normaliser.
"""
import numpy as np

from ..rng import as_stream


class GradEstimator:
    """Stateful gradient oracle for a finite-sum objective.

    Use the classmethod constructors. ``grads`` counts component gradient
    evaluations (a full gradient costs ``n``).
    """

    def __init__(self, variant, f, batch=1, rng=None, **params):
        self.variant = variant
        self.f = f
        self.batch = int(batch)
        self.rng = as_stream(rng, f"estimator/{variant}")
        self.params = params
        self.grads = 0
        self.calls = 0
        n = getattr(f, "n", 1)
        self._scale = n / getattr(f, "mass", n)
        self.ref = None
        self.ref_grad = None
        self.table = None
        self.table_avg = None

    # -- constructors
    @classmethod
    def full_gd(cls, f):
        return cls("full_gd", f)

    @classmethod
    def sgd(cls, f, batch=1, rng=None):
        return cls("sgd", f, batch, rng)

    @classmethod
    def svrg(cls, f, loop=None, batch=1, rng=None):
        return cls("svrg", f, batch, rng, loop=int(2 * f.n if loop is None else loop))

    @classmethod
    def saga(cls, f, rng=None, init_point=None):
        return cls("saga", f, 1, rng, init_point=init_point)

    @classmethod
    def lsvrg(cls, f, prob=None, batch=1, rng=None):
        return cls("lsvrg", f, batch, rng, prob=float(1.0 / f.n if prob is None else prob))

    # -- helpers
    def _full(self, x):
        self.grads += getattr(self.f, "n", 1)
        return self.f.grad(x)

    def _sample(self):
        return self.rng.integers(self.f.n, size=self.batch)

    def _comp(self, idx, x):
        self.grads += len(idx)
        return self.f.component_grads(idx, x).sum(axis=0) * (self._scale / len(idx))

    def _set_reference(self, x):
        self.ref = np.array(x, copy=True)
        self.ref_grad = self._full(self.ref)

    def next(self, x):
        """Gradient estimate at ``x``; advances the internal state."""
        v = getattr(self, "_next_" + self.variant)(x)
        self.calls += 1
        return v

    def _next_full_gd(self, x):
        return self._full(x)

    def _next_sgd(self, x):
        return self._comp(self._sample(), x)

    def _next_svrg(self, x):
        if self.calls % self.params["loop"] == 0:
            self._set_reference(x)
        idx = self._sample()
        return self._comp(idx, x) - self._comp(idx, self.ref) + self.ref_grad

    def _next_saga(self, x):
        f = self.f
        if self.table is None:
            start = x if self.params.get("init_point") is None else self.params["init_point"]
            self.table = f.all_grads(np.asarray(start, float)) * self._scale
            self.grads += f.n
            self.table_avg = self.table.mean(axis=0)
        i = int(self.rng.integers(f.n))
        gi = f.component_grad(i, x) * self._scale
        self.grads += 1
        v = gi - self.table[i] + self.table_avg
        self.table_avg = self.table_avg + (gi - self.table[i]) / f.n
        self.table[i] = gi
        return v

    def _next_lsvrg(self, x):
        if self.ref is None:
            self._set_reference(x)
        idx = self._sample()
        v = self._comp(idx, x) - self._comp(idx, self.ref) + self.ref_grad
        # coin flip decides whether the next reference point is the current x
        if self.rng.uniform() < self.params["prob"]:
            self._set_reference(x)
        return v


def estimator_next(est, f, x):
    """Functional form: returns ``(v, est)`` after one call."""
    if est.f is not f:
        raise ValueError("estimator was built for a different objective")
    return est.next(x), est


def make_estimator(spec, f, rng=None):
    """Build an estimator from a name or a dict such as ``{"variant": "svrg", "loop": 40}``."""
    if isinstance(spec, GradEstimator):
        return spec
    if isinstance(spec, str):
        spec = {"variant": spec}
    spec = dict(spec)
    variant = spec.pop("variant")
    if variant == "full_gd":
        return GradEstimator.full_gd(f)
    ctor = getattr(GradEstimator, variant, None)
    if ctor is None or variant.startswith("_"):
        raise ValueError(f"unknown estimator {variant!r}")
    return ctor(f, rng=rng, **spec)
