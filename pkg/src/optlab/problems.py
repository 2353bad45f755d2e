"""Datasets, finite-sum objectives and reference solutions.

An objective has the form

    f(x) = (1/mass) * sum_i f_i(x),

where ``mass`` defaults to the number of components ``n``. A different
``mass`` only shows up after importance resampling, where copies of
``f_i / n_i`` are added but the objective itself must not change.

Components are stored as weighted "atoms" so that shards and resampled
problems can be carved out of a parent objective without copying the
closed-form gradient code.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import RngStream

_LOG_FLOOR = np.log(1e-300)


# ---------------------------------------------------------------------------
# datasets


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input. ``lineno`` is 1-based."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    """Sparse labeled samples.

    ``rows[i]`` is a pair ``(indices, values)`` of numpy arrays with
    strictly increasing 0-based indices.
    """

    rows: tuple
    labels: np.ndarray
    n_samples: int
    n_features: int

    def __post_init__(self):
        if len(self.rows) != self.n_samples or len(self.labels) != self.n_samples:
            raise ValueError("n_samples must equal the number of rows and labels")
        for idx, val in self.rows:
            if len(idx) != len(val):
                raise ValueError("indices and values differ in length")
            if len(idx) and (np.any(np.diff(idx) <= 0) or idx[-1] >= self.n_features or idx[0] < 0):
                raise ValueError("row indices must be strictly increasing and < n_features")

    def to_dense(self):
        A = np.zeros((self.n_samples, self.n_features))
        for i, (idx, val) in enumerate(self.rows):
            A[i, idx] = val
        return A

    @classmethod
    def from_dense(cls, A, labels):
        A = np.asarray(A, dtype=float)
        rows = []
        for a in A:
            nz = np.flatnonzero(a)
            rows.append((nz.astype(np.int64), a[nz].copy()))
        return cls(tuple(rows), np.asarray(labels, dtype=float), A.shape[0], A.shape[1])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.n_samples, self.n_features) != (other.n_samples, other.n_features):
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        return all(np.array_equal(i1, i2) and np.array_equal(v1, v2)
                   for (i1, v1), (i2, v2) in zip(self.rows, other.rows))

    __hash__ = None


def _remap_labels(labels):
    if len(labels) == 0:
        return labels
    present = set(np.unique(labels).tolist())
    if present <= {-1.0, 1.0}:
        return (labels > 0).astype(float)
    if present <= {1.0, 2.0}:
        return (labels == 2.0).astype(float)
    return labels


def parse_libsvm(data):
    """Parse LIBSVM text (bytes or str) into a :class:`Dataset`.

    Lines look like ``label idx:val idx:val ...`` with 1-based, strictly
    increasing indices. Blank lines and ``#`` comments are skipped; LF and
    CRLF endings are both accepted. Labels in {-1,+1} or {1,2} are mapped
    to {0,1}.
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("ascii")
    rows, labels = [], []
    n_features = 0
    for lineno, line in enumerate(data.split("\n"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmParseError(lineno, f"non-numeric label {tokens[0]!r}") from None
        idx, val = [], []
        for tok in tokens[1:]:
            key, sep, value = tok.partition(":")
            if not sep or not key or not value:
                raise LibsvmParseError(lineno, f"malformed pair {tok!r}")
            try:
                j = int(key)
                v = float(value)
            except ValueError:
                raise LibsvmParseError(lineno, f"non-numeric token {tok!r}") from None
            if j < 1:
                raise LibsvmParseError(lineno, f"index {j} is not 1-based")
            if idx and j - 1 <= idx[-1]:
                raise LibsvmParseError(lineno, f"index {j} is not increasing")
            idx.append(j - 1)
            val.append(v)
        if idx:
            n_features = max(n_features, idx[-1] + 1)
        rows.append((np.array(idx, dtype=np.int64), np.array(val, dtype=float)))
    labels = _remap_labels(np.array(labels, dtype=float))
    return Dataset(tuple(rows), labels, len(rows), n_features)


def serialize_libsvm(ds):
    """Render a dataset as LIBSVM bytes (LF endings, shortest exact floats)."""
    lines = []
    for (idx, val), b in zip(ds.rows, ds.labels):
        parts = [repr(float(b))]
        parts += [f"{j + 1}:{float(v)!r}" for j, v in zip(idx, val)]
        lines.append(" ".join(parts) + "\n")
    return "".join(lines).encode("ascii")


# ---------------------------------------------------------------------------
# linear algebra helpers


def power_iteration(apply, adjoint, dim, rtol=1e-10, max_iter=1000, seed=0):
    """Largest singular value of a linear map via power iteration on ``L* L``.

    Returns 0 for the zero operator. The start vector is drawn from a
    fixed seeded stream, so the result is deterministic.
    """
    if dim == 0:
        return 0.0
    v = RngStream(seed, "power_iteration").normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = adjoint(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        # Rayleigh quotient of L*L at the unit vector v
        new = float(v @ w)
        v = w / nw
        if est > 0 and abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return float(np.sqrt(max(est, 0.0)))


def matrix_norm(A, **kw):
    """Spectral norm ``||A||`` of a dense matrix via :func:`power_iteration`."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if A.shape[0] < A.shape[1]:
        A = A.T
    return power_iteration(lambda v: A @ v, lambda u: A.T @ u, A.shape[1], **kw)


# ---------------------------------------------------------------------------
# objectives


class FiniteSumObjective:
    """Base class for ``f = (1/mass) * sum_i w_i * atom_{a_i}``.

    Subclasses provide the atom evaluators (``_atom_value``,
    ``_atom_grad``, ``_atom_grads``) and the per-atom constants.

    Attributes
    ----------
    n : int
        Number of components.
    dim : int
        Dimension ``d`` of the variable.
    kind : str
        One of ``logistic_l2``, ``least_squares_l2``, ``quadratic_distance``,
        ``custom``.
    L_i : ndarray
        Smoothness constant of each component.
    L : float
        Smoothness constant of ``f``.
    mu : float
        Strong-convexity modulus shared by every component.
    mass : float
        Normaliser of the sum (defaults to ``n``).
    """

    kind = "custom"

    def __init__(self, atoms=None, weights=None, mass=None):
        n_atoms = self._n_atoms()
        self.atoms = np.arange(n_atoms) if atoms is None else np.asarray(atoms, dtype=np.int64)
        self.n = len(self.atoms)
        self.weights = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("component weights must be positive")
        self.mass = float(self.n if mass is None else mass)
        self._unit = bool(np.all(self.weights == 1.0))
        self.L_i = self.weights * self._atom_smoothness()[self.atoms]
        self.mu = float(np.min(self.weights * self._atom_modulus()[self.atoms])) if self.n else 0.0
        self.L = self._aggregate_smoothness()

    # -- to be provided by subclasses
    def _n_atoms(self):
        raise NotImplementedError

    def _atom_value(self, j, x):
        raise NotImplementedError

    def _atom_grad(self, j, x):
        raise NotImplementedError

    def _atom_grads(self, js, x):
        return np.array([self._atom_grad(j, x) for j in js])

    def _atom_values(self, js, x):
        return np.array([self._atom_value(j, x) for j in js])

    def _atom_smoothness(self):
        raise NotImplementedError

    def _atom_modulus(self):
        raise NotImplementedError

    def _aggregate_smoothness(self):
        raise NotImplementedError

    def _rebuild(self, atoms, weights, mass):
        raise NotImplementedError

    # -- public API
    def component_value(self, i, x):
        return self.weights[i] * self._atom_value(self.atoms[i], x)

    def component_grad(self, i, x):
        g = self._atom_grad(self.atoms[i], x)
        return g if self._unit else self.weights[i] * g

    def component_grads(self, idx, x):
        """Stacked gradients of the components listed in ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        G = self._atom_grads(self.atoms[idx], x)
        return G if self._unit else self.weights[idx, None] * G

    def component_values(self, idx, x):
        idx = np.asarray(idx, dtype=np.int64)
        return self.weights[idx] * self._atom_values(self.atoms[idx], x)

    def all_grads(self, x):
        return self.component_grads(np.arange(self.n), x)

    def value(self, x):
        return float(np.sum(self.component_values(np.arange(self.n), x)) / self.mass)

    def grad(self, x):
        return self.all_grads(x).sum(axis=0) / self.mass

    __call__ = value

    def subset(self, idx, weights=None, mass=None):
        """Objective built from the components ``idx`` (optionally reweighted).

        By default the new objective is the plain average of the selected
        components.
        """
        idx = np.asarray(idx, dtype=np.int64)
        w = self.weights[idx] if weights is None else self.weights[idx] * np.asarray(weights, float)
        return self._rebuild(self.atoms[idx], w, len(idx) if mass is None else mass)

    @property
    def dim(self):
        return self._dim


class LinearModelObjective(FiniteSumObjective):
    """Generalized linear model ``f_i(x) = loss(a_i^T x, b_i) + lam/2 ||x||^2``.

    ``loss`` is ``"logistic"`` (labels in {0,1}) or ``"squares"``
    (``1/2 (a^T x - b)^2``).
    """

    def __init__(self, A, b, lam=0.0, loss="logistic", atoms=None, weights=None, mass=None):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.lam = float(lam)
        self.loss = loss
        if loss == "logistic":
            if not np.all((self.b == 0) | (self.b == 1)):
                raise ValueError("logistic labels must lie in {0, 1}")
            self.kind = "logistic_l2"
            self._curv = 0.25
        elif loss == "squares":
            self.kind = "least_squares_l2"
            self._curv = 1.0
        else:
            raise ValueError(f"unknown loss {loss!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        self._dim = self.A.shape[1]
        self._row_sq = np.einsum("ij,ij->i", self.A, self.A)
        super().__init__(atoms, weights, mass)

    def _n_atoms(self):
        return self.A.shape[0]

    def _rebuild(self, atoms, weights, mass):
        return LinearModelObjective(self.A, self.b, self.lam, self.loss, atoms, weights, mass)

    def _dloss(self, t, b):
        if self.loss == "logistic":
            return expit(t) - b
        return t - b

    def _loss(self, t, b):
        if self.loss == "logistic":
            log_h = np.maximum(-np.logaddexp(0.0, -t), _LOG_FLOOR)
            log_1mh = np.maximum(-np.logaddexp(0.0, t), _LOG_FLOOR)
            return -(b * log_h + (1 - b) * log_1mh)
        return 0.5 * (t - b) ** 2

    def _atom_value(self, j, x):
        return float(self._loss(self.A[j] @ x, self.b[j]) + 0.5 * self.lam * (x @ x))

    def _atom_values(self, js, x):
        return self._loss(self.A[js] @ x, self.b[js]) + 0.5 * self.lam * (x @ x)

    def _atom_grad(self, j, x):
        a = self.A[j]
        return self._dloss(a @ x, self.b[j]) * a + self.lam * x

    def _atom_grads(self, js, x):
        Aj = self.A[js]
        return self._dloss(Aj @ x, self.b[js])[:, None] * Aj + self.lam * x

    def _atom_smoothness(self):
        return self._curv * self._row_sq + self.lam

    def _atom_modulus(self):
        return np.full(self.A.shape[0], self.lam)

    def _aggregate_smoothness(self):
        if self.n == 0:
            return 0.0
        Aw = self.A[self.atoms] * np.sqrt(self.weights)[:, None]
        return float(self._curv * matrix_norm(Aw) ** 2 / self.mass
                     + self.lam * self.weights.sum() / self.mass)


class QuadraticObjective(FiniteSumObjective):
    """Components ``f_i(x) = 1/2 (x - c_i)^T H_i (x - c_i)`` with PSD ``H_i``."""

    def __init__(self, H, centers, atoms=None, weights=None, mass=None, kind="custom"):
        self.H = np.asarray(H, dtype=float)
        self.centers = np.asarray(centers, dtype=float)
        if self.H.ndim != 3 or self.centers.shape != self.H.shape[:2]:
            raise ValueError("H must be (n, d, d) and centers (n, d)")
        self.kind = kind
        self._dim = self.H.shape[1]
        eig = np.linalg.eigvalsh(self.H) if len(self.H) else np.zeros((0, self._dim))
        self._eig_max = eig[:, -1] if len(eig) else np.zeros(0)
        self._eig_min = np.maximum(eig[:, 0], 0.0) if len(eig) else np.zeros(0)
        super().__init__(atoms, weights, mass)

    def _n_atoms(self):
        return self.H.shape[0]

    def _rebuild(self, atoms, weights, mass):
        return QuadraticObjective(self.H, self.centers, atoms, weights, mass, kind=self.kind)

    def _atom_value(self, j, x):
        r = x - self.centers[j]
        return 0.5 * float(r @ self.H[j] @ r)

    def _atom_grad(self, j, x):
        return self.H[j] @ (x - self.centers[j])

    def _atom_grads(self, js, x):
        R = x - self.centers[js]
        return np.einsum("kij,kj->ki", self.H[js], R)

    def _atom_smoothness(self):
        return self._eig_max

    def _atom_modulus(self):
        return self._eig_min

    def _aggregate_smoothness(self):
        if self.n == 0:
            return 0.0
        Hs = np.einsum("k,kij->ij", self.weights, self.H[self.atoms]) / self.mass
        return float(np.linalg.eigvalsh(Hs)[-1])

    def minimizer(self):
        """Exact minimizer of ``f`` (least-norm if singular)."""
        Hw = self.weights[:, None, None] * self.H[self.atoms]
        lhs = Hw.sum(axis=0)
        rhs = np.einsum("kij,kj->i", Hw, self.centers[self.atoms])
        return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


class LinearComponentsObjective(FiniteSumObjective):
    """Linear components ``f_i(x) = <c_i, x>``."""

    def __init__(self, C, atoms=None, weights=None, mass=None):
        self.C = np.asarray(C, dtype=float)
        self._dim = self.C.shape[1]
        super().__init__(atoms, weights, mass)

    def _n_atoms(self):
        return self.C.shape[0]

    def _rebuild(self, atoms, weights, mass):
        return LinearComponentsObjective(self.C, atoms, weights, mass)

    def _atom_value(self, j, x):
        return float(self.C[j] @ x)

    def _atom_grad(self, j, x):
        return self.C[j].copy()

    def _atom_grads(self, js, x):
        return self.C[js].copy()

    def _atom_smoothness(self):
        return np.zeros(self.C.shape[0])

    def _atom_modulus(self):
        return np.zeros(self.C.shape[0])

    def _aggregate_smoothness(self):
        return 0.0


class ScalarObjective(FiniteSumObjective):
    """Single-component objective from user callables (``n = 1``).

    ``L`` may be ``inf`` when no global smoothness constant exists, e.g.
    ``x**4 / 4``.
    """

    def __init__(self, value, grad, dim, L=np.inf, mu=0.0):
        self._value, self._grad = value, grad
        self._dim = dim
        self._L, self._mu = float(L), float(mu)
        super().__init__()

    def _n_atoms(self):
        return 1

    def _atom_value(self, j, x):
        return float(self._value(x))

    def _atom_grad(self, j, x):
        return np.asarray(self._grad(x), dtype=float)

    def _atom_smoothness(self):
        return np.array([self._L])

    def _atom_modulus(self):
        return np.array([self._mu])

    def _aggregate_smoothness(self):
        return self._L


# ---------------------------------------------------------------------------
# constructors


def make_logistic(ds, lambda2=0.0):
    """Regularized logistic regression on a dataset with labels in {0,1}.

    ``L_i = ||a_i||^2/4 + lambda2``, ``L = ||A||^2/(4n) + lambda2`` and
    ``mu = lambda2``.
    """
    A = ds.to_dense() if isinstance(ds, Dataset) else ds[0]
    b = ds.labels if isinstance(ds, Dataset) else ds[1]
    return LinearModelObjective(A, b, lambda2, loss="logistic")


def make_least_squares(A, b, lambda2=0.0):
    """``f_i(x) = 1/2 (a_i^T x - b_i)^2 + lambda2/2 ||x||^2``."""
    return LinearModelObjective(A, b, lambda2, loss="squares")


def make_quadratic_distance(x0):
    """``f(x) = 1/2 ||x - x0||^2`` as a one-component objective."""
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    return QuadraticObjective(np.eye(d)[None], x0[None], kind="quadratic_distance")


def make_linear_components(C):
    return LinearComponentsObjective(C)


def gaussian_system(d, rng):
    """Random positive definite system ``W x* = b``.

    ``W = M M^T + 1e-2 I`` with ``M`` iid normal of standard deviation
    ``1/sqrt(d)``; ``x*`` is standard normal.
    """
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng), "gaussian_system")
    M = rng.normal((d, d), scale=1.0 / np.sqrt(d))
    W = M @ M.T + 1e-2 * np.eye(d)
    W = 0.5 * (W + W.T)
    x_star = rng.normal(d)
    return W, W @ x_star, x_star


def low_rank_system(m, d, rank, rng, cond=3.0):
    """Consistent ``A x = b`` with ``A`` of shape ``(m, d)`` and the given rank.

    The nonzero singular values are spread evenly on ``[1, cond]`` so that
    the smallest positive eigenvalue of ``A^T A`` is 1 by design. Returns
    ``(A, b, x_min)`` where ``x_min`` is the least-norm solution.
    """
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng), "low_rank_system")
    if not 1 <= rank <= min(m, d):
        raise ValueError("need 1 <= rank <= min(m, d)")
    U = np.linalg.qr(rng.normal((m, rank)))[0]
    V = np.linalg.qr(rng.normal((d, rank)))[0]
    A = (U * np.linspace(1.0, cond, rank)) @ V.T
    b = A @ rng.normal(d)
    return A, b, np.linalg.lstsq(A, b, rcond=None)[0]


def synthetic_classification(n, d, rng, sort_labels=False, separation=1.0):
    """Two Gaussian blobs with labels in {0,1}; handy for heterogeneity demos."""
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng), "synthetic_classification")
    labels = (rng.uniform(n) < 0.5).astype(float)
    if sort_labels:
        labels = np.sort(labels)
    shift = separation * (2 * labels - 1)[:, None] * np.ones(d) / np.sqrt(d)
    A = rng.normal((n, d)) + shift
    return Dataset.from_dense(A, labels)


# ---------------------------------------------------------------------------
# reference solver and diagnostics


class ReferenceSolverError(RuntimeError):
    pass


def reference_solution(problem, psi=None, tol=1e-12, max_iter=200_000, x0=None):
    """High-accuracy minimizer of ``f + psi`` by accelerated proximal gradient.

    Uses stepsize ``1/L`` with function-value-free adaptive restart and
    stops when ``||x^{k+1} - x^k|| <= tol * max(1, ||x^k||)``.

    Returns
    -------
    x_star : ndarray
    f_star : float
        ``f(x_star) + psi(x_star)``.

    Raises
    ------
    ReferenceSolverError
        When the iteration cap is reached; the message reports the last
        residual.
    """
    from .prox import ProxTerm

    psi = ProxTerm.zero() if psi is None else psi
    L = problem.L
    if not np.isfinite(L) or L < 0:
        raise ReferenceSolverError("reference solver needs a finite smoothness constant")
    # linear f: any positive step is admissible
    step = 1.0 / L if L > 0 else 1.0
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    y, t = x.copy(), 1.0
    res = np.inf
    for _ in range(max_iter):
        x_new = psi.prox(step, y - step * problem.grad(y))
        dx = x_new - x
        res = np.linalg.norm(dx)
        if res <= tol * max(1.0, np.linalg.norm(x)):
            x = x_new
            return x, problem.value(x) + psi.value(x)
        # restart momentum when it points uphill
        if (y - x_new) @ dx > 0:
            t = 1.0
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * dx
        x, t = x_new, t_new
    raise ReferenceSolverError(f"no convergence in {max_iter} iterations; last residual {res:.3e}")


def sigma_star(problem, x_star):
    """Population variance ``(1/n) sum_i ||grad f_i(x*) - grad f(x*)||^2``."""
    G = problem.all_grads(np.asarray(x_star, dtype=float))
    g = G.sum(axis=0) / problem.mass
    return float(np.mean(np.sum((G - g) ** 2, axis=1)))


def bregman(problem, x, y):
    """``D_f(x, y) = f(x) - f(y) - <grad f(y), x - y>``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return problem.value(x) - problem.value(y) - float(problem.grad(y) @ (x - y))


def component_bregman(problem, i, x, y):
    """Bregman divergence of the single component ``f_i``."""
    return (problem.component_value(i, x) - problem.component_value(i, y)
            - float(problem.component_grad(i, y) @ (x - y)))
