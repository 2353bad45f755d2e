"""Exact proximal operators.

``prox(term, gamma, x)`` returns ``argmin_u gamma * term(u) + 1/2 ||u - x||^2``.
Terms are built through the :class:`ProxTerm` constructors, e.g.
``ProxTerm.l1(0.1)`` or ``ProxTerm.hyperplane(a, b)``.

Indicator-type terms (hyperplane, slab, consensus) evaluate to ``inf``
outside their set, with a small feasibility tolerance.
"""
import numpy as np

_FEAS_TOL = 1e-9


class RankDeficientError(ValueError):
    """Linear composition with a rank-deficient matrix."""


def soft_threshold(x, t):
    # ties at |x| == t land on 0
    return np.maximum(0, x - t) - np.maximum(0, -x - t)


def _pw_linear_prox(z, lam, lo, hi):
    """prox of lam * phi with phi(z) = lo*z for z <= 0 and hi*z for z > 0."""
    return np.where(z <= lam * lo, z - lam * lo, np.where(z <= lam * hi, 0.0, z - lam * hi))


def _bisect_prox(z, lam, deriv, tol=1e-12, max_iter=200):
    """Solve ``u + lam * phi'(u) = z`` for a convex differentiable scalar phi."""
    z = float(z)
    # bracket: the root lies between z - lam*phi'(z) style bounds; expand until signs differ
    h = lambda u: u + lam * deriv(u) - z
    lo, hi = z - 1.0, z + 1.0
    while h(lo) > 0:
        lo = z - 2 * (z - lo)
    while h(hi) < 0:
        hi = z + 2 * (hi - z)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


class Phi:
    """Scalar convex function used inside ``linear_comp`` terms.

    Build with :meth:`piecewise_linear`, :meth:`abs`, :meth:`point` or
    :meth:`smooth`.
    """

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def piecewise_linear(cls, lo, hi):
        """``phi(z) = lo*z`` for ``z <= 0`` and ``hi*z`` for ``z > 0`` (needs lo <= hi)."""
        if lo > hi:
            raise ValueError("piecewise-linear phi is convex only when lo <= hi")
        return cls("piecewise_linear", lo=float(lo), hi=float(hi))

    @classmethod
    def abs(cls, lam=1.0):
        return cls.piecewise_linear(-lam, lam)

    @classmethod
    def point(cls, c=0.0):
        """Indicator of ``{c}``."""
        return cls("point", c=float(c))

    @classmethod
    def smooth(cls, value, deriv):
        """Differentiable convex phi given by its value and derivative."""
        return cls("smooth", value=value, deriv=deriv)

    def value(self, z):
        p = self.params
        if self.kind == "piecewise_linear":
            return np.where(z <= 0, p["lo"] * z, p["hi"] * z)
        if self.kind == "point":
            return np.where(np.abs(z - p["c"]) <= _FEAS_TOL * max(1.0, abs(p["c"])), 0.0, np.inf)
        return np.vectorize(p["value"])(z)

    def prox(self, lam, z):
        p = self.params
        if self.kind == "piecewise_linear":
            return _pw_linear_prox(z, lam, p["lo"], p["hi"])
        if self.kind == "point":
            return np.full_like(np.asarray(z, float), p["c"])
        return np.array([_bisect_prox(zi, lam, p["deriv"]) for zi in np.atleast_1d(z)]).reshape(np.shape(z))


class ProxTerm:
    """A non-smooth convex term with an exact proximal map.

    Attributes
    ----------
    kind : str
    params : dict
    mu : float
        Strong-convexity modulus.
    smoothness : float
        Lipschitz constant of the gradient, ``inf`` for non-smooth terms.
    """

    def __init__(self, kind, mu=0.0, smoothness=np.inf, **params):
        self.kind = kind
        self.params = params
        self.mu = float(mu)
        self.smoothness = float(smoothness)

    def __repr__(self):
        return f"ProxTerm({self.kind})"

    # -- constructors
    @classmethod
    def zero(cls):
        return cls("zero", smoothness=0.0)

    @classmethod
    def l1(cls, lam):
        return cls("l1", lam=float(lam))

    @classmethod
    def sqnorm(cls, lam):
        """``lam/2 ||x||^2``."""
        return cls("sqnorm", mu=lam, smoothness=lam, lam=float(lam))

    @classmethod
    def sqdist(cls, c, lam=1.0):
        """``lam/2 ||x - c||^2``."""
        return cls("sqdist", mu=lam, smoothness=lam, c=np.asarray(c, float), lam=float(lam))

    @classmethod
    def elastic(cls, lam1, lam2):
        """``lam1 ||x||_1 + lam2/2 ||x||^2``."""
        return cls("elastic", mu=lam2, lam1=float(lam1), lam2=float(lam2))

    @classmethod
    def group_l2(cls, groups, lam=1.0):
        """``lam * sum_G ||x_G||`` over disjoint index groups.

        Overlapping groups have no closed-form prox as a single term; pass
        each group as its own term instead.
        """
        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        flat = np.concatenate(groups) if groups else np.zeros(0, np.int64)
        if len(np.unique(flat)) != len(flat):
            raise ValueError("overlapping groups: use one group_l2 term per group")
        return cls("group_l2", groups=groups, lam=float(lam))

    @classmethod
    def hinge(cls, a, b, lam=1.0):
        """``lam * max{0, 1 - b a^T x}``."""
        return cls("hinge", a=np.asarray(a, float), b=float(b), lam=float(lam))

    @classmethod
    def hyperplane(cls, a, b):
        """Indicator of ``{x : a^T x = b}``."""
        a = np.asarray(a, float)
        if not np.any(a):
            raise ValueError("hyperplane normal must be nonzero")
        return cls("hyperplane", a=a, b=float(b), a_sq=float(a @ a))

    @classmethod
    def point(cls, c):
        """Indicator of the single point ``{c}``."""
        return cls("point", c=np.asarray(c, float))

    @classmethod
    def slab(cls, w, lo, hi):
        """Indicator of ``{x : lo <= w^T x <= hi}``."""
        w = np.asarray(w, float)
        return cls("slab", w=w, lo=float(lo), hi=float(hi), w_sq=float(w @ w))

    @classmethod
    def box_dantzig(cls, A, b, lam, j):
        """Indicator of ``{x : |(A^T (b - A x))_j| <= lam}``, one Dantzig constraint."""
        A = np.asarray(A, float)
        w = A.T @ A[:, j]
        u = float(A[:, j] @ np.asarray(b, float))
        term = cls.slab(w, u - lam, u + lam)
        term.kind = "box_dantzig"
        term.params.update(j=int(j), lam=float(lam))
        return term

    @classmethod
    def consensus_plus_R(cls, M, inner=None):
        """``R(x_1)`` restricted to ``x_1 = ... = x_M`` on stacked vectors."""
        inner = cls.zero() if inner is None else inner
        return cls("consensus_plus_R", M=int(M), inner=inner)

    @classmethod
    def linear_comp(cls, A, phi):
        """``phi(A^T x)`` for a full-column-rank ``A`` (d x k).

        One column: any :class:`Phi`. Several columns: ``phi`` is applied
        coordinate-wise and ``A^T A`` must be diagonal, or ``phi`` is a
        point indicator (affine constraint).
        """
        A = np.asarray(A, float)
        if A.ndim == 1:
            A = A[:, None]
        G = A.T @ A
        if np.linalg.matrix_rank(A) < A.shape[1]:
            raise RankDeficientError(
                "linear_comp needs A with full column rank; for constraints "
                "A^T x = c use the hyperplane kind per row or an indicator term")
        diag = np.allclose(G, np.diag(np.diag(G)), rtol=0, atol=1e-14 * np.abs(G).max())
        if A.shape[1] > 1 and phi.kind != "point" and not diag:
            raise NotImplementedError("multi-column linear_comp needs diagonal A^T A or a point phi")
        return cls("linear_comp", A=A, phi=phi, G=G, G_inv=np.linalg.inv(G), diag=diag)

    # -- evaluation
    def value(self, x):
        x = np.asarray(x, float)
        p = self.params
        k = self.kind
        if k == "zero":
            return 0.0
        if k == "l1":
            return p["lam"] * float(np.abs(x).sum())
        if k == "sqnorm":
            return 0.5 * p["lam"] * float(x @ x)
        if k == "sqdist":
            r = x - p["c"]
            return 0.5 * p["lam"] * float(r @ r)
        if k == "elastic":
            return p["lam1"] * float(np.abs(x).sum()) + 0.5 * p["lam2"] * float(x @ x)
        if k == "group_l2":
            return p["lam"] * float(sum(np.linalg.norm(x[g]) for g in p["groups"]))
        if k == "hinge":
            return p["lam"] * max(0.0, 1.0 - p["b"] * float(p["a"] @ x))
        if k == "hyperplane":
            r = float(p["a"] @ x) - p["b"]
            return 0.0 if abs(r) <= _FEAS_TOL * max(1.0, abs(p["b"]), np.sqrt(p["a_sq"]) * np.linalg.norm(x)) else np.inf
        if k == "point":
            gap = np.max(np.abs(x - p["c"])) if x.size else 0.0
            return 0.0 if gap <= _FEAS_TOL * max(1.0, np.abs(p["c"]).max(initial=0.0)) else np.inf
        if k in ("slab", "box_dantzig"):
            s = float(p["w"] @ x)
            tol = _FEAS_TOL * max(1.0, np.sqrt(p["w_sq"]) * np.linalg.norm(x))
            return 0.0 if p["lo"] - tol <= s <= p["hi"] + tol else np.inf
        if k == "consensus_plus_R":
            X = x.reshape(p["M"], -1)
            if np.max(np.abs(X - X[0])) > _FEAS_TOL * max(1.0, np.abs(X).max()):
                return np.inf
            return p["inner"].value(X[0])
        if k == "linear_comp":
            return float(np.sum(p["phi"].value(p["A"].T @ x)))
        raise ValueError(f"unknown prox kind {k!r}")

    __call__ = value

    def prox(self, gamma, x):
        """Exact ``prox_{gamma * term}(x)``."""
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        x = np.asarray(x, float)
        p = self.params
        k = self.kind
        if k == "zero":
            return x.copy()
        if k == "l1":
            return soft_threshold(x, gamma * p["lam"])
        if k == "sqnorm":
            return x / (1 + gamma * p["lam"])
        if k == "sqdist":
            return (x + gamma * p["lam"] * p["c"]) / (1 + gamma * p["lam"])
        if k == "elastic":
            return soft_threshold(x, gamma * p["lam1"]) / (1 + gamma * p["lam2"])
        if k == "group_l2":
            out = x.copy()
            t = gamma * p["lam"]
            for g in p["groups"]:
                nrm = np.linalg.norm(x[g])
                out[g] = 0.0 if nrm <= t else (1 - t / nrm) * x[g]
            return out
        if k == "hinge":
            w = p["b"] * p["a"]
            w_sq = float(w @ w)
            if w_sq == 0:
                return x.copy()
            eta = gamma * p["lam"]
            return x + np.clip((1 - float(w @ x)) / w_sq, 0.0, eta) * w
        if k == "hyperplane":
            return x - (float(p["a"] @ x) - p["b"]) / p["a_sq"] * p["a"]
        if k == "point":
            return np.broadcast_to(p["c"], x.shape).copy()
        if k in ("slab", "box_dantzig"):
            s = float(p["w"] @ x)
            if p["w_sq"] == 0:
                return x.copy()
            return x + (np.clip(s, p["lo"], p["hi"]) - s) / p["w_sq"] * p["w"]
        if k == "consensus_plus_R":
            M = p["M"]
            X = x.reshape(M, -1)
            # projection onto the consensus set, then R with stepsize gamma/M
            u = p["inner"].prox(gamma / M, X.mean(axis=0))
            return np.tile(u, M).reshape(x.shape)
        if k == "linear_comp":
            A, phi = p["A"], p["phi"]
            s = A.T @ x
            if A.shape[1] == 1 or p["diag"]:
                # prox in the (A^T A)^{-1} metric separates: scale gamma by ||a_k||^2
                gk = np.diag(p["G"])
                z = np.array([phi.prox(gamma * gk[i], s[i]) for i in range(len(s))]).ravel()
                return x + A @ ((z - s) / gk)
            z = phi.prox(gamma, s)  # point indicator: z = c regardless of the metric
            return x + A @ (p["G_inv"] @ (z - s))
        raise ValueError(f"unknown prox kind {k!r}")


def prox(term, gamma, x):
    """Functional alias of :meth:`ProxTerm.prox`."""
    return term.prox(gamma, x)


def conjugate_prox(term, tau, y):
    """``prox_{tau * term^*}(y)`` through the Moreau identity."""
    y = np.asarray(y, float)
    return y - tau * term.prox(1.0 / tau, y / tau)


def prox_fixed_point_check(term, f, gamma, x_star):
    """Residual ``||x* - prox_{gamma term}(x* - gamma grad f(x*))||``."""
    x_star = np.asarray(x_star, float)
    return float(np.linalg.norm(x_star - term.prox(gamma, x_star - gamma * f.grad(x_star))))
