"""Numerical evaluation of weighted generating-function systems.

A grammar is read as the functional system F = Phi(F, z, w).  Evaluation
inside the convergence domain uses either plain fixed-point iteration or a
Newton iteration with the exact Jacobian of Phi.  Right-linear grammars
(automata) get a dedicated backend: the system is affine, so evaluation is a
sparse solve and the dominant singularity comes from the Perron root of the
weighted transition matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DivergentError,
    IterationLimitError,
    NotWellFoundedError,
    SingularJacobianError,
)
from .grammar import (
    Atom,
    Epsilon,
    NonTerm,
    Product,
    Seq,
    Union,
    right_linear_shape,
    validate,
)

_BIG = 1e18
DEFAULT_CEILING = 1e12


@dataclass(frozen=True)
class EvalPoint:
    z: float
    w: tuple

    def __post_init__(self):
        if self.z < 0:
            raise ValueError("z must be nonnegative")
        if any(x <= 0 for x in self.w):
            raise ValueError("weights must be strictly positive")


def as_point(z, w):
    return EvalPoint(float(z), tuple(float(x) for x in w))


@dataclass(frozen=True)
class EvalResult:
    values: np.ndarray
    converged: bool
    iterations: int


@dataclass(frozen=True)
class SingularityEstimate:
    rho: float
    kind: str  # "pole" | "square-root" | "unknown"
    exponent_hint: float


@dataclass(frozen=True)
class ExpectationVector:
    size_mean: float
    letter_means: np.ndarray


# --------------------------------------------------------------------------
# backends


class _GenericBackend:
    linear = False

    def __init__(self, g):
        self.g = g
        self.m = g.size
        self.k = g.k

    def phi(self, F, z, w):
        out = np.empty(self.m)
        for i, rule in enumerate(self.g.rules):
            out[i] = self._value(rule, F, z, w)
        return out

    def _value(self, e, F, z, w):
        if isinstance(e, Epsilon):
            return 1.0
        if isinstance(e, Atom):
            return w[e.letter] * z
        if isinstance(e, NonTerm):
            return F[e.index]
        if isinstance(e, Union):
            return sum(self._value(p, F, z, w) for p in e.parts)
        if isinstance(e, Product):
            v = 1.0
            for p in e.parts:
                v *= self._value(p, F, z, w)
            return v
        if isinstance(e, Seq):
            a = self._value(e.arg, F, z, w)
            if a >= 1.0 - 1e-15:
                return _BIG
            return 1.0 / (1.0 - a)
        raise TypeError(e)

    # gradient layout: [dF_0..dF_{m-1}, dz, dw_0..dw_{k-1}]
    def _grad(self, e, F, z, w):
        m, k = self.m, self.k
        if isinstance(e, Epsilon):
            return 1.0, np.zeros(m + 1 + k)
        if isinstance(e, Atom):
            grad = np.zeros(m + 1 + k)
            grad[m] = w[e.letter]
            grad[m + 1 + e.letter] = z
            return w[e.letter] * z, grad
        if isinstance(e, NonTerm):
            grad = np.zeros(m + 1 + k)
            grad[e.index] = 1.0
            return F[e.index], grad
        if isinstance(e, Union):
            value = 0.0
            grad = np.zeros(m + 1 + k)
            for p in e.parts:
                v, g_ = self._grad(p, F, z, w)
                value += v
                grad += g_
            return value, grad
        if isinstance(e, Product):
            parts = [self._grad(p, F, z, w) for p in e.parts]
            n = len(parts)
            prefix = [1.0] * (n + 1)
            for i in range(n):
                prefix[i + 1] = prefix[i] * parts[i][0]
            suffix = [1.0] * (n + 1)
            for i in range(n - 1, -1, -1):
                suffix[i] = suffix[i + 1] * parts[i][0]
            grad = np.zeros(m + 1 + k)
            for i in range(n):
                grad += parts[i][1] * (prefix[i] * suffix[i + 1])
            return prefix[n], grad
        if isinstance(e, Seq):
            a, ga = self._grad(e.arg, F, z, w)
            if a >= 1.0 - 1e-15:
                return _BIG, np.full(m + 1 + k, _BIG)
            c = 1.0 / (1.0 - a)
            return c, ga * (c * c)
        raise TypeError(e)

    def phi_with_grads(self, F, z, w):
        m, k = self.m, self.k
        vals = np.empty(m)
        jac_f = np.zeros((m, m))
        d_z = np.zeros(m)
        d_w = np.zeros((m, k))
        for i, rule in enumerate(self.g.rules):
            v, grad = self._grad(rule, F, z, w)
            vals[i] = v
            jac_f[i] = grad[:m]
            d_z[i] = grad[m]
            d_w[i] = grad[m + 1:]
        return vals, jac_f, d_z, d_w


class _LinearBackend:
    """Right-linear systems: Phi(F, z, w) = z M(w) F + c(z, w)."""

    linear = True

    def __init__(self, g, shape):
        self.g = g
        self.m = m = g.size
        self.k = k = g.k
        self.eps = np.array([float(e) for e in shape.epsilon])
        term = np.zeros((m, k))
        for i, letters in enumerate(shape.terminal):
            for letter in letters:
                term[i, letter] += 1.0
        self.term = term
        mats = []
        for letter in range(k):
            rows, cols, vals = [], [], []
            for i, trans in enumerate(shape.transitions):
                for l, j in trans:
                    if l == letter:
                        rows.append(i)
                        cols.append(j)
                        vals.append(1.0)
            mats.append(sp.csr_matrix(
                (vals, (rows, cols)), shape=(m, m)))
        self.trans_mats = mats
        self._pf_cache = {}

    def matrix(self, w):
        M = self.trans_mats[0] * w[0]
        for l in range(1, self.k):
            M = M + self.trans_mats[l] * w[l]
        return M.tocsr()

    def const(self, z, w):
        return self.eps + z * (self.term @ np.asarray(w))

    def pf_root(self, w):
        """Spectral radius of M(w) (the Perron root)."""
        key = tuple(w)
        hit = self._pf_cache.get(key)
        if hit is not None:
            return hit
        M = self.matrix(w)
        if self.m <= 400:
            lam = float(np.max(np.abs(np.linalg.eigvals(M.toarray()))))
        else:
            lam = None
            try:
                vals = spla.eigs(M, k=1, which="LM", maxiter=5000,
                                 tol=1e-13, return_eigenvectors=False)
                lam = float(np.abs(vals[0]))
            except Exception:
                lam = None
            if lam is None or not math.isfinite(lam):
                lam = _power_radius(M)
        if len(self._pf_cache) > 1024:
            self._pf_cache.clear()
        self._pf_cache[key] = lam
        return lam

    def phi(self, F, z, w):
        return z * (self.matrix(w) @ F) + self.const(z, w)


def _power_radius(M, iters=20000, tol=1e-14):
    # shift by I so the Perron root strictly dominates even for periodic
    # matrices
    m = M.shape[0]
    v = np.ones(m) / math.sqrt(m)
    lam = 0.0
    for _ in range(iters):
        u = M @ v + v
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        u /= norm
        new = float(u @ (M @ u + u))
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
        v = u
    return max(lam - 1.0, 0.0)


class GFSystem:
    """Evaluator bundle for the functional system of a grammar."""

    def __init__(self, g, check=True):
        if check:
            report = validate(g)
            if not report.well_founded:
                raise NotWellFoundedError("grammar is not well-founded")
        self.grammar = g
        shape = right_linear_shape(g)
        if shape is not None:
            self.backend = _LinearBackend(g, shape)
        else:
            self.backend = _GenericBackend(g)

    @property
    def is_linear(self):
        return self.backend.linear

    @property
    def size(self):
        return self.grammar.size

    @property
    def k(self):
        return self.grammar.k


# --------------------------------------------------------------------------
# evaluation


def eval_fixed_point(sys, p, tol=1e-10, max_iter=100000,
                     ceiling=DEFAULT_CEILING):
    """Iterate F <- Phi(F, z, w) from F = 0 until the sup-norm step <= tol."""
    p = as_point(p.z, p.w) if isinstance(p, EvalPoint) else as_point(*p)
    backend = sys.backend
    z, w = p.z, np.array(p.w)
    F = np.zeros(sys.size)
    if backend.linear:
        M = backend.matrix(w)
        c = backend.const(z, w)
        step = lambda F: z * (M @ F) + c
    else:
        step = lambda F: backend.phi(F, z, w)

    prev_diff = math.inf
    window_diff = math.inf
    for it in range(1, max_iter + 1):
        F2 = step(F)
        if not np.all(np.isfinite(F2)) or np.max(F2) > ceiling:
            raise DivergentError(
                f"fixed-point iterate exceeded {ceiling:g} at iteration {it}")
        diff = float(np.max(np.abs(F2 - F)))
        F = F2
        if diff <= tol:
            return EvalResult(values=F, converged=True, iterations=it)
        if it % 200 == 0:
            if diff > window_diff:
                raise DivergentError(
                    "fixed-point residual is increasing; point is outside "
                    "the convergence domain")
            window_diff = diff
        prev_diff = diff
    raise IterationLimitError(
        f"no convergence within {max_iter} iterations (residual {prev_diff:g})")


def eval_newton(sys, p, tol=1e-10, max_iter=200, ceiling=DEFAULT_CEILING):
    """Newton iteration F <- F + (I - dPhi/dF)^-1 (Phi(F) - F) from F = 0."""
    p = as_point(p.z, p.w) if isinstance(p, EvalPoint) else as_point(*p)
    backend = sys.backend
    z, w = p.z, np.array(p.w)
    m = sys.size

    if backend.linear:
        lam = backend.pf_root(w)
        if z * lam >= 1.0 - 1e-14:
            raise DivergentError(
                f"z = {z:g} is not below the dominant singularity "
                f"{1.0 / lam if lam > 0 else math.inf:g}")
        M = backend.matrix(w)
        A = sp.eye(m, format="csc") - z * M.tocsc()
        try:
            F = spla.spsolve(A, backend.const(z, w))
        except RuntimeError as exc:
            raise SingularJacobianError(str(exc)) from exc
        F = np.atleast_1d(F)
        return EvalResult(values=F, converged=True, iterations=1)

    F = np.zeros(m)
    identity = np.eye(m)
    prev_res = math.inf
    for it in range(1, max_iter + 1):
        vals, jac_f, _, _ = backend.phi_with_grads(F, z, w)
        residual = vals - F
        res_norm = float(np.max(np.abs(residual)))
        if not np.all(np.isfinite(vals)) or np.max(np.abs(F)) > ceiling:
            raise DivergentError("Newton iterate exceeded the value ceiling")
        try:
            delta = np.linalg.solve(identity - jac_f, residual)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(str(exc)) from exc
        F = F + delta
        step = float(np.max(np.abs(delta)))
        if step <= tol:
            if np.min(F) < -1e-9 * (1.0 + float(np.max(np.abs(F)))):
                raise DivergentError(
                    "Newton converged to a negative, non-combinatorial branch")
            if not np.all(np.isfinite(F)):
                raise DivergentError("Newton produced non-finite values")
            return EvalResult(values=F, converged=True, iterations=it)
        if res_norm > 4.0 * prev_res and it > 8:
            raise DivergentError("Newton residual is diverging")
        prev_res = max(res_norm, 1e-300)
    raise DivergentError(
        f"Newton did not converge within {max_iter} iterations")


def value_at(sys, p, tol=1e-12):
    """Weighted generating-function value at the axiom."""
    res = eval_newton(sys, p, tol=tol)
    return float(res.values[sys.grammar.axiom])


# --------------------------------------------------------------------------
# expectations


def expectations(sys, p, tol=1e-12):
    """Expected size and per-letter counts under the Boltzmann distribution.

    Derivatives of the system solve (I - dPhi/dF) F' = dPhi/dparam at the
    converged values.
    """
    p = as_point(p.z, p.w) if isinstance(p, EvalPoint) else as_point(*p)
    res = eval_newton(sys, p, tol=tol)
    F = res.values
    backend = sys.backend
    z, w = p.z, np.array(p.w)
    ax = sys.grammar.axiom
    if F[ax] <= 0.0:
        raise DivergentError("axiom value vanishes; no expectations")

    if backend.linear:
        m = sys.size
        M = backend.matrix(w)
        A = sp.eye(m, format="csc") - z * M.tocsc()
        lu = spla.splu(A)
        d_z = M @ F + backend.term @ w
        f_z = lu.solve(d_z)
        letter_means = np.empty(sys.k)
        for l in range(sys.k):
            d_wl = z * (backend.trans_mats[l] @ F) + z * backend.term[:, l]
            f_wl = lu.solve(d_wl)
            letter_means[l] = w[l] * f_wl[ax] / F[ax]
        size_mean = z * f_z[ax] / F[ax]
    else:
        vals, jac_f, d_z, d_w = backend.phi_with_grads(F, z, w)
        A = np.eye(sys.size) - jac_f
        try:
            f_z = np.linalg.solve(A, d_z)
            f_w = np.linalg.solve(A, d_w)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(str(exc)) from exc
        size_mean = z * f_z[ax] / F[ax]
        letter_means = w * f_w[ax] / F[ax]

    return ExpectationVector(size_mean=float(size_mean),
                             letter_means=np.asarray(letter_means, float))


# --------------------------------------------------------------------------
# dominant singularity


def find_singularity(sys, w, tol=1e-8):
    """Dominant singularity of the weighted system along the positive axis.

    Right-linear systems report the reciprocal of the Perron root of the
    weighted transition matrix.  Other systems bracket the convergence
    boundary of the Newton evaluator by bisection and classify the growth of
    the axiom value on approach: unbounded growth is a pole, a bounded limit
    a square-root branch point.  Polynomial (entire) systems report
    rho = +inf with kind "unknown".
    """
    w = tuple(float(x) for x in w)
    backend = sys.backend

    if backend.linear:
        lam = backend.pf_root(w)
        if lam <= 1e-300:
            return SingularityEstimate(rho=math.inf, kind="unknown",
                                       exponent_hint=math.nan)
        return SingularityEstimate(rho=1.0 / lam, kind="pole",
                                   exponent_hint=1.0)

    def converges(z):
        try:
            eval_newton(sys, as_point(z, w), tol=1e-10, max_iter=200)
            return True
        except (DivergentError, IterationLimitError, SingularJacobianError):
            return False

    lo, hi = 0.0, 1.0
    if converges(1.0):
        z = 1.0
        while True:
            z *= 2.0
            if z > 1e9:
                return SingularityEstimate(rho=math.inf, kind="unknown",
                                           exponent_hint=math.nan)
            if not converges(z):
                lo, hi = z / 2.0, z
                break
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if converges(mid):
            lo = mid
        else:
            hi = mid

    rho = 0.5 * (lo + hi)

    # growth probe toward the certified-convergent endpoint
    js = list(range(6, 19))
    logs = []
    for j in js:
        z = lo * (1.0 - 2.0 ** (-j))
        try:
            v = value_at(sys, as_point(z, w), tol=1e-11)
        except (DivergentError, IterationLimitError, SingularJacobianError):
            continue
        if v > 0:
            logs.append((-j * math.log(2.0), math.log(v)))
    if len(logs) >= 4:
        xs = np.array([a for a, _ in logs[-8:]])
        ys = np.array([b for _, b in logs[-8:]])
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = 0.0
    if slope <= -0.5:
        return SingularityEstimate(rho=rho, kind="pole", exponent_hint=-slope)
    return SingularityEstimate(rho=rho, kind="square-root",
                               exponent_hint=-0.5)
