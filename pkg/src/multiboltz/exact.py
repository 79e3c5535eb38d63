"""Exact coefficient and occurrence-profile counting on grammars.

Everything here is deterministic dynamic programming on truncated series.
Arithmetic is exact (Python integers or fractions) whenever the weights
allow it, so the results can serve as a ground truth for the numerical
oracle and for distribution tests of the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import (
    NotWellFoundedError,
    ProfileMismatchError,
    TooManyWordsError,
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

DEFAULT_N_CEILING = 2000


def arithmetic_mode(weights):
    """'bigint' for integer weights, 'rational' for fractions, else 'float'."""
    if all(isinstance(w, int) and not isinstance(w, bool) for w in weights):
        return "bigint"
    if all(isinstance(w, (int, Fraction)) for w in weights):
        return "rational"
    return "float"


@dataclass(frozen=True)
class CoeffTable:
    """Per-nonterminal truncated coefficient arrays of the weighted series."""

    coeffs: tuple
    mode: str
    n_max: int
    axiom: int

    def axiom_coeffs(self):
        return self.coeffs[self.axiom]

    def coefficient(self, n, nonterminal=None):
        i = self.axiom if nonterminal is None else nonterminal
        return self.coeffs[i][n]


@dataclass(frozen=True)
class OccurrenceCount:
    n: int
    occ: tuple
    value: object


# --------------------------------------------------------------------------
# generic level-by-level series iteration
#
# Nodes of all rules are flattened into one postorder list; level n of every
# node is recomputed by sweeps until stable.  Well-foundedness makes the
# within-level dependency nilpotent, so at most (number of nonterminals + 1)
# sweeps are needed per level.


class _Nodes:
    def __init__(self, g):
        self.kind = []
        self.data = []
        self.roots = []
        for rule in g.rules:
            self.roots.append(self._add(rule))
        self.roots = tuple(self.roots)

    def _add(self, e):
        if isinstance(e, Epsilon):
            self.kind.append("eps")
            self.data.append(None)
        elif isinstance(e, Atom):
            self.kind.append("atom")
            self.data.append(e.letter)
        elif isinstance(e, NonTerm):
            self.kind.append("nt")
            self.data.append(e.index)
        elif isinstance(e, Union):
            ids = tuple(self._add(p) for p in e.parts)
            self.kind.append("union")
            self.data.append(ids)
        elif isinstance(e, Product):
            # fold to binary products for O(n) convolutions per level
            ids = [self._add(p) for p in e.parts]
            left = ids[0]
            for right in ids[1:-1]:
                self.kind.append("prod")
                self.data.append((left, right))
                left = len(self.kind) - 1
            self.kind.append("prod")
            self.data.append((left, ids[-1]))
        elif isinstance(e, Seq):
            child = self._add(e.arg)
            self.kind.append("seq")
            self.data.append(child)
        else:
            raise TypeError(e)
        return len(self.kind) - 1


def _series_levels(g, n_max, zero, one, atom_value, add, mul):
    """Compute per-node coefficient arrays for levels 0..n_max."""
    nodes = _Nodes(g)
    count = len(nodes.kind)
    coeffs = [[] for _ in range(count)]
    sweeps_cap = g.size + 2

    for n in range(n_max + 1):
        for c in coeffs:
            c.append(zero)
        for _ in range(sweeps_cap):
            changed = False
            for idx in range(count):
                kind = nodes.kind[idx]
                data = nodes.data[idx]
                if kind == "eps":
                    value = one if n == 0 else zero
                elif kind == "atom":
                    value = atom_value(data) if n == 1 else zero
                elif kind == "nt":
                    value = coeffs[nodes.roots[data]][n]
                elif kind == "union":
                    value = zero
                    for child in data:
                        value = add(value, coeffs[child][n])
                elif kind == "prod":
                    left, right = data
                    value = zero
                    a, b = coeffs[left], coeffs[right]
                    for j in range(n + 1):
                        value = add(value, mul(a[j], b[n - j]))
                elif kind == "seq":
                    a = coeffs[data]
                    if n == 0:
                        value = one
                    else:
                        own = coeffs[idx]
                        value = zero
                        for j in range(1, n + 1):
                            value = add(value, mul(a[j], own[n - j]))
                else:
                    raise AssertionError(kind)
                if value != coeffs[idx][n]:
                    coeffs[idx][n] = value
                    changed = True
            if not changed:
                break
    return [coeffs[nodes.roots[i]] for i in range(g.size)]


def _require_well_founded(g):
    report = validate(g)
    if not report.well_founded:
        raise NotWellFoundedError("grammar is not well-founded")


# --------------------------------------------------------------------------
# scalar weighted coefficients


def weighted_coeffs(g, weights, n_max, check=True):
    """Truncated weighted series coefficients P_n per nonterminal.

    With all-integer weights the arithmetic is exact big-integer, with
    fractions exact rational, otherwise double precision.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if n_max > DEFAULT_N_CEILING:
        raise ValueError(f"n_max exceeds the configured ceiling "
                         f"{DEFAULT_N_CEILING}")
    if len(weights) != g.k:
        raise ValueError("weight vector length must equal alphabet size")
    if check:
        _require_well_founded(g)
    mode = arithmetic_mode(weights)
    zero, one = (0.0, 1.0) if mode == "float" else (0, 1)
    w = [float(x) for x in weights] if mode == "float" else list(weights)

    shape = right_linear_shape(g)
    if shape is not None:
        per_nt = _right_linear_coeffs(g, shape, w, n_max, zero)
    else:
        per_nt = _series_levels(
            g, n_max, zero, one,
            atom_value=lambda l: w[l],
            add=lambda a, b: a + b,
            mul=lambda a, b: a * b)
    return CoeffTable(tuple(tuple(c) for c in per_nt), mode, n_max, g.axiom)


def _right_linear_coeffs(g, shape, w, n_max, zero):
    m = g.size
    coeffs = [[zero] * (n_max + 1) for _ in range(m)]
    for i in range(m):
        if shape.epsilon[i]:
            coeffs[i][0] = coeffs[i][0] + shape.epsilon[i]
    if n_max >= 1:
        for i in range(m):
            for letter in shape.terminal[i]:
                coeffs[i][1] = coeffs[i][1] + w[letter]
    for n in range(1, n_max + 1):
        for i in range(m):
            total = coeffs[i][n]
            for letter, j in shape.transitions[i]:
                prev = coeffs[j][n - 1]
                if prev:
                    total = total + w[letter] * prev
            coeffs[i][n] = total
    return coeffs


# --------------------------------------------------------------------------
# marked series: per-letter occurrence sums


def marked_coeffs(g, weights, n_max, check=True):
    """Coefficient table plus per-letter marked tables.

    The marked table for letter l holds, at level n, the sum over all words
    of size n of (occurrences of l in the word) times the word weight.  The
    fixed-size expected composition is marked[l][n] / plain[n].
    """
    if check:
        _require_well_founded(g)
    mode = arithmetic_mode(weights)
    zero, one = (0.0, 1.0) if mode == "float" else (0, 1)
    w = [float(x) for x in weights] if mode == "float" else list(weights)
    k = g.k

    shape = right_linear_shape(g)
    if shape is not None:
        plain = _right_linear_coeffs(g, shape, w, n_max, zero)
        marked = []
        for l in range(k):
            m_tab = [[zero] * (n_max + 1) for _ in range(g.size)]
            for n in range(1, n_max + 1):
                for i in range(g.size):
                    total = m_tab[i][n]
                    for letter, j in shape.transitions[i]:
                        wl = w[letter]
                        prev = m_tab[j][n - 1]
                        if prev:
                            total = total + wl * prev
                        if letter == l:
                            base = plain[j][n - 1]
                            if base:
                                total = total + wl * base
                    if n == 1 and l in shape.terminal[i]:
                        for letter in shape.terminal[i]:
                            if letter == l:
                                total = total + w[letter]
                    m_tab[i][n] = total
            marked.append(m_tab)
    else:
        # pair ring: (value, d/d(mark_l) value) per letter, one pass per letter
        plain = _series_levels(
            g, n_max, zero, one,
            atom_value=lambda l: w[l],
            add=lambda a, b: a + b,
            mul=lambda a, b: a * b)
        marked = []
        for l in range(k):
            def atom_value(letter, l=l):
                return (w[letter], w[letter] if letter == l else zero)

            def add(a, b):
                return (a[0] + b[0], a[1] + b[1])

            def mul(a, b):
                return (a[0] * b[0], a[0] * b[1] + a[1] * b[0])

            pair = _series_levels(
                g, n_max, (zero, zero), (one, zero), atom_value, add, mul)
            marked.append([[entry[1] for entry in row] for row in pair])

    to_table = lambda rows: CoeffTable(
        tuple(tuple(c) for c in rows), mode, n_max, g.axiom)
    return to_table(plain), tuple(to_table(rows) for rows in marked)


# --------------------------------------------------------------------------
# multivariate profile counts


def multivariate_coeffs(g, n, profile, check=True):
    """Exact number of words of size n with the given occurrence profile."""
    profile = tuple(int(p) for p in profile)
    if len(profile) != g.k:
        raise ProfileMismatchError("profile length must equal alphabet size")
    if any(p < 0 for p in profile):
        raise ProfileMismatchError("profile entries must be nonnegative")
    if sum(profile) != n:
        raise ProfileMismatchError(
            f"profile sums to {sum(profile)}, expected n = {n}")
    if check:
        _require_well_founded(g)

    bound = profile

    def prune(d):
        return {p: v for p, v in d.items()
                if all(x <= b for x, b in zip(p, bound))}

    zero = {}
    one = {tuple([0] * g.k): 1}

    def atom_value(letter):
        p = [0] * g.k
        p[letter] = 1
        return prune({tuple(p): 1})

    def add(a, b):
        if not a:
            return dict(b)
        out = dict(a)
        for p, v in b.items():
            out[p] = out.get(p, 0) + v
        return out

    def mul(a, b):
        out = {}
        for p, u in a.items():
            for q, v in b.items():
                s = tuple(x + y for x, y in zip(p, q))
                if all(x <= bnd for x, bnd in zip(s, bound)):
                    out[s] = out.get(s, 0) + u * v
        return out

    # dict equality drives the per-level sweeps; {} == {} so empty levels
    # stabilize immediately
    per_nt = _series_levels(g, n, zero, one, atom_value, add, mul)
    value = per_nt[g.axiom][n].get(profile, 0)
    return OccurrenceCount(n=n, occ=profile, value=value)


# --------------------------------------------------------------------------
# exhaustive enumeration


def enumerate_words(g, n, limit=10 ** 5, check=True):
    """All words of size n, in deterministic derivation order.

    One entry per derivation: for unambiguous grammars the list is
    duplicate-free and its length equals the unit-weight coefficient.
    """
    if check:
        _require_well_founded(g)
    table = weighted_coeffs(g, [1] * g.k, n, check=False)
    total = table.coefficient(n)
    if total > limit:
        raise TooManyWordsError(
            f"{total} words of size {n} exceed the limit {limit}")

    nodes = _Nodes(g)
    memo = {}
    budget = [10 * max(limit, 1)]

    def words_of(idx, size):
        key = (idx, size)
        if key in memo:
            return memo[key]
        kind = nodes.kind[idx]
        data = nodes.data[idx]
        if kind == "eps":
            out = [()] if size == 0 else []
        elif kind == "atom":
            out = [(data,)] if size == 1 else []
        elif kind == "nt":
            out = words_of(nodes.roots[data], size)
        elif kind == "union":
            out = []
            for child in data:
                out.extend(words_of(child, size))
        elif kind == "prod":
            left, right = data
            out = []
            for j in range(size + 1):
                lws = words_of(left, j)
                if not lws:
                    continue
                rws = words_of(right, size - j)
                for a in lws:
                    for b in rws:
                        out.append(a + b)
        elif kind == "seq":
            if size == 0:
                out = [()]
            else:
                out = []
                for j in range(1, size + 1):
                    heads = words_of(data, j)
                    if not heads:
                        continue
                    tails = words_of(idx, size - j)
                    for a in heads:
                        for b in tails:
                            out.append(a + b)
        else:
            raise AssertionError(kind)
        budget[0] -= len(out)
        if budget[0] < 0:
            raise TooManyWordsError("intermediate enumeration too large")
        memo[key] = out
        return out

    return words_of(nodes.roots[g.axiom], n)
