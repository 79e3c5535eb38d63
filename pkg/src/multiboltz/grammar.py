"""Context-free grammar front end: DSL parsing, validation, pointing.

A grammar is a system of equations, one rule per nonterminal.  The text DSL
reads::

    # comment to end of line
    S = 'a' S | 'b' S | _ ;
    D = _ | 'a' D 'b' D ;

One definition per nonterminal, terminated by ``;``.  The first definition is
the axiom.  ``|`` separates union branches, juxtaposition is product, ``_`` is
the empty word, quoted names are terminal letters, a postfix ``*`` is the
sequence (Kleene) construct, and parentheses group.  The alphabet is the list
of quoted letters in order of first appearance.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

from .errors import (
    DuplicateDefinitionError,
    GrammarSyntaxError,
    PointedEmptyError,
    UndefinedNonterminalError,
)


# --------------------------------------------------------------------------
# expression trees


class Expr:
    """Right-hand-side expression node."""

    __slots__ = ()


@dataclass(frozen=True)
class Epsilon(Expr):
    pass


@dataclass(frozen=True)
class Atom(Expr):
    letter: int


@dataclass(frozen=True)
class NonTerm(Expr):
    index: int


@dataclass(frozen=True)
class Union(Expr):
    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 2:
            raise ValueError("Union needs at least two parts")


@dataclass(frozen=True)
class Product(Expr):
    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 2:
            raise ValueError("Product needs at least two parts")


@dataclass(frozen=True)
class Seq(Expr):
    arg: Expr


EPSILON = Epsilon()


def subexpressions(expr):
    """Yield expr and all nodes below it (preorder)."""
    stack = [expr]
    while stack:
        e = stack.pop()
        yield e
        if isinstance(e, (Union, Product)):
            stack.extend(e.parts)
        elif isinstance(e, Seq):
            stack.append(e.arg)


@dataclass(frozen=True)
class Alphabet:
    letters: tuple

    def __post_init__(self):
        if len(set(self.letters)) != len(self.letters):
            raise ValueError("duplicate letter names in alphabet")

    @property
    def k(self):
        return len(self.letters)

    def index(self, name):
        return self.letters.index(name)


@dataclass(frozen=True)
class Grammar:
    alphabet: Alphabet
    nonterminals: tuple
    rules: tuple
    axiom: int

    def __post_init__(self):
        m = len(self.nonterminals)
        if len(self.rules) != m:
            raise ValueError("need exactly one rule per nonterminal")
        if len(set(self.nonterminals)) != m:
            raise ValueError("duplicate nonterminal names")
        if not 0 <= self.axiom < m:
            raise ValueError("axiom index out of range")
        k = self.alphabet.k
        for rule in self.rules:
            for e in subexpressions(rule):
                if isinstance(e, Atom) and not 0 <= e.letter < k:
                    raise ValueError("letter index out of range")
                if isinstance(e, NonTerm) and not 0 <= e.index < m:
                    raise ValueError("nonterminal index out of range")

    @property
    def k(self):
        return self.alphabet.k

    @property
    def size(self):
        return len(self.nonterminals)


# --------------------------------------------------------------------------
# DSL parser

_PUNCT = {"=": "EQ", "|": "PIPE", "*": "STAR", "(": "LPAR", ")": "RPAR",
          ";": "SEMI", "_": "EPS"}


def _tokenize(text):
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append((_PUNCT[ch], ch, line, col))
            i += 1
            col += 1
            continue
        if ch == "'":
            j = text.find("'", i + 1)
            if j < 0:
                raise GrammarSyntaxError("unterminated letter quote", line, col)
            name = text[i + 1:j]
            if not name:
                raise GrammarSyntaxError("empty letter name", line, col)
            tokens.append(("LETTER", name, line, col))
            col += j - i + 1
            i = j + 1
            continue
        if ch.isalnum() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("NAME", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise GrammarSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(("EOF", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, nt_index, letters, letter_index):
        self.tokens = tokens
        self.pos = 0
        self.nt_index = nt_index
        self.letters = letters
        self.letter_index = letter_index

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise GrammarSyntaxError(
                f"expected {kind}, found {tok[1]!r}", tok[2], tok[3])
        self.pos += 1
        return tok

    def expr(self):
        parts = [self.term()]
        while self.peek()[0] == "PIPE":
            self.take()
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Union(tuple(parts))

    def term(self):
        factors = [self.factor()]
        while self.peek()[0] in ("LETTER", "NAME", "EPS", "LPAR"):
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def factor(self):
        kind, value, line, col = self.peek()
        if kind == "LETTER":
            self.take()
            if value not in self.letter_index:
                self.letter_index[value] = len(self.letters)
                self.letters.append(value)
            node = Atom(self.letter_index[value])
        elif kind == "NAME":
            self.take()
            if value not in self.nt_index:
                raise UndefinedNonterminalError(
                    f"undefined nonterminal {value}")
            node = NonTerm(self.nt_index[value])
        elif kind == "EPS":
            self.take()
            node = EPSILON
        elif kind == "LPAR":
            self.take()
            node = self.expr()
            self.take("RPAR")
        else:
            raise GrammarSyntaxError(
                f"expected a factor, found {value!r}", line, col)
        while self.peek()[0] == "STAR":
            self.take()
            node = Seq(node)
        return node


def parse_grammar(text):
    """Parse DSL text into a Grammar.  The first definition is the axiom."""
    tokens = _tokenize(text)
    # split into definitions on top-level SEMI
    defs = []
    current = []
    for tok in tokens:
        if tok[0] == "SEMI":
            if current:
                defs.append(current)
                current = []
        elif tok[0] == "EOF":
            if current:
                raise GrammarSyntaxError(
                    "missing ';' after definition", tok[2], tok[3])
        else:
            current.append(tok)
    if not defs:
        raise GrammarSyntaxError("no definitions found", 1, 1)

    names = []
    nt_index = {}
    bodies = []
    for d in defs:
        if len(d) < 2 or d[0][0] != "NAME" or d[1][0] != "EQ":
            tok = d[0]
            raise GrammarSyntaxError(
                "definition must start with 'Name ='", tok[2], tok[3])
        name = d[0][1]
        if name in nt_index:
            raise DuplicateDefinitionError(f"duplicate definition of {name}")
        nt_index[name] = len(names)
        names.append(name)
        bodies.append(d[2:])

    letters = []
    letter_index = {}
    rules = []
    for body in bodies:
        parser = _Parser(body + [("EOF", "", 0, 0)], nt_index, letters,
                         letter_index)
        rule = parser.expr()
        trailing = parser.peek()
        if trailing[0] != "EOF":
            raise GrammarSyntaxError(
                f"unexpected token {trailing[1]!r}", trailing[2], trailing[3])
        rules.append(rule)

    return Grammar(Alphabet(tuple(letters)), tuple(names), tuple(rules), 0)


def print_grammar(g):
    """Render a Grammar in the DSL.  Inverse of parse_grammar on its image."""
    def render(e, parent):
        if isinstance(e, Epsilon):
            return "_"
        if isinstance(e, Atom):
            return f"'{g.alphabet.letters[e.letter]}'"
        if isinstance(e, NonTerm):
            return g.nonterminals[e.index]
        if isinstance(e, Seq):
            inner = render(e.arg, "seq")
            if isinstance(e.arg, (Union, Product)):
                inner = f"({inner})"
            return inner + "*"
        if isinstance(e, Product):
            rendered = []
            for p in e.parts:
                s = render(p, "product")
                if isinstance(p, (Union, Product)):
                    s = f"({s})"
                rendered.append(s)
            return " ".join(rendered)
        if isinstance(e, Union):
            rendered = []
            for p in e.parts:
                s = render(p, "union")
                if isinstance(p, Union):
                    s = f"({s})"
                rendered.append(s)
            return " | ".join(rendered)
        raise TypeError(f"unknown expression {e!r}")

    lines = []
    for name, rule in zip(g.nonterminals, g.rules):
        lines.append(f"{name} = {render(rule, 'top')} ;")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    well_founded: bool
    epsilon_deriving: tuple
    dependency_scc: tuple
    strongly_connected: bool
    aperiodic_hint: bool


def nullable_nonterminals(g):
    """Per-nonterminal flag: can the nonterminal derive the empty word."""
    m = g.size
    nullable = [False] * m

    def expr_nullable(e):
        if isinstance(e, Epsilon):
            return True
        if isinstance(e, Atom):
            return False
        if isinstance(e, NonTerm):
            return nullable[e.index]
        if isinstance(e, Union):
            return any(expr_nullable(p) for p in e.parts)
        if isinstance(e, Product):
            return all(expr_nullable(p) for p in e.parts)
        if isinstance(e, Seq):
            return True
        raise TypeError(e)

    changed = True
    while changed:
        changed = False
        for i, rule in enumerate(g.rules):
            if not nullable[i] and expr_nullable(rule):
                nullable[i] = True
                changed = True
    return tuple(nullable)


_CONST_CAP = 1 << 62


def _constant_terms(g):
    """Weighted multiplicity of epsilon per nonterminal at z = 0.

    Returns None when the iteration does not stabilize (the epsilon part of
    the system is divergent, e.g. S = _ | S S).
    """
    m = g.size

    def eval0(e, c):
        if isinstance(e, Epsilon):
            return 1
        if isinstance(e, Atom):
            return 0
        if isinstance(e, NonTerm):
            return c[e.index]
        if isinstance(e, Union):
            return min(sum(eval0(p, c) for p in e.parts), _CONST_CAP)
        if isinstance(e, Product):
            v = 1
            for p in e.parts:
                v *= eval0(p, c)
                if v >= _CONST_CAP:
                    return _CONST_CAP
            return v
        if isinstance(e, Seq):
            return 1 if eval0(e.arg, c) == 0 else _CONST_CAP
        raise TypeError(e)

    c = [0] * m
    for _ in range(m + 2):
        new = [eval0(rule, c) for rule in g.rules]
        if new == c:
            return None if any(v >= _CONST_CAP for v in c) else c
        c = new
    return None


def _jacobian_positive_edges(g, const):
    """Edges j -> i where d(rule_i)/d(F_j) > 0 at (F=const, z=0)."""

    def deval(e, j):
        # returns (value, derivative wrt F_j) at z=0
        if isinstance(e, Epsilon):
            return 1.0, 0.0
        if isinstance(e, Atom):
            return 0.0, 0.0
        if isinstance(e, NonTerm):
            return float(const[e.index]), 1.0 if e.index == j else 0.0
        if isinstance(e, Union):
            vs = [deval(p, j) for p in e.parts]
            return sum(v for v, _ in vs), sum(d for _, d in vs)
        if isinstance(e, Product):
            vs = [deval(p, j) for p in e.parts]
            value = 1.0
            for v, _ in vs:
                value *= v
            deriv = 0.0
            for t in range(len(vs)):
                term = vs[t][1]
                for s in range(len(vs)):
                    if s != t:
                        term *= vs[s][0]
                deriv += term
            return value, deriv
        if isinstance(e, Seq):
            v, d = deval(e.arg, j)
            if v >= 1.0:
                return float("inf"), float("inf")
            c = 1.0 / (1.0 - v)
            return c, d * c * c
        raise TypeError(e)

    m = g.size
    edges = set()
    for i, rule in enumerate(g.rules):
        referenced = {e.index for e in subexpressions(rule)
                      if isinstance(e, NonTerm)}
        for j in referenced:
            _, d = deval(rule, j)
            if d > 0.0:
                edges.add((j, i))
    return edges


def dependency_graph(g):
    """Edges i -> j whenever nonterminal j occurs in the rule of i."""
    succ = [set() for _ in range(g.size)]
    for i, rule in enumerate(g.rules):
        for e in subexpressions(rule):
            if isinstance(e, NonTerm):
                succ[i].add(e.index)
    return succ


def _sccs(succ, m):
    """Tarjan strongly connected components, iterative, deterministic order."""
    index = [None] * m
    low = [0] * m
    on_stack = [False] * m
    stack = []
    comps = []
    counter = [0]

    for root in range(m):
        if index[root] is not None:
            continue
        work = [(root, iter(sorted(succ[root])))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            node, it = work[-1]
            advanced = False
            for child in it:
                if index[child] is None:
                    index[child] = low[child] = counter[0]
                    counter[0] += 1
                    stack.append(child)
                    on_stack[child] = True
                    work.append((child, iter(sorted(succ[child]))))
                    advanced = True
                    break
                if on_stack[child]:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    v = stack.pop()
                    on_stack[v] = False
                    comp.append(v)
                    if v == node:
                        break
                comps.append(tuple(sorted(comp)))
    comps.sort(key=lambda c: c[0])
    return comps


def _reachable(succ, start):
    seen = {start}
    todo = [start]
    while todo:
        v = todo.pop()
        for u in succ[v]:
            if u not in seen:
                seen.add(u)
                todo.append(u)
    return seen


def _cycle_gcd(succ, comp):
    """gcd of cycle lengths inside one SCC (0 when the SCC has no cycle)."""
    members = set(comp)
    if not any(u in members for v in comp for u in succ[v]):
        return 0
    start = comp[0]
    level = {start: 0}
    todo = [start]
    g = 0
    while todo:
        v = todo.pop(0)
        for u in sorted(succ[v]):
            if u not in members:
                continue
            if u not in level:
                level[u] = level[v] + 1
                todo.append(u)
            else:
                g = gcd(g, level[v] + 1 - level[u])
    return abs(g)


def validate(g):
    """Structural report: well-foundedness, epsilon flags, connectivity."""
    nullable = nullable_nonterminals(g)

    seq_over_nullable = False
    for rule in g.rules:
        for e in subexpressions(rule):
            if isinstance(e, Seq):
                arg = e.arg
                if isinstance(arg, Epsilon):
                    seq_over_nullable = True
                elif isinstance(arg, NonTerm) and nullable[arg.index]:
                    seq_over_nullable = True
                else:
                    # inline expression: reuse the nullability rules
                    def expr_nullable(x):
                        if isinstance(x, Epsilon):
                            return True
                        if isinstance(x, Atom):
                            return False
                        if isinstance(x, NonTerm):
                            return nullable[x.index]
                        if isinstance(x, Union):
                            return any(expr_nullable(p) for p in x.parts)
                        if isinstance(x, Product):
                            return all(expr_nullable(p) for p in x.parts)
                        if isinstance(x, Seq):
                            return True
                        raise TypeError(x)
                    if expr_nullable(arg):
                        seq_over_nullable = True

    well_founded = not seq_over_nullable
    const = _constant_terms(g) if well_founded else None
    if well_founded and const is None:
        well_founded = False
    if well_founded:
        edges = _jacobian_positive_edges(g, const)
        succ_j = [set() for _ in range(g.size)]
        for j, i in edges:
            succ_j[j].add(i)
        # nonnegative matrix is nilpotent iff its positive-entry digraph
        # is acyclic
        comps = _sccs(succ_j, g.size)
        for comp in comps:
            if len(comp) > 1:
                well_founded = False
            elif comp[0] in succ_j[comp[0]]:
                well_founded = False

    succ = dependency_graph(g)
    comps = _sccs(succ, g.size)
    reach = _reachable(succ, g.axiom)
    reach_comps = [c for c in comps if c[0] in reach]
    strongly_connected = len(reach_comps) == 1

    overall = 0
    for comp in comps:
        if comp[0] not in reach:
            continue
        overall = gcd(overall, _cycle_gcd(succ, comp))
    aperiodic_hint = overall == 1

    return ValidationReport(
        well_founded=well_founded,
        epsilon_deriving=nullable,
        dependency_scc=tuple(comps),
        strongly_connected=strongly_connected,
        aperiodic_hint=aperiodic_hint,
    )


# --------------------------------------------------------------------------
# pointing


def _expr_nonempty(e, ne):
    if isinstance(e, (Epsilon, Atom, Seq)):
        return True
    if isinstance(e, NonTerm):
        return ne[e.index]
    if isinstance(e, Union):
        return any(_expr_nonempty(p, ne) for p in e.parts)
    if isinstance(e, Product):
        return all(_expr_nonempty(p, ne) for p in e.parts)
    raise TypeError(e)


def _nonempty_nonterminals(g):
    ne = [False] * g.size
    changed = True
    while changed:
        changed = False
        for i, rule in enumerate(g.rules):
            if not ne[i] and _expr_nonempty(rule, ne):
                ne[i] = True
                changed = True
    return ne


def _shift_expr(e, offset):
    if isinstance(e, (Epsilon, Atom)):
        return e
    if isinstance(e, NonTerm):
        return NonTerm(e.index + offset)
    if isinstance(e, Union):
        return Union(tuple(_shift_expr(p, offset) for p in e.parts))
    if isinstance(e, Product):
        return Product(tuple(_shift_expr(p, offset) for p in e.parts))
    if isinstance(e, Seq):
        return Seq(_shift_expr(e.arg, offset))
    raise TypeError(e)


def point(g):
    """Grammar whose weighted generating function is z d/dz of g's.

    Word for word, the pointed class enumerates each size-n word of g with
    multiplicity n (one derivation per marked letter position), so the
    fixed-size weighted distribution is unchanged.  Raises PointedEmptyError
    when the language of g is empty or {epsilon}.
    """
    m = g.size
    ne = _nonempty_nonterminals(g)

    # fixed point: can the pointed version of each nonterminal produce a word
    pe = [False] * m

    def p_nonempty(e):
        if isinstance(e, Epsilon):
            return False
        if isinstance(e, Atom):
            return True
        if isinstance(e, NonTerm):
            return pe[e.index]
        if isinstance(e, Union):
            return any(p_nonempty(p) for p in e.parts)
        if isinstance(e, Product):
            return any(
                p_nonempty(part)
                and all(_expr_nonempty(q, ne)
                        for s, q in enumerate(e.parts) if s != t)
                for t, part in enumerate(e.parts))
        if isinstance(e, Seq):
            return p_nonempty(e.arg)
        raise TypeError(e)

    changed = True
    while changed:
        changed = False
        for i, rule in enumerate(g.rules):
            if not pe[i] and p_nonempty(rule):
                pe[i] = True
                changed = True

    if not pe[g.axiom]:
        raise PointedEmptyError(
            "pointed language is empty (the language is empty or {epsilon})")

    # pointed nonterminal i -> index i, original nonterminal i -> index m + i
    def point_expr(e):
        if isinstance(e, Epsilon):
            return None
        if isinstance(e, Atom):
            return e
        if isinstance(e, NonTerm):
            return NonTerm(e.index) if pe[e.index] else None
        if isinstance(e, Union):
            parts = [q for q in (point_expr(p) for p in e.parts)
                     if q is not None]
            if not parts:
                return None
            return parts[0] if len(parts) == 1 else Union(tuple(parts))
        if isinstance(e, Product):
            branches = []
            for t, part in enumerate(e.parts):
                marked = point_expr(part)
                if marked is None:
                    continue
                if not all(_expr_nonempty(q, ne)
                           for s, q in enumerate(e.parts) if s != t):
                    continue
                factors = tuple(
                    marked if s == t else _shift_expr(q, m)
                    for s, q in enumerate(e.parts))
                branches.append(Product(factors))
            if not branches:
                return None
            return branches[0] if len(branches) == 1 else Union(tuple(branches))
        if isinstance(e, Seq):
            marked = point_expr(e.arg)
            if marked is None:
                return None
            plain = Seq(_shift_expr(e.arg, m))
            return Product((plain, marked, plain))
        raise TypeError(e)

    pointed_rules = [point_expr(rule) for rule in g.rules]

    names = list(g.nonterminals)
    taken = set(names)
    pointed_names = []
    for name in names:
        candidate = name + "_dot"
        while candidate in taken:
            candidate += "_"
        taken.add(candidate)
        pointed_names.append(candidate)

    all_names = pointed_names + names
    all_rules = []
    for i in range(m):
        all_rules.append(pointed_rules[i] if pe[i] else EPSILON)
    for rule in g.rules:
        all_rules.append(_shift_expr(rule, m))

    # prune everything unreachable from the pointed axiom
    succ = [set() for _ in range(2 * m)]
    for i, rule in enumerate(all_rules):
        for e in subexpressions(rule):
            if isinstance(e, NonTerm):
                succ[i].add(e.index)
    keep = sorted(_reachable(succ, g.axiom))
    remap = {old: new for new, old in enumerate(keep)}

    def remap_expr(e):
        if isinstance(e, (Epsilon, Atom)):
            return e
        if isinstance(e, NonTerm):
            return NonTerm(remap[e.index])
        if isinstance(e, Union):
            return Union(tuple(remap_expr(p) for p in e.parts))
        if isinstance(e, Product):
            return Product(tuple(remap_expr(p) for p in e.parts))
        if isinstance(e, Seq):
            return Seq(remap_expr(e.arg))
        raise TypeError(e)

    return Grammar(
        alphabet=g.alphabet,
        nonterminals=tuple(all_names[i] for i in keep),
        rules=tuple(remap_expr(all_rules[i]) for i in keep),
        axiom=remap[g.axiom],
    )


# --------------------------------------------------------------------------
# shape analysis shared with the oracle and exact-counting backends


@dataclass(frozen=True)
class RightLinearShape:
    """Decomposition of a right-linear grammar.

    epsilon[i] is 1 when rule i has an epsilon branch, terminal[i] lists
    letters of terminal-only branches, transitions[i] lists (letter, target)
    pairs, all with multiplicity and in branch order.
    """

    epsilon: tuple
    terminal: tuple
    transitions: tuple


def right_linear_shape(g):
    """Return the RightLinearShape of g, or None when g is not right-linear."""
    eps = []
    term = []
    trans = []
    for rule in g.rules:
        branches = rule.parts if isinstance(rule, Union) else (rule,)
        e_count = 0
        t_list = []
        x_list = []
        for b in branches:
            if isinstance(b, Epsilon):
                e_count += 1
            elif isinstance(b, Atom):
                t_list.append(b.letter)
            elif (isinstance(b, Product) and len(b.parts) == 2
                  and isinstance(b.parts[0], Atom)
                  and isinstance(b.parts[1], NonTerm)):
                x_list.append((b.parts[0].letter, b.parts[1].index))
            else:
                return None
        eps.append(e_count)
        term.append(tuple(t_list))
        trans.append(tuple(x_list))
    return RightLinearShape(tuple(eps), tuple(term), tuple(trans))
