"""Set-algebra expressions, set predicate formulas and the CPF compiler.

An expression over X1..Xm is parsed into a SetExpr tree, turned into a
predicate over membership literals, and compiled into a list of
set-separable subformulas whose witness sets partition the result.
The eval_* functions are the plaintext oracle used throughout the tests.
"""
from dataclasses import dataclass, field as dc_field
from typing import Optional, Union as TUnion

from .errors import CostError, EmptyFormulaError, FormulaError, UnrepresentableError

DNF_CLAUSE_LIMIT = 1 << 12


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Var:
    index: int

    def __str__(self):
        return f"X{self.index}"


@dataclass(frozen=True)
class Intersect:
    left: "SetExpr"
    right: "SetExpr"

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Union:
    left: "SetExpr"
    right: "SetExpr"

    def __str__(self):
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Diff:
    left: "SetExpr"
    right: "SetExpr"

    def __str__(self):
        return f"({self.left} \\ {self.right})"


SetExpr = TUnion[Var, Intersect, Union, Diff]

_BINOPS = {"|": Union, "&": Intersect, "\\": Diff}


def _tokenize(text):
    toks = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()|&\\":
            toks.append((c, i))
            i += 1
        elif c in "Xx":
            j = i + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            if j == i + 1:
                raise FormulaError("unknown identifier", i)
            toks.append((text[i:j], i))
            i = j
        else:
            raise FormulaError(f"unexpected character {c!r}", i)
    return toks


class _Parser:
    def __init__(self, text, m):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0
        self.m = m

    def peek(self):
        return self.toks[self.pos][0] if self.pos < len(self.toks) else None

    def offset(self):
        return self.toks[self.pos][1] if self.pos < len(self.toks) else len(self.text.encode())

    def level(self, ops):
        # ops ordered loosest first: "|", "&", "\\"
        if not ops:
            return self.atom()
        node = self.level(ops[1:])
        while self.peek() == ops[0]:
            self.pos += 1
            node = _BINOPS[ops[0]](node, self.level(ops[1:]))
        return node

    def atom(self):
        tok = self.peek()
        off = self.offset()
        if tok is None or tok in "|&\\)":
            raise FormulaError("expected operand", off)
        self.pos += 1
        if tok == "(":
            node = self.level("|&\\")
            if self.peek() != ")":
                raise FormulaError("unbalanced parenthesis", self.offset())
            self.pos += 1
            return node
        idx = int(tok[1:])
        if idx < 1 or (self.m is not None and idx > self.m):
            raise FormulaError(f"unknown identifier {tok}", off)
        return Var(idx)


def parse(text: str, m: Optional[int] = None) -> SetExpr:
    """Parse an expression; `\\` binds tighter than `&`, which binds tighter than `|`."""
    p = _Parser(text, m)
    node = p.level("|&\\")
    if p.pos != len(p.toks):
        tok, off = p.toks[p.pos]
        if tok == ")":
            raise FormulaError("unbalanced parenthesis", off)
        raise FormulaError(f"unexpected token {tok!r}", off)
    return node


def expr_vars(e) -> set:
    if isinstance(e, Var):
        return {e.index}
    return expr_vars(e.left) | expr_vars(e.right)


def eval_expr(e, sets) -> set:
    if isinstance(e, Var):
        return set(sets[e.index - 1])
    a, b = eval_expr(e.left, sets), eval_expr(e.right, sets)
    if isinstance(e, Intersect):
        return a & b
    if isinstance(e, Union):
        return a | b
    return a - b


def random_expr(rng, m, max_depth):
    """Random expression tree of depth <= max_depth over X1..Xm (rng: random.Random)."""
    if max_depth == 0 or rng.random() < 0.25:
        return Var(rng.randint(1, m))
    op = rng.choice((Intersect, Union, Diff))
    return op(random_expr(rng, m, max_depth - 1), random_expr(rng, m, max_depth - 1))


# ---------------------------------------------------------------- predicates

@dataclass(frozen=True)
class In:
    index: int

    def __str__(self):
        return f"In({self.index})"


@dataclass(frozen=True)
class NotIn:
    index: int

    def __str__(self):
        return f"NotIn({self.index})"


@dataclass(frozen=True)
class And:
    args: tuple

    def __str__(self):
        return "(" + " & ".join(map(str, self.args)) + ")"


@dataclass(frozen=True)
class Or:
    args: tuple

    def __str__(self):
        return "(" + " | ".join(map(str, self.args)) + ")"


@dataclass(frozen=True)
class Const:
    value: bool

    def __str__(self):
        return "TRUE" if self.value else "FALSE"


TRUE, FALSE = Const(True), Const(False)
Literal = TUnion[In, NotIn]


def is_lit(f):
    return isinstance(f, (In, NotIn))


def lit_key(f):
    return (f.index, isinstance(f, In))


def make_lit(index, positive):
    return In(index) if positive else NotIn(index)


def negate_lit(f):
    return NotIn(f.index) if isinstance(f, In) else In(f.index)


def pred_vars(f) -> set:
    if is_lit(f):
        return {f.index}
    if isinstance(f, Const):
        return set()
    out = set()
    for a in f.args:
        out |= pred_vars(a)
    return out


def eval_predicate(phi, x, sets) -> bool:
    if isinstance(phi, In):
        return x in sets[phi.index - 1]
    if isinstance(phi, NotIn):
        return x not in sets[phi.index - 1]
    if isinstance(phi, Const):
        return phi.value
    if isinstance(phi, And):
        return all(eval_predicate(a, x, sets) for a in phi.args)
    return any(eval_predicate(a, x, sets) for a in phi.args)


def _to_pred(e, neg):
    if isinstance(e, Var):
        return NotIn(e.index) if neg else In(e.index)
    if isinstance(e, Diff):
        # A \ B = A and not B; negated: not A or B
        a, b = _to_pred(e.left, neg), _to_pred(e.right, not neg)
        return Or((a, b)) if neg else And((a, b))
    a, b = _to_pred(e.left, neg), _to_pred(e.right, neg)
    conj = isinstance(e, Intersect) != neg
    return And((a, b)) if conj else Or((a, b))


def expr_to_predicate(e) -> "SetPredicateFormula":
    """Literal-level formula phi with x in e(sets) iff phi(x) holds."""
    return flatten(_to_pred(e, False))


def flatten(f):
    if is_lit(f) or isinstance(f, Const):
        return f
    kind = type(f)
    out = []
    for a in f.args:
        a = flatten(a)
        if type(a) is kind:
            out.extend(a.args)
        else:
            out.append(a)
    return kind(tuple(out))


def simplify(f):
    """Flatten, fold constants, drop duplicate children and detect x & not x."""
    if is_lit(f) or isinstance(f, Const):
        return f
    kind = type(f)
    absorbing = FALSE if kind is And else TRUE
    neutral = TRUE if kind is And else FALSE
    out = []
    seen = set()
    lits = set()
    for a in f.args:
        a = simplify(a)
        parts = a.args if type(a) is kind else (a,)
        for p in parts:
            if p == absorbing:
                return absorbing
            if p == neutral or p in seen:
                continue
            if is_lit(p):
                idx, pos = lit_key(p)
                if (idx, not pos) in lits:
                    return absorbing
                lits.add((idx, pos))
            seen.add(p)
            out.append(p)
    if not out:
        return neutral
    if len(out) == 1:
        return out[0]
    return kind(tuple(out))


def substitute(f, index, member: bool):
    """Fix the truth of x in X_index."""
    if isinstance(f, In):
        return Const(member) if f.index == index else f
    if isinstance(f, NotIn):
        return Const(not member) if f.index == index else f
    if isinstance(f, Const):
        return f
    return type(f)(tuple(substitute(a, index, member) for a in f.args))


def or_count(f) -> int:
    if f is None or is_lit(f) or isinstance(f, Const):
        return 0
    n = sum(or_count(a) for a in f.args)
    if isinstance(f, Or):
        n += len(f.args) - 1
    return n


SetPredicateFormula = TUnion[In, NotIn, And, Or, Const]


# ---------------------------------------------------------------- CPF

@dataclass(frozen=True)
class Subformula:
    pivot: int
    separation: Optional[object]  # None when the subformula is just In(pivot)
    involved: tuple = dc_field(default=())

    @property
    def q(self):
        return len(self.involved)

    def predicate(self):
        if self.separation is None:
            return In(self.pivot)
        return And((In(self.pivot), self.separation))

    def __str__(self):
        sep = "-" if self.separation is None else str(self.separation)
        return f"pivot={self.pivot} involved={','.join(map(str, self.involved))} separation={sep}"


@dataclass(frozen=True)
class Cpf:
    subformulas: tuple
    m: int

    @property
    def s(self):
        return len(self.subformulas)

    def predicate(self):
        return Or(tuple(q.predicate() for q in self.subformulas))


def _subformula(pivot, sep):
    if sep is not None:
        sep = simplify(sep)
        if sep == TRUE:
            sep = None
        elif pivot in pred_vars(sep):
            raise AssertionError("separation formula mentions its pivot")
    involved = {pivot} | (pred_vars(sep) if sep is not None else set())
    return Subformula(pivot, sep, tuple(sorted(involved)))


def _dnf(f):
    if is_lit(f):
        return [frozenset([lit_key(f)])]
    if isinstance(f, Const):
        return [frozenset()] if f.value else []
    if isinstance(f, Or):
        out = []
        for a in f.args:
            out.extend(_dnf(a))
            if len(out) > DNF_CLAUSE_LIMIT:
                raise CostError(f"DNF exceeds {DNF_CLAUSE_LIMIT} clauses")
        return out
    out = [frozenset()]
    for a in f.args:
        nxt = []
        sub = _dnf(a)
        for c1 in out:
            for c2 in sub:
                c = c1 | c2
                if _contradictory(c):
                    continue
                nxt.append(c)
                if len(nxt) > DNF_CLAUSE_LIMIT:
                    raise CostError(f"DNF exceeds {DNF_CLAUSE_LIMIT} clauses")
        out = nxt
    return out


def _contradictory(c):
    return any((i, not p) in c for i, p in c)


def _clean_clauses(clauses):
    """Drop contradictions, merge duplicates, remove subsumed clauses; keeps first-seen order."""
    uniq = []
    seen = set()
    for c in clauses:
        if _contradictory(c) or c in seen:
            continue
        seen.add(c)
        uniq.append(c)
    return [c for c in uniq if not any(d < c for d in uniq)]


def to_cpf(phi, m: Optional[int] = None) -> Cpf:
    phi = simplify(flatten(phi))
    if m is None:
        m = max(pred_vars(phi), default=1)
    if phi == FALSE:
        raise EmptyFormulaError("formula denotes the empty set")
    if phi == TRUE:
        raise UnrepresentableError("formula holds for elements outside every set")

    # Already set-separable at the top: one subformula, no DNF needed.
    conj = phi.args if isinstance(phi, And) else (phi,)
    pos = sorted(a.index for a in conj if isinstance(a, In))
    if pos:
        j = pos[0]
        rest = tuple(a for a in conj if a != In(j))
        sep = simplify(substitute(And(rest), j, True)) if rest else TRUE
        if sep == FALSE:
            raise EmptyFormulaError("formula denotes the empty set")
        return Cpf((_subformula(j, sep),), m)

    clauses = _clean_clauses(_dnf(phi))
    if not clauses:
        raise EmptyFormulaError("formula denotes the empty set")

    augmented = []
    for c in clauses:
        if any(p for _, p in c):
            augmented.append(c)
            continue
        missing = [j for j in range(1, m + 1) if (j, False) not in c]
        if not missing:
            raise UnrepresentableError("clause is negative over all sets")
        augmented.extend(c | {(j, True)} for j in missing)
    clauses = _clean_clauses(augmented)

    subs = []
    for k, ck in enumerate(clauses):
        j = min(i for i, p in ck if p)
        known = dict(ck)
        parts = [make_lit(i, p) for i, p in sorted(ck) if i != j]
        feasible = True
        for ci in clauses[:k]:
            disj = []
            satisfied = False
            for i, p in sorted(ci):
                if i in known:
                    if known[i] != p:
                        satisfied = True
                        break
                    continue
                disj.append(make_lit(i, not p))
            if satisfied:
                continue
            if not disj:
                feasible = False
                break
            parts.append(disj[0] if len(disj) == 1 else Or(tuple(disj)))
        if feasible:
            subs.append(_subformula(j, And(tuple(parts)) if parts else TRUE))
    if not subs:
        raise EmptyFormulaError("formula denotes the empty set")
    return Cpf(tuple(subs), m)


def compile_expr(text: str, m: Optional[int] = None) -> Cpf:
    e = parse(text, m)
    return to_cpf(expr_to_predicate(e), m or max(expr_vars(e)))


def witness_sets(c: Cpf, sets, universe) -> list:
    return [{x for x in universe if eval_predicate(q.predicate(), x, sets)} for q in c.subformulas]


# ---------------------------------------------------------------- cost

def num_bins(n: int) -> int:
    return (127 * n + 99) // 100


def ceil_log2(v: int) -> int:
    return (v - 1).bit_length() if v > 1 else 0


@dataclass(frozen=True)
class CpfCost:
    s: int
    or_count: tuple
    total_or: int
    min_field_bits: int
    mpso_bits: int


def cpf_cost(c: Cpf, n: int, sigma: int = 40) -> CpfCost:
    B = num_bins(n)
    ors = tuple(or_count(q.separation) for q in c.subformulas)
    total = sum(ors)
    return CpfCost(
        s=c.s,
        or_count=ors,
        total_or=total,
        min_field_bits=sigma + ceil_log2(max(1, total) * B),
        mpso_bits=sigma + ceil_log2(c.s * B),
    )


def format_cpf(c: Cpf, cost: Optional[CpfCost] = None) -> str:
    lines = [f"Q{i + 1}: {q}" for i, q in enumerate(c.subformulas)]
    lines.append(f"m={c.m}")
    lines.append(f"s={c.s}")
    if cost is not None:
        lines.append("or_count=" + ",".join(map(str, cost.or_count)))
        lines.append(f"total_or={cost.total_or}")
        lines.append(f"min_field_bits={cost.min_field_bits}")
        lines.append(f"mpso_bits={cost.mpso_bits}")
    return "\n".join(lines)
