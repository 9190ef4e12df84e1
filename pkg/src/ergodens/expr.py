"""Small symbolic engine for smooth scalar functions on the open orthant.

Expressions are immutable trees over the node set
``{const, var, add, mul, div, pow, exp}``.  Variables are 1-based
(``var(1)`` is the first state coordinate).  Trees built by
:func:`differentiate` share subtrees, so evaluation memoises on
structural identity: a repeated subtree is computed once per call.

Evaluation is vectorised: coordinates may be floats or numpy arrays of
any broadcast-compatible shapes.

The text form is a parenthesised prefix syntax::

    (mul (pow (var 1) 0.5) (exp (mul -0.5 (var 1))))

and :func:`parse` / :func:`to_text` round-trip exactly.
"""
from __future__ import annotations

import math
import re
from numbers import Real

import numpy as np

from .errors import DomainError

__all__ = [
    "Expression", "Const", "Var", "Add", "Mul", "Div", "Pow", "Exp",
    "const", "var", "exp", "evaluate", "differentiate", "simplify",
    "parse", "to_text", "lambdify", "max_var_index",
]

# integer kind codes keep node hashes (and hence canonical ordering) stable
# across interpreter runs; str hashes are salted per process
_CONST, _VAR, _ADD, _MUL, _DIV, _POW, _EXP = range(7)


def _is_integer(p):
    return float(p).is_integer()


class Expression:
    __slots__ = ("_hash",)
    kind = -1
    tag = "?"

    def children(self):
        return ()

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expression) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __ne__(self, other):
        return not self.__eq__(other)

    def _key(self):
        raise NotImplementedError

    # arithmetic sugar
    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Add(self, Mul(Const(-1.0), _coerce(other)))

    def __rsub__(self, other):
        return Add(_coerce(other), Mul(Const(-1.0), self))

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __rtruediv__(self, other):
        return Div(_coerce(other), self)

    def __neg__(self):
        return Mul(Const(-1.0), self)

    def __pow__(self, p):
        if not isinstance(p, Real):
            raise TypeError("exponents must be real numbers")
        return Pow(self, float(p))

    def __str__(self):
        return to_text(self)

    def __repr__(self):
        return f"parse({to_text(self)!r})"

    def __call__(self, *x):
        return evaluate(self, x)

    def diff(self, i):
        return differentiate(self, i)

    def simplify(self):
        return simplify(self)


class Const(Expression):
    __slots__ = ("value",)
    kind = _CONST
    tag = "const"

    def __init__(self, value):
        self.value = float(value)
        self._hash = hash((_CONST, self.value))

    def _key(self):
        return (_CONST, self.value)


class Var(Expression):
    __slots__ = ("index",)
    kind = _VAR
    tag = "var"

    def __init__(self, index):
        if int(index) != index or index < 1:
            raise ValueError(f"variable index must be a positive integer, got {index!r}")
        self.index = int(index)
        self._hash = hash((_VAR, self.index))

    def _key(self):
        return (_VAR, self.index)


class _Nary(Expression):
    __slots__ = ("args",)

    def __init__(self, *args):
        if len(args) == 1 and isinstance(args[0], (list, tuple)):
            args = tuple(args[0])
        if not args:
            raise ValueError(f"{self.tag} needs at least one operand")
        self.args = tuple(_coerce(a) for a in args)
        self._hash = hash((self.kind, self.args))

    def children(self):
        return self.args

    def _key(self):
        return (self.kind, self.args)


class Add(_Nary):
    __slots__ = ()
    kind = _ADD
    tag = "add"


class Mul(_Nary):
    __slots__ = ()
    kind = _MUL
    tag = "mul"


class Div(Expression):
    __slots__ = ("num", "den")
    kind = _DIV
    tag = "div"

    def __init__(self, num, den):
        self.num = _coerce(num)
        self.den = _coerce(den)
        self._hash = hash((_DIV, self.num, self.den))

    def children(self):
        return (self.num, self.den)

    def _key(self):
        return (_DIV, self.num, self.den)


class Pow(Expression):
    __slots__ = ("base", "exponent")
    kind = _POW
    tag = "pow"

    def __init__(self, base, exponent):
        if isinstance(exponent, Expression):
            raise TypeError("pow takes a real exponent, not an expression")
        self.base = _coerce(base)
        self.exponent = float(exponent)
        self._hash = hash((_POW, self.base, self.exponent))

    def children(self):
        return (self.base,)

    def _key(self):
        return (_POW, self.base, self.exponent)


class Exp(Expression):
    __slots__ = ("arg",)
    kind = _EXP
    tag = "exp"

    def __init__(self, arg):
        self.arg = _coerce(arg)
        self._hash = hash((_EXP, self.arg))

    def children(self):
        return (self.arg,)

    def _key(self):
        return (_EXP, self.arg)


def _coerce(value):
    if isinstance(value, Expression):
        return value
    if isinstance(value, (Real, np.floating, np.integer)):
        return Const(value)
    raise TypeError(f"cannot build an expression from {type(value).__name__}")


def const(value):
    return Const(value)


def var(index):
    return Var(index)


def exp(e):
    return Exp(_coerce(e))


ZERO = Const(0.0)
ONE = Const(1.0)


def max_var_index(e):
    """Largest variable index appearing in ``e`` (0 for constants)."""
    seen = {}

    def walk(node):
        if node in seen:
            return seen[node]
        if node.kind == _VAR:
            out = node.index
        else:
            out = max((walk(c) for c in node.children()), default=0)
        seen[node] = out
        return out

    return walk(e)


# ---------------------------------------------------------------- evaluation

def evaluate(e, x):
    """Evaluate ``e`` at the point ``x`` (coordinates may be arrays).

    Raises :class:`DomainError` on division by zero, zero to a negative
    power, or a negative base under a non-integer exponent.
    """
    coords = [np.asarray(c, dtype=float) for c in x]
    need = max_var_index(e)
    if need > len(coords):
        raise ValueError(f"expression uses x{need} but the point has {len(coords)} coordinates")
    memo = {}
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        out = _eval(e, coords, memo, "root")
    shape = np.broadcast_shapes(*(c.shape for c in coords)) if coords else ()
    if shape == ():
        return float(out)
    return np.broadcast_to(out, shape).astype(float, copy=True)


def _eval(node, coords, memo, path):
    hit = memo.get(node)
    if hit is not None:
        return hit
    k = node.kind
    if k == _CONST:
        out = node.value
    elif k == _VAR:
        out = coords[node.index - 1]
    elif k == _ADD:
        out = _eval(node.args[0], coords, memo, f"{path}/add[0]")
        for j, a in enumerate(node.args[1:], 1):
            out = out + _eval(a, coords, memo, f"{path}/add[{j}]")
    elif k == _MUL:
        out = _eval(node.args[0], coords, memo, f"{path}/mul[0]")
        for j, a in enumerate(node.args[1:], 1):
            out = out * _eval(a, coords, memo, f"{path}/mul[{j}]")
    elif k == _DIV:
        num = _eval(node.num, coords, memo, f"{path}/div.num")
        den = _eval(node.den, coords, memo, f"{path}/div.den")
        if np.any(np.asarray(den) == 0):
            raise DomainError("division by zero", f"{path}/div.den")
        out = num / den
    elif k == _POW:
        base = _eval(node.base, coords, memo, f"{path}/pow.base")
        p = node.exponent
        b = np.asarray(base)
        if p < 0 and np.any(b == 0):
            raise DomainError("zero raised to a negative power", f"{path}/pow.base")
        if not _is_integer(p) and np.any(b < 0):
            raise DomainError("negative base under a non-integer power", f"{path}/pow.base")
        out = np.power(base, p)
    elif k == _EXP:
        out = np.exp(_eval(node.arg, coords, memo, f"{path}/exp.arg"))
    else:  # pragma: no cover
        raise TypeError(f"unknown node {node!r}")
    memo[node] = out
    return out


def lambdify(e, n=None):
    """Compile ``e`` into a fast numpy function ``f(x)`` with ``x`` indexable by coordinate.

    Shared subtrees are emitted once.  No domain checks are made: the
    result may contain ``inf``/``nan`` where :func:`evaluate` would raise.
    """
    names = {}
    lines = []
    consts = {}

    def emit(node):
        if node in names:
            return names[node]
        k = node.kind
        if k == _CONST:
            name = f"c{len(consts)}"
            consts[name] = node.value
            names[node] = name
            return name
        if k == _VAR:
            expr = f"x[{node.index - 1}]"
        elif k == _ADD:
            expr = " + ".join(emit(a) for a in node.args)
        elif k == _MUL:
            expr = " * ".join(emit(a) for a in node.args)
        elif k == _DIV:
            expr = f"{emit(node.num)} / {emit(node.den)}"
        elif k == _POW:
            p = node.exponent
            b = emit(node.base)
            if p == 2.0:
                expr = f"{b} * {b}"
            elif p == -1.0:
                expr = f"1.0 / {b}"
            elif p == 0.5:
                expr = f"_sqrt({b})"
            else:
                expr = f"_pow({b}, {p!r})"
        else:
            expr = f"_exp({emit(node.arg)})"
        name = f"t{len(lines)}"
        lines.append(f"    {name} = {expr}")
        names[node] = name
        return name

    result = emit(e)
    if n is None:
        n = max_var_index(e)
    src = "def _f(x):\n" + "\n".join(lines) + f"\n    return {result}\n"
    env = {"_sqrt": np.sqrt, "_pow": np.power, "_exp": np.exp, **consts}
    exec(compile(src, "<lambdify>", "exec"), env)
    raw = env["_f"]

    def f(x):
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            return raw(x)

    f.source = src
    f.nvars = n
    return f


# ----------------------------------------------------------- differentiation

def differentiate(e, i):
    """Exact partial derivative of ``e`` with respect to ``var(i)``."""
    if int(i) != i or i < 1:
        raise ValueError(f"variable index must be >= 1, got {i!r}")
    memo = {}

    def d(node):
        hit = memo.get(node)
        if hit is not None:
            return hit
        k = node.kind
        if k == _CONST:
            out = ZERO
        elif k == _VAR:
            out = ONE if node.index == i else ZERO
        elif k == _ADD:
            terms = [t for t in (d(a) for a in node.args) if t is not ZERO]
            out = Add(*terms) if terms else ZERO
        elif k == _MUL:
            terms = []
            for j, a in enumerate(node.args):
                da = d(a)
                if da is ZERO:
                    continue
                terms.append(Mul(*node.args[:j], da, *node.args[j + 1:]))
            out = Add(*terms) if terms else ZERO
        elif k == _DIV:
            u, v = node.num, node.den
            du, dv = d(u), d(v)
            # u'/v - u v'/(v v): no pow of a possibly negative base appears
            parts = []
            if du is not ZERO:
                parts.append(Div(du, v))
            if dv is not ZERO:
                parts.append(Mul(Const(-1.0), Div(Mul(u, dv), Mul(v, v))))
            out = Add(*parts) if parts else ZERO
        elif k == _POW:
            db = d(node.base)
            if db is ZERO:
                out = ZERO
            else:
                p = node.exponent
                lead = ONE if p == 1.0 else Pow(node.base, p - 1.0)
                out = Mul(Const(p), lead, db)
        else:
            da = d(node.arg)
            out = ZERO if da is ZERO else Mul(node, da)
        memo[node] = out
        return out

    return simplify(d(e))


# ------------------------------------------------------------ simplification

def simplify(e):
    """Constant folding, flattening, and collection of like terms/factors.

    Division is rewritten as multiplication by ``pow(., -1)``; this keeps
    the same domain (zero denominators still raise) and lets factors cancel.
    """
    memo = {}
    return _simp(e, memo)


def _simp(node, memo):
    hit = memo.get(node)
    if hit is not None:
        return hit
    k = node.kind
    if k in (_CONST, _VAR):
        out = node
    elif k == _ADD:
        out = _simp_add([_simp(a, memo) for a in node.args])
    elif k == _MUL:
        out = _simp_mul([_simp(a, memo) for a in node.args])
    elif k == _DIV:
        num, den = _simp(node.num, memo), _simp(node.den, memo)
        if den.kind == _CONST and den.value == 0.0:
            out = Div(num, den)  # keep the error visible at evaluation time
        else:
            out = _simp_mul([num, _simp_pow(den, -1.0)])
    elif k == _POW:
        out = _simp_pow(_simp(node.base, memo), node.exponent)
    else:
        arg = _simp(node.arg, memo)
        out = Const(math.exp(arg.value)) if arg.kind == _CONST and arg.value < 700 else Exp(arg)
    memo[node] = out
    return out


def _split_coeff(term):
    """term -> (coefficient, rest or None)."""
    if term.kind == _CONST:
        return term.value, None
    if term.kind == _MUL and term.args[0].kind == _CONST:
        rest = term.args[1:]
        return term.args[0].value, rest[0] if len(rest) == 1 else Mul(*rest)
    return 1.0, term


def _sorted(nodes):
    return sorted(nodes, key=lambda t: (t.kind, t._hash))


def _simp_add(args):
    flat = []
    for a in args:
        flat.extend(a.args if a.kind == _ADD else (a,))
    constant = 0.0
    coeffs = {}
    for t in flat:
        c, rest = _split_coeff(t)
        if rest is None:
            constant += c
        else:
            coeffs[rest] = coeffs.get(rest, 0.0) + c
    terms = []
    for rest in _sorted(coeffs):
        c = coeffs[rest]
        if c == 0.0:
            continue
        terms.append(rest if c == 1.0 else _scale(c, rest))
    if constant != 0.0:
        terms.insert(0, Const(constant))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Add(*terms)


def _scale(c, rest):
    if rest.kind == _MUL:
        return Mul(Const(c), *rest.args)
    return Mul(Const(c), rest)


def _simp_mul(args):
    flat = []
    for a in args:
        flat.extend(a.args if a.kind == _MUL else (a,))
    coeff = 1.0
    powers = {}
    exp_args = []
    for f in flat:
        if f.kind == _CONST:
            coeff *= f.value
        elif f.kind == _EXP:
            exp_args.append(f.arg)
        elif f.kind == _POW:
            powers[f.base] = powers.get(f.base, 0.0) + f.exponent
        else:
            powers[f] = powers.get(f, 0.0) + 1.0
    if coeff == 0.0:
        return ZERO
    factors = []
    for base in _sorted(powers):
        p = powers[base]
        if p == 0.0:
            continue
        factors.append(base if p == 1.0 else Pow(base, p))
    if exp_args:
        e = _simp_add(exp_args)
        if e.kind == _CONST:
            coeff *= math.exp(e.value)
        else:
            factors.append(Exp(e))
    if not factors:
        return Const(coeff)
    if any(f.kind == _MUL for f in factors):
        return _simp_mul([Const(coeff)] + factors)
    sums = [f for f in factors if f.kind == _ADD]
    if len(sums) == 1 and (coeff != 1.0 or len(factors) > 1):
        # monomial * (u + v) -> monomial*u + monomial*v: linear growth only,
        # and lets cancelling terms meet in one sum
        rest = [Const(coeff)] + [f for f in factors if f is not sums[0]]
        return _simp_add([_simp_mul(rest + [t]) for t in sums[0].args])
    if coeff != 1.0:
        factors.insert(0, Const(coeff))
    if len(factors) == 1:
        return factors[0]
    return Mul(*factors)


def _simp_pow(base, p):
    if p == 0.0:
        return ONE
    if p == 1.0:
        return base
    if base.kind == _CONST:
        b = base.value
        if (b == 0.0 and p < 0) or (b < 0 and not _is_integer(p)):
            return Pow(base, p)
        return Const(b ** p)
    if base.kind == _POW and _is_integer(p):
        return _simp_pow(base.base, base.exponent * p)
    if base.kind == _EXP:
        return Exp(_simp_mul([Const(p), base.arg]))
    if base.kind == _MUL and _is_integer(p):
        return _simp_mul([_simp_pow(f, p) for f in base.args])
    return Pow(base, p)


# ----------------------------------------------------------------- text form

def to_text(e):
    memo = {}

    def show(node):
        hit = memo.get(node)
        if hit is not None:
            return hit
        k = node.kind
        if k == _CONST:
            out = repr(node.value)
        elif k == _VAR:
            out = f"(var {node.index})"
        elif k in (_ADD, _MUL):
            out = f"({node.tag} " + " ".join(show(a) for a in node.args) + ")"
        elif k == _DIV:
            out = f"(div {show(node.num)} {show(node.den)})"
        elif k == _POW:
            out = f"(pow {show(node.base)} {node.exponent!r})"
        else:
            out = f"(exp {show(node.arg)})"
        memo[node] = out
        return out

    return show(e)


_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def parse(text):
    """Inverse of :func:`to_text`."""
    tokens = _TOKEN.findall(text.strip())
    if not tokens:
        raise ValueError("empty expression")
    pos = 0

    def number(tok):
        try:
            return float(tok)
        except ValueError:
            raise ValueError(f"expected a number, got {tok!r}") from None

    def read():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ValueError("unbalanced ')'")
        if tok != "(":
            return Const(number(tok))
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        head = tokens[pos]
        pos += 1
        if head == "var":
            node = Var(int(number(tokens[pos])))
            pos += 1
        elif head == "pow":
            base = read()
            node = Pow(base, number(tokens[pos]))
            pos += 1
        elif head in ("add", "mul", "div", "exp"):
            args = []
            while pos < len(tokens) and tokens[pos] != ")":
                args.append(read())
            if head == "add":
                node = Add(*args)
            elif head == "mul":
                node = Mul(*args)
            elif head == "div":
                if len(args) != 2:
                    raise ValueError("div takes exactly two operands")
                node = Div(*args)
            else:
                if len(args) != 1:
                    raise ValueError("exp takes exactly one operand")
                node = Exp(args[0])
        else:
            raise ValueError(f"unknown operator {head!r}")
        if pos >= len(tokens) or tokens[pos] != ")":
            raise ValueError(f"missing ')' after {head}")
        pos += 1
        return node

    node = read()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens: {' '.join(tokens[pos:])}")
    return node
