"""Exact sparse multivariate polynomial arithmetic over the rationals.

Polynomials live in a shared variable ``Arena``.  Exponent vectors are packed
into a single Python integer (16 bits per variable), so monomial
multiplication is one integer addition and term dictionaries stay compact.
Coefficients are plain ``int`` where possible and ``fractions.Fraction``
otherwise; all ring operations are exact.

Evaluation accepts rational values (exact result) or floats/complex numbers
(double-precision result).  The homotopy solver does not evaluate these
objects term by term; it compiles whole systems once (see
:mod:`bmt.homotopy`).
"""

from __future__ import annotations

from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

_FIELD_BITS = 16
_FIELD_MASK = (1 << _FIELD_BITS) - 1
_MAX_EXPONENT = _FIELD_MASK

Coefficient = int | Fraction


class ArenaMismatchError(ValueError):
    """Raised when combining polynomials from different arenas."""


def _normalize(c):
    """Collapse integral Fractions to int; reject inexact coefficient types."""
    if type(c) is int:
        return c
    if isinstance(c, Fraction):
        return int(c) if c.denominator == 1 else c
    if isinstance(c, int):  # bool and int subclasses
        return int(c)
    raise TypeError(f"coefficient must be int or Fraction, got {type(c).__name__}")


class Arena:
    """An ordered set of named indeterminates shared by polynomials."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str]):
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate variable names in arena")
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Arena) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"Arena({list(self.names)!r})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def pack(self, exponents: Sequence[int]) -> int:
        if len(exponents) != len(self.names):
            raise ValueError("exponent vector length does not match arena")
        key = 0
        for i, e in enumerate(exponents):
            if e < 0 or e > _MAX_EXPONENT:
                raise ValueError(f"exponent {e} out of range")
            key |= e << (_FIELD_BITS * i)
        return key

    def unpack(self, key: int) -> tuple[int, ...]:
        return tuple((key >> (_FIELD_BITS * i)) & _FIELD_MASK for i in range(len(self.names)))

    def extended(self, extra: Iterable[str]) -> "Arena":
        """New arena with *extra* names appended.  Packed keys carry over."""
        return Arena(self.names + tuple(extra))

    # -- constructors -------------------------------------------------- #

    def zero(self) -> "SparsePoly":
        return SparsePoly(self, {})

    def const(self, c) -> "SparsePoly":
        c = _normalize(c)
        return SparsePoly(self, {} if c == 0 else {0: c})

    def one(self) -> "SparsePoly":
        return self.const(1)

    def var(self, name: str) -> "SparsePoly":
        return SparsePoly(self, {1 << (_FIELD_BITS * self.index(name)): 1})

    def variables(self) -> list["SparsePoly"]:
        return [self.var(name) for name in self.names]

    def monomial(self, exponents: Sequence[int], c=1) -> "SparsePoly":
        c = _normalize(c)
        return SparsePoly(self, {} if c == 0 else {self.pack(exponents): c})


def _key_degree(key: int) -> int:
    deg = 0
    while key:
        deg += key & _FIELD_MASK
        key >>= _FIELD_BITS
    return deg


class SparsePoly:
    """Immutable sparse polynomial: packed exponent key -> exact coefficient."""

    __slots__ = ("arena", "terms")

    def __init__(self, arena: Arena, terms: dict):
        self.arena = arena
        self.terms = terms  # owned; never mutated after construction

    # -- basics -------------------------------------------------------- #

    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def total_degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self.terms:
            return -1
        return max(_key_degree(k) for k in self.terms)

    def degree_in(self, name: str) -> int:
        shift = _FIELD_BITS * self.arena.index(name)
        if not self.terms:
            return -1
        return max((k >> shift) & _FIELD_MASK for k in self.terms)

    def constant(self):
        """Coefficient of the constant term."""
        return self.terms.get(0, 0)

    def is_homogeneous(self) -> bool:
        degs = {_key_degree(k) for k in self.terms}
        return len(degs) <= 1

    def _check_arena(self, other: "SparsePoly") -> None:
        if self.arena is not other.arena and self.arena != other.arena:
            raise ArenaMismatchError("polynomials belong to different arenas")

    def __eq__(self, other) -> bool:
        if isinstance(other, SparsePoly):
            return self.arena == other.arena and self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.terms == ({} if other == 0 else {0: _normalize(other)})
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.arena, frozenset(self.terms.items())))

    # -- ring operations ------------------------------------------------ #

    def __add__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self.arena.const(other)
        elif not isinstance(other, SparsePoly):
            return NotImplemented
        self._check_arena(other)
        a, b = self.terms, other.terms
        if len(a) < len(b):
            a, b = b, a
        out = dict(a)
        for k, c in b.items():
            s = out.get(k, 0) + c
            if s == 0:
                out.pop(k, None)
            else:
                out[k] = _normalize(s)
        return SparsePoly(self.arena, out)

    __radd__ = __add__

    def __neg__(self):
        return SparsePoly(self.arena, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, Fraction)):
            other = self.arena.const(other)
        elif not isinstance(other, SparsePoly):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            c = _normalize(other)
            if c == 0:
                return self.arena.zero()
            return SparsePoly(self.arena, {k: _normalize(v * c) for k, v in self.terms.items()})
        if not isinstance(other, SparsePoly):
            return NotImplemented
        self._check_arena(other)
        a, b = self.terms, other.terms
        if len(a) < len(b):
            a, b = b, a
        out: dict = {}
        get = out.get
        for kb, cb in b.items():
            for ka, ca in a.items():
                k = ka + kb
                s = get(k, 0) + ca * cb
                if s == 0:
                    out.pop(k, None)
                else:
                    out[k] = s
        for k, c in out.items():
            if isinstance(c, Fraction) and c.denominator == 1:
                out[k] = int(c)
        return SparsePoly(self.arena, out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("exponent must be a nonnegative integer")
        result = self.arena.one()
        base = self
        while n:
            if n & 1:
                result = result * base
            base_needed = n >> 1
            if base_needed:
                base = base * base
            n = base_needed
        return result

    # -- calculus -------------------------------------------------------- #

    def diff(self, name: str) -> "SparsePoly":
        """Formal partial derivative with respect to variable *name*."""
        shift = _FIELD_BITS * self.arena.index(name)
        out: dict = {}
        for k, c in self.terms.items():
            e = (k >> shift) & _FIELD_MASK
            if e:
                out[k - (1 << shift)] = _normalize(c * e)
        return SparsePoly(self.arena, out)

    # -- evaluation ------------------------------------------------------ #

    def eval(self, assignment):
        """Evaluate at a full variable assignment.

        *assignment* is either a mapping from variable names to values or a
        sequence ordered like the arena.  Every arena variable must be
        assigned.  Rational inputs give an exact rational result.
        """
        names = self.arena.names
        if isinstance(assignment, Mapping):
            missing = [n for n in names if n not in assignment]
            if missing:
                raise KeyError(f"missing assignment for {missing}")
            values = [assignment[n] for n in names]
        else:
            values = list(assignment)
            if len(values) != len(names):
                raise ValueError("assignment length does not match arena")
        if not self.terms:
            return 0
        nvars = len(names)
        # per-variable power tables up to the max exponent actually used
        maxexp = [0] * nvars
        for k in self.terms:
            kk = k
            i = 0
            while kk:
                e = kk & _FIELD_MASK
                if e > maxexp[i]:
                    maxexp[i] = e
                kk >>= _FIELD_BITS
                i += 1
        tables = []
        for i in range(nvars):
            row = [1]
            v = values[i]
            for _ in range(maxexp[i]):
                row.append(row[-1] * v)
            tables.append(row)
        total = 0
        for k, c in self.terms.items():
            term = c
            kk = k
            i = 0
            while kk:
                e = kk & _FIELD_MASK
                if e:
                    term = term * tables[i][e]
                kk >>= _FIELD_BITS
                i += 1
            total = total + term
        return total

    # -- structural helpers ----------------------------------------------- #

    def leading_term(self) -> tuple[int, Coefficient]:
        """(packed key, coefficient) of the graded-lex leading term."""
        if not self.terms:
            raise ValueError("zero polynomial has no leading term")
        unpack = self.arena.unpack
        best = max(self.terms, key=lambda k: (_key_degree(k), unpack(k)))
        return best, self.terms[best]

    def divexact(self, divisor: "SparsePoly") -> "SparsePoly":
        """Exact division; raises ``ValueError`` if *divisor* does not divide."""
        self._check_arena(divisor)
        if divisor.is_zero():
            raise ZeroDivisionError("division by zero polynomial")
        if self.is_zero():
            return self.arena.zero()
        unpack = self.arena.unpack
        kb, cb = divisor.leading_term()
        eb = unpack(kb)
        rem = dict(self.terms)
        quo: dict = {}
        bterms = divisor.terms
        while rem:
            ka = max(rem, key=lambda k: (_key_degree(k), unpack(k)))
            ca = rem[ka]
            ea = unpack(ka)
            if any(x < y for x, y in zip(ea, eb)):
                raise ValueError("polynomial division is not exact")
            kq = ka - kb
            c = Fraction(ca, cb) if (not isinstance(ca, Fraction) and not isinstance(cb, Fraction)) else Fraction(ca) / Fraction(cb)
            c = _normalize(c)
            quo[kq] = c
            for k2, c2 in bterms.items():
                k = k2 + kq
                s = rem.get(k, 0) - c * c2
                if s == 0:
                    rem.pop(k, None)
                else:
                    rem[k] = _normalize(s)
        return SparsePoly(self.arena, quo)

    def divisible_by_variable(self, name: str) -> bool:
        shift = _FIELD_BITS * self.arena.index(name)
        return all((k >> shift) & _FIELD_MASK for k in self.terms)

    def rename(self, new_arena: Arena, mapping: Mapping[str, str]) -> "SparsePoly":
        """Transport to *new_arena* renaming variables via *mapping*.

        Every variable occurring with a positive exponent must be mapped.
        """
        positions = {}
        for name in self.arena.names:
            if name in mapping:
                positions[self.arena.index(name)] = new_arena.index(mapping[name])
        out: dict = {}
        for k, c in self.terms.items():
            exps = self.arena.unpack(k)
            new_exps = [0] * len(new_arena)
            for i, e in enumerate(exps):
                if e == 0:
                    continue
                if i not in positions:
                    raise KeyError(f"variable {self.arena.names[i]!r} not mapped")
                new_exps[positions[i]] += e
            out[new_arena.pack(new_exps)] = c
        return SparsePoly(new_arena, out)

    def substitute(self, values: Mapping[str, "SparsePoly | int | Fraction"]) -> "SparsePoly":
        """Substitute polynomials (or constants) for a subset of variables."""
        arena = self.arena
        subs = {}
        for name, v in values.items():
            idx = arena.index(name)
            subs[idx] = v if isinstance(v, SparsePoly) else arena.const(v)
        result = arena.zero()
        for k, c in self.terms.items():
            exps = arena.unpack(k)
            rest = list(exps)
            term = arena.const(c)
            for i, e in enumerate(exps):
                if i in subs and e:
                    rest[i] = 0
                    term = term * subs[i] ** e
            term = term * arena.monomial(rest)
            result = result + term
        return result

    # -- printing --------------------------------------------------------- #

    def sorted_terms(self) -> list[tuple[tuple[int, ...], Coefficient]]:
        """Terms as (exponent tuple, coefficient), graded-lex descending."""
        unpack = self.arena.unpack
        keys = sorted(self.terms, key=lambda k: (_key_degree(k), unpack(k)), reverse=True)
        return [(unpack(k), self.terms[k]) for k in keys]

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        names = self.arena.names
        pieces = []
        for exps, c in self.sorted_terms():
            factors = []
            for name, e in zip(names, exps):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mono = "*".join(factors)
            neg = c < 0
            mag = -c if neg else c
            if mono and mag == 1:
                body = mono
            elif mono:
                body = f"{mag}*{mono}"
            else:
                body = str(mag)
            if not pieces:
                pieces.append(f"-{body}" if neg else body)
            else:
                pieces.append(f"- {body}" if neg else f"+ {body}")
        return " ".join(pieces)

    def __repr__(self) -> str:
        return f"SparsePoly({self})"


@dataclass(frozen=True)
class PolySystem:
    """An ordered polynomial system over a shared arena.

    ``unknowns`` is the declared subset of arena variables the solver treats
    as unknowns; remaining variables are symbolic constants.  The system is
    square when the equation count matches the unknown count.
    """

    arena: Arena
    equations: tuple[SparsePoly, ...]
    unknowns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        unknowns = self.unknowns or self.arena.names
        object.__setattr__(self, "unknowns", tuple(unknowns))
        for u in self.unknowns:
            self.arena.index(u)
        for eq in self.equations:
            if eq.arena != self.arena:
                raise ArenaMismatchError("equation arena differs from system arena")

    @property
    def is_square(self) -> bool:
        return len(self.equations) == len(self.unknowns)

    def degrees(self) -> tuple[int, ...]:
        return tuple(eq.total_degree() for eq in self.equations)

    def eval(self, assignment):
        return [eq.eval(assignment) for eq in self.equations]

    def __len__(self) -> int:
        return len(self.equations)


def homogenize(system: PolySystem, z: str = "z") -> PolySystem:
    """Homogenize every equation of a square system with a fresh variable.

    Each equation is brought to its own total degree by multiplying terms
    with powers of *z*; substituting ``z = 1`` recovers the input.  Already
    homogeneous systems pass through with *z* present but unused.
    """
    if not system.is_square:
        raise ValueError("homogenize expects a square system")
    if z in system.arena.names:
        raise ValueError(f"variable {z!r} already in use")
    new_arena = system.arena.extended([z])
    zshift = _FIELD_BITS * new_arena.index(z)
    new_eqs = []
    for eq in system.equations:
        d = eq.total_degree()
        terms = {}
        for k, c in eq.terms.items():
            pad = d - _key_degree(k)
            terms[k | (pad << zshift)] = c
        new_eqs.append(SparsePoly(new_arena, terms))
    return PolySystem(new_arena, tuple(new_eqs), system.unknowns + (z,))
