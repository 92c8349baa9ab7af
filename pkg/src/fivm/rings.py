"""Payload algebra for ring-annotated relations.

Every relation in this package maps key tuples to payloads drawn from a
commutative ring. The ring is pluggable: plain integer or real arithmetic,
degree-m covariance triples for statistics workloads, or relational payloads
(finite maps from tuples to scalars) that let query results live inside
payloads. This module defines the ring descriptor, the payload types, the
five ring operations, and the lifting functions that inject domain values
into a ring during marginalization.

Payloads are plain values (ints, floats) or small immutable-by-convention
objects; all operations are pure and never mutate their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

__all__ = [
    "RingSpec",
    "RelationalPayload",
    "CovarianceTriple",
    "LiftingFunction",
    "integer_ring",
    "real_ring",
    "covariance_ring",
    "relational_ring",
    "relational_payload",
    "relational_total",
    "covariance_dense",
    "lift_to_one",
    "lift_identity",
    "lift_continuous",
    "lift_categorical",
    "lift_singleton",
    "lift_unit",
    "ring_add",
    "ring_mul",
    "ring_negate",
    "ring_zero",
    "ring_one",
    "is_zero",
    "lift",
]

INTEGER = "integer"
REAL = "real"
COVARIANCE = "covariance"
RELATIONAL = "relational"

TO_ONE = "to_one"
IDENTITY = "identity"
COVARIANCE_CONTINUOUS = "covariance_continuous"
COVARIANCE_CATEGORICAL = "covariance_categorical"
RELATIONAL_SINGLETON = "relational_singleton"
RELATIONAL_UNIT = "relational_unit"


@dataclass(frozen=True)
class RingSpec:
    """Descriptor of one payload ring.

    ``kind`` selects the algebra. Covariance rings carry a ``degree`` (the
    number of aggregate slots) and a ``base`` of either "real" (plain float
    components) or "relational" (components are relational payloads, which
    is what mixed categorical data needs). Relational rings carry a scalar
    ``base`` of "integer" or "real". ``zero_tolerance`` applies only to
    zero tests of real-based payloads; exact rings must keep it at 0.
    """

    kind: str
    degree: int = 0
    base: str = ""
    zero_tolerance: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (INTEGER, REAL, COVARIANCE, RELATIONAL):
            raise ValueError(f"unknown ring kind: {self.kind!r}")
        if self.kind == COVARIANCE:
            if self.degree < 1:
                raise ValueError("covariance ring needs degree >= 1")
            if self.base not in (REAL, RELATIONAL):
                raise ValueError("covariance base must be 'real' or 'relational'")
        if self.kind == RELATIONAL and self.base not in (INTEGER, REAL):
            raise ValueError("relational base must be 'integer' or 'real'")
        if self.zero_tolerance < 0:
            raise ValueError("zero_tolerance must be non-negative")
        if self.kind == INTEGER and self.zero_tolerance != 0:
            raise ValueError("integer ring is exact; zero_tolerance must be 0")
        if self.kind == RELATIONAL and self.base == INTEGER and self.zero_tolerance != 0:
            raise ValueError("relational ring over integers is exact; zero_tolerance must be 0")


def integer_ring() -> RingSpec:
    return RingSpec(kind=INTEGER)


def real_ring(zero_tolerance: float = 0.0) -> RingSpec:
    return RingSpec(kind=REAL, zero_tolerance=zero_tolerance)


def covariance_ring(degree: int, base: str = REAL, zero_tolerance: float = 0.0) -> RingSpec:
    return RingSpec(kind=COVARIANCE, degree=degree, base=base, zero_tolerance=zero_tolerance)


def relational_ring(base: str = INTEGER, zero_tolerance: float = 0.0) -> RingSpec:
    return RingSpec(kind=RELATIONAL, base=base, zero_tolerance=zero_tolerance)


class RelationalPayload:
    """A finite map from tuples over a fixed column set to non-zero scalars.

    The schema is kept sorted by column name so that payloads built along
    different join orders compare equal. The additive zero is the empty map
    and is normalized to an empty schema; the multiplicative one maps the
    empty tuple to scalar 1.
    """

    __slots__ = ("schema", "entries")

    def __init__(self, schema: tuple[str, ...], entries: dict[tuple, Any]):
        self.schema = schema if entries else ()
        self.entries = entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RelationalPayload):
            return NotImplemented
        return self.schema == other.schema and self.entries == other.entries

    def __hash__(self) -> int:
        return hash((self.schema, frozenset(self.entries.items())))

    def __repr__(self) -> str:
        cols = ",".join(self.schema)
        body = ", ".join(f"{k}->{v}" for k, v in self.entries.items())
        return f"RelationalPayload[{cols}]{{{body}}}"

    def total(self) -> Any:
        """Sum of all stored scalars (the payload marginalized to nothing)."""
        return sum(self.entries.values())


def relational_payload(schema, entries) -> RelationalPayload:
    """Build a canonical relational payload from possibly unsorted input.

    Columns are sorted by name, key tuples are permuted to match, and zero
    scalars are dropped. Accepts any iterable of column names and any
    mapping from tuples to scalars.
    """
    cols = tuple(schema)
    order = tuple(sorted(range(len(cols)), key=lambda i: cols[i]))
    sorted_cols = tuple(cols[i] for i in order)
    if len(set(sorted_cols)) != len(sorted_cols):
        raise ValueError(f"duplicate columns in payload schema: {cols}")
    out: dict[tuple, Any] = {}
    for key, val in entries.items():
        if val == 0:
            continue
        key = tuple(key)
        if len(key) != len(cols):
            raise ValueError(f"key {key} does not match schema {cols}")
        out[tuple(key[i] for i in order)] = val
    return RelationalPayload(sorted_cols, out)


def relational_total(p: RelationalPayload) -> RelationalPayload:
    """Collapse a payload to a single scalar entry {() -> total}."""
    t = p.total()
    if t == 0:
        return RelationalPayload((), {})
    return RelationalPayload((), {(): t})


def _rp_add(a: RelationalPayload, b: RelationalPayload) -> RelationalPayload:
    if not a.entries:
        return b
    if not b.entries:
        return a
    if a.schema != b.schema:
        # Mismatched non-zero schemas combine on their shared columns: both
        # sides are first marginalized onto the intersection. This keeps
        # addition total and distributivity intact; the engine itself only
        # ever adds payloads of equal schema.
        shared = tuple(c for c in a.schema if c in set(b.schema))
        a = _rp_project(a, shared)
        b = _rp_project(b, shared)
        if not a.entries:
            return b
        if not b.entries:
            return a
    out = dict(a.entries)
    for key, val in b.entries.items():
        merged = out.get(key, 0) + val
        if merged == 0:
            out.pop(key, None)
        else:
            out[key] = merged
    return RelationalPayload(a.schema, out)


def _rp_project(p: RelationalPayload, cols: tuple[str, ...]) -> RelationalPayload:
    pos = [p.schema.index(c) for c in cols]
    out: dict[tuple, Any] = {}
    for key, val in p.entries.items():
        k = tuple(key[i] for i in pos)
        merged = out.get(k, 0) + val
        if merged == 0:
            out.pop(k, None)
        else:
            out[k] = merged
    return RelationalPayload(cols, out)


def _rp_mul(a: RelationalPayload, b: RelationalPayload) -> RelationalPayload:
    if not a.entries or not b.entries:
        return RelationalPayload((), {})
    shared = tuple(c for c in a.schema if c in set(b.schema))
    merged_schema = tuple(sorted(set(a.schema) | set(b.schema)))
    a_pos = {c: i for i, c in enumerate(a.schema)}
    b_pos = {c: i for i, c in enumerate(b.schema)}
    out: dict[tuple, Any] = {}
    if shared:
        groups: dict[tuple, list[tuple[tuple, Any]]] = {}
        b_shared = [b_pos[c] for c in shared]
        for key, val in b.entries.items():
            groups.setdefault(tuple(key[i] for i in b_shared), []).append((key, val))
        a_shared = [a_pos[c] for c in shared]
        for akey, aval in a.entries.items():
            probe = tuple(akey[i] for i in a_shared)
            for bkey, bval in groups.get(probe, ()):
                prod = aval * bval
                if prod == 0:
                    continue
                mk = tuple(
                    akey[a_pos[c]] if c in a_pos else bkey[b_pos[c]] for c in merged_schema
                )
                acc = out.get(mk, 0) + prod
                if acc == 0:
                    out.pop(mk, None)
                else:
                    out[mk] = acc
    else:
        for akey, aval in a.entries.items():
            for bkey, bval in b.entries.items():
                prod = aval * bval
                if prod == 0:
                    continue
                mk = tuple(
                    akey[a_pos[c]] if c in a_pos else bkey[b_pos[c]] for c in merged_schema
                )
                out[mk] = out.get(mk, 0) + prod
    return RelationalPayload(merged_schema, out)


def _rp_neg(a: RelationalPayload) -> RelationalPayload:
    return RelationalPayload(a.schema, {k: -v for k, v in a.entries.items()})


class CovarianceTriple:
    """Compound aggregate (count, per-slot sums, pairwise sums of products).

    Components are stored sparsely: ``s`` maps slot index (1-based) to the
    slot's sum, ``Q`` maps an index pair (i, j) with i <= j to the pairwise
    sum of products. Reading the mirror pair (j, i) is the caller's duty via
    :func:`covariance_dense` or by normalizing the pair. Component values
    are floats for a real base and relational payloads for the generalized
    ring over mixed data.
    """

    __slots__ = ("c", "s", "Q")

    def __init__(self, c: Any, s: dict[int, Any], Q: dict[tuple[int, int], Any]):
        self.c = c
        self.s = s
        self.Q = Q

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CovarianceTriple):
            return NotImplemented
        return self.c == other.c and self.s == other.s and self.Q == other.Q

    def __repr__(self) -> str:
        return f"CovarianceTriple(c={self.c!r}, s={self.s!r}, Q={self.Q!r})"


def covariance_dense(spec: RingSpec, t: CovarianceTriple):
    """Expand a sparse triple to (c, s list of length m, m x m symmetric Q).

    For a relational base the components stay relational payloads; missing
    blocks come back as the base zero.
    """
    base = _base_ops(spec)
    m = spec.degree
    s = [t.s.get(j, base.zero()) for j in range(1, m + 1)]
    q = [[base.zero() for _ in range(m)] for _ in range(m)]
    for (i, j), val in t.Q.items():
        q[i - 1][j - 1] = val
        q[j - 1][i - 1] = val
    return t.c, s, q


@dataclass(frozen=True)
class LiftingFunction:
    """How one variable's values enter the payload ring when marginalized.

    ``valuer`` translates a dictionary-encoded key id into the numeric value
    a continuous lift should use; when omitted, the id itself is the value,
    which keeps raw integer data exact.
    """

    target_variable: str
    mode: str
    slot: Optional[int] = None
    valuer: Optional[Callable[[int], float]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in (
            TO_ONE,
            IDENTITY,
            COVARIANCE_CONTINUOUS,
            COVARIANCE_CATEGORICAL,
            RELATIONAL_SINGLETON,
            RELATIONAL_UNIT,
        ):
            raise ValueError(f"unknown lift mode: {self.mode!r}")
        if self.mode in (COVARIANCE_CONTINUOUS, COVARIANCE_CATEGORICAL):
            if self.slot is None or self.slot < 1:
                raise ValueError("covariance lifts need a slot index >= 1")


def lift_to_one(var: str) -> LiftingFunction:
    return LiftingFunction(var, TO_ONE)


def lift_identity(var: str, valuer: Optional[Callable[[int], float]] = None) -> LiftingFunction:
    return LiftingFunction(var, IDENTITY, valuer=valuer)


def lift_continuous(var: str, slot: int, valuer: Optional[Callable[[int], float]] = None) -> LiftingFunction:
    return LiftingFunction(var, COVARIANCE_CONTINUOUS, slot=slot, valuer=valuer)


def lift_categorical(
    var: str, slot: int, valuer: Optional[Callable[[int], Any]] = None
) -> LiftingFunction:
    """Categorical lift; ``valuer`` can coarsen values, e.g. into bin ids."""
    return LiftingFunction(var, COVARIANCE_CATEGORICAL, slot=slot, valuer=valuer)


def lift_singleton(var: str) -> LiftingFunction:
    return LiftingFunction(var, RELATIONAL_SINGLETON)


def lift_unit(var: str) -> LiftingFunction:
    return LiftingFunction(var, RELATIONAL_UNIT)


class _BaseOps:
    """Scalar operations of a covariance ring's base component."""

    __slots__ = ("add", "mul", "neg", "zero", "one", "is_zero")

    def __init__(self, add, mul, neg, zero, one, is_zero):
        self.add = add
        self.mul = mul
        self.neg = neg
        self.zero = zero
        self.one = one
        self.is_zero = is_zero


def _base_ops(spec: RingSpec) -> _BaseOps:
    if spec.base == REAL:
        tol = spec.zero_tolerance
        return _BaseOps(
            add=lambda a, b: a + b,
            mul=lambda a, b: a * b,
            neg=lambda a: -a,
            zero=lambda: 0.0,
            one=lambda: 1.0,
            is_zero=lambda a: abs(a) <= tol,
        )
    return _BaseOps(
        add=_rp_add,
        mul=_rp_mul,
        neg=_rp_neg,
        zero=lambda: RelationalPayload((), {}),
        one=lambda: RelationalPayload((), {(): 1}),
        is_zero=lambda a: not a.entries,
    )


def _cov_check_degree(spec: RingSpec, t: CovarianceTriple) -> None:
    for j in t.s:
        if not 1 <= j <= spec.degree:
            raise ValueError(f"slot {j} outside degree {spec.degree}")
    for i, j in t.Q:
        if not (1 <= i <= j <= spec.degree):
            raise ValueError(f"pair ({i},{j}) outside degree {spec.degree}")


def _cov_add(spec: RingSpec, a: CovarianceTriple, b: CovarianceTriple) -> CovarianceTriple:
    base = _base_ops(spec)
    _cov_check_degree(spec, a)
    _cov_check_degree(spec, b)
    s = dict(a.s)
    for j, val in b.s.items():
        merged = base.add(s[j], val) if j in s else val
        if j in s and _exact_zero(merged):
            del s[j]
        else:
            s[j] = merged
    q = dict(a.Q)
    for ij, val in b.Q.items():
        merged = base.add(q[ij], val) if ij in q else val
        if ij in q and _exact_zero(merged):
            del q[ij]
        else:
            q[ij] = merged
    return CovarianceTriple(base.add(a.c, b.c), s, q)


def _exact_zero(v: Any) -> bool:
    if isinstance(v, RelationalPayload):
        return not v.entries
    return v == 0


def _cov_mul(spec: RingSpec, a: CovarianceTriple, b: CovarianceTriple) -> CovarianceTriple:
    """Multiply two covariance triples.

    Counts multiply; each sum slot is cross-scaled by the other side's count;
    each pairwise block combines both cross-scaled blocks with the symmetric
    outer product of the sum vectors, so that (i, j) picks up a_i*b_j plus
    b_i*a_j (twice a_i*b_i on the diagonal).
    """
    base = _base_ops(spec)
    _cov_check_degree(spec, a)
    _cov_check_degree(spec, b)
    c = base.mul(a.c, b.c)
    s: dict[int, Any] = {}
    for j, val in a.s.items():
        term = base.mul(b.c, val)
        if not _exact_zero(term):
            s[j] = term
    for j, val in b.s.items():
        term = base.mul(a.c, val)
        if j in s:
            merged = base.add(s[j], term)
            if _exact_zero(merged):
                del s[j]
            else:
                s[j] = merged
        elif not _exact_zero(term):
            s[j] = term
    q: dict[tuple[int, int], Any] = {}

    def q_acc(i: int, j: int, term: Any) -> None:
        if _exact_zero(term):
            return
        ij = (i, j) if i <= j else (j, i)
        if ij in q:
            merged = base.add(q[ij], term)
            if _exact_zero(merged):
                del q[ij]
            else:
                q[ij] = merged
        else:
            q[ij] = term

    for (i, j), val in a.Q.items():
        q_acc(i, j, base.mul(b.c, val))
    for (i, j), val in b.Q.items():
        q_acc(i, j, base.mul(a.c, val))
    for i, av in a.s.items():
        for j, bv in b.s.items():
            q_acc(i, j, base.mul(av, bv))
    return CovarianceTriple(c, s, q)


def ring_zero(spec: RingSpec) -> Any:
    if spec.kind == INTEGER:
        return 0
    if spec.kind == REAL:
        return 0.0
    if spec.kind == COVARIANCE:
        return CovarianceTriple(_base_ops(spec).zero(), {}, {})
    return RelationalPayload((), {})


def ring_one(spec: RingSpec) -> Any:
    if spec.kind == INTEGER:
        return 1
    if spec.kind == REAL:
        return 1.0
    if spec.kind == COVARIANCE:
        return CovarianceTriple(_base_ops(spec).one(), {}, {})
    return RelationalPayload((), {(): 1})


def ring_add(spec: RingSpec, a: Any, b: Any) -> Any:
    if spec.kind in (INTEGER, REAL):
        return a + b
    if spec.kind == COVARIANCE:
        return _cov_add(spec, a, b)
    return _rp_add(a, b)


def ring_mul(spec: RingSpec, a: Any, b: Any) -> Any:
    if spec.kind in (INTEGER, REAL):
        return a * b
    if spec.kind == COVARIANCE:
        return _cov_mul(spec, a, b)
    return _rp_mul(a, b)


def ring_negate(spec: RingSpec, a: Any) -> Any:
    if spec.kind in (INTEGER, REAL):
        return -a
    if spec.kind == COVARIANCE:
        base = _base_ops(spec)
        return CovarianceTriple(
            base.neg(a.c),
            {j: base.neg(v) for j, v in a.s.items()},
            {ij: base.neg(v) for ij, v in a.Q.items()},
        )
    return _rp_neg(a)


def is_zero(spec: RingSpec, a: Any) -> bool:
    if spec.kind == INTEGER:
        return a == 0
    if spec.kind == REAL:
        return abs(a) <= spec.zero_tolerance
    if spec.kind == COVARIANCE:
        base = _base_ops(spec)
        return (
            base.is_zero(a.c)
            and all(base.is_zero(v) for v in a.s.values())
            and all(base.is_zero(v) for v in a.Q.values())
        )
    if spec.base == REAL and spec.zero_tolerance > 0:
        return all(abs(v) <= spec.zero_tolerance for v in a.entries.values())
    return not a.entries


def lift(spec: RingSpec, f: LiftingFunction, x: Any) -> Any:
    """Map one domain value into the ring through the lifting function ``f``."""
    mode = f.mode
    if mode == TO_ONE:
        return ring_one(spec)
    if mode == IDENTITY:
        if spec.kind not in (INTEGER, REAL):
            raise ValueError("identity lift needs a plain numeric ring")
        v = f.valuer(x) if f.valuer is not None else x
        if not isinstance(v, (int, float)):
            raise ValueError(f"identity lift of non-numeric value {v!r}")
        return int(v) if spec.kind == INTEGER else float(v)
    if mode == COVARIANCE_CONTINUOUS:
        if spec.kind != COVARIANCE:
            raise ValueError("continuous lift needs a covariance ring")
        v = f.valuer(x) if f.valuer is not None else x
        if not isinstance(v, (int, float)):
            raise ValueError(f"continuous lift of non-numeric value {v!r}")
        j = f.slot
        if j > spec.degree:
            raise ValueError(f"slot {j} outside degree {spec.degree}")
        if spec.base == REAL:
            v = float(v)
            s = {j: v} if v != 0 else {}
            q = {(j, j): v * v} if v != 0 else {}
            return CovarianceTriple(1.0, s, q)
        sv = RelationalPayload((), {(): v}) if v != 0 else RelationalPayload((), {})
        qv = RelationalPayload((), {(): v * v}) if v != 0 else RelationalPayload((), {})
        return CovarianceTriple(
            RelationalPayload((), {(): 1}),
            {j: sv} if sv.entries else {},
            {(j, j): qv} if qv.entries else {},
        )
    if mode == COVARIANCE_CATEGORICAL:
        if spec.kind != COVARIANCE or spec.base != RELATIONAL:
            raise ValueError("categorical lift needs a covariance ring over relational payloads")
        j = f.slot
        if j > spec.degree:
            raise ValueError(f"slot {j} outside degree {spec.degree}")
        if f.valuer is not None:
            x = f.valuer(x)
        group = RelationalPayload((f.target_variable,), {(x,): 1})
        return CovarianceTriple(
            RelationalPayload((), {(): 1}),
            {j: group},
            {(j, j): group},
        )
    if mode == RELATIONAL_SINGLETON:
        if spec.kind != RELATIONAL:
            raise ValueError("singleton lift needs a relational ring")
        return RelationalPayload((f.target_variable,), {(x,): 1})
    if mode == RELATIONAL_UNIT:
        if spec.kind != RELATIONAL:
            raise ValueError("unit lift needs a relational ring")
        return RelationalPayload((), {(): 1})
    raise ValueError(f"unknown lift mode: {mode!r}")
