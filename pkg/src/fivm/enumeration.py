"""Result enumeration and per-tuple payload lookup.

For output-oriented trees, results stream without being stored anywhere:
free variables are walked top-down, each one iterating the distinct values
a grouped index holds under the already-fixed ancestors, and the payload
of a complete tuple multiplies together the stored payloads of the views
that cover it. General trees keep the whole result keyed in their root, so
enumeration there is a plain scan.
"""

from __future__ import annotations

from typing import Any, Iterator, Optional

from fivm.ivm import RuntimeState
from fivm.queries import GROUP_BY
from fivm.relations import Relation, prefix_enumerate
from fivm.rings import (
    COVARIANCE,
    REAL,
    RELATIONAL,
    RelationalPayload,
    covariance_dense,
    is_zero,
    relational_payload,
    ring_mul,
    ring_zero,
)
from fivm.viewtree import LEAF, ViewNode

__all__ = [
    "listing_csv_rows",
    "enumerate_result",
    "payload_of_tuple",
    "materialize_listing",
]


def enumerate_result(
    state: RuntimeState, limit: Optional[int] = None
) -> Iterator[tuple[tuple, Any]]:
    """Yield (key, payload) result rows, keys in the query's free order.

    Under an output-oriented tree the rows come out in the nested order of
    the variable order's walk; payloads whose contributions cancel to zero
    are skipped. A general tree is read straight from its root view.
    """
    query = state.query
    free = query.free
    if not free:
        root = state.result()
        for key, val in root.items():
            yield key, val
            return
        return
    if state.tree.mode == "tau":
        root = state.result()
        pos = [root.schema.index(v) for v in free]
        n = 0
        for key, val in root.items():
            yield tuple(key[i] for i in pos), val
            n += 1
            if limit is not None and n >= limit:
                return
        return

    roots = state.tree.roots
    if len(roots) == 1 and set(roots[0].keys) == set(free):
        # The root keys every result tuple already; read it off directly.
        root = state.result()
        pos = [root.schema.index(v) for v in free]
        n = 0
        for key, val in root.items():
            yield tuple(key[i] for i in pos), val
            n += 1
            if limit is not None and n >= limit:
                return
        return

    order = state.tree.order
    fvars = [v for v in order.variables if v in set(free)]
    out_pos = [fvars.index(v) for v in free]
    free_set = set(free)
    assign: dict[str, Any] = {}
    emitted = 0

    def walk(i: int) -> Iterator[tuple[tuple, Any]]:
        nonlocal emitted
        if limit is not None and emitted >= limit:
            return
        if i == len(fvars):
            row = tuple(assign[v] for v in fvars)
            val = _payload_for(state, dict(assign))
            if not is_zero(state.ring, val):
                emitted += 1
                yield tuple(row[j] for j in out_pos), val
            return
        var = fvars[i]
        node = state.tree.by_id[state.tree.enum_views[var]]
        rel = state.stored(node.id)
        fixed = set(order.ancestors(var)) & free_set
        probe_vars = tuple(v for v in node.out_schema if v in fixed)
        spec = rel.ensure_index(probe_vars, var)
        probe = tuple(assign[v] for v in probe_vars)
        for value, _keys in prefix_enumerate(rel, spec, probe):
            assign[var] = value
            yield from walk(i + 1)
            if limit is not None and emitted >= limit:
                break
        assign.pop(var, None)

    yield from walk(0)


def payload_of_tuple(state: RuntimeState, key: tuple) -> Any:
    """Payload of one would-be result row, given in the query's free order.

    Multiplies the stored payloads of the views that jointly cover the
    row: descent stops at any view whose keys are exactly the free
    variables of its subtree. Returns the ring zero when the row is not in
    the result.
    """
    free = state.query.free
    if len(key) != len(free):
        raise ValueError(f"expected values for {free}, got {key}")
    if state.tree.mode == "tau":
        root = state.result()
        pos = {v: i for i, v in enumerate(free)}
        probe = tuple(key[pos[v]] for v in root.schema)
        val = root.payload(probe)
        return val if val is not None else ring_zero(state.ring)
    return _payload_for(state, dict(zip(free, key)))


def _payload_for(state: RuntimeState, assign: dict[str, Any]) -> Any:
    free_set = set(state.query.free)
    ring = state.ring
    zero = ring_zero(ring)

    def rec(node: ViewNode) -> Any:
        if set(node.keys) == free_set & set(node.vars_under):
            rel = state.stored(node.id)
            val = rel.payload(tuple(assign[v] for v in node.keys))
            return val if val is not None else zero
        if not node.children:
            raise RuntimeError(f"cannot resolve payload below {node.id}")
        acc = None
        for c in node.children:
            v = rec(c)
            acc = v if acc is None else ring_mul(ring, acc, v)
            if is_zero(ring, acc):
                return zero
        return acc

    acc = None
    for r in state.tree.roots:
        v = rec(r)
        acc = v if acc is None else ring_mul(ring, acc, v)
    return acc if acc is not None else zero


def materialize_listing(state: RuntimeState, kind: str = "keys"):
    """Collect the full result, either as a relation or one nested payload.

    ``kind="keys"`` returns a relation keyed by the free variables holding
    each row's payload. ``kind="relational_payload"`` returns a single map
    from free-variable tuples to scalars, totalizing relational payloads
    where needed; it is how a listing result nests into one value.
    """
    query = state.query
    if kind == "keys":
        out = Relation(query.free, state.ring, counters=state.counters)
        for key, val in enumerate_result(state):
            out.accumulate(key, val)
        return out
    if kind != "relational_payload":
        raise ValueError(f"unknown listing kind: {kind!r}")
    entries: dict[tuple, Any] = {}
    for key, val in enumerate_result(state):
        if isinstance(val, RelationalPayload):
            entries[key] = val.total()
        elif isinstance(val, (int, float)):
            entries[key] = val
        else:
            raise ValueError("relational_payload listing needs scalar-like payloads")
    return relational_payload(query.free, entries)


def listing_csv_rows(
    state: RuntimeState, limit: Optional[int] = None
) -> tuple[list[str], Iterator[list]]:
    """Header and row iterator for a CSV dump of the result listing.

    The header starts with the free variables. Plain payloads add one
    ``payload`` column; relational payloads export their total; a
    real-based statistics triple expands into its count, the per-slot
    sums, and the upper triangle of the pairwise products.
    """
    ring = state.ring
    free = list(state.query.free)
    if ring.kind == COVARIANCE:
        if ring.base != REAL:
            raise ValueError("triples over grouped scalars have no flat CSV form")
        m = ring.degree
        header = (
            free
            + ["c"]
            + [f"s_{j}" for j in range(1, m + 1)]
            + [f"q_{i}_{j}" for i in range(1, m + 1) for j in range(i, m + 1)]
        )

        def rows() -> Iterator[list]:
            for key, val in enumerate_result(state, limit=limit):
                c, s, q = covariance_dense(ring, val)
                flat = [c] + list(s)
                for i in range(m):
                    flat.extend(q[i][i:])
                yield list(key) + flat

        return header, rows()
    header = free + ["payload"]

    def plain_rows() -> Iterator[list]:
        for key, val in enumerate_result(state, limit=limit):
            if isinstance(val, RelationalPayload):
                yield list(key) + [val.total()]
            else:
                yield list(key) + [val]

    return header, plain_rows()
