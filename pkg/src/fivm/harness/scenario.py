"""Scenario files: what to maintain, over which data, updated how.

A scenario is a JSON document naming the relations (with their initial
rows), the query shape, the variable order, which relations receive
updates, and how the update stream is batched and checked. Everything a
run needs is in the file, so a scenario is reproducible by path plus
seed alone.

Top-level keys:

``name``              display name (defaults to the file stem)
``ring``              {"kind": "integer"|"real"|"relational", ...}
``relations``         [{"name", "schema", "rows", "payload_column"?,
                      "signed"?}, ...]
``free``              output variables (default [])
``order``             nested variable order, or "canonical"
``lifts``             {var: "one"|"identity"|"unit"|"singleton"}
``kinds``             {var: "continuous"|"categorical"|{"binned": ...}};
                      presence switches the query to a statistics triple
``chain``             [p1, ..., pn+1]; presence compiles a matrix chain
``free_lift_mode``    "group_by" (default) or "relational_payload"
``mode``              force "tau" or "nu" tree construction
``updatable``         relation names that stream (default: all)
``fds``               [[["A"], ["B"]], ...] functional dependencies
``batch_size``        events per batch (default 1)
``intvl``             enumerate every this many batches (0 = never)
``seed``              stream shuffling seed (default 0)
``shuffle``           shuffle per-relation event order (default true)
``sorted_updates``    replay each relation's events in key order
``app``               {"kind": "regression"|"mi"|"chow_liu"|"covariance",
                      ...options}
``timeout_s``         abort a run that exceeds this many seconds

Rows hold one value per schema column; a relation with
``payload_column`` true carries the payload scalar after the key, and
one with ``signed`` true ends each row with +1 or -1 (deletes).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from ..apps import Binned, build_covariance_query, build_matrix_chain
from ..queries import (
    FDSet,
    GROUP_BY,
    Query,
    RELATIONAL_PAYLOAD,
    VariableOrder,
    canonical_free_top_order,
    classify,
)
from ..relations import OpCounters, Relation
from ..rings import (
    INTEGER,
    REAL,
    RELATIONAL,
    RingSpec,
    integer_ring,
    lift_identity,
    lift_singleton,
    lift_to_one,
    lift_unit,
    real_ring,
    relational_ring,
    ring_one,
)
from ..viewtree import ViewTree, plan_view_tree
from .streams import StreamEvent

__all__ = [
    "ScenarioError",
    "RelationSpec",
    "AppSpec",
    "Scenario",
    "CompiledScenario",
    "load_scenario",
    "scenario_from_dict",
    "compile_scenario",
    "bundled_scenarios",
    "load_relation_csv",
]


class ScenarioError(ValueError):
    """A scenario file that cannot be run as written."""


_TOP_KEYS = {
    "name",
    "ring",
    "relations",
    "free",
    "order",
    "lifts",
    "kinds",
    "chain",
    "free_lift_mode",
    "mode",
    "updatable",
    "fds",
    "batch_size",
    "intvl",
    "seed",
    "shuffle",
    "sorted_updates",
    "app",
    "timeout_s",
}

_LIFTS = {
    "one": lift_to_one,
    "identity": lift_identity,
    "unit": lift_unit,
    "singleton": lift_singleton,
}

_APP_KINDS = ("regression", "mi", "chow_liu", "covariance")


@dataclass(frozen=True)
class RelationSpec:
    name: str
    schema: tuple[str, ...]
    rows: tuple[tuple, ...]
    payload_column: bool = False
    signed: bool = False

    def events(self, ring: RingSpec) -> list[StreamEvent]:
        """Decode raw rows into stream events with ring payloads."""
        width = len(self.schema) + int(self.payload_column) + int(self.signed)
        out = []
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ScenarioError(
                    f"{self.name} row {i}: {len(row)} fields, expected {width}"
                )
            key = tuple(row[: len(self.schema)])
            rest = list(row[len(self.schema) :])
            payload: Any = ring_one(ring)
            if self.payload_column:
                raw = rest.pop(0)
                if ring.kind == INTEGER:
                    payload = int(raw)
                elif ring.kind == REAL:
                    payload = float(raw)
                else:
                    raise ScenarioError(
                        f"{self.name}: payload column needs a numeric ring"
                    )
            sign = 1
            if self.signed:
                sign = int(rest.pop(0))
                if sign not in (1, -1):
                    raise ScenarioError(f"{self.name} row {i}: sign must be +1 or -1")
            out.append(StreamEvent(self.name, key, payload, sign))
        return out


@dataclass(frozen=True)
class AppSpec:
    kind: str
    options: Mapping[str, Any]


@dataclass(frozen=True)
class Scenario:
    name: str
    relations: tuple[RelationSpec, ...]
    ring_doc: Mapping[str, Any]
    free: tuple[str, ...]
    order_doc: Any
    lift_doc: Mapping[str, str]
    kinds_doc: Optional[Mapping[str, Any]]
    chain: Optional[tuple[int, ...]]
    free_lift_mode: str
    mode: Optional[str]
    updatable: tuple[str, ...]
    fds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    batch_size: int
    intvl: int
    seed: int
    shuffle: bool
    sorted_updates: bool
    app: Optional[AppSpec]
    timeout_s: Optional[float]


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: {e}") from e
    return scenario_from_dict(doc, default_name=path.stem)


def scenario_from_dict(doc: Mapping[str, Any], default_name: str = "scenario") -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario document must be a JSON object")
    junk = set(doc) - _TOP_KEYS
    if junk:
        raise ScenarioError(f"unknown scenario keys: {sorted(junk)}")
    rels_doc = doc.get("relations")
    if not rels_doc:
        raise ScenarioError("a scenario needs at least one relation")
    rel_specs = []
    for r in rels_doc:
        extra = set(r) - {"name", "schema", "rows", "payload_column", "signed"}
        if extra:
            raise ScenarioError(f"unknown relation keys: {sorted(extra)}")
        rel_specs.append(
            RelationSpec(
                name=r["name"],
                schema=tuple(r["schema"]),
                rows=tuple(tuple(row) for row in r.get("rows", [])),
                payload_column=bool(r.get("payload_column", False)),
                signed=bool(r.get("signed", False)),
            )
        )

    names = [r.name for r in rel_specs]
    updatable = tuple(doc.get("updatable", names))
    unknown = set(updatable) - set(names)
    if unknown:
        raise ScenarioError(f"updatable names not declared: {sorted(unknown)}")

    batch_size = int(doc.get("batch_size", 1))
    if batch_size < 1:
        raise ScenarioError("batch_size must be at least 1")
    intvl = int(doc.get("intvl", 0))
    if intvl < 0:
        raise ScenarioError("intvl cannot be negative")

    app_doc = doc.get("app")
    app = None
    if app_doc is not None:
        kind = app_doc.get("kind")
        if kind not in _APP_KINDS:
            raise ScenarioError(f"unknown app kind {kind!r}")
        app = AppSpec(kind, {k: v for k, v in app_doc.items() if k != "kind"})

    fds = tuple(
        (tuple(lhs), tuple(rhs)) for lhs, rhs in doc.get("fds", [])
    )
    mode = doc.get("mode")
    if mode not in (None, "tau", "nu"):
        raise ScenarioError(f"unknown tree mode {mode!r}")
    flm = doc.get("free_lift_mode", "group_by")
    if flm not in ("group_by", "relational_payload"):
        raise ScenarioError(f"unknown free_lift_mode {flm!r}")

    return Scenario(
        name=doc.get("name", default_name),
        relations=tuple(rel_specs),
        ring_doc=doc.get("ring", {"kind": "integer"}),
        free=tuple(doc.get("free", [])),
        order_doc=doc.get("order"),
        lift_doc=doc.get("lifts", {}),
        kinds_doc=doc.get("kinds"),
        chain=tuple(doc["chain"]) if doc.get("chain") else None,
        free_lift_mode=GROUP_BY if flm == "group_by" else RELATIONAL_PAYLOAD,
        mode=mode,
        updatable=updatable,
        fds=fds,
        batch_size=batch_size,
        intvl=intvl,
        seed=int(doc.get("seed", 0)),
        shuffle=bool(doc.get("shuffle", True)),
        sorted_updates=bool(doc.get("sorted_updates", False)),
        app=app,
        timeout_s=doc.get("timeout_s"),
    )


def _ring_from_doc(doc: Mapping[str, Any]) -> RingSpec:
    kind = doc.get("kind", "integer")
    tol = float(doc.get("zero_tolerance", 0.0))
    if kind == "integer":
        return integer_ring()
    if kind == "real":
        return real_ring(zero_tolerance=tol)
    if kind == "relational":
        base = doc.get("base", "integer")
        if base not in (INTEGER, REAL):
            raise ScenarioError(f"unknown relational base {base!r}")
        return relational_ring(base=base, zero_tolerance=tol)
    raise ScenarioError(f"unknown ring kind {kind!r} (covariance comes from 'kinds')")


def _kind_from_doc(v: Any) -> Any:
    if isinstance(v, str):
        return v
    if isinstance(v, Mapping) and "binned" in v:
        b = v["binned"]
        return Binned(lo=float(b["lo"]), hi=float(b["hi"]), bins=int(b.get("bins", 100)))
    raise ScenarioError(f"unknown column kind {v!r}")


@dataclass
class CompiledScenario:
    """A scenario turned into runnable pieces, shared by every engine."""

    scenario: Scenario
    query: Query
    order: VariableOrder
    slots: Optional[tuple[str, ...]]
    result_schema: tuple[str, ...]
    static_events: dict[str, list[StreamEvent]]
    stream_events: list[tuple[str, list[StreamEvent]]]

    def plan(self, indicators: bool = True) -> ViewTree:
        return plan_view_tree(
            self.query,
            self.order,
            updatable=self.scenario.updatable,
            mode=self.scenario.mode,
            indicators=indicators,
        )


def compile_scenario(scn: Scenario, indicators: bool = True) -> CompiledScenario:
    """Build the query and order, then validate them against the scenario.

    Everything that can be rejected is rejected here, before any data
    moves: unknown lifts, orders over the wrong variables, apps pointed
    at the wrong ring, payload columns on non-numeric rings.
    """
    rel_decls = [(r.name, r.schema) for r in scn.relations]
    slots: Optional[tuple[str, ...]] = None

    if scn.chain is not None:
        if scn.kinds_doc is not None:
            raise ScenarioError("a chain scenario cannot also declare kinds")
        mc = build_matrix_chain(scn.chain)
        expect = [(d.name, d.schema) for d in mc.query.relations]
        if [(n, tuple(s)) for n, s in rel_decls] != expect:
            raise ScenarioError(
                f"chain relations must be exactly {expect} in order"
            )
        query, order = mc.query, mc.order
    elif scn.kinds_doc is not None:
        kinds = {v: _kind_from_doc(k) for v, k in scn.kinds_doc.items()}
        cq = build_covariance_query(rel_decls, kinds)
        query, slots = cq.query, cq.slots
        order = _order_from_doc(scn, query)
    else:
        ring = _ring_from_doc(scn.ring_doc)
        lifts = []
        for var, lift_name in scn.lift_doc.items():
            maker = _LIFTS.get(lift_name)
            if maker is None:
                raise ScenarioError(f"unknown lift {lift_name!r} for {var}")
            lifts.append(maker(var))
        query = Query(
            relations=rel_decls,
            free=scn.free,
            ring=ring,
            lifts=tuple(lifts),
            free_lift_mode=scn.free_lift_mode,
        )
        order = _order_from_doc(scn, query)

    if scn.mode == "nu" and not order.is_free_top(query.free):
        raise ScenarioError("output-oriented mode needs the free variables on top")
    if scn.app is not None:
        _check_app(scn.app, query, slots)

    tree = plan_view_tree(
        query, order, updatable=scn.updatable, mode=scn.mode, indicators=indicators
    )
    result_schema = tuple(
        dict.fromkeys(v for r in tree.roots for v in r.keys)
    )

    static_events: dict[str, list[StreamEvent]] = {}
    stream_events: list[tuple[str, list[StreamEvent]]] = []
    upd = set(scn.updatable)
    for r in scn.relations:
        events = r.events(query.ring)
        if r.name in upd:
            stream_events.append((r.name, events))
        else:
            for e in events:
                if e.sign < 0:
                    raise ScenarioError(
                        f"{r.name} is static but has a signed delete row"
                    )
            static_events.setdefault(r.name, []).extend(events)

    return CompiledScenario(
        scenario=scn,
        query=query,
        order=order,
        slots=slots,
        result_schema=result_schema,
        static_events=static_events,
        stream_events=stream_events,
    )


def _order_from_doc(scn: Scenario, query: Query) -> VariableOrder:
    doc = scn.order_doc
    if doc == "canonical":
        fdset = FDSet(scn.fds) if scn.fds else None
        q = query
        if fdset is not None:
            from ..queries import sigma_reduct

            q = sigma_reduct(query, fdset)
        cls = classify(q)
        if not cls.q_hierarchical:
            raise ScenarioError(
                "canonical order requested but the query is not q-hierarchical"
            )
        return canonical_free_top_order(q)
    if doc is None:
        raise ScenarioError("scenario needs an 'order' (or \"canonical\")")
    roots = doc if isinstance(doc[0], list) else [doc]
    order = VariableOrder(roots)
    missing = set(query.variables) - set(order.variables)
    if missing:
        raise ScenarioError(f"order does not place variables {sorted(missing)}")
    return order


def _check_app(app: AppSpec, query: Query, slots: Optional[tuple[str, ...]]) -> None:
    if query.ring.kind != "covariance":
        raise ScenarioError(f"app {app.kind!r} needs a statistics query (use 'kinds')")
    assert slots is not None
    if app.kind == "regression":
        label = app.options.get("label")
        feats = tuple(app.options.get("features", ()))
        if label not in slots:
            raise ScenarioError(f"regression label {label!r} is not a slot")
        bad = [f for f in feats if f not in slots]
        if bad:
            raise ScenarioError(f"regression features {bad} are not slots")
        if query.ring.base != REAL:
            raise ScenarioError("regression needs every slot continuous")
    if app.kind in ("mi", "chow_liu"):
        if query.ring.base != RELATIONAL:
            raise ScenarioError(f"{app.kind} needs categorical (or binned) slots")
        if len(slots) < 2:
            raise ScenarioError(f"{app.kind} needs at least two slots")
    if app.kind == "covariance" and query.ring.base != REAL:
        raise ScenarioError("covariance export needs continuous slots")


def bundled_scenarios() -> dict[str, Path]:
    """Name to path for every scenario shipped inside the package."""
    root = resources.files("fivm") / "scenarios"
    out: dict[str, Path] = {}
    with resources.as_file(root) as folder:
        for p in sorted(Path(folder).glob("*.json")):
            out[p.stem] = p
    return out


def _parse_field(raw: str) -> Any:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_relation_csv(
    path: str | Path,
    schema: Sequence[str],
    ring: RingSpec,
    payload_column: Optional[str] = None,
    counters: Optional[OpCounters] = None,
    name: Optional[str] = None,
) -> Relation:
    """Read one relation from a headed CSV file.

    The header must list exactly the schema columns, plus the payload
    column when one is named; duplicate keys accumulate. Numeric-looking
    fields are parsed as numbers, anything else stays a string. Malformed
    input fails with the file name and 1-based line number.
    """
    path = Path(path)
    schema = tuple(schema)
    expected = list(schema) + ([payload_column] if payload_column else [])
    rel = Relation(schema, ring, counters=counters, name=name or path.stem)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}:1: empty file, expected header {expected}")
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}:1: header {header} does not match {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ValueError(
                    f"{path}:{lineno}: {len(row)} fields, expected {len(expected)}"
                )
            key = tuple(_parse_field(f) for f in row[: len(schema)])
            if payload_column:
                raw = row[len(schema)].strip()
                try:
                    val: Any = int(raw) if ring.kind == INTEGER else float(raw)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad payload {raw!r}")
            else:
                val = ring_one(ring)
            rel.accumulate(key, val)
    return rel
