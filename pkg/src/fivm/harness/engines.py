"""Three ways to answer the same stream, and the glue to race them.

``fivm`` is the engine under test: a planned view tree maintained by
delta propagation. ``first_order`` keeps only the input relations and
the final result, recomputing each update's effect as a fresh join over
the inputs. ``reevaluate`` keeps the inputs and recomputes the result
from scratch after every batch. All three expose identical snapshots,
so a verification run is nothing but dictionary comparisons at agreed
checkpoints.

Every engine owns its counter block; the per-batch metric rows therefore
show what each strategy actually paid, in the same units.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from ..apps import (
    RegressionConfig,
    RegressionResult,
    chow_liu_tree,
    mutual_information_matrix,
    train_linear_regression,
)
from ..enumeration import enumerate_result
from ..ivm import RuntimeState, UpdateDelta, recompute_query
from ..relations import OpCounters, Relation
from ..rings import ring_negate
from .scenario import CompiledScenario, Scenario, ScenarioError, compile_scenario
from .streams import StreamEvent, synthesize_stream

__all__ = [
    "ENGINE_NAMES",
    "METRIC_COLUMNS",
    "make_engine",
    "run_scenario",
    "verify_scenarios",
    "emit_metrics",
    "RunReport",
]

log = logging.getLogger("fivm.harness")

ENGINE_NAMES = ("fivm", "first_order", "reevaluate")

METRIC_COLUMNS = (
    "scenario",
    "engine",
    "batch_index",
    "tuples_processed",
    "entry_reads",
    "entry_writes",
    "index_probes",
    "elapsed_ns",
    "enumerated_tuples",
)


class FivmEngine:
    """The maintained view tree, driven through its runtime state."""

    name = "fivm"

    def __init__(self, compiled: CompiledScenario, indicators: bool = True):
        self.compiled = compiled
        self.counters = OpCounters()
        self.tree = compiled.plan(indicators=indicators)
        self.state = RuntimeState(self.tree, counters=self.counters)

    def setup(self) -> None:
        data = {
            name: [(e.key, e.payload) for e in events]
            for name, events in self.compiled.static_events.items()
        }
        self.state.load(data)

    def apply(self, batch: Sequence[StreamEvent]) -> int:
        return self.state.apply_batch(_batch_deltas(self.compiled, batch))

    def root_snapshot(self) -> dict[tuple, Any]:
        return dict(self.state.result().entries)

    def listing_snapshot(self) -> dict[tuple, Any]:
        return dict(enumerate_result(self.state))


class FirstOrderEngine:
    """Inputs plus the result, with per-update delta joins over the inputs.

    Each update to one occurrence of a relation is turned into a join of
    the delta with the other relations' current contents; the output
    delta lands in the maintained result. No intermediate view exists,
    which is exactly what makes the comparison interesting.
    """

    name = "first_order"

    def __init__(self, compiled: CompiledScenario, indicators: bool = True):
        self.compiled = compiled
        self.counters = OpCounters()
        self.query = compiled.query
        self.leaves: dict[str, Relation] = {
            d.leaf_id: Relation(
                d.schema, self.query.ring, counters=self.counters, name=d.leaf_id
            )
            for d in self.query.relations
        }
        self.root = Relation(
            compiled.result_schema, self.query.ring, counters=self.counters
        )

    def setup(self) -> None:
        _load_leaves(self.compiled, self.leaves)
        self.root = recompute_query(
            self.query, self.leaves, self.compiled.result_schema, counters=self.counters
        )

    def apply(self, batch: Sequence[StreamEvent]) -> int:
        touched = 0
        for delta in _batch_deltas(self.compiled, batch):
            rel_ids = [
                d.leaf_id for d in self.query.relations if d.name == delta.target
            ]
            for leaf_id in rel_ids:
                schema = self.query.decl(leaf_id).schema
                drel = Relation(schema, self.query.ring, counters=self.counters)
                for key, val in delta.pairs:
                    drel.accumulate(tuple(key), val)
                if drel.entries:
                    subst = dict(self.leaves)
                    subst[leaf_id] = drel
                    droot = recompute_query(
                        self.query,
                        subst,
                        self.compiled.result_schema,
                        counters=self.counters,
                    )
                    for key, val in droot.items():
                        self.root.accumulate(key, val)
                # Advance this occurrence before the next one sees it.
                for key, val in delta.pairs:
                    self.leaves[leaf_id].accumulate(tuple(key), val)
                    touched += 1
        return touched

    def root_snapshot(self) -> dict[tuple, Any]:
        return dict(self.root.entries)

    def listing_snapshot(self) -> dict[tuple, Any]:
        return _oracle_listing(self.query, self.leaves, self.counters)


class ReevaluateEngine:
    """Inputs only; the result is rebuilt from scratch on every batch."""

    name = "reevaluate"

    def __init__(self, compiled: CompiledScenario, indicators: bool = True):
        self.compiled = compiled
        self.counters = OpCounters()
        self.query = compiled.query
        self.leaves: dict[str, Relation] = {
            d.leaf_id: Relation(
                d.schema, self.query.ring, counters=self.counters, name=d.leaf_id
            )
            for d in self.query.relations
        }
        self.root = Relation(
            compiled.result_schema, self.query.ring, counters=self.counters
        )

    def setup(self) -> None:
        _load_leaves(self.compiled, self.leaves)
        self._rebuild()

    def _rebuild(self) -> None:
        self.root = recompute_query(
            self.query, self.leaves, self.compiled.result_schema, counters=self.counters
        )

    def apply(self, batch: Sequence[StreamEvent]) -> int:
        touched = 0
        for delta in _batch_deltas(self.compiled, batch):
            for d in self.query.relations:
                if d.name != delta.target:
                    continue
                for key, val in delta.pairs:
                    self.leaves[d.leaf_id].accumulate(tuple(key), val)
                    touched += 1
        self._rebuild()
        return touched

    def root_snapshot(self) -> dict[tuple, Any]:
        return dict(self.root.entries)

    def listing_snapshot(self) -> dict[tuple, Any]:
        return _oracle_listing(self.query, self.leaves, self.counters)


_ENGINES = {
    "fivm": FivmEngine,
    "first_order": FirstOrderEngine,
    "reevaluate": ReevaluateEngine,
}


def make_engine(name: str, compiled: CompiledScenario, indicators: bool = True):
    cls = _ENGINES.get(name)
    if cls is None:
        raise ScenarioError(f"unknown engine {name!r}; pick one of {ENGINE_NAMES}")
    return cls(compiled, indicators=indicators)


def _batch_deltas(
    compiled: CompiledScenario, batch: Sequence[StreamEvent]
) -> list[UpdateDelta]:
    """Group a batch's events into one keyed delta per relation."""
    ring = compiled.query.ring
    grouped: dict[str, list[tuple[tuple, Any]]] = {}
    for e in batch:
        val = e.payload if e.sign > 0 else ring_negate(ring, e.payload)
        grouped.setdefault(e.relation, []).append((e.key, val))
    return [UpdateDelta(name, tuple(pairs)) for name, pairs in grouped.items()]


def _load_leaves(compiled: CompiledScenario, leaves: dict[str, Relation]) -> None:
    for d in compiled.query.relations:
        events = compiled.static_events.get(d.name, ())
        rel = leaves[d.leaf_id]
        for e in events:
            rel.accumulate(e.key, e.payload)


def _oracle_listing(query, leaves, counters) -> dict[tuple, Any]:
    if not query.free:
        rel = recompute_query(query, leaves, (), counters=counters)
        return dict(rel.entries)
    rel = recompute_query(query, leaves, query.free, counters=counters)
    return dict(rel.entries)


@dataclass
class RunReport:
    """Everything one engine produced over one scenario run."""

    scenario: str
    engine_name: str
    rows: list[tuple]
    engine: Any
    app_results: dict[str, Any] = field(default_factory=dict)


def _run_app(
    compiled: CompiledScenario, engine, report: RunReport, prior: Optional[dict]
) -> Optional[dict]:
    app = compiled.scenario.app
    if app is None:
        return prior
    root = engine.root_snapshot()
    stats = root.get(())
    if stats is None:
        return prior
    spec = compiled.query.ring
    slots = compiled.slots
    if app.kind == "regression":
        cfg = RegressionConfig(
            label=app.options["label"],
            features=tuple(app.options.get("features", ())),
            step_size=float(app.options.get("step_size", 1e-3)),
            gradient_threshold=float(app.options.get("gradient_threshold", 1e-9)),
            max_iterations=int(app.options.get("max_iterations", 200_000)),
            warm_start=bool(app.options.get("warm_start", False)),
        )
        res: RegressionResult = train_linear_regression(
            spec, slots, stats, cfg, prior=prior
        )
        report.app_results["regression"] = res
        return res.theta
    if app.kind in ("mi", "chow_liu"):
        mi = mutual_information_matrix(spec, slots, stats)
        report.app_results["mi"] = mi
        if app.kind == "chow_liu":
            report.app_results["chow_liu"] = chow_liu_tree(mi)
        return prior
    if app.kind == "covariance":
        report.app_results["covariance"] = stats
        return prior
    return prior


def run_scenario(
    compiled: CompiledScenario | Scenario,
    engine_name: str = "fivm",
    batch_size: Optional[int] = None,
    seed: Optional[int] = None,
    intvl: Optional[int] = None,
    indicators: bool = True,
) -> RunReport:
    """Stream one scenario through one engine, collecting metric rows.

    ``batch_size``, ``seed`` and ``intvl`` override the scenario's own
    settings when given. Each batch contributes one metric row; listing
    enumeration happens every ``intvl`` batches (never, when zero). A
    configured application reruns after every batch, with regression
    coefficients warm-started from the previous batch when the scenario
    asks for that.
    """
    if isinstance(compiled, Scenario):
        compiled = compile_scenario(compiled)
    scn = compiled.scenario
    bs = batch_size if batch_size is not None else scn.batch_size
    sd = seed if seed is not None else scn.seed
    iv = intvl if intvl is not None else scn.intvl

    engine = make_engine(engine_name, compiled, indicators=indicators)
    engine.setup()
    batches = synthesize_stream(
        compiled.stream_events, bs, seed=sd,
        shuffle=scn.shuffle, sorted_updates=scn.sorted_updates,
    )
    report = RunReport(scn.name, engine_name, [], engine)
    deadline = None
    if scn.timeout_s is not None:
        deadline = time.monotonic() + float(scn.timeout_s)
    prior: Optional[dict] = None
    for bi, batch in enumerate(batches, start=1):
        before = engine.counters.snapshot()
        t0 = time.perf_counter_ns()
        touched = engine.apply(batch)
        enumerated = 0
        if iv and bi % iv == 0:
            enumerated = len(engine.listing_snapshot())
        elapsed = time.perf_counter_ns() - t0
        reads, writes, probes = (
            a - b for a, b in zip(engine.counters.snapshot(), before)
        )
        report.rows.append(
            (scn.name, engine_name, bi, touched, reads, writes, probes, elapsed, enumerated)
        )
        prior = _run_app(compiled, engine, report, prior)
        if deadline is not None and time.monotonic() > deadline:
            raise ScenarioError(
                f"{scn.name}: timed out after batch {bi} of {len(batches)}"
            )
        log.debug("%s/%s batch %d: %d tuples", scn.name, engine_name, bi, touched)
    return report


def _verify_one(compiled: CompiledScenario) -> tuple[bool, list[str], list[tuple]]:
    scn = compiled.scenario
    engines = [make_engine(n, compiled) for n in ENGINE_NAMES]
    for e in engines:
        e.setup()
    batches = synthesize_stream(
        compiled.stream_events, scn.batch_size, seed=scn.seed,
        shuffle=scn.shuffle, sorted_updates=scn.sorted_updates,
    )
    problems: list[str] = []
    rows: list[tuple] = []
    iv = scn.intvl
    for bi, batch in enumerate(batches, start=1):
        per_engine: dict[str, dict] = {}
        for e in engines:
            before = e.counters.snapshot()
            t0 = time.perf_counter_ns()
            touched = e.apply(batch)
            enumerated = 0
            if iv and bi % iv == 0:
                enumerated = len(e.listing_snapshot())
            elapsed = time.perf_counter_ns() - t0
            reads, writes, probes = (
                a - b for a, b in zip(e.counters.snapshot(), before)
            )
            rows.append(
                (scn.name, e.name, bi, touched, reads, writes, probes, elapsed, enumerated)
            )
            per_engine[e.name] = e.root_snapshot()
        base = per_engine["fivm"]
        for other in ENGINE_NAMES[1:]:
            if per_engine[other] != base:
                problems.append(
                    f"{scn.name} batch {bi}: {other} root diverges from fivm"
                )
        if iv and bi % iv == 0:
            listings = {e.name: e.listing_snapshot() for e in engines}
            for other in ENGINE_NAMES[1:]:
                if listings[other] != listings["fivm"]:
                    problems.append(
                        f"{scn.name} batch {bi}: {other} listing diverges from fivm"
                    )
    return (not problems, problems, rows)


def verify_scenarios(
    compiled: Iterable[CompiledScenario | Scenario],
    workers: int = 1,
) -> tuple[bool, list[str], list[tuple]]:
    """Race all three engines over each scenario and compare snapshots.

    Roots are compared after every batch and listings at the scenario's
    enumeration cadence. Scenarios run in worker threads, each engine
    owning its state and counters; the merged metric rows come back in
    (scenario, engine, batch) order regardless of scheduling.
    """
    todo = [
        c if isinstance(c, CompiledScenario) else compile_scenario(c) for c in compiled
    ]
    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_verify_one, todo))
    else:
        results = [_verify_one(c) for c in todo]
    ok = all(r[0] for r in results)
    problems = [msg for r in results for msg in r[1]]
    rows = [row for r in results for row in r[2]]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return ok, problems, rows


def emit_metrics(rows: Iterable[tuple], path: str | Path) -> None:
    """Write metric rows as CSV with the pinned column set."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow(row)
