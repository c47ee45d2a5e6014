"""A small in-memory dataflow engine with shuffle-delimited stages.

Datasets are immutable and lazy. Narrow transformations (``map``,
``flat_map``, ``filter`` ...) are appended to a lineage and pipelined; a
shuffle (``group_by_key``, ``reduce_by_key``, ``cogroup``) executes the
pending lineage as one stage, redistributes the keyed records and starts a
new stage. ``collect`` and ``materialize`` close the final stage.

Every executed stage is recorded as a :class:`StageMetrics` row on the
owning :class:`Engine`.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import functools
import gc
import itertools
import logging
import random
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

log = logging.getLogger(__name__)

Op = Callable[[list], list]

METRICS_HEADER = (
    "stage_id",
    "label",
    "tasks",
    "records_in",
    "records_out",
    "shuffled_elements",
    "flops",
    "wall_ms",
)

_TASK_COUNTERS: contextvars.ContextVar[Counter | None] = contextvars.ContextVar(
    "_TASK_COUNTERS", default=None
)


class DataflowError(RuntimeError):
    """A user function failed inside a task."""


def count(name: str, amount: int = 1) -> None:
    """Add ``amount`` to the named counter of the running task.

    ``"flops"`` is reported per stage; every name is also totalled on the
    engine. Outside of a task this is a no-op.
    """
    counters = _TASK_COUNTERS.get()
    if counters is not None:
        counters[name] += amount


def canonical_key(value: Any) -> Any:
    """Deterministic sort key for a shuffled value.

    Objects exposing ``sort_key()`` (blocks) order by it, tuples order
    elementwise, anything else by its own value.
    """
    sort_key = getattr(value, "sort_key", None)
    if sort_key is not None:
        return sort_key()
    if isinstance(value, tuple):
        return tuple(canonical_key(v) for v in value)
    return value


def scalar_count(value: Any) -> int:
    """Number of scalar values carried by a record (its shuffle volume)."""
    counter = getattr(value, "scalar_count", None)
    if counter is not None:
        return counter()
    size = getattr(value, "size", None)
    if isinstance(size, int):
        return size
    if isinstance(value, (tuple, list)):
        return sum(scalar_count(v) for v in value)
    return 1


@dataclass(frozen=True)
class EngineConfig:
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class StageMetrics:
    stage_id: int
    label: str
    tasks: int = 0
    records_in: int = 0
    records_out: int = 0
    shuffled_elements: int = 0
    flops: int = 0
    wall_ms: float = 0.0
    workers: int = field(default=1, repr=False)

    @property
    def parallelization_factor(self) -> int:
        return min(self.tasks, self.workers)

    def row(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k in METRICS_HEADER}


def write_metrics_csv(metrics: Sequence[StageMetrics], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for m in metrics:
            row = m.row()
            row["wall_ms"] = f"{m.wall_ms:.3f}"
            writer.writerow(row)


def read_metrics_csv(path: str | Path) -> list[StageMetrics]:
    types = {f.name: f.type for f in fields(StageMetrics)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for name, raw in row.items():
                if name == "label":
                    kwargs[name] = raw
                elif name == "wall_ms":
                    kwargs[name] = float(raw)
                elif name in types:
                    kwargs[name] = int(raw)
            out.append(StageMetrics(**kwargs))
    return out


@contextlib.contextmanager
def _gc_paused():
    # stages allocate many short-lived acyclic records; refcounting frees them
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _run_task(ops: tuple[Op, ...], partition: list) -> tuple[list, Counter]:
    counters: Counter = Counter()
    token = _TASK_COUNTERS.set(counters)
    try:
        records = partition
        for op in ops:
            records = op(records)
        return records, counters
    finally:
        _TASK_COUNTERS.reset(token)


class Engine:
    """Owns the worker pool and the stage log.

    Tasks of one stage run concurrently on ``workers`` threads; stages run
    one after the other. Task outputs are always reassembled in partition
    order, so results do not depend on the worker count or on the
    (seeded) submission order.
    """

    def __init__(self, workers: int = 1, seed: int = 0):
        self.config = EngineConfig(workers=workers, seed=seed)
        self._pool = (
            ThreadPoolExecutor(max_workers=workers, thread_name_prefix="stage-worker")
            if workers > 1
            else None
        )
        self._rng = random.Random(seed)
        self._stages: list[StageMetrics] = []
        self.counters: Counter = Counter()

    @property
    def workers(self) -> int:
        return self.config.workers

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self) -> Engine:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def parallelize(self, items: Iterable, num_partitions: int | None = None) -> Dataset:
        """Distribute ``items``; by default one partition per item."""
        items = list(items)
        if num_partitions is None:
            parts = [[x] for x in items]
        else:
            if num_partitions < 1:
                raise ValueError("num_partitions must be >= 1")
            k, r = divmod(len(items), num_partitions)
            parts, start = [], 0
            for i in range(num_partitions):
                stop = start + k + (1 if i < r else 0)
                parts.append(items[start:stop])
                start = stop
        return Dataset(self, (_Branch(tuple(parts), ()),))

    def empty(self) -> Dataset:
        return Dataset(self, (_Branch((), ()),))

    def metrics(self) -> list[StageMetrics]:
        return list(self._stages)

    def reset_metrics(self) -> None:
        self._stages.clear()
        self.counters.clear()

    def _execute(self, branches: tuple[_Branch, ...]) -> tuple[list[list], Counter, int]:
        with _gc_paused():
            return self._execute_tasks(branches)

    def _execute_tasks(self, branches: tuple[_Branch, ...]) -> tuple[list[list], Counter, int]:
        tasks = [(b.ops, list(p)) for b in branches for p in b.partitions]
        records_in = sum(len(p) for _, p in tasks)
        results: list = [None] * len(tasks)
        if self._pool is None or len(tasks) <= 1:
            for i, (ops, part) in enumerate(tasks):
                results[i] = _run_task(ops, part)
        else:
            # tasks are dispatched in seeded-random batches, a few per worker,
            # to keep executor overhead off tiny tasks
            order = list(range(len(tasks)))
            self._rng.shuffle(order)
            n_batches = min(len(order), 4 * self.workers)
            batches = [order[k::n_batches] for k in range(n_batches)]

            def run_batch(idx):
                return [(i, _run_task(*tasks[i])) for i in idx]

            for fut in [self._pool.submit(run_batch, idx) for idx in batches]:
                for i, res in fut.result():
                    results[i] = res
        counters: Counter = Counter()
        outputs = []
        for out, c in results:
            outputs.append(out)
            counters.update(c)
        return outputs, counters, records_in

    def _record(self, label: str, *, tasks: int, records_in: int, records_out: int,
                shuffled: int, counters: Counter, started: float) -> StageMetrics:
        m = StageMetrics(
            stage_id=len(self._stages),
            label=label,
            tasks=tasks,
            records_in=records_in,
            records_out=records_out,
            shuffled_elements=shuffled,
            flops=counters.get("flops", 0),
            wall_ms=(time.perf_counter() - started) * 1e3,
            workers=self.workers,
        )
        self._stages.append(m)
        self.counters.update(counters)
        log.debug("stage %d %s: %s", m.stage_id, label, m)
        return m

    def run_stage(self, data: Dataset, label: str) -> list[list]:
        started = time.perf_counter()
        outputs, counters, records_in = self._execute(data._branches)
        self._record(label, tasks=len(outputs), records_in=records_in,
                     records_out=sum(len(o) for o in outputs), shuffled=0,
                     counters=counters, started=started)
        return outputs

    def shuffle(self, data: Dataset, label: str) -> list[tuple[Any, list]]:
        """Run the pending stage and group its keyed output.

        Groups come back sorted by key; members of each group are sorted
        by :func:`canonical_key` (stable), which fixes every later
        floating-point reduction order.
        """
        started = time.perf_counter()
        outputs, counters, records_in = self._execute(data._branches)
        with _gc_paused():
            result, shuffled, records_out = self._group(outputs)
        self._record(label, tasks=len(outputs), records_in=records_in,
                     records_out=records_out, shuffled=shuffled,
                     counters=counters, started=started)
        return result

    @staticmethod
    def _group(outputs: list[list]) -> tuple[list[tuple[Any, list]], int, int]:
        groups: dict[Any, list] = {}
        shuffled = 0
        records_out = 0
        for out in outputs:
            for record in out:
                try:
                    key, value = record
                except (TypeError, ValueError):
                    raise DataflowError(
                        f"shuffle input must be (key, value) pairs, got {record!r}"
                    ) from None
                groups.setdefault(key, []).append(value)
                shuffled += scalar_count(value)
                records_out += 1
        result = []
        for key in sorted(groups):
            members = groups[key]
            members.sort(key=canonical_key)
            result.append((key, members))
        return result, shuffled, records_out


@dataclass(frozen=True)
class _Sided:
    # cogroup wrapper: the side marker is bookkeeping, not shuffled data
    side: int
    value: Any

    def sort_key(self):
        return (self.side, canonical_key(self.value))

    def scalar_count(self) -> int:
        return scalar_count(self.value)


@dataclass(frozen=True)
class _Branch:
    partitions: tuple[list, ...]
    ops: tuple[Op, ...]


def _guard(fn: Callable, what: str) -> Callable:
    @functools.wraps(fn)
    def wrapper(x):
        try:
            return fn(x)
        except DataflowError:
            raise
        except Exception as exc:
            raise DataflowError(f"{what} failed on element {x!r}: {exc}") from exc

    return wrapper


class Dataset:
    """Immutable, lazily evaluated partitioned collection."""

    def __init__(self, engine: Engine, branches: tuple[_Branch, ...], materialized: bool = False):
        self.engine = engine
        self._branches = branches
        self._materialized = materialized

    def __repr__(self) -> str:
        parts = sum(len(b.partitions) for b in self._branches)
        pending = max((len(b.ops) for b in self._branches), default=0)
        return f"Dataset(partitions={parts}, pending_ops={pending}, materialized={self._materialized})"

    @property
    def num_partitions(self) -> int:
        return sum(len(b.partitions) for b in self._branches)

    def _narrow(self, op: Op) -> Dataset:
        return Dataset(
            self.engine,
            tuple(_Branch(b.partitions, b.ops + (op,)) for b in self._branches),
        )

    # narrow transformations

    def flat_map(self, f: Callable[[Any], Iterable]) -> Dataset:
        g = _guard(lambda x: list(f(x)), "flat_map")
        return self._narrow(lambda part: [y for x in part for y in g(x)])

    def map(self, f: Callable[[Any], Any]) -> Dataset:
        g = _guard(f, "map")
        return self._narrow(lambda part: [g(x) for x in part])

    map_to_pair = map

    def map_values(self, f: Callable[[Any], Any]) -> Dataset:
        g = _guard(f, "map_values")
        return self._narrow(lambda part: [(k, g(v)) for k, v in part])

    def filter(self, pred: Callable[[Any], bool]) -> Dataset:
        g = _guard(pred, "filter")
        return self._narrow(lambda part: [x for x in part if g(x)])

    def union(self, other: Dataset) -> Dataset:
        if other.engine is not self.engine:
            raise ValueError("cannot union datasets owned by different engines")
        return Dataset(
            self.engine,
            self._branches + other._branches,
            self._materialized and other._materialized,
        )

    # shuffles

    def group_by_key(self, label: str = "group_by_key") -> Dataset:
        groups = self.engine.shuffle(self, label)
        return Dataset(self.engine, (_Branch(tuple([g] for g in groups), ()),))

    def reduce_by_key(self, op: Callable[[Any, Any], Any], label: str = "reduce_by_key") -> Dataset:
        return self.group_by_key(label).map_values(lambda vs: functools.reduce(op, vs))

    def cogroup(self, other: Dataset, label: str = "cogroup") -> Dataset:
        """Group two keyed datasets: ``(key, (left_values, right_values))``."""
        tagged = self.map_values(lambda v: _Sided(0, v)).union(other.map_values(lambda v: _Sided(1, v)))

        def split(members):
            return ([m.value for m in members if m.side == 0],
                    [m.value for m in members if m.side == 1])

        return tagged.group_by_key(label).map_values(split)

    # actions

    def materialize(self, label: str = "materialize") -> Dataset:
        """Execute pending work as a final stage, keeping the partitioning."""
        if self._materialized:
            return self
        outputs = self.engine.run_stage(self, label)
        return Dataset(self.engine, (_Branch(tuple(outputs), ()),), materialized=True)

    def collect(self, label: str = "collect") -> list:
        data = self.materialize(label)
        return list(itertools.chain.from_iterable(
            p for b in data._branches for p in b.partitions
        ))

    def count(self) -> int:
        return len(self.collect())
