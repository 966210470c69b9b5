"""Domain model: callbacks, chains, executors, accelerators and the validated
system configuration shared by the analyzer and the simulator.

All time values are integer nanoseconds.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

NS_PER_US = 1_000
NS_PER_MS = 1_000_000

DEFAULT_EPSILON = 391 * NS_PER_US
DEFAULT_KAPPA = 130 * NS_PER_US


class ConfigError(ValueError):
    """Raised when a system description violates a structural rule."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class SegmentKind(enum.Enum):
    CPU = "cpu"
    ACCEL = "accel"


class Criticality(enum.Enum):
    CRITICAL = "critical"
    BEST_EFFORT = "best_effort"


class WaitPolicy(enum.Enum):
    SPIN = "spin"
    SUSPEND = "suspend"


class OverrunPolicy(enum.Enum):
    QUEUE = "queue"
    DROP = "drop"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    wcet: int
    accelerator: str | None = None

    @property
    def is_accel(self):
        return self.kind is SegmentKind.ACCEL


@dataclass(frozen=True)
class Callback:
    id: str
    segments: tuple[Segment, ...]

    @property
    def cpu_wcet(self):
        """E_i: total WCET of the CPU segments."""
        return sum(s.wcet for s in self.segments if not s.is_accel)

    @property
    def accel_wcet(self):
        """A_i: total WCET of the accelerator segments."""
        return sum(s.wcet for s in self.segments if s.is_accel)

    @property
    def accel_count(self):
        return sum(1 for s in self.segments if s.is_accel)

    @property
    def accelerators(self):
        return frozenset(s.accelerator for s in self.segments if s.is_accel)


@dataclass(frozen=True)
class Chain:
    id: str
    callbacks: tuple[str, ...]
    period: int
    deadline: int
    priority: int
    criticality: Criticality = Criticality.CRITICAL
    phase: int = 0
    overrun: OverrunPolicy | None = None

    @property
    def critical(self):
        return self.criticality is Criticality.CRITICAL

    @property
    def overrun_policy(self):
        if self.overrun is not None:
            return self.overrun
        return OverrunPolicy.QUEUE if self.critical else OverrunPolicy.DROP


@dataclass(frozen=True)
class Executor:
    id: str
    callbacks: tuple[str, ...]
    core: int
    priority: int
    wait: WaitPolicy = WaitPolicy.SPIN


@dataclass(frozen=True)
class Accelerator:
    id: str
    units: int = 1
    buckets: int = 1
    epsilon: int = DEFAULT_EPSILON
    kappa: int = DEFAULT_KAPPA
    server_core: int = 0
    # lowest-bucket kernel co-execution; off keeps the analysis model exact
    concurrent_lowest_bucket: bool = False
    concurrency_slowdown: float = 1.5

    @property
    def preemptive(self):
        return self.buckets > 1

    @property
    def effective_kappa(self):
        # no device preemption, no preemption cost
        return self.kappa if self.preemptive else 0


@dataclass(frozen=True)
class SegmentRef:
    """Address of one accelerator segment: (callback id, index in its segment list)."""

    callback: str
    index: int


@dataclass
class SystemConfig:
    cores: int
    accelerators: dict[str, Accelerator]
    executors: dict[str, Executor]
    callbacks: dict[str, Callback]
    chains: dict[str, Chain]
    bucket_map: dict[tuple[str, str], int] = field(default_factory=dict)
    unit_map: dict[SegmentRef, int] = field(default_factory=dict)
    description: str = ""

    # -- derived lookups -------------------------------------------------

    def chain_of(self, callback_id):
        return self._chain_of[callback_id]

    def executor_of(self, callback_id):
        return self._executor_of[callback_id]

    def chain_executor(self, chain_id):
        return self._executor_of[self.chains[chain_id].callbacks[0]]

    def chains_by_priority(self):
        """Chains sorted by priority, highest first."""
        return sorted(self.chains.values(), key=lambda c: -c.priority)

    def accel_segments(self, chain_id):
        """All accelerator segments of a chain, in execution order."""
        out = []
        for cb_id in self.chains[chain_id].callbacks:
            for idx, seg in enumerate(self.callbacks[cb_id].segments):
                if seg.is_accel:
                    out.append(SegmentRef(cb_id, idx))
        return out

    def segment(self, ref):
        return self.callbacks[ref.callback].segments[ref.index]

    def exec_sum(self, chain_id):
        """Total CPU WCET of a chain (sum of E_i over its callbacks)."""
        return sum(self.callbacks[c].cpu_wcet for c in self.chains[chain_id].callbacks)

    def accel_count(self, chain_id):
        """delta_c: number of accelerator segments in the chain."""
        return sum(self.callbacks[c].accel_count for c in self.chains[chain_id].callbacks)

    def bucket_of(self, ref):
        chain = self.chain_of(ref.callback)
        return self.bucket_map[(chain.id, self.segment(ref).accelerator)]

    def fingerprint(self):
        """Stable digest of the configuration, used to pair reports with runs."""
        from paam.config import system_to_dict

        blob = json.dumps(system_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _index(self):
        self._chain_of = {}
        for chain in self.chains.values():
            for cb in chain.callbacks:
                self._chain_of[cb] = chain
        self._executor_of = {}
        for ex in self.executors.values():
            for cb in ex.callbacks:
                self._executor_of[cb] = ex


def assign_buckets(priorities, n):
    """Down-sample chain priorities into ``n`` buckets.

    Chains are grouped by descending priority into groups of ``ceil(m / n)``;
    the first group lands in the highest bucket ``n - 1``. When ``m`` is not
    a multiple of ``n`` the short group is the lowest one used.

    Returns a dict priority -> bucket index.
    """
    if n < 1:
        raise ValueError("bucket count must be >= 1")
    ordered = sorted(priorities, reverse=True)
    if not ordered:
        return {}
    size = -(-len(ordered) // n)
    return {p: n - 1 - i // size for i, p in enumerate(ordered)}


def assign_accelerator_units(items, units):
    """Worst-fit-decreasing placement of accelerator load onto ``units`` units.

    ``items`` is a sequence of ``(key, utilization)`` pairs; each key is placed
    as a whole (callers group all segments of a callback under one key).
    Items are taken by decreasing utilization (stable for ties) and put on the
    least-loaded unit, lowest index on ties. Returns ``{key: unit}``.
    """
    if units < 1:
        raise ValueError("unit count must be >= 1")
    load = [0] * units
    placement = {}
    ordered = sorted(enumerate(items), key=lambda p: (-p[1][1], p[0]))
    for _, (key, util) in ordered:
        target = min(range(units), key=lambda u: (load[u], u))
        placement[key] = target
        load[target] += util
    return placement


def _check(cond, message, path=None):
    if not cond:
        raise ConfigError(message, path)


def validate_system(cores, accelerators, executors, callbacks, chains, description=""):
    """Check every structural rule and build a :class:`SystemConfig` with its
    bucket and unit maps filled in."""
    acc = {}
    for a in accelerators:
        _check(a.id not in acc, f"duplicate accelerator id {a.id!r}")
        _check(a.units >= 1, "accelerator needs at least one unit", a.id)
        _check(a.buckets >= 1, "accelerator needs at least one bucket", a.id)
        _check(a.epsilon >= 0 and a.kappa >= 0, "overheads must be non-negative", a.id)
        _check(0 <= a.server_core < cores, f"server core {a.server_core} out of range", a.id)
        _check(a.concurrency_slowdown >= 1.0, "concurrency slowdown must be >= 1", a.id)
        acc[a.id] = a

    cbs = {}
    for cb in callbacks:
        _check(cb.id not in cbs, f"duplicate callback id {cb.id!r}")
        _check(len(cb.segments) > 0, "callback has no segments", cb.id)
        prev = None
        for i, seg in enumerate(cb.segments):
            where = f"{cb.id}[{i}]"
            _check(isinstance(seg.wcet, int) and seg.wcet > 0, "segment wcet must be a positive integer", where)
            if seg.is_accel:
                _check(seg.accelerator in acc, f"undeclared accelerator {seg.accelerator!r}", where)
            else:
                _check(seg.accelerator is None, "CPU segment cannot name an accelerator", where)
            _check(prev is None or prev != seg.kind, "segments must alternate CPU/ACCEL", where)
            prev = seg.kind
        cbs[cb.id] = cb

    ch = {}
    seen_prio = {}
    owner = {}
    for c in chains:
        _check(c.id not in ch, f"duplicate chain id {c.id!r}")
        _check(len(c.callbacks) > 0, "chain has no callbacks", c.id)
        _check(c.period > 0, "period must be positive", c.id)
        _check(c.deadline > 0, "deadline must be positive", c.id)
        _check(c.phase >= 0, "phase must be non-negative", c.id)
        _check(c.priority > 0, "priority must be a positive integer", c.id)
        if c.critical:
            _check(c.deadline <= c.period, "deadline exceeds period", c.id)
        _check(c.priority not in seen_prio, f"duplicate chain priority {c.priority}", c.id)
        seen_prio[c.priority] = c.id
        for cb in c.callbacks:
            _check(cb in cbs, f"unknown callback {cb!r}", c.id)
            _check(cb not in owner, f"callback {cb!r} already belongs to chain {owner.get(cb)!r}", c.id)
            owner[cb] = c.id
        ch[c.id] = c
    for cb in cbs:
        _check(cb in owner, "callback is not part of any chain", cb)

    crit = [c.priority for c in ch.values() if c.critical]
    be = [c.priority for c in ch.values() if not c.critical]
    if crit and be:
        _check(max(be) < min(crit), "best-effort chains must have lower priority than every critical chain")

    exs = {}
    ex_of = {}
    core_prio = set()
    for e in executors:
        _check(e.id not in exs, f"duplicate executor id {e.id!r}")
        _check(0 <= e.core < cores, f"core {e.core} out of range", e.id)
        _check((e.core, e.priority) not in core_prio,
               f"duplicate process priority {e.priority} on core {e.core}", e.id)
        core_prio.add((e.core, e.priority))
        for cb in e.callbacks:
            _check(cb in cbs, f"unknown callback {cb!r}", e.id)
            _check(cb not in ex_of, f"callback {cb!r} assigned to two executors", e.id)
            ex_of[cb] = e.id
        exs[e.id] = e
    for cb in cbs:
        _check(cb in ex_of, "callback is not assigned to an executor", cb)
    for c in ch.values():
        homes = {ex_of[cb] for cb in c.callbacks}
        _check(len(homes) == 1, "all callbacks of a chain must share one executor "
               "(compose multi-executor chains with end_to_end_wcrt)", c.id)

    server_cores = {a.server_core for a in acc.values()}
    client_cores = {e.core for e in exs.values()}
    overlap = server_cores & client_cores
    _check(not overlap, f"server/client core overlap on core(s) {sorted(overlap)}")

    system = SystemConfig(cores, acc, exs, cbs, ch, description=description)
    system._index()

    for a in acc.values():
        users = [c for c in ch.values()
                 if any(a.id in cbs[cb].accelerators for cb in c.callbacks)]
        by_prio = assign_buckets([c.priority for c in users], a.buckets)
        for c in users:
            system.bucket_map[(c.id, a.id)] = by_prio[c.priority]

        items = []
        for c in sorted(users, key=lambda c: -c.priority):
            for cb in c.callbacks:
                util = sum(s.wcet for s in cbs[cb].segments if s.accelerator == a.id) / c.period
                if util > 0:
                    items.append((cb, util))
        placement = assign_accelerator_units(items, a.units)
        for cb, unit in placement.items():
            for idx, seg in enumerate(cbs[cb].segments):
                if seg.accelerator == a.id:
                    system.unit_map[SegmentRef(cb, idx)] = unit
    return system
