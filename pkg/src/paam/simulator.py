"""Deterministic discrete-event simulation of executors, cores and
accelerator servers.

The model:

* chains release their first callback periodically; later callbacks are
  released when their predecessor completes;
* an executor runs ready callbacks one at a time, highest chain priority
  first, without preemption;
* executors sharing a core are scheduled by fixed process priority with
  preemption; an executor waiting on an accelerator keeps the core when it
  spins and gives it up when it suspends;
* in PAAM mode a request pays the server overhead, then enters the priority
  queue of its bucket. A unit serves the highest non-empty bucket; a newer
  request in a strictly higher bucket preempts the running one, which pays
  the preemption cost (at most twice kappa per segment) and resumes ahead of
  its bucket-mates;
* in FIFO_DIRECT mode each unit serves one FIFO queue without overhead and
  without preemption; requests arriving at the same instant go in chain
  priority order;
* a chain with the DROP overrun policy abandons the unstarted remainder of an
  older instance when a new one is released; a callback already running
  still finishes, and if it was the last one the instance completes.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import math
import random
from collections import deque
from dataclasses import dataclass, field

from paam.model import OverrunPolicy, SegmentRef, WaitPolicy

TRACE_SCHEMA_VERSION = 1
STATS_SCHEMA_VERSION = 1


class SimMode(enum.Enum):
    PAAM = "paam"
    FIFO_DIRECT = "fifo"


class EventKind(enum.IntEnum):
    CHAIN_RELEASE = 0
    CB_START = 1
    CPU_SEG_DONE = 2
    REQ_SUBMIT = 3
    REQ_ENQUEUE = 4
    ACC_START = 5
    ACC_PREEMPT = 6
    ACC_RESUME = 7
    ACC_DONE = 8
    CB_DONE = 9
    CHAIN_DONE = 10


@dataclass(frozen=True, order=True)
class SimEvent:
    time: int
    kind: EventKind
    chain: str = ""
    instance: int = -1
    callback: str = ""
    segment: int = -1
    accel: str = ""
    unit: int = -1
    bucket: int = -1
    info: str = ""

    def to_row(self):
        def opt(v):
            return "-" if v in ("", -1) else str(v)

        return "\t".join([str(self.time), self.kind.name, opt(self.chain), opt(self.instance),
                          opt(self.callback), opt(self.segment), opt(self.accel),
                          opt(self.unit), opt(self.bucket), opt(self.info)])


TRACE_HEADER = ("# paam-trace v%d\n" % TRACE_SCHEMA_VERSION
                + "time_ns\tkind\tchain\tinstance\tcallback\tsegment\taccel\tunit\tbucket\tinfo\n")


@dataclass
class SimTrace:
    events: list = field(default_factory=list)

    def to_tsv(self):
        return TRACE_HEADER + "".join(e.to_row() + "\n" for e in self.events)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_tsv())

    def of_kind(self, kind):
        return [e for e in self.events if e.kind is kind]


def _percentile(sorted_values, q):
    if not sorted_values:
        return None
    rank = max(1, math.ceil(q / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class ChainStats:
    chain: str
    critical: bool
    deadline: int
    released: int = 0
    responses: list = field(default_factory=list)  # (instance, response) in completion order
    misses: int = 0
    dropped: int = 0
    max_pending_age: int = 0

    @property
    def completed(self):
        return len(self.responses)

    def _values(self):
        return sorted(r for _, r in self.responses)

    @property
    def max_response(self):
        return max((r for _, r in self.responses), default=None)

    @property
    def min_response(self):
        return min((r for _, r in self.responses), default=None)

    @property
    def mean_response(self):
        if not self.responses:
            return None
        return sum(r for _, r in self.responses) / len(self.responses)

    def percentile(self, q):
        return _percentile(self._values(), q)

    @property
    def observed_worst(self):
        """Largest response seen, counting unfinished instances by their age."""
        return max(self.max_response or 0, self.max_pending_age)


@dataclass
class UnitStats:
    accel: str
    unit: int
    busy: int = 0
    executed: int = 0
    preemptions: int = 0
    kappa_charges: int = 0
    requests: int = 0


@dataclass
class SimStats:
    fingerprint: str
    mode: SimMode
    duration: int
    chains: dict
    units: dict

    def busy_fraction(self, key):
        return self.units[key].busy / self.duration

    def to_csv(self):
        out = io.StringIO()
        out.write(f"# paam-stats-csv v{STATS_SCHEMA_VERSION}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["chain", "critical", "released", "completed", "min", "mean", "p50", "p90",
                    "p99", "max", "deadline_misses", "dropped", "max_pending_age"])
        for s in self.chains.values():
            mean = s.mean_response
            w.writerow([s.chain, int(s.critical), s.released, s.completed,
                        _blank(s.min_response), "" if mean is None else f"{mean:.1f}",
                        _blank(s.percentile(50)), _blank(s.percentile(90)),
                        _blank(s.percentile(99)), _blank(s.max_response), s.misses,
                        s.dropped, s.max_pending_age])
        w.writerow([])
        w.writerow(["accel", "unit", "busy_fraction", "preemptions", "kappa_charges", "requests"])
        for (acc, unit), u in self.units.items():
            w.writerow([acc, unit, f"{u.busy / self.duration:.6f}", u.preemptions,
                        u.kappa_charges, u.requests])
        return out.getvalue()


def _blank(v):
    return "" if v is None else v


# -- runtime state ---------------------------------------------------------

class _Job:
    __slots__ = ("chain", "k", "release", "pos", "dropped", "active")

    def __init__(self, chain, k, release):
        self.chain = chain
        self.k = k
        self.release = release
        self.pos = 0
        self.dropped = False
        self.active = False  # one of its callbacks has started and not finished


class _CbJob:
    __slots__ = ("job", "cb", "seg")

    def __init__(self, job, cb):
        self.job = job
        self.cb = cb
        self.seg = -1


class _Request:
    __slots__ = ("seq", "cbjob", "ref", "accel", "unit", "bucket", "prio", "remaining",
                 "charged", "started")

    def __init__(self, seq, cbjob, ref, accel, unit, bucket, prio, work):
        self.seq = seq
        self.cbjob = cbjob
        self.ref = ref
        self.accel = accel
        self.unit = unit
        self.bucket = bucket
        self.prio = prio
        self.remaining = work
        self.charged = False
        self.started = False

    def key(self):
        return (-self.prio, self.seq)


class _Exec:
    __slots__ = ("spec", "ready", "current", "phase", "cpu_left", "spin")

    def __init__(self, spec):
        self.spec = spec
        self.ready = []
        self.current = None
        self.phase = None  # "cpu" | "wait"
        self.cpu_left = 0
        self.spin = spec.wait is WaitPolicy.SPIN

    def wants_cpu(self):
        if self.current is None:
            while self.ready and self.ready[0][-1].job.dropped:
                heapq.heappop(self.ready)
            return bool(self.ready)
        return self.phase == "cpu" or self.spin


class _Unit:
    __slots__ = ("accel", "index", "queues", "fifo", "running", "suspended", "stats")

    def __init__(self, accel, index, buckets, stats):
        self.accel = accel
        self.index = index
        self.queues = [[] for _ in range(buckets)]
        self.fifo = []
        self.running = []
        self.suspended = [[] for _ in range(buckets)]
        self.stats = stats


class Simulation:
    """One simulation run. Use :func:`run_simulation` unless stepping manually."""

    def __init__(self, system, mode=SimMode.PAAM, duration=None, seed=0, jitter=None,
                 record_trace=True, phases=None):
        if not isinstance(mode, SimMode):
            try:
                mode = SimMode(mode)
            except ValueError:
                raise ValueError(f"unknown simulation mode {mode!r}") from None
        if duration is None or duration <= 0:
            raise ValueError("duration must be positive")
        if jitter is not None and not 0.0 < jitter < 1.0:
            raise ValueError("jitter factor must lie in (0, 1)")
        self.system = system
        self.mode = mode
        self.duration = duration
        self.rng = random.Random(seed)
        self.jitter = jitter
        self.record = record_trace
        self.now = 0
        self.seq = 0
        self.trace = SimTrace()
        self._step_events = []

        self.chains = sorted(system.chains.values(), key=lambda c: c.id)
        phases = phases or {}
        self.next_release = {c.id: phases.get(c.id, c.phase) for c in self.chains}
        self.instances = {c.id: 0 for c in self.chains}
        self.live = {c.id: deque() for c in self.chains}

        self.execs = {e.id: _Exec(e) for e in system.executors.values()}
        by_core = {}
        for ex in self.execs.values():
            by_core.setdefault(ex.spec.core, []).append(ex)
        self.cores = {core: sorted(exs, key=lambda x: -x.spec.priority)
                      for core, exs in sorted(by_core.items())}
        self.core_running = {core: None for core in self.cores}

        self.units = {}
        unit_stats = {}
        for acc in sorted(system.accelerators.values(), key=lambda a: a.id):
            for u in range(acc.units):
                st = UnitStats(acc.id, u)
                unit_stats[(acc.id, u)] = st
                self.units[(acc.id, u)] = _Unit(acc, u, acc.buckets, st)
        self.eps_pending = []

        self.stats = SimStats(
            fingerprint=system.fingerprint(), mode=mode, duration=duration,
            chains={c.id: ChainStats(c.id, c.critical, c.deadline)
                    for c in system.chains_by_priority()},
            units=unit_stats,
        )

    # -- helpers ----------------------------------------------------------

    def _emit(self, kind, chain="", instance=-1, callback="", segment=-1, accel="", unit=-1,
              bucket=-1, info=""):
        if self.record:
            self._step_events.append(SimEvent(self.now, kind, chain, instance, callback,
                                              segment, accel, unit, bucket, info))

    def _flush_events(self):
        if self._step_events:
            self._step_events.sort()
            self.trace.events.extend(self._step_events)
            self._step_events = []

    def _work(self, wcet):
        if self.jitter is None:
            return wcet
        return self.rng.randint(math.ceil(self.jitter * wcet), wcet)

    # -- chain / callback lifecycle ----------------------------------------

    def _release(self, chain):
        k = self.instances[chain.id]
        self.instances[chain.id] += 1
        self.next_release[chain.id] += chain.period
        st = self.stats.chains[chain.id]
        st.released += 1
        self._emit(EventKind.CHAIN_RELEASE, chain.id, k)
        live = self.live[chain.id]
        if chain.overrun_policy is OverrunPolicy.DROP:
            # drop work that has not started; a running callback finishes, and
            # if it is the chain's last one the old instance still completes
            for old in list(live):
                if old.active:
                    old.dropped = True
                else:
                    old.dropped = True
                    st.dropped += 1
                    live.remove(old)
        live.append(_Job(chain, k, self.now))
        self._make_ready(live[-1])

    def _make_ready(self, job):
        cb_id = job.chain.callbacks[job.pos]
        cbjob = _CbJob(job, self.system.callbacks[cb_id])
        ex = self.execs[self.system.executor_of(cb_id).id]
        self.seq += 1
        heapq.heappush(ex.ready, (-job.chain.priority, job.k, job.pos, self.seq, cbjob))

    def _start_callback(self, ex):
        cbjob = heapq.heappop(ex.ready)[-1]
        ex.current = cbjob
        job = cbjob.job
        job.active = True
        self._emit(EventKind.CB_START, job.chain.id, job.k, cbjob.cb.id)
        self._next_segment(ex)

    def _next_segment(self, ex):
        cbjob = ex.current
        cbjob.seg += 1
        job = cbjob.job
        if cbjob.seg == len(cbjob.cb.segments):
            self._callback_done(ex)
            return
        seg = cbjob.cb.segments[cbjob.seg]
        if not seg.is_accel:
            ex.phase = "cpu"
            ex.cpu_left = self._work(seg.wcet)
            return
        ex.phase = "wait"
        ref = SegmentRef(cbjob.cb.id, cbjob.seg)
        unit_idx = self.system.unit_map[ref]
        bucket = self.system.bucket_of(ref) if self.mode is SimMode.PAAM else 0
        self.seq += 1
        req = _Request(self.seq, cbjob, ref, seg.accelerator, unit_idx, bucket,
                       job.chain.priority, self._work(seg.wcet))
        self._emit(EventKind.REQ_SUBMIT, job.chain.id, job.k, cbjob.cb.id, cbjob.seg,
                   seg.accelerator, unit_idx, bucket)
        eps = self.system.accelerators[seg.accelerator].epsilon
        if self.mode is SimMode.PAAM and eps > 0:
            heapq.heappush(self.eps_pending, (self.now + eps, req.seq, req))
        else:
            self._enqueue(req)

    def _callback_done(self, ex):
        cbjob = ex.current
        job = cbjob.job
        ex.current = None
        ex.phase = None
        self._emit(EventKind.CB_DONE, job.chain.id, job.k, cbjob.cb.id)
        job.active = False
        job.pos += 1
        if job.dropped and job.pos < len(job.chain.callbacks):
            self.stats.chains[job.chain.id].dropped += 1
            self._retire(job)
            return
        if job.pos == len(job.chain.callbacks):
            response = self.now - job.release
            st = self.stats.chains[job.chain.id]
            st.responses.append((job.k, response))
            if response > job.chain.deadline:
                st.misses += 1
            self._emit(EventKind.CHAIN_DONE, job.chain.id, job.k, info=str(response))
            self._retire(job)
            return
        self._make_ready(job)

    def _retire(self, job):
        live = self.live[job.chain.id]
        live.remove(job)

    # -- accelerator side ---------------------------------------------------

    def _enqueue(self, req):
        unit = self.units[(req.accel, req.unit)]
        unit.stats.requests += 1
        job = req.cbjob.job
        self._emit(EventKind.REQ_ENQUEUE, job.chain.id, job.k, req.ref.callback, req.ref.index,
                   req.accel, req.unit, req.bucket)
        if self.mode is SimMode.PAAM:
            heapq.heappush(unit.queues[req.bucket], (req.key(), req))
        else:
            # arrival order; simultaneous arrivals by chain priority
            heapq.heappush(unit.fifo, ((self.now, -req.prio, req.seq), req))

    def _start_request(self, unit, req):
        job = req.cbjob.job
        kind = EventKind.ACC_RESUME if req.started else EventKind.ACC_START
        if (self.mode is SimMode.PAAM and req.bucket == 0 and unit.accel.concurrent_lowest_bucket
                and unit.running):
            req.remaining = math.ceil(req.remaining * unit.accel.concurrency_slowdown)
        req.started = True
        unit.running.append(req)
        self._emit(kind, job.chain.id, job.k, req.ref.callback, req.ref.index, req.accel,
                   req.unit, req.bucket)

    def _preempt(self, unit, req, by):
        job = req.cbjob.job
        unit.running.remove(req)
        unit.stats.preemptions += 1
        if not req.charged:
            # kappa before and after: at most 2 kappa per segment
            req.charged = True
            req.remaining += 2 * unit.accel.kappa
            unit.stats.kappa_charges += 1
        unit.suspended[req.bucket].append(req)
        self._emit(EventKind.ACC_PREEMPT, job.chain.id, job.k, req.ref.callback, req.ref.index,
                   req.accel, req.unit, req.bucket,
                   info=f"{by.cbjob.job.chain.id}/{by.bucket}")

    def _candidate(self, unit, bucket):
        if unit.suspended[bucket]:
            return unit.suspended[bucket][0]
        if unit.queues[bucket]:
            return unit.queues[bucket][0][1]
        return None

    def _take(self, unit, req):
        if unit.suspended[req.bucket] and unit.suspended[req.bucket][0] is req:
            unit.suspended[req.bucket].pop(0)
        else:
            heapq.heappop(unit.queues[req.bucket])

    def _dispatch_unit(self, unit):
        if self.mode is SimMode.FIFO_DIRECT:
            if not unit.running and unit.fifo:
                self._start_request(unit, heapq.heappop(unit.fifo)[1])
            return
        top = None
        for b in range(len(unit.queues) - 1, -1, -1):
            top = self._candidate(unit, b)
            if top is not None:
                break
        if top is None:
            return
        if unit.running:
            running_bucket = unit.running[0].bucket
            if top.bucket > running_bucket:
                for r in list(unit.running):
                    self._preempt(unit, r, top)
            elif top.bucket == 0 and unit.accel.concurrent_lowest_bucket:
                pass
            else:
                return
        self._take(unit, top)
        self._start_request(unit, top)
        if top.bucket == 0 and unit.accel.concurrent_lowest_bucket:
            while (nxt := self._candidate(unit, 0)) is not None:
                self._take(unit, nxt)
                self._start_request(unit, nxt)

    def _finish_request(self, unit, req):
        unit.running.remove(req)
        job = req.cbjob.job
        self._emit(EventKind.ACC_DONE, job.chain.id, job.k, req.ref.callback, req.ref.index,
                   req.accel, req.unit, req.bucket)
        ex = self.execs[self.system.executor_of(req.ref.callback).id]
        self._next_segment(ex)

    # -- main loop -----------------------------------------------------------

    def _settle(self):
        now = self.now
        for chain in self.chains:
            while self.next_release[chain.id] == now:
                self._release(chain)
        for unit in self.units.values():
            for req in [r for r in unit.running if r.remaining == 0]:
                self._finish_request(unit, req)
        while self.eps_pending and self.eps_pending[0][0] == now:
            self._enqueue(heapq.heappop(self.eps_pending)[-1])
        for core, ex in self.core_running.items():
            if ex is not None and ex.phase == "cpu" and ex.cpu_left == 0:
                cbjob = ex.current
                self._emit(EventKind.CPU_SEG_DONE, cbjob.job.chain.id, cbjob.job.k, cbjob.cb.id,
                           cbjob.seg)
                self._next_segment(ex)

        changed = True
        while changed:
            changed = False
            for core, exs in self.cores.items():
                chosen = None
                for ex in exs:
                    if ex.wants_cpu():
                        chosen = ex
                        break
                self.core_running[core] = chosen
                if chosen is not None and chosen.current is None:
                    self._start_callback(chosen)
                    changed = True
        for unit in self.units.values():
            self._dispatch_unit(unit)
        self._flush_events()

    def _next_time(self):
        t = min(self.next_release.values())
        for ex in self.core_running.values():
            if ex is not None and ex.phase == "cpu":
                t = min(t, self.now + ex.cpu_left)
        if self.eps_pending:
            t = min(t, self.eps_pending[0][0])
        for unit in self.units.values():
            for r in unit.running:
                t = min(t, self.now + r.remaining)
        return t

    def _advance(self, t):
        dt = t - self.now
        for ex in self.core_running.values():
            if ex is not None and ex.phase == "cpu":
                ex.cpu_left -= dt
        for unit in self.units.values():
            if unit.running:
                unit.stats.busy += dt
                for r in unit.running:
                    r.remaining -= dt
                    unit.stats.executed += dt
        self.now = t

    def run(self):
        while True:
            self._settle()
            t = self._next_time()
            if t >= self.duration:
                self._advance(self.duration)
                break
            self._advance(t)
        for cid, live in self.live.items():
            st = self.stats.chains[cid]
            for job in live:
                if not job.dropped:
                    st.max_pending_age = max(st.max_pending_age, self.duration - job.release)
        return self.trace, self.stats


def run_simulation(system, mode=SimMode.PAAM, duration=None, seed=0, jitter=None,
                   record_trace=True, phases=None):
    """Simulate ``system`` for ``duration`` ns and return ``(trace, stats)``.

    Releases at or after ``duration`` are not simulated and instances still
    running at the end are reported through ``max_pending_age``.
    """
    sim = Simulation(system, mode, duration, seed, jitter, record_trace, phases)
    return sim.run()


@dataclass
class ConformanceRow:
    chain: str
    critical: bool
    observed: int
    bound: int | None
    verdict: str

    @property
    def margin(self):
        return None if self.bound is None else self.bound - self.observed


@dataclass
class ConformanceReport:
    rows: list

    @property
    def ok(self):
        return all(r.verdict != "FAIL" for r in self.rows)

    def failures(self):
        return [r for r in self.rows if r.verdict == "FAIL"]

    def summary(self):
        lines = []
        for r in self.rows:
            bound = "unbounded" if r.bound is None else str(r.bound)
            margin = "-" if r.margin is None else str(r.margin)
            lines.append(f"{r.verdict:8s} {r.chain}: observed={r.observed} bound={bound} "
                         f"margin={margin}")
        return "\n".join(lines)


def check_against_bounds(stats, report):
    """Compare observed worst responses with analysis bounds.

    Critical chains PASS when the observed worst (including unfinished
    instances) does not exceed the bound; best-effort chains are listed with
    verdict ``EXCLUDED``.
    """
    if stats.fingerprint != report.fingerprint:
        raise ValueError("simulation and analysis were produced for different systems "
                         f"({stats.fingerprint} != {report.fingerprint})")
    rows = []
    for cid, st in stats.chains.items():
        res = report.chains[cid]
        observed = st.observed_worst
        if not st.critical:
            verdict = "EXCLUDED"
        elif res.wcrt is None:
            verdict = "FAIL"
        else:
            verdict = "PASS" if observed <= res.wcrt else "FAIL"
        rows.append(ConformanceRow(cid, st.critical, observed, res.wcrt, verdict))
    return ConformanceReport(rows)
