"""Worst-case response-time analysis for chains served by a priority-driven
accelerator server.

Every quantity is an integer number of nanoseconds. ``None`` stands for an
unbounded handling time or an unschedulable response time.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

from paam.model import NS_PER_US, WaitPolicy

REPORT_SCHEMA_VERSION = 1
DEFAULT_COMM_COST = 100 * NS_PER_US


class AnalysisOrderError(RuntimeError):
    """A chain was analyzed before a higher-priority chain it depends on."""


def arrival_bound(t, period):
    """Maximum number of requests a periodic source can issue in a window of
    length ``t``: ``ceil(t / period) + 1`` (one carry-in job)."""
    if period <= 0:
        raise ValueError("period must be positive")
    if t < 0:
        raise ValueError("window length must be non-negative")
    return -(-t // period) + 1


def segment_handling_time(wcet, blocking, interferers, cutoff):
    """Fixed point of the per-segment handling-time recurrence.

    ``wcet`` and ``blocking`` are the inflated execution time of the segment
    and of its worst same-bucket lower-priority blocker; ``interferers`` is a
    sequence of ``(inflated_wcet, period)`` for higher-priority segments on the
    same unit. Returns ``None`` once the iterate exceeds ``cutoff``.
    """
    base = wcet + blocking
    h = base
    while True:
        if h > cutoff:
            return None
        nxt = base + sum(arrival_bound(h, t) * a for a, t in interferers)
        if nxt == h:
            return h
        h = nxt


@dataclass(frozen=True)
class SegmentInfo:
    """Analysis view of one accelerator segment."""

    ref: object
    chain: str
    inflated: int
    period: int
    epsilon: int
    blocking: int
    hps: tuple = ()


@dataclass
class InterferenceSets:
    segments: dict = field(default_factory=dict)
    hp: dict = field(default_factory=dict)
    lp: dict = field(default_factory=dict)
    hpp: dict = field(default_factory=dict)

    def chain_segments(self, system, chain_id):
        return [self.segments[r] for r in system.accel_segments(chain_id)]


def inflated_wcet(system, ref):
    """A* = A + 2 kappa, with kappa zero on accelerators that cannot preempt."""
    seg = system.segment(ref)
    return seg.wcet + 2 * system.accelerators[seg.accelerator].effective_kappa


def build_interference(system):
    """Compute hps/lps per accelerator segment and hp/lp/hpp per chain."""
    sets = InterferenceSets()
    refs = [r for c in system.chains for r in system.accel_segments(c)]
    star = {r: inflated_wcet(system, r) for r in refs}

    for r in refs:
        own_chain = system.chain_of(r.callback)
        acc = system.segment(r).accelerator
        unit = system.unit_map[r]
        bucket = system.bucket_of(r)
        hps, blocking = [], 0
        for q in refs:
            other = system.chain_of(q.callback)
            if other.id == own_chain.id:
                continue
            if system.segment(q).accelerator != acc or system.unit_map[q] != unit:
                continue
            if other.priority > own_chain.priority:
                hps.append(q)
            elif system.bucket_of(q) == bucket:
                blocking = max(blocking, star[q])
        sets.segments[r] = SegmentInfo(
            ref=r,
            chain=own_chain.id,
            inflated=star[r],
            period=own_chain.period,
            epsilon=system.accelerators[acc].epsilon,
            blocking=blocking,
            hps=tuple(hps),
        )

    for c in system.chains.values():
        ex = system.chain_executor(c.id)
        mates = [o for o in system.chains.values()
                 if o.id != c.id and system.chain_executor(o.id).id == ex.id]
        sets.hp[c.id] = tuple(o.id for o in mates if o.priority > c.priority)
        sets.lp[c.id] = tuple(o.id for o in mates if o.priority < c.priority)
        sets.hpp[c.id] = tuple(
            o.id for o in system.chains.values()
            if (oe := system.chain_executor(o.id)).core == ex.core and oe.priority > ex.priority
        )
    return sets


def _interferer_terms(sets, refs):
    return [(sets.segments[q].inflated, sets.segments[q].period) for q in refs]


def segment_bound(system, sets, ref, cutoff):
    info = sets.segments[ref]
    return segment_handling_time(info.inflated, info.blocking,
                                 _interferer_terms(sets, info.hps), cutoff)


def chain_handling_per_segment(system, sets, chain_id, cutoff=None):
    """Sum of the per-segment handling bounds of a chain (``None`` if any is
    unbounded)."""
    if cutoff is None:
        cutoff = system.chains[chain_id].deadline
    total = 0
    for ref in system.accel_segments(chain_id):
        h = segment_bound(system, sets, ref, cutoff)
        if h is None:
            return None
        total += h
    return total


def chain_handling_per_chain(system, sets, chain_id, response):
    """Per-chain handling bound evaluated for a candidate response time.

    Higher-priority segments are taken from the union of the chain's hps
    sets, each counted once.
    """
    if response < 0:
        raise ValueError("response time must be non-negative")
    infos = sets.chain_segments(system, chain_id)
    own = sum(i.inflated + i.blocking for i in infos)
    union = sorted({q for i in infos for q in i.hps}, key=lambda q: (q.callback, q.index))
    return own + sum(arrival_bound(response, t) * a for a, t in _interferer_terms(sets, union))


@dataclass(frozen=True)
class HandlingBounds:
    per_segment: int | None
    per_chain: int | None
    handling: int | None
    star: int | None


_COMPUTE = object()


def effective_handling(system, sets, chain_id, response, per_segment=_COMPUTE):
    """H_c = min of both bounds; H_c* adds the per-request server overhead."""
    if per_segment is _COMPUTE:
        per_segment = chain_handling_per_segment(system, sets, chain_id)
    per_chain = chain_handling_per_chain(system, sets, chain_id, response)
    finite = [b for b in (per_segment, per_chain) if b is not None]
    handling = min(finite) if finite else None
    overhead = sum(i.epsilon for i in sets.chain_segments(system, chain_id))
    star = None if handling is None else handling + overhead
    return HandlingBounds(per_segment, per_chain, handling, star)


def blocking_term(system, sets, chain_id):
    """Largest CPU WCET of a callback of a lower-priority chain on the same
    executor.

    Only the CPU part of the blocking callback is counted. A lower-priority
    callback that is waiting on an accelerator keeps the executor busy for
    longer than this; keep accelerator-using chains of different priority on
    separate executors when that matters.
    """
    worst = 0
    for other in sets.lp[chain_id]:
        for cb in system.chains[other].callbacks:
            worst = max(worst, system.callbacks[cb].cpu_wcet)
    return worst


@dataclass
class ChainResult:
    chain: str
    priority: int
    critical: bool
    period: int
    deadline: int
    blocking: int
    exec_sum: int
    accel_count: int
    per_segment: int | None
    per_chain: int | None
    handling: int | None
    handling_star: int | None
    wcrt: int | None
    iterations: int
    note: str = ""

    @property
    def schedulable(self):
        return self.wcrt is not None and self.wcrt <= self.deadline

    @property
    def valid_interferer(self):
        # carry-in bound of one extra job needs R <= T
        return self.wcrt is not None and self.wcrt <= self.period


def _unschedulable(system, chain_id, blocking, exec_sum, note, iterations=0,
                   bounds=None):
    c = system.chains[chain_id]
    return ChainResult(
        chain=chain_id, priority=c.priority, critical=c.critical, period=c.period,
        deadline=c.deadline, blocking=blocking, exec_sum=exec_sum,
        accel_count=system.accel_count(chain_id),
        per_segment=bounds.per_segment if bounds else None,
        per_chain=bounds.per_chain if bounds else None,
        handling=bounds.handling if bounds else None,
        handling_star=bounds.star if bounds else None,
        wcrt=None, iterations=iterations, note=note,
    )


def _accel_interferers(system, sets, chain_id):
    return {sets.segments[q].chain
            for info in sets.chain_segments(system, chain_id) for q in info.hps}


def _hpp_spin(system, sets, results, other_id):
    """CPU time an HPP chain burns per instance beyond its own CPU work."""
    ex = system.chain_executor(other_id)
    if ex.wait is WaitPolicy.SUSPEND:
        return sum(i.epsilon for i in sets.chain_segments(system, other_id))
    if other_id in results:
        return results[other_id].handling_star
    # lower chain priority than the chain under analysis: its per-chain bound
    # needs its own response time, the per-segment bound does not
    per_segment = chain_handling_per_segment(system, sets, other_id)
    if per_segment is None:
        return None
    return per_segment + sum(i.epsilon for i in sets.chain_segments(system, other_id))


def chain_wcrt(system, sets, chain_id, results):
    """Response-time recurrence for one chain.

    ``results`` maps already-analyzed chain ids to :class:`ChainResult`; every
    strictly higher-priority chain on the same executor or accelerator must be
    present.
    """
    c = system.chains[chain_id]
    blocking = blocking_term(system, sets, chain_id)
    exec_sum = system.exec_sum(chain_id)
    cutoff = c.deadline

    deps = set(sets.hp[chain_id]) | _accel_interferers(system, sets, chain_id)
    missing = sorted(d for d in deps if d not in results)
    if missing:
        raise AnalysisOrderError(f"chain {chain_id!r} analyzed before {missing}")
    for d in sorted(deps | set(sets.hpp[chain_id])):
        if d in results and not results[d].valid_interferer:
            return _unschedulable(system, chain_id, blocking, exec_sum,
                                  f"interfering chain {d} has no valid bound")

    hp_terms = [(system.chains[h].period, system.exec_sum(h) + results[h].handling_star)
                for h in sets.hp[chain_id]]
    hpp_terms = []
    for h in sets.hpp[chain_id]:
        spin = _hpp_spin(system, sets, results, h)
        if spin is None:
            return _unschedulable(system, chain_id, blocking, exec_sum,
                                  f"interfering chain {h} has unbounded handling time")
        hpp_terms.append((system.chains[h].period, system.exec_sum(h) + spin))

    per_segment = chain_handling_per_segment(system, sets, chain_id, cutoff)
    if system.accel_count(chain_id) == 0:
        per_segment = 0

    r = blocking + exec_sum
    bounds = effective_handling(system, sets, chain_id, r, per_segment)
    r += bounds.star
    iterations = 0
    while True:
        iterations += 1
        if r > cutoff:
            return _unschedulable(system, chain_id, blocking, exec_sum,
                                  "response time exceeds deadline", iterations, bounds)
        bounds = effective_handling(system, sets, chain_id, r, per_segment)
        nxt = blocking + exec_sum + bounds.star
        nxt += sum(arrival_bound(r, t) * w for t, w in hp_terms)
        nxt += sum(arrival_bound(r, t) * w for t, w in hpp_terms)
        if nxt == r:
            break
        r = nxt

    return ChainResult(
        chain=chain_id, priority=c.priority, critical=c.critical, period=c.period,
        deadline=c.deadline, blocking=blocking, exec_sum=exec_sum,
        accel_count=system.accel_count(chain_id),
        per_segment=bounds.per_segment, per_chain=bounds.per_chain,
        handling=bounds.handling, handling_star=bounds.star,
        wcrt=r, iterations=iterations,
    )


@dataclass
class AnalysisReport:
    fingerprint: str
    chains: dict

    @property
    def schedulable(self):
        return all(r.schedulable for r in self.chains.values() if r.critical)

    def first_failure(self):
        for r in sorted(self.chains.values(), key=lambda r: -r.priority):
            if r.critical and not r.schedulable:
                return r
        return None

    def to_dict(self):
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "fingerprint": self.fingerprint,
            "schedulable": self.schedulable,
            "chains": [asdict(r) | {"schedulable": r.schedulable} for r in self.chains.values()],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        chains = {}
        for row in doc["chains"]:
            row = {k: v for k, v in row.items() if k != "schedulable"}
            chains[row["chain"]] = ChainResult(**row)
        return cls(doc["fingerprint"], chains)

    def to_csv(self):
        out = io.StringIO()
        out.write(f"# paam-analysis-csv v{REPORT_SCHEMA_VERSION}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["chain", "priority", "B_c", "E_c", "H_per_segment", "H_per_chain",
                    "H_star", "R_c", "D_c", "schedulable"])
        for r in self.chains.values():
            w.writerow([r.chain, r.priority, r.blocking, r.exec_sum,
                        _cell(r.per_segment), _cell(r.per_chain), _cell(r.handling_star),
                        _cell(r.wcrt), r.deadline, int(r.schedulable)])
        return out.getvalue()


def _cell(v):
    return "inf" if v is None else v


def analyze(system, sets=None):
    """Analyze every chain in decreasing priority order."""
    if sets is None:
        sets = build_interference(system)
    results = {}
    for c in system.chains_by_priority():
        results[c.id] = chain_wcrt(system, sets, c.id, results)

    # chains on higher-priority executors may rank lower by chain priority;
    # their bounds were assumed valid above, so withdraw dependents if not
    deps = {c: set(sets.hp[c]) | set(sets.hpp[c]) | _accel_interferers(system, sets, c)
            for c in system.chains}
    changed = True
    while changed:
        changed = False
        for c in system.chains_by_priority():
            res = results[c.id]
            if res.wcrt is None:
                continue
            bad = sorted(d for d in deps[c.id] if not results[d].valid_interferer)
            if bad:
                res.wcrt = None
                res.note = f"interfering chain {bad[0]} has no valid bound"
                changed = True
    return AnalysisReport(system.fingerprint(), results)


def end_to_end_wcrt(responses, comm_cost=DEFAULT_COMM_COST):
    """Latency of a chain split over several executors: the sum of the
    sub-chain bounds plus ``comm_cost`` per executor boundary."""
    responses = list(responses)
    if not responses:
        raise ValueError("need at least one sub-chain")
    if any(r is None for r in responses):
        return None
    return sum(responses) + comm_cost * (len(responses) - 1)


@dataclass
class AdmissionResult:
    accepted: bool
    reason: str = ""
    chain: str | None = None
    report: AnalysisReport | None = None


def admission_test(base_doc, candidate_doc):
    """Decide whether the chains in ``candidate_doc`` can join ``base_doc``.

    Both arguments are configuration documents (dicts). The merged system is
    re-validated, so buckets and units are re-derived, and fully re-analyzed.
    """
    from paam.config import system_from_dict
    from paam.model import ConfigError

    try:
        merged = merge_documents(base_doc, candidate_doc)
        system = system_from_dict(merged)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        return AdmissionResult(False, f"invalid candidate: {exc}")
    report = analyze(system)
    failed = report.first_failure()
    if failed is None:
        return AdmissionResult(True, "all critical chains meet their deadlines", None, report)
    why = failed.note or "response time exceeds deadline"
    return AdmissionResult(False, why, failed.chain, report)


def merge_documents(base, candidate):
    """Union of two configuration documents.

    Executors in ``candidate`` whose id already exists in ``base`` extend that
    executor's callback list; everything else is appended. Durations in the
    candidate are rescaled to the base document's time unit.
    """
    from paam.config import UNITS

    base_unit = base.get("time_unit", "ns")
    cand_unit = candidate.get("time_unit", base_unit)
    num, den = UNITS[cand_unit], UNITS[base_unit]

    def rescale(v):
        if (v * num) % den:
            raise ValueError(f"candidate duration {v}{cand_unit} not representable in {base_unit}")
        return v * num // den

    merged = json.loads(json.dumps(base))
    unknown = set(candidate) - {"time_unit", "callbacks", "chains", "executors", "description",
                                "schema_version"}
    if unknown:
        raise ValueError(f"unknown candidate key(s) {sorted(unknown)}")
    for cb in candidate.get("callbacks", []):
        cb = json.loads(json.dumps(cb))
        for seg in cb.get("segments", []):
            seg["wcet"] = rescale(seg["wcet"])
        merged["callbacks"].append(cb)
    for ch in candidate.get("chains", []):
        ch = dict(ch)
        for key in ("period", "deadline", "phase"):
            if key in ch:
                ch[key] = rescale(ch[key])
        merged["chains"].append(ch)
    existing = {e["id"]: e for e in merged["executors"]}
    for ex in candidate.get("executors", []):
        if ex["id"] in existing:
            existing[ex["id"]]["callbacks"] = list(existing[ex["id"]]["callbacks"]) + list(ex["callbacks"])
        else:
            merged["executors"].append(dict(ex))
    return merged
