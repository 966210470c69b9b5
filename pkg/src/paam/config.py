"""JSON configuration documents <-> validated :class:`SystemConfig`.

Document layout (all durations are integers in ``time_unit``)::

    {
      "time_unit": "us",
      "cores": 3,
      "accelerators": [{"id": "gpu0", "units": 1, "buckets": 6,
                        "epsilon": 391, "kappa": 130, "server_core": 2}],
      "executors": [{"id": "ex0", "core": 0, "priority": 10,
                     "wait": "spin", "callbacks": ["cb0"]}],
      "callbacks": [{"id": "cb0", "segments": [
                        {"kind": "cpu", "wcet": 2000},
                        {"kind": "accel", "wcet": 3000, "accelerator": "gpu0"}]}],
      "chains": [{"id": "c0", "callbacks": ["cb0"], "period": 20000,
                  "deadline": 20000, "priority": 1, "criticality": "critical"}]
    }
"""

from __future__ import annotations

import json
import re
from decimal import Decimal
from pathlib import Path

from paam.model import (
    DEFAULT_EPSILON,
    DEFAULT_KAPPA,
    Accelerator,
    Callback,
    Chain,
    ConfigError,
    Criticality,
    Executor,
    OverrunPolicy,
    Segment,
    SegmentKind,
    WaitPolicy,
    validate_system,
)

CONFIG_SCHEMA_VERSION = 1

UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}

TOP_KEYS = {"schema_version", "description", "time_unit", "cores", "accelerators",
            "executors", "callbacks", "chains"}
REQUIRED_TOP = {"cores", "accelerators", "executors", "callbacks", "chains"}
ACCEL_KEYS = {"id", "units", "buckets", "epsilon", "kappa", "server_core",
              "concurrent_lowest_bucket", "concurrency_slowdown"}
EXEC_KEYS = {"id", "core", "priority", "wait", "callbacks"}
CB_KEYS = {"id", "segments"}
SEG_KEYS = {"kind", "wcet", "accelerator"}
CHAIN_KEYS = {"id", "callbacks", "period", "deadline", "priority", "criticality",
              "phase", "overrun"}


def parse_duration(text):
    """Parse ``"2ms"``, ``"391us"``, ``"1.5s"`` or a bare integer (ns) into ns."""
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)?\s*", str(text))
    if not m:
        raise ValueError(f"cannot parse duration {text!r}")
    value = Decimal(m.group(1)) * UNITS[m.group(2) or "ns"]
    if value != value.to_integral_value():
        raise ValueError(f"duration {text!r} is finer than 1ns")
    return int(value)


def format_duration(ns):
    if ns is None:
        return "unbounded"
    if ns % 1_000_000 == 0:
        return f"{ns // 1_000_000}ms"
    if ns >= 1_000_000:
        return f"{ns / 1_000_000:.3f}ms"
    if ns % 1_000 == 0:
        return f"{ns // 1_000}us"
    return f"{ns}ns"


def _keys(obj, allowed, path, required=()):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", path)
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)}", path)


def _int(obj, key, path, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"missing {key!r}", path)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key!r} must be an integer", path)
    return v


def _enum(cls, value, path):
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"invalid value {value!r} (expected one of {choices})", path) from None


def system_from_dict(doc):
    """Build and validate a system from a parsed document."""
    _keys(doc, TOP_KEYS, "$", REQUIRED_TOP)
    if doc.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}", "$")
    unit = doc.get("time_unit", "ns")
    if unit not in ("ns", "us", "ms"):
        raise ConfigError(f"time_unit must be ns, us or ms, got {unit!r}", "$.time_unit")
    scale = UNITS[unit]

    def dur(obj, key, path, default=None):
        if key not in obj and default is not None:
            return default
        return _int(obj, key, path) * scale

    accelerators = []
    for i, a in enumerate(doc["accelerators"]):
        p = f"$.accelerators[{i}]"
        _keys(a, ACCEL_KEYS, p, {"id", "server_core"})
        accelerators.append(Accelerator(
            id=str(a["id"]),
            units=_int(a, "units", p, 1),
            buckets=_int(a, "buckets", p, 1),
            epsilon=dur(a, "epsilon", p, DEFAULT_EPSILON),
            kappa=dur(a, "kappa", p, DEFAULT_KAPPA),
            server_core=_int(a, "server_core", p),
            concurrent_lowest_bucket=bool(a.get("concurrent_lowest_bucket", False)),
            concurrency_slowdown=float(a.get("concurrency_slowdown", 1.5)),
        ))

    callbacks = []
    for i, cb in enumerate(doc["callbacks"]):
        p = f"$.callbacks[{i}]"
        _keys(cb, CB_KEYS, p, CB_KEYS)
        segs = []
        for j, s in enumerate(cb["segments"]):
            sp = f"{p}.segments[{j}]"
            _keys(s, SEG_KEYS, sp, {"kind", "wcet"})
            kind = _enum(SegmentKind, s["kind"], sp)
            if kind is SegmentKind.ACCEL and "accelerator" not in s:
                raise ConfigError("accelerator segment needs 'accelerator'", sp)
            segs.append(Segment(kind, _int(s, "wcet", sp) * scale, s.get("accelerator")))
        callbacks.append(Callback(str(cb["id"]), tuple(segs)))

    executors = []
    for i, e in enumerate(doc["executors"]):
        p = f"$.executors[{i}]"
        _keys(e, EXEC_KEYS, p, {"id", "core", "priority", "callbacks"})
        executors.append(Executor(
            id=str(e["id"]),
            callbacks=tuple(e["callbacks"]),
            core=_int(e, "core", p),
            priority=_int(e, "priority", p),
            wait=_enum(WaitPolicy, e.get("wait", "spin"), p),
        ))

    chains = []
    for i, c in enumerate(doc["chains"]):
        p = f"$.chains[{i}]"
        _keys(c, CHAIN_KEYS, p, {"id", "callbacks", "period", "priority"})
        period = dur(c, "period", p)
        chains.append(Chain(
            id=str(c["id"]),
            callbacks=tuple(c["callbacks"]),
            period=period,
            deadline=dur(c, "deadline", p) if "deadline" in c else period,
            priority=_int(c, "priority", p),
            criticality=_enum(Criticality, c.get("criticality", "critical"), p),
            phase=dur(c, "phase", p) if "phase" in c else 0,
            overrun=_enum(OverrunPolicy, c["overrun"], p) if "overrun" in c else None,
        ))

    return validate_system(_int(doc, "cores", "$"), accelerators, executors, callbacks,
                           chains, description=str(doc.get("description", "")))


def _pick_unit(system):
    values = []
    for a in system.accelerators.values():
        values += [a.epsilon, a.kappa]
    for cb in system.callbacks.values():
        values += [s.wcet for s in cb.segments]
    for c in system.chains.values():
        values += [c.period, c.deadline, c.phase]
    for unit in ("ms", "us"):
        if all(v % UNITS[unit] == 0 for v in values):
            return unit
    return "ns"


def system_to_dict(system, time_unit=None):
    """Inverse of :func:`system_from_dict` (derived maps are not stored)."""
    unit = time_unit or _pick_unit(system)
    scale = UNITS[unit]

    def d(v):
        if v % scale:
            raise ValueError(f"{v}ns is not a whole number of {unit}")
        return v // scale

    doc = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "time_unit": unit,
        "cores": system.cores,
        "accelerators": [],
        "executors": [],
        "callbacks": [],
        "chains": [],
    }
    if system.description:
        doc["description"] = system.description
    for a in system.accelerators.values():
        entry = {"id": a.id, "units": a.units, "buckets": a.buckets,
                 "epsilon": d(a.epsilon), "kappa": d(a.kappa), "server_core": a.server_core}
        if a.concurrent_lowest_bucket:
            entry["concurrent_lowest_bucket"] = True
            entry["concurrency_slowdown"] = a.concurrency_slowdown
        doc["accelerators"].append(entry)
    for e in system.executors.values():
        doc["executors"].append({"id": e.id, "core": e.core, "priority": e.priority,
                                 "wait": e.wait.value, "callbacks": list(e.callbacks)})
    for cb in system.callbacks.values():
        segs = []
        for s in cb.segments:
            entry = {"kind": s.kind.value, "wcet": d(s.wcet)}
            if s.is_accel:
                entry["accelerator"] = s.accelerator
            segs.append(entry)
        doc["callbacks"].append({"id": cb.id, "segments": segs})
    for c in system.chains.values():
        entry = {"id": c.id, "callbacks": list(c.callbacks), "period": d(c.period),
                 "deadline": d(c.deadline), "priority": c.priority,
                 "criticality": c.criticality.value}
        if c.phase:
            entry["phase"] = d(c.phase)
        if c.overrun is not None:
            entry["overrun"] = c.overrun.value
        doc["chains"].append(entry)
    return doc


def parse_json(text, source="<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _line_of(text, err):
    """Best-effort 1-based line number for a validation error."""
    if not err.path:
        return None
    m = re.match(r"\$\.(\w+)\[(\d+)\]", err.path)
    if m:
        section, index = m.group(1), int(m.group(2))
        start = text.find(f'"{section}"')
        if start < 0:
            return None
        count = -1
        for mm in re.finditer(r'"id"\s*:', text[start:]):
            count += 1
            if count == index:
                return text.count("\n", 0, start + mm.start()) + 1
        return None
    ident = err.path.split("[")[0]
    m = re.search(r'"id"\s*:\s*"%s"' % re.escape(ident), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_system(path):
    path = Path(path)
    text = path.read_text()
    doc = parse_json(text, str(path))
    try:
        return system_from_dict(doc)
    except ConfigError as err:
        line = _line_of(text, err)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {err}") from None


def dump_system(system, path=None, time_unit=None):
    text = json.dumps(system_to_dict(system, time_unit), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
