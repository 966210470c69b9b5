"""Reproducible experiment drivers: schedulability curves and the
overloaded-accelerator scenario."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path

from paam.analysis import analyze
from paam.config import system_from_dict
from paam.model import NS_PER_MS, NS_PER_US
from paam.simulator import SimMode, check_against_bounds, run_simulation
from paam.workload import GenParams, schedulability_ratio

DEFAULT_RATIOS = [(1, 9), (2, 8), (3, 7), (4, 6), (5, 5), (6, 4), (7, 3)]
DEFAULT_CHAIN_COUNTS = [1, 2, 3, 4, 5, 6, 7, 8]

# chosen so that neither curve sits at 0 or 1 across its whole range
CHAIN_CURVE_BASE = GenParams(utilization=0.1, ratio=(1, 1))
RATIO_CURVE_BASE = GenParams(chains=4, utilization=0.1)


@dataclass(frozen=True)
class CurvePoint:
    x: str
    acceptance_ratio: float
    trials: int
    seed: int


def run_chain_count_curve(base=CHAIN_CURVE_BASE, m_values=DEFAULT_CHAIN_COUNTS, trials=1000,
                          workers=None):
    """Acceptance ratio for each chain count in ``m_values``."""
    return [CurvePoint(str(m), schedulability_ratio(replace(base, chains=m), trials, workers),
                       trials, base.seed)
            for m in m_values]


def run_ratio_curve(base=RATIO_CURVE_BASE, ratios=DEFAULT_RATIOS, trials=1000, workers=None):
    """Acceptance ratio for each accelerator:CPU split, utilization fixed."""
    return [CurvePoint(f"{a}:{b}", schedulability_ratio(replace(base, ratio=(a, b)), trials, workers),
                       trials, base.seed)
            for a, b in ratios]


def curve_csv(points, x_name):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([x_name, "acceptance_ratio", "trials", "seed"])
    for p in points:
        w.writerow([p.x, f"{p.acceptance_ratio:.4f}", p.trials, p.seed])
    return out.getvalue()


# -- overloaded accelerator ------------------------------------------------

def overloaded_scenario_doc():
    """Two critical chains and four best-effort chains on one 6-bucket GPU.

    Every chain runs one callback of 52 ms standalone: 1 ms CPU, 50 ms GPU,
    1 ms CPU. The best-effort chains re-release every 52 ms.
    """
    def callback(cid):
        return {"id": f"{cid}_cb", "segments": [
            {"kind": "cpu", "wcet": 1000},
            {"kind": "accel", "wcet": 50000, "accelerator": "gpu0"},
            {"kind": "cpu", "wcet": 1000},
        ]}

    chains = [
        ("chain1", 120000, 6, "critical", 0),
        ("chain2", 220000, 5, "critical", 1),
        ("be3", 52000, 4, "best_effort", 0),
        ("be4", 52000, 3, "best_effort", 1),
        ("be5", 52000, 2, "best_effort", 2),
        ("be6", 52000, 1, "best_effort", 2),
    ]
    doc = {
        "description": "Overloaded GPU: 2 critical + 4 back-to-back best-effort chains. "
                       "The 2ms CPU / 50ms GPU split of the 52ms workload is an editable "
                       "assumption.",
        "time_unit": "us",
        "cores": 4,
        "accelerators": [{"id": "gpu0", "units": 1, "buckets": 6, "epsilon": 391,
                          "kappa": 130, "server_core": 3}],
        "executors": [],
        "callbacks": [],
        "chains": [],
    }
    for cid, period, prio, crit, core in chains:
        doc["callbacks"].append(callback(cid))
        doc["executors"].append({"id": f"ex_{cid}", "core": core,
                                 "priority": 2 if crit == "critical" or cid == "be5" else 1,
                                 "wait": "suspend", "callbacks": [f"{cid}_cb"]})
        doc["chains"].append({"id": cid, "callbacks": [f"{cid}_cb"], "period": period,
                              "deadline": period, "priority": prio, "criticality": crit})
    return doc


@dataclass
class OverloadedReport:
    analysis: object
    paam: object
    fifo: object
    conformance: object

    def reduction(self, chain_id):
        """Relative drop of the worst observed response, FIFO -> PAAM."""
        fifo = self.fifo.chains[chain_id].observed_worst
        paam = self.paam.chains[chain_id].observed_worst
        return (fifo - paam) / fifo

    @property
    def bounded(self):
        return self.conformance.ok

    def rows(self):
        out = []
        for cid, ps in self.paam.chains.items():
            fs = self.fifo.chains[cid]
            res = self.analysis.chains[cid]
            out.append({
                "chain": cid,
                "critical": ps.critical,
                "bound_ns": res.wcrt,
                "paam_max_ns": ps.observed_worst,
                "paam_mean_ns": ps.mean_response,
                "fifo_max_ns": fs.observed_worst,
                "fifo_mean_ns": fs.mean_response,
                "paam_dropped": ps.dropped,
                "fifo_dropped": fs.dropped,
            })
        return out

    def to_csv(self):
        out = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (f"{v:.1f}" if isinstance(v, float) else v))
                        for k, v in r.items()})
        return out.getvalue()

    def summary(self):
        lines = ["chain      bound      PAAM max   FIFO max   PAAM mean  FIFO mean"]
        for r in self.rows():
            def ms(v):
                return "       -  " if v is None else f"{v / NS_PER_MS:9.3f} "
            lines.append(f"{r['chain']:9s} {ms(r['bound_ns'])} {ms(r['paam_max_ns'])} "
                         f"{ms(r['fifo_max_ns'])} {ms(r['paam_mean_ns'])} {ms(r['fifo_mean_ns'])}")
        lines.append(f"chain1 worst-case reduction vs FIFO: {100 * self.reduction('chain1'):.1f}%")
        lines.append(f"critical chains within analysis bound: {'yes' if self.bounded else 'NO'}")
        return "\n".join(lines)


def run_overloaded_accelerator_case(duration=30_000 * NS_PER_MS, seed=0, doc=None):
    system = system_from_dict(doc or overloaded_scenario_doc())
    report = analyze(system)
    _, paam = run_simulation(system, SimMode.PAAM, duration, seed, record_trace=False)
    _, fifo = run_simulation(system, SimMode.FIFO_DIRECT, duration, seed, record_trace=False)
    return OverloadedReport(report, paam, fifo, check_against_bounds(paam, report))


# -- result files ------------------------------------------------------------

def write_results(root, experiment, seed, files):
    """Write ``{name: text}`` under ``root/<experiment>/<seed>/``."""
    outdir = Path(root) / experiment / str(seed)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (outdir / name).write_text(text)
    return outdir


def curve_summary(title, points, params):
    lines = [title, f"params: {json.dumps(_params_dict(params), sort_keys=True)}"]
    for p in points:
        lines.append(f"  {p.x:>6s}  {p.acceptance_ratio:.3f}")
    return "\n".join(lines) + "\n"


def _params_dict(params):
    d = {k: getattr(params, k) for k in params.__dataclass_fields__}
    d["wait"] = params.wait.value
    d["ratio"] = f"{params.ratio[0]}:{params.ratio[1]}"
    for k in ("period_min", "period_max", "epsilon", "kappa"):
        d[k] = f"{d[k] // NS_PER_US}us"
    return d
