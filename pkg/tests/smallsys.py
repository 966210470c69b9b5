"""Random small systems with integer-millisecond parameters."""

import math
import random

from paam.analysis import analyze
from paam.config import system_from_dict

# divisors of 2000 ms keep every hyperperiod within 2 s
PERIODS_MS = [10, 16, 20, 25, 40, 50, 80, 100, 125, 200, 250, 400, 500, 1000, 2000]


def random_small_doc(rng, max_chains=3, max_callbacks=2, share_executors=False,
                     best_effort=False):
    m = rng.randint(1, max_chains)
    client_cores = rng.randint(1, 2)
    buckets = rng.randint(1, 3)
    doc = {
        "time_unit": "ms",
        "cores": client_cores + 1,
        "accelerators": [{
            "id": "acc0",
            "units": rng.randint(1, 2),
            "buckets": buckets,
            "epsilon": rng.choice([0, 0, 1]),
            "kappa": rng.choice([0, 1]),
            "server_core": client_cores,
        }],
        "executors": [],
        "callbacks": [],
        "chains": [],
    }
    prios = rng.sample(range(1, 10), m)
    prios.sort(reverse=True)
    n_exec = rng.randint(1, m) if share_executors else m
    for e in range(n_exec):
        doc["executors"].append({"id": f"e{e}", "core": rng.randrange(client_cores),
                                 "priority": 0, "wait": rng.choice(["spin", "suspend"]),
                                 "callbacks": []})
    used = {}
    for ex in doc["executors"]:
        p = rng.randint(1, 9)
        while (ex["core"], p) in used:
            p = rng.randint(1, 9)
        used[(ex["core"], p)] = True
        ex["priority"] = p

    for i in range(m):
        period = rng.choice(PERIODS_MS[:-1])
        cbs = []
        for j in range(rng.randint(1, max_callbacks)):
            first_cpu = rng.random() < 0.8
            kinds = ["cpu", "accel", "cpu"] if first_cpu else ["accel", "cpu"]
            kinds = kinds[: rng.randint(1, len(kinds))]
            segs = []
            for kind in kinds:
                seg = {"kind": kind, "wcet": rng.randint(1, max(1, period // 10))}
                if kind == "accel":
                    seg["accelerator"] = "acc0"
                segs.append(seg)
            cb_id = f"c{i}_cb{j}"
            doc["callbacks"].append({"id": cb_id, "segments": segs})
            cbs.append(cb_id)
        ex = doc["executors"][i % n_exec] if share_executors else doc["executors"][i]
        ex["callbacks"].extend(cbs)
        crit = "best_effort" if best_effort and i == m - 1 and m > 1 else "critical"
        doc["chains"].append({"id": f"c{i}", "callbacks": cbs, "period": period,
                              "deadline": period, "priority": prios[i], "criticality": crit})
    doc["executors"] = [e for e in doc["executors"] if e["callbacks"]]
    return doc


def random_small_system(seed, **kw):
    return system_from_dict(random_small_doc(random.Random(seed), **kw))


def hyperperiod(system):
    return math.lcm(*(c.period for c in system.chains.values()))


def cpu_only_doc(rng):
    doc = random_small_doc(rng, max_chains=5, max_callbacks=3, share_executors=True)
    for cb in doc["callbacks"]:
        total = sum(s["wcet"] for s in cb["segments"])
        cb["segments"] = [{"kind": "cpu", "wcet": total}]
    return doc


def find_dominance_witnesses(limit=10_000, seed=0):
    """Search random systems for chains where each handling bound is strictly
    smaller than the other. Returns (seg_smaller, chain_smaller, tried)."""
    seg_smaller = chain_smaller = None
    for k in range(limit):
        s = system_from_dict(random_small_doc(random.Random(seed * 7919 + k), max_chains=3,
                                              max_callbacks=2))
        for res in analyze(s).chains.values():
            if res.wcrt is None or res.per_segment is None or res.per_chain is None:
                continue
            if res.per_segment < res.per_chain and seg_smaller is None:
                seg_smaller = (k, res.chain)
            if res.per_chain < res.per_segment and chain_smaller is None:
                chain_smaller = (k, res.chain)
        if seg_smaller and chain_smaller:
            return seg_smaller, chain_smaller, k + 1
    return seg_smaller, chain_smaller, limit
