"""Naive tick-by-tick reference simulator.

Written separately from ``paam.simulator``: it steps time one tick at a
time, keeps everything in plain lists and picks winners by linear scans.
Every duration in the system must be a multiple of ``tick``.
"""

SPIN = "spin"


def _ticks(value, tick):
    assert value % tick == 0, f"{value} is not a multiple of tick {tick}"
    return value // tick


def brute_force(system, horizon, tick, mode="paam"):
    """Return ``{chain_id: [(instance, response_ns), ...]}`` for every instance
    that completes strictly before ``horizon`` ns."""
    H = _ticks(horizon, tick)
    paam = mode == "paam"

    chains = []
    for c in system.chains.values():
        cbs = []
        for cb_id in c.callbacks:
            segs = []
            for idx, s in enumerate(system.callbacks[cb_id].segments):
                if s.is_accel:
                    acc = system.accelerators[s.accelerator]
                    segs.append({
                        "accel": True,
                        "len": _ticks(s.wcet, tick),
                        "unit": (s.accelerator, system.unit_map[_ref(cb_id, idx)]),
                        "bucket": system.bucket_map[(c.id, s.accelerator)] if paam else 0,
                        "eps": _ticks(acc.epsilon, tick) if paam else 0,
                        "kappa": _ticks(acc.kappa, tick),
                    })
                else:
                    segs.append({"accel": False, "len": _ticks(s.wcet, tick)})
            cbs.append({"id": cb_id, "segs": segs,
                        "executor": system.executor_of(cb_id).id})
        chains.append({
            "id": c.id, "prio": c.priority, "T": _ticks(c.period, tick),
            "phase": _ticks(c.phase, tick), "drop": c.overrun_policy.value == "drop",
            "cbs": cbs, "count": 0, "jobs": [],
        })

    execs = []
    for e in system.executors.values():
        execs.append({"id": e.id, "core": e.core, "prio": e.priority,
                      "spin": e.wait.value == SPIN, "cur": None})
    exec_by_id = {e["id"]: e for e in execs}

    units = {}
    for a in system.accelerators.values():
        for u in range(a.units):
            units[(a.id, u)] = {"queue": [], "running": None, "held": {}}

    ready = []          # [job, callback position]
    eps_wait = []       # [request, ticks left]
    done = {c["id"]: [] for c in chains}
    counter = [0]

    def next_seq():
        counter[0] += 1
        return counter[0]

    def start_segment(ex, t):
        cur = ex["cur"]
        job, pos = cur["job"], cur["pos"]
        seg_list = job["chain"]["cbs"][pos]["segs"]
        if cur["seg"] == len(seg_list):
            finish_callback(ex, t)
            return
        seg = seg_list[cur["seg"]]
        if not seg["accel"]:
            cur["cpu"] = seg["len"]
            cur["waiting"] = False
            return
        cur["waiting"] = True
        req = {"ex": ex, "left": seg["len"], "unit": seg["unit"], "bucket": seg["bucket"],
               "prio": job["chain"]["prio"], "kappa": seg["kappa"], "charged": False,
               "arrive": None, "seq": next_seq()}
        if seg["eps"]:
            eps_wait.append([req, seg["eps"]])
        else:
            req["arrive"] = t
            units[seg["unit"]]["queue"].append(req)

    def finish_callback(ex, t):
        job = ex["cur"]["job"]
        ex["cur"] = None
        job["active"] = False
        job["pos"] += 1
        chain = job["chain"]
        if job["dropped"] and job["pos"] < len(chain["cbs"]):
            chain["jobs"].remove(job)
            return
        if job["pos"] == len(chain["cbs"]):
            done[chain["id"]].append((job["k"], (t - job["release"]) * tick))
            chain["jobs"].remove(job)
            return
        ready.append([job, job["pos"]])

    def wants_cpu(ex):
        if ex["cur"] is None:
            return any(chain_exec(r) is ex and not r[0]["dropped"] for r in ready)
        return not ex["cur"]["waiting"] or ex["spin"]

    def chain_exec(r):
        job, pos = r
        return exec_by_id[job["chain"]["cbs"][pos]["executor"]]

    for t in range(H):
        # releases
        for c in chains:
            if t >= c["phase"] and (t - c["phase"]) % c["T"] == 0:
                if c["drop"]:
                    for old in list(c["jobs"]):
                        old["dropped"] = True
                        if not old["active"]:
                            c["jobs"].remove(old)
                job = {"chain": c, "k": c["count"], "release": t, "pos": 0,
                       "dropped": False, "active": False}
                c["count"] += 1
                c["jobs"].append(job)
                ready.append([job, 0])
        # accelerator completions
        for unit in units.values():
            r = unit["running"]
            if r is not None and r["left"] == 0:
                unit["running"] = None
                r["ex"]["cur"]["seg"] += 1
                start_segment(r["ex"], t)
        # server overhead elapsed
        for item in list(eps_wait):
            if item[1] == 0:
                eps_wait.remove(item)
                req = item[0]
                req["arrive"] = t
                units[req["unit"]]["queue"].append(req)
        # CPU completions (only an executor holding a CPU segment can reach zero)
        for ex in execs:
            cur = ex["cur"]
            if cur is not None and not cur["waiting"] and cur["cpu"] == 0:
                cur["seg"] += 1
                start_segment(ex, t)

        # which executor holds each core
        running = {}
        while True:
            started = False
            for core in sorted({e["core"] for e in execs}):
                best = None
                for ex in execs:
                    if ex["core"] == core and wants_cpu(ex):
                        if best is None or ex["prio"] > best["prio"]:
                            best = ex
                running[core] = best
                if best is not None and best["cur"] is None:
                    mine = [r for r in ready if chain_exec(r) is best and not r[0]["dropped"]]
                    pick = max(mine, key=lambda r: (r[0]["chain"]["prio"], -r[0]["k"], -r[1]))
                    ready.remove(pick)
                    pick[0]["active"] = True
                    best["cur"] = {"job": pick[0], "pos": pick[1], "seg": 0, "cpu": 0,
                                   "waiting": False}
                    start_segment(best, t)
                    started = True
            if not started:
                break
        ready[:] = [r for r in ready if not r[0]["dropped"]]

        # accelerator dispatch
        for unit in units.values():
            q = unit["queue"]
            if not paam:
                if unit["running"] is None and q:
                    first = min(q, key=lambda r: (r["arrive"], -r["prio"], r["seq"]))
                    q.remove(first)
                    unit["running"] = first
                continue
            best = None
            for b in sorted({r["bucket"] for r in q} | set(unit["held"]), reverse=True):
                if unit["held"].get(b):
                    best = unit["held"][b]
                else:
                    mine = [r for r in q if r["bucket"] == b]
                    best = max(mine, key=lambda r: (r["prio"], -r["seq"]))
                break
            if best is None:
                continue
            cur = unit["running"]
            if cur is not None:
                if best["bucket"] <= cur["bucket"]:
                    continue
                if not cur["charged"]:
                    cur["charged"] = True
                    cur["left"] += 2 * cur["kappa"]
                unit["held"][cur["bucket"]] = cur
            if unit["held"].get(best["bucket"]) is best:
                del unit["held"][best["bucket"]]
            else:
                q.remove(best)
            unit["running"] = best

        # one tick of progress
        for core, ex in running.items():
            if ex is not None and not ex["cur"]["waiting"]:
                ex["cur"]["cpu"] -= 1
        for unit in units.values():
            if unit["running"] is not None:
                unit["running"]["left"] -= 1
        for item in eps_wait:
            item[1] -= 1
    return done


def _ref(cb_id, idx):
    from paam.model import SegmentRef
    return SegmentRef(cb_id, idx)


def picas_wcrt(system):
    """Response times of an accelerator-free system, computed from scratch."""
    raw = {}
    for c in system.chains.values():
        ex = system.chain_executor(c.id)
        mates = [o for o in system.chains.values()
                 if o.id != c.id and system.chain_executor(o.id).id == ex.id]
        hp = [o for o in mates if o.priority > c.priority]
        lp = [o for o in mates if o.priority < c.priority]
        hpp = [o for o in system.chains.values()
               if system.chain_executor(o.id).core == ex.core
               and system.chain_executor(o.id).priority > ex.priority]
        B = max((system.callbacks[cb].cpu_wcet for o in lp for cb in o.callbacks), default=0)
        E = system.exec_sum(c.id)
        r = B + E
        while r <= c.deadline:
            nxt = B + E + sum((-(-r // o.period) + 1) * system.exec_sum(o.id) for o in hp + hpp)
            if nxt == r:
                break
            r = nxt
        raw[c.id] = (r if r <= c.deadline else None, {o.id for o in hp + hpp})
    final = {cid: r for cid, (r, _) in raw.items()}
    changed = True
    while changed:
        changed = False
        for cid, (_, deps) in raw.items():
            if final[cid] is None:
                continue
            for d in deps:
                if final[d] is None or final[d] > system.chains[d].period:
                    final[cid] = None
                    changed = True
                    break
    return final
