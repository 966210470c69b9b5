"""Acceptance criteria, each run at its stated scale and tolerance.

Every test prints one ``PASS``/``FAIL`` line (visible in ``pytest -v``
output) before asserting.
"""

import json
import random
import subprocess
import sys
import time

import pytest

from paam.analysis import analyze, arrival_bound, segment_handling_time
from paam.config import system_from_dict
from paam.experiments import (
    DEFAULT_RATIOS,
    run_chain_count_curve,
    run_overloaded_accelerator_case,
    run_ratio_curve,
)
from paam.model import NS_PER_MS
from paam.simulator import SimMode, check_against_bounds, run_simulation
from paam.workload import GenParams, generate_chainset

from oracle import brute_force, picas_wcrt
from smallsys import cpu_only_doc, find_dominance_witnesses, hyperperiod, random_small_doc

MS = NS_PER_MS
S = 1000 * MS


@pytest.fixture
def report_line(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok
    return emit


def test_soundness_random_chainsets(report_line):
    start = time.monotonic()
    rng = random.Random(2024)
    checked = drawn = 0
    violations = []
    while checked < 200 and drawn < 5000:
        params = GenParams(chains=rng.randint(2, 8), utilization=rng.uniform(0.1, 0.4),
                           ratio=(1, 1), seed=drawn)
        drawn += 1
        system = generate_chainset(params)
        report = analyze(system)
        if not report.schedulable:
            continue
        checked += 1
        _, stats = run_simulation(system, SimMode.PAAM, 30 * S, seed=drawn,
                                  record_trace=False)
        violations += [(drawn - 1, r.chain) for r in check_against_bounds(stats, report).failures()]
    elapsed = time.monotonic() - start
    ok = checked >= 200 and not violations and elapsed < 300
    assert report_line("1 soundness", ok,
                       f"{checked} schedulable chainsets ({drawn} drawn), "
                       f"{len(violations)} bound violations, {elapsed:.0f}s (limit 300s)"), violations[:5]


def test_chain_count_curve(report_line):
    start = time.monotonic()
    points = run_chain_count_curve(trials=1000)
    elapsed = time.monotonic() - start
    ratios = [p.acceptance_ratio for p in points]
    rises = [(a.x, b.x) for a, b in zip(points, points[1:])
             if b.acceptance_ratio > a.acceptance_ratio + 0.02]
    ok = not rises and elapsed < 600
    assert report_line("2 chain-count curve", ok,
                       f"{[round(r, 3) for r in ratios]}, rises over 2pp: {rises}, "
                       f"{elapsed:.0f}s (limit 600s)")


def test_ratio_curve(report_line):
    points = {p.x: p.acceptance_ratio for p in run_ratio_curve(trials=1000)}
    assert [f"{a}:{b}" for a, b in DEFAULT_RATIOS] == list(points)
    gap = points["1:9"] - points["7:3"]
    ok = gap > 0.05
    assert report_line("3 ratio curve", ok,
                       f"1:9 -> {points['1:9']:.3f}, 7:3 -> {points['7:3']:.3f}, "
                       f"gap {100 * gap:.1f}pp (need > 5pp)")


def test_overloaded_accelerator(report_line):
    res = run_overloaded_accelerator_case(duration=30 * S)
    row = {r["chain"]: r for r in res.rows()}["chain1"]
    reduction = res.reduction("chain1")
    ok = (row["bound_ns"] is not None and row["paam_max_ns"] <= row["bound_ns"]
          and reduction >= 0.2)
    assert report_line("4 overloaded accelerator", ok,
                       f"chain1 bound {row['bound_ns']}ns, PAAM max {row['paam_max_ns']}ns, "
                       f"FIFO max {row['fifo_max_ns']}ns, reduction {100 * reduction:.1f}% "
                       f"(need >= 20%)")


def test_brute_force_oracle(report_line):
    systems = mismatches = over = 0
    seed = 0
    while systems < 50:
        seed += 1
        s = system_from_dict(random_small_doc(random.Random(seed), max_chains=3,
                                              max_callbacks=2, best_effort=seed % 3 == 0))
        hp = hyperperiod(s)
        if hp > 2000 * MS:
            continue
        systems += 1
        horizon = 2 * hp
        for mode in (SimMode.PAAM, SimMode.FIFO_DIRECT):
            expected = {c: sorted(v) for c, v in brute_force(s, horizon, MS, mode.value).items()}
            _, stats = run_simulation(s, mode, horizon, record_trace=False)
            got = {c: sorted(st.responses) for c, st in stats.chains.items()}
            mismatches += got != expected
            if mode is SimMode.PAAM:
                for cid, res in analyze(s).chains.items():
                    seen = [r for _, r in expected[cid]]
                    if res.schedulable and seen and max(seen) > res.wcrt:
                        over += 1
    ok = mismatches == 0 and over == 0
    assert report_line("5 brute-force oracle", ok,
                       f"{systems} systems x 2 modes, {mismatches} trace mismatches, "
                       f"{over} chains above R_c")


def test_formula_units(report_line):
    arrivals = [arrival_bound(t * MS, 10 * MS) for t in (0, 10, 15)]
    fixed_point = segment_handling_time(5 * MS, 0, [(3 * MS, 20 * MS)], 100 * MS)
    degenerate = 0
    for seed in range(200):
        s = system_from_dict(cpu_only_doc(random.Random(seed)))
        got = {cid: r.wcrt for cid, r in analyze(s).chains.items()}
        degenerate += got != picas_wcrt(s)
    ok = arrivals == [1, 2, 3] and fixed_point == 11 * MS and degenerate == 0
    assert report_line("6 formula units", ok,
                       f"arrival bounds {arrivals} (want [1, 2, 3]), fixed point "
                       f"{fixed_point}ns (want {11 * MS}), {degenerate}/200 CPU-only "
                       f"systems differ from the reference")


def test_non_dominance(report_line):
    seg, per_chain, tried = find_dominance_witnesses(limit=10_000)
    ok = seg is not None and per_chain is not None
    assert report_line("7 non-dominance", ok,
                       f"per-segment smaller at {seg}, per-chain smaller at {per_chain}, "
                       f"{tried} instances tried (limit 10000)")


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "paam.cli", *args], cwd=cwd,
                          capture_output=True, text=True, check=True)


def test_determinism(tmp_path, report_line):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        _cli("generate", "--chains", "5", "--util", "0.1", "--seed", "17", "-o", "sys.json",
             cwd=d)
        _cli("analyze", "sys.json", "--json", "report.json", "--csv", "report.csv", cwd=d)
        _cli("simulate", "sys.json", "--duration", "2s", "--seed", "3", "--jitter", "0.5",
             "--trace", "trace.tsv", "--stats", "stats.csv", cwd=d)
        outputs.append({f: (d / f).read_bytes()
                        for f in ("sys.json", "report.json", "report.csv", "trace.tsv",
                                  "stats.csv")})
    same = [f for f in outputs[0] if outputs[0][f] == outputs[1][f]]
    json.loads(outputs[0]["report.json"])
    ok = len(same) == len(outputs[0]) and outputs[0]["trace.tsv"].count(b"\n") > 10
    assert report_line("8 determinism", ok,
                       f"{len(same)}/{len(outputs[0])} artifacts byte-identical across runs")
