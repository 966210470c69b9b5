"""Random chainset generation for schedulability experiments."""

from __future__ import annotations

import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from paam.analysis import analyze
from paam.model import (
    DEFAULT_EPSILON,
    DEFAULT_KAPPA,
    NS_PER_MS,
    NS_PER_US,
    Accelerator,
    Callback,
    Chain,
    Executor,
    Segment,
    SegmentKind,
    WaitPolicy,
    validate_system,
)


@dataclass(frozen=True)
class GenParams:
    chains: int = 4
    utilization: float = 0.2
    callbacks_per_chain: int = 4
    ratio: tuple = (1, 1)  # accelerator : CPU
    period_min: int = 10 * NS_PER_MS
    period_max: int = 1000 * NS_PER_MS
    buckets: int = 6
    units: int = 1
    cores: int = 4  # client cores; the server gets one more
    wait: WaitPolicy = WaitPolicy.SPIN
    epsilon: int = DEFAULT_EPSILON
    kappa: int = DEFAULT_KAPPA
    # "per_chain": every chain gets `utilization`;
    # "total": UUniFast splits `utilization` across the chains
    util_mode: str = "per_chain"
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.callbacks_per_chain < 1:
            raise ValueError("need at least one chain and one callback per chain")
        if self.utilization <= 0:
            raise ValueError("utilization must be positive")
        a, b = self.ratio
        if a < 0 or b < 0 or a + b == 0:
            raise ValueError("ratio parts must be non-negative and not both zero")
        if not 0 < self.period_min <= self.period_max:
            raise ValueError("invalid period range")
        if self.util_mode not in ("per_chain", "total"):
            raise ValueError(f"unknown utilization mode {self.util_mode!r}")


def parse_ratio(text):
    """``"1:9"`` -> ``(1, 9)`` (accelerator share first)."""
    try:
        a, b = (int(x) for x in str(text).split(":"))
    except ValueError:
        raise ValueError(f"ratio must look like A:B, got {text!r}") from None
    return a, b


def uunifast(n, total, rng):
    """Bini and Buttazzo's UUniFast: n utilizations summing to ``total``."""
    utils = []
    remaining = total
    for i in range(1, n):
        nxt = remaining * rng.random() ** (1.0 / (n - i))
        utils.append(remaining - nxt)
        remaining = nxt
    utils.append(remaining)
    return utils


def trial_seed(base_seed, trial):
    return base_seed * 1_000_003 + trial


def _log_uniform_period(rng, lo, hi):
    t = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return max(NS_PER_US, round(t / NS_PER_US) * NS_PER_US)


def _split(total, parts, what, chain_id):
    share = total // parts
    if total > 0 and share < 1:
        raise ValueError(f"{what} budget of chain {chain_id} is below 1ns per segment")
    return share


def generate_chainset(params):
    """Draw one system according to ``params`` (fully determined by its seed)."""
    rng = random.Random(params.seed)
    m = params.chains
    if params.util_mode == "total":
        utils = uunifast(m, params.utilization, rng)
    else:
        utils = [params.utilization] * m
    acc_part, cpu_part = params.ratio

    priorities = list(range(1, m + 1))
    rng.shuffle(priorities)

    accel = Accelerator(id="acc0", units=params.units, buckets=params.buckets,
                        epsilon=params.epsilon, kappa=params.kappa, server_core=params.cores)
    callbacks, chains, loads = [], [], []
    for i in range(m):
        cid = f"c{i}"
        period = _log_uniform_period(rng, params.period_min, params.period_max)
        budget = round(utils[i] * period)
        if budget < params.callbacks_per_chain:
            raise ValueError(f"budget of chain {cid} is below 1ns per segment")
        accel_total = budget * acc_part // (acc_part + cpu_part)
        cpu_total = budget - accel_total
        n = params.callbacks_per_chain
        accel_cb = _split(accel_total, n, "accelerator", cid)
        cpu_cb = _split(cpu_total, n, "CPU", cid)
        if accel_cb and 0 < cpu_cb < 2:
            raise ValueError(f"CPU budget of chain {cid} is below 1ns per segment")
        cb_ids = []
        for j in range(n):
            segs = []
            if accel_cb and cpu_cb:
                segs = [Segment(SegmentKind.CPU, cpu_cb // 2),
                        Segment(SegmentKind.ACCEL, accel_cb, accel.id),
                        Segment(SegmentKind.CPU, cpu_cb - cpu_cb // 2)]
            elif accel_cb:
                segs = [Segment(SegmentKind.ACCEL, accel_cb, accel.id)]
            else:
                segs = [Segment(SegmentKind.CPU, cpu_cb)]
            cb = Callback(f"{cid}_cb{j}", tuple(segs))
            callbacks.append(cb)
            cb_ids.append(cb.id)
        chains.append(Chain(cid, tuple(cb_ids), period, period, priorities[i]))
        loads.append(cpu_cb * n / period)

    # worst-fit decreasing on CPU utilization
    core_load = [0.0] * params.cores
    executors = []
    order = sorted(range(m), key=lambda i: (-loads[i], i))
    for i in order:
        core = min(range(params.cores), key=lambda c: (core_load[c], c))
        core_load[core] += loads[i]
        chain = chains[i]
        executors.append(Executor(f"ex{i}", chain.callbacks, core, chain.priority, params.wait))
    executors.sort(key=lambda e: e.id)

    return validate_system(params.cores + 1, [accel], executors, callbacks, chains)


def _is_schedulable(params):
    return analyze(generate_chainset(params)).schedulable


def schedulability_ratio(params, trials, workers=None):
    """Fraction of ``trials`` generated systems whose critical chains all pass
    the response-time test. Trial ``k`` uses seed ``trial_seed(params.seed, k)``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [replace(params, seed=trial_seed(params.seed, k)) for k in range(trials)]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or trials < 16:
        verdicts = [_is_schedulable(p) for p in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(_is_schedulable, jobs, chunksize=max(1, trials // (4 * workers))))
    return sum(verdicts) / trials


def default_workers():
    return max(1, min(8, os.cpu_count() or 1))
