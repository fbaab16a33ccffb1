"""
Splitting estimates of P(p) at small rates.

Metropolis chains sample failing configurations at every rate of a schedule
that starts at p0. Bennett's acceptance-ratio estimator links neighbouring
rates, and the product of the ratios carries a direct Monte Carlo estimate
of P(p0) down (or up) to the target rates.

All probabilities are handled as logs. A configuration e is compressed; its
weight under rate p is prod_a p_a^e_a (1 - p_a)^(1 - e_a) with p_a the
parity-aggregated flip probability of column a.
"""
import csv
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit

import config
import workers
from decoders import DecoderConfig, decoder_for
from errors import BudgetExhaustedError, FitError, InvariantError
from sampling import RateEstimate, draw_rate_errors

logger = logging.getLogger(__name__)

LOG_CLAMP = 700.0
BOUNDARY_CONVENTION = "clamped-endpoint"
SPLIT_HEADER = ["p", "P_hat", "P_std", "mean_weight", "transition_rate", "decoder_call_rate"]


# --- Rate tables ---

@dataclass
class RateTable:
    """Per-column log-odds and the log-probability of the empty configuration at one rate."""
    p: float
    log_odds: np.ndarray
    base: float


def rate_table(system, p):
    q = p / system.rate_divisor
    if not 0 < q < 0.5:
        raise ValueError(f"need 0 < p/b < 1/2, got p={p} b={system.rate_divisor:g}")
    probs = system.fault_probabilities(p)
    log_off = np.log1p(-probs)
    return RateTable(float(p), np.log(probs) - log_off, float(log_off.sum()))


def pi_weight(system, e, p):
    """log pi_p(e) in compressed form."""
    table = rate_table(system, p)
    return table.base + float(table.log_odds[e.support()].sum())


def bennett_kernel(log_x):
    """g(x) = 1 / (1 + x) evaluated from log x."""
    return expit(-np.clip(log_x, -LOG_CLAMP, LOG_CLAMP))


# --- Failure oracle ---

class CachedFailureOracle:
    """
    Failure test with an LRU cache from syndrome to correction action.

    `calls` counts every failure query, cached or not, so it matches the
    number of decoder invocations an uncached run would make.
    """

    def __init__(self, system, cfg, capacity=None):
        self.system = system
        self.cfg = cfg
        capacity = config.DECODER_CACHE_SIZE if capacity is None else capacity
        self._action = lru_cache(maxsize=capacity)(decoder_for(system, cfg).correction_action)
        self.calls = 0

    def is_failure(self, e):
        self.calls += 1
        if e.is_zero():
            return False
        return self._action(self.system.syndrome(e)) != self.system.action(e)

    def cache_info(self):
        return self._action.cache_info()


# --- Metropolis kernel ---

def _propose(e, alpha, u, log_odds, oracle):
    """One kernel step for flip index `alpha` and uniform draw `u`."""
    log_ratio = -log_odds[alpha] if e[alpha] else log_odds[alpha]
    accept = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    if u < 1.0 - accept:
        return e
    trial = e.flip(alpha)
    if oracle.is_failure(trial):
        return trial
    return e


def metropolis_step(system, cfg, e, p, rng, oracle=None):
    """Flip one uniform bit, accept with min(1, pi'/pi), then keep it only if it still fails."""
    oracle = oracle or CachedFailureOracle(system, cfg)
    if not oracle.is_failure(e):
        raise InvariantError("metropolis_step needs a failing configuration")
    table = rate_table(system, p)
    alpha = int(rng.integers(system.n_faults))
    return _propose(e, alpha, float(rng.random()), table.log_odds, oracle)


def transition_probability(system, oracle, e, e_next, p):
    """Closed-form P(e -> e_next) of the kernel for distinct configurations."""
    diff = e ^ e_next
    if diff.weight() != 1 or not oracle.is_failure(e_next):
        return 0.0
    alpha = diff.support()[0]
    log_odds = rate_table(system, p).log_odds
    log_ratio = log_odds[alpha] if e_next[alpha] else -log_odds[alpha]
    return min(1.0, math.exp(log_ratio)) / system.n_faults


# --- Schedules ---

def _w_ref(p, d, n):
    return max(d / 2.0, p * n)


@dataclass
class RateSchedule:
    """
    Rates in chain order. Index `origin` holds p0; neighbours are index +-1,
    clamped at the ends.
    """
    p_values: list
    w_refs: list
    origin: int = 0

    def __len__(self):
        return len(self.p_values)

    def neighbour(self, j, step):
        return min(max(j + step, 0), len(self.p_values) - 1)

    @property
    def steps(self):
        """Ratio steps on the longer side of p0."""
        return max(self.origin, len(self.p_values) - 1 - self.origin)


def build_schedule(p0, p_target, d, n):
    """p_{j+1} = p_j 2^(-+1/sqrt(w_j)) with w_j = max(D/2, p_j N), last point clamped to p_target."""
    if not (0 < p0 < 1 and 0 < p_target < 1):
        raise ValueError(f"rates must lie in (0, 1), got p0={p0} target={p_target}")
    ps = [float(p0)]
    if p_target != p0:
        sign = -1.0 if p_target < p0 else 1.0
        while True:
            p = ps[-1]
            step = p * 2.0 ** (sign / math.sqrt(_w_ref(p, d, n)))
            if (step - p_target) * sign >= 0:
                ps.append(float(p_target))
                break
            ps.append(step)
    return RateSchedule(ps, [_w_ref(p, d, n) for p in ps])


def two_sided_schedule(p0, targets, d, n):
    """Upward and downward schedules joined at p0, with every target inserted as a stop."""
    below = sorted({float(t) for t in targets if t < p0}, reverse=True)
    above = sorted({float(t) for t in targets if t > p0})
    down = build_schedule(p0, below[-1], d, n).p_values if below else [float(p0)]
    up = build_schedule(p0, above[-1], d, n).p_values if above else [float(p0)]
    down = sorted(set(down) | set(below), reverse=True)
    up = sorted(set(up) | set(above))
    ps = list(reversed(up[1:])) + down
    return RateSchedule(ps, [_w_ref(p, d, n) for p in ps], origin=len(up) - 1)


# --- Chains ---

@dataclass
class ChainRecord:
    """
    Samples E_1..E_T of one chain (E_0 excluded). For every sample the log
    ratios log pi_j(E)/pi_{j-1}(E) and log pi_j(E)/pi_{j+1}(E) are kept.
    """
    rate_index: int
    p: float
    seed_config: object
    log_ratio_prev: np.ndarray
    log_ratio_next: np.ndarray
    weights: np.ndarray
    transitions: int
    decoder_calls: int
    final_config: object
    has_prev: bool
    has_next: bool
    wall_time: float = 0.0
    partial: bool = False

    @property
    def samples(self):
        return len(self.weights)

    @property
    def transition_rate(self):
        return self.transitions / self.samples if self.samples else 0.0

    @property
    def decoder_call_rate(self):
        return self.decoder_calls / self.samples if self.samples else 0.0

    @property
    def weight_histogram(self):
        return Counter(self.weights.tolist())

    def g_sums(self, side):
        """(sum, sum of squares) of g(pi_j / pi_{j+-1}) over the samples, with c = 1."""
        g = bennett_kernel(self.log_ratio_prev if side < 0 else self.log_ratio_next)
        return float(g.sum()), float((g * g).sum())


def _relative_error(sides):
    """Algorithm-style precision: max relative stderr plus the half-sample discrepancy."""
    sigma = delta = 0.0
    for lr in sides:
        g = bennett_kernel(lr)
        t = len(g)
        mean = g.mean()
        s = g.std(ddof=1) if t > 1 else math.inf
        half = g[: math.ceil(t / 2)].mean()
        sigma = max(sigma, s / mean / math.sqrt(t))
        delta = max(delta, abs(mean - half) / mean)
    return sigma, delta


def run_chain(system, cfg, j, seed_config, schedule, t_init, epsilon=0.25, t_total=None, lam=2.0,
              rng=None, oracle=None, budget_seconds=None):
    """Extend a chain at schedule index j until sigma + delta <= epsilon / sqrt(t)."""
    if t_init < 2:
        raise ValueError("t_init must be at least 2")
    rng = rng if rng is not None else np.random.default_rng()
    oracle = oracle or CachedFailureOracle(system, cfg)
    if not oracle.is_failure(seed_config):
        raise InvariantError(f"chain {j} seeded with a non-failing configuration")

    here = rate_table(system, schedule.p_values[j])
    prev = rate_table(system, schedule.p_values[schedule.neighbour(j, -1)])
    nxt = rate_table(system, schedule.p_values[schedule.neighbour(j, 1)])
    d_prev, d_next = here.log_odds - prev.log_odds, here.log_odds - nxt.log_odds
    base_prev, base_next = here.base - prev.base, here.base - nxt.base
    has_prev, has_next = j > 0, j < len(schedule) - 1
    tol = epsilon / math.sqrt(max(1, t_total or schedule.steps))

    e = seed_config
    support = e.support()
    acc_prev, acc_next = float(d_prev[support].sum()), float(d_next[support].sum())
    weight = e.weight()
    lr_prev, lr_next, weights = [], [], []
    transitions, calls_before = 0, oracle.calls
    target, lam_step, partial = t_init, lam, False
    start = time.monotonic()

    while True:
        n = target - len(weights)
        for alpha, u in zip(rng.integers(system.n_faults, size=n).tolist(), rng.random(n).tolist()):
            moved = _propose(e, alpha, u, here.log_odds, oracle)
            if moved is not e:
                sign = 1 if moved[alpha] else -1
                acc_prev += sign * d_prev[alpha]
                acc_next += sign * d_next[alpha]
                weight += sign
                transitions += 1
                e = moved
            lr_prev.append(base_prev + acc_prev)
            lr_next.append(base_next + acc_next)
            weights.append(weight)

        sides = [np.asarray(lr, dtype=float) for lr, ok in ((lr_prev, has_prev), (lr_next, has_next)) if ok]
        sigma, delta = _relative_error(sides)
        logger.debug(f"chain {j} p={here.p:.4g}: T={target} sigma={sigma:.3g} delta={delta:.3g}")
        if sigma + delta <= tol:
            break
        if budget_seconds is not None and time.monotonic() - start > budget_seconds:
            logger.warning(f"chain {j} p={here.p:.4g}: wall-clock budget spent at T={target}")
            partial = True
            break
        target += math.ceil(lam_step * t_init)
        lam_step *= lam

    return ChainRecord(
        rate_index=j,
        p=here.p,
        seed_config=seed_config,
        log_ratio_prev=np.asarray(lr_prev, dtype=float),
        log_ratio_next=np.asarray(lr_next, dtype=float),
        weights=np.asarray(weights, dtype=np.int64),
        transitions=transitions,
        decoder_calls=oracle.calls - calls_before,
        final_config=e,
        has_prev=has_prev,
        has_next=has_next,
        wall_time=time.monotonic() - start,
        partial=partial,
    )


# --- Ratio estimation ---

@dataclass
class RatioEstimate:
    value: float
    stderr: float
    c: float


def estimate_ratio(rec_from, rec_to, iterations=3):
    """
    Bennett estimate of P(p_to) / P(p_from) for chains at neighbouring
    schedule indices, with c iterated from 1 towards the ratio itself.
    """
    if abs(rec_from.rate_index - rec_to.rate_index) != 1:
        raise ValueError("records must sit at neighbouring schedule indices")
    if not rec_from.samples or not rec_to.samples:
        raise ValueError("both chains need samples")
    forward = rec_to.rate_index == rec_from.rate_index + 1
    lr_from = rec_from.log_ratio_next if forward else rec_from.log_ratio_prev
    lr_to = rec_to.log_ratio_prev if forward else rec_to.log_ratio_next

    c = 1.0
    for _ in range(iterations):
        g_from = bennett_kernel(lr_from + math.log(c))
        g_to = bennett_kernel(lr_to - math.log(c))
        num, den = g_from.mean(), g_to.mean()
        if den == 0 or num == 0:
            raise FitError(f"ratio estimate degenerate between p={rec_from.p:.4g} and p={rec_to.p:.4g}")
        r = c * num / den
        used_c, c = c, r

    rel = math.sqrt(_rel_var(g_from) + _rel_var(g_to))
    return RatioEstimate(float(r), float(r * rel), float(used_c))


def _rel_var(g):
    if len(g) < 2:
        return math.inf
    return float(g.var(ddof=1) / (len(g) * g.mean() ** 2))


# --- Results ---

@dataclass
class SplitEstimate:
    """One splitting instance carried from p0 to p_target."""
    p_target: float
    p_hat: float
    p_stderr: float
    ratios: list
    ratio_stderrs: list
    p0_estimate: float
    provenance: dict = field(default_factory=dict)


def chain_estimates(records, origin, p0_rate, provenance=None):
    """P_hat at every schedule index from one bundle of chains."""
    n = len(records)
    p_hat = [0.0] * n
    rel_var = [0.0] * n
    steps = [[] for _ in range(n)]
    p_hat[origin] = p0_rate.phat
    rel_var[origin] = (p0_rate.stderr / p0_rate.phat) ** 2 if p0_rate.phat > 0 else math.inf
    for direction in (1, -1):
        j = origin + direction
        while 0 <= j < n:
            ratio = estimate_ratio(records[j - direction], records[j])
            p_hat[j] = p_hat[j - direction] * ratio.value
            rel_var[j] = rel_var[j - direction] + (ratio.stderr / ratio.value) ** 2
            steps[j] = steps[j - direction] + [ratio]
            j += direction
    return [
        SplitEstimate(
            p_target=records[j].p,
            p_hat=p_hat[j],
            p_stderr=p_hat[j] * math.sqrt(rel_var[j]),
            ratios=[r.value for r in steps[j]],
            ratio_stderrs=[r.stderr for r in steps[j]],
            p0_estimate=p0_rate.phat,
            provenance=dict(provenance or {}),
        )
        for j in range(n)
    ]


@dataclass
class SplitResult:
    schedule: RateSchedule
    p0_rate: RateEstimate
    targets: list
    bundles: list
    instances: list
    provenance: dict = field(default_factory=dict)

    def estimates(self, p_target=None):
        """One SplitEstimate per instance, at `p_target` or at every requested target."""
        wanted = [p_target] if p_target is not None else self.targets
        idx = [self.schedule.p_values.index(float(p)) for p in wanted]
        return [inst[j] for j in idx for inst in self.instances]

    def summary(self, j):
        """(mean, spread) of P_hat over all instances at schedule index j."""
        values = np.array([inst[j].p_hat for inst in self.instances], dtype=float)
        if len(values) > 1:
            return float(values.mean()), float(values.std(ddof=1))
        return float(values[0]), self.instances[0][j].p_stderr

    def rows(self):
        diag = {d["p"]: d for d in chain_diagnostics(self.bundles)}
        for j, p in enumerate(self.schedule.p_values):
            mean, std = self.summary(j)
            d = diag[p]
            yield p, mean, std, d["mean_weight"], d["transition_rate"], d["decoder_call_rate"]


def chain_diagnostics(records):
    """Per-rate transition and decoder-call rates, chain lengths and weight histograms."""
    flat = []
    for rec in records:
        flat.extend(rec if isinstance(rec, (list, tuple)) else [rec])
    by_rate = {}
    for rec in flat:
        by_rate.setdefault(rec.p, []).append(rec)
    report = []
    for p in sorted(by_rate, reverse=True):
        group = by_rate[p]
        samples = sum(r.samples for r in group)
        hist = Counter()
        for r in group:
            hist.update(r.weight_histogram)
        report.append({
            "p": p,
            "chains": len(group),
            "mean_length": samples / len(group),
            "transition_rate": sum(r.transitions for r in group) / samples if samples else 0.0,
            "decoder_call_rate": sum(r.decoder_calls for r in group) / samples if samples else 0.0,
            "min_transitions": min(r.transitions for r in group),
            "mean_weight": sum(w * k for w, k in hist.items()) / samples if samples else 0.0,
            "weight_histogram": {int(w): int(k) for w, k in sorted(hist.items())},
            "wall_time": sum(r.wall_time for r in group),
            "partial_chains": sum(r.partial for r in group),
        })
    return report


# --- Multi-seeded orchestration ---

def sample_p0(system, oracle, p0, target_failures, max_trials, rng, keep, batch=None):
    """Direct sampling at p0 until `target_failures`; also returns up to `keep` failing configurations."""
    batch = batch or config.BATCH_SIZE
    failures = trials = 0
    found = []
    while failures < target_failures and trials < max_trials:
        n = min(batch, max_trials - trials)
        for e in draw_rate_errors(system, p0, n, rng):
            if oracle.is_failure(e):
                failures += 1
                if len(found) < keep:
                    found.append(e)
        trials += n
    if failures == 0:
        raise BudgetExhaustedError(f"no failing configuration at p0={p0} in {trials} trials")
    if failures < target_failures:
        logger.warning(f"p0={p0}: trial cap {max_trials} reached with {failures} failures")
    logger.info(f"--- P(p0) {system.label}: p0={p0} F={failures} T={trials} ---")
    return RateEstimate(p0, trials, failures), found


def _run_bundle(system, cfg, schedule, seed_config, t_init, epsilon, lam, budget_seconds, cache_size, seed):
    """Zeroth chain at p0, then outward chains each seeded by its inner neighbour's last configuration."""
    rng = np.random.default_rng(seed)
    oracle = CachedFailureOracle(system, cfg, cache_size)
    o, n = schedule.origin, len(schedule)
    records = [None] * n
    kwargs = dict(epsilon=epsilon, t_total=schedule.steps, lam=lam, rng=rng, oracle=oracle,
                  budget_seconds=budget_seconds)
    records[o] = run_chain(system, cfg, o, seed_config, schedule, t_init, **kwargs)
    for j in range(o + 1, n):
        records[j] = run_chain(system, cfg, j, records[j - 1].final_config, schedule, t_init, **kwargs)
    for j in range(o - 1, -1, -1):
        records[j] = run_chain(system, cfg, j, records[j + 1].final_config, schedule, t_init, **kwargs)
    return records


def multi_seeded_split(system, cfg, p0, targets, n_seeds, n_reps, t_init, rng, distance, epsilon=0.25,
                       lam=2.0, p0_failures=1000, p0_max_trials=10**7, p0_rate=None, seed_configs=None,
                       budget_seconds=None, n_workers=1, cache_size=None, progress=False):
    """
    L = n_seeds failing configurations at p0, each run M = n_reps times on
    its own RNG stream. Explicit `seed_configs` replace the Monte Carlo seeds;
    `p0_rate` replaces the direct estimate of P(p0).
    """
    if n_seeds < 1 or n_reps < 1:
        raise ValueError("need at least one seed and one repetition")
    schedule = two_sided_schedule(p0, targets, distance, system.n_expanded)
    logger.info(f"--- SCHEDULE {system.label}: {len(schedule)} rates, origin index {schedule.origin} ---")

    oracle = CachedFailureOracle(system, cfg, cache_size)
    if p0_rate is None or seed_configs is None:
        sampled, found = sample_p0(system, oracle, p0, p0_failures, p0_max_trials, rng, keep=n_seeds)
        p0_rate = p0_rate or sampled
        seed_configs = seed_configs or found
    if not seed_configs:
        raise BudgetExhaustedError("no seed configurations for the splitting chains")
    seeds = [seed_configs[l % len(seed_configs)] for l in range(n_seeds)]

    streams = workers.spawn_seeds(int(rng.integers(2**63)), n_seeds * n_reps)
    jobs = [
        (system, cfg, schedule, seeds[k // n_reps], t_init, epsilon, lam, budget_seconds, cache_size, streams[k])
        for k in range(n_seeds * n_reps)
    ]
    bundles = workers.run_batches(_run_bundle, jobs, workers=n_workers, desc="split", progress=progress)

    provenance = {"L": n_seeds, "M": n_reps, "T_init": t_init, "epsilon": epsilon, "lambda": lam,
                  "boundary": BOUNDARY_CONVENTION}
    instances = [chain_estimates(b, schedule.origin, p0_rate, provenance) for b in bundles]
    result = SplitResult(schedule, p0_rate, sorted({float(t) for t in targets}), bundles, instances, provenance)
    for p in result.targets:
        mean, std = result.summary(schedule.p_values.index(p))
        logger.info(f"--- SPLIT {system.label}: P({p:.4g}) = {mean:.4g} +- {std:.2g} ---")
    return result


# --- Jobs and artifacts ---

class SplitJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    system: str
    decoder: DecoderConfig = DecoderConfig()
    p0: float = Field(gt=0, lt=0.5)
    targets: list[float] = Field(min_length=1)
    L: int = Field(default=12, ge=1)
    M: int = Field(default=3, ge=1)
    T_init: int = Field(default=1000, ge=2)
    epsilon: float = Field(default=0.25, gt=0)
    lam: float = Field(default=2.0, gt=1)
    seed: int = 0
    budget_seconds: Optional[float] = Field(default=None, gt=0)
    p0_failures: int = Field(default=1000, ge=1)
    p0_max_trials: int = Field(default=10**7, ge=1)
    distance: Optional[int] = Field(default=None, ge=1)
    seed_logicals: Optional[str] = None

    @field_validator("targets")
    @classmethod
    def _targets_in_range(cls, v):
        if any(not 0 < p < 0.5 for p in v):
            raise ValueError("targets must lie in (0, 1/2)")
        return v


def write_split_csv(result, path, label="system"):
    path = Path(path)
    prov = result.provenance
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(
            f"# failspec split label={label} L={prov['L']} M={prov['M']} T_init={prov['T_init']} "
            f"epsilon={prov['epsilon']} lambda={prov['lambda']} boundary={prov['boundary']}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(SPLIT_HEADER)
        for p, mean, std, mw, tr, dr in result.rows():
            writer.writerow([f"{p!r}", f"{mean:.10g}", f"{std:.10g}", f"{mw:.6g}", f"{tr:.6g}", f"{dr:.6g}"])
    logger.info(f"Wrote splitting estimates ({len(result.schedule)} rates) to {path}")
    return path


def read_split_csv(path):
    """Rows of the per-rate splitting CSV as dicts of floats."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [{k: float(v) for k, v in row.items()} for row in reader]


def chain_log(result):
    """JSON-ready chain summaries; per-sample arrays are left out."""
    return {
        "provenance": result.provenance,
        "p0": {"p": result.p0_rate.p, "trials": result.p0_rate.trials, "failures": result.p0_rate.failures,
               "stderr": result.p0_rate.stderr},
        "schedule": result.schedule.p_values,
        "origin": result.schedule.origin,
        "diagnostics": chain_diagnostics(result.bundles),
    }
