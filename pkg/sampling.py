"""
Monte Carlo estimation of failure spectra and failure rates.

Fixed-weight sampling draws distinct expanded fault indices and folds them
onto the compressed columns; rate sampling draws a Binomial(m_j, q) parity
per compressed column. Both split their trial budget into fixed batches with
one spawned RNG stream each (see workers.py).
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import gammaln

import config
import workers
from decoders import decoder_for
from errors import BudgetExhaustedError, DimensionMismatchError, SystemFormatError
from f2linalg import BitVec

logger = logging.getLogger(__name__)

SKIP_RATIO = 1e-30
EXACT_MAX_FAULTS = 22


# --- Estimates ---

def wald_stderr(failures, trials):
    if trials <= 0:
        return float("nan")
    f = failures / trials
    return math.sqrt(f * (1.0 - f) / trials)


@dataclass
class SpectrumEstimate:
    """Per-weight trial and failure counts for one system."""
    n_expanded: int
    asymptote: float
    weights: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    label: str = "system"

    def __post_init__(self):
        if not (len(self.weights) == len(self.trials) == len(self.failures)):
            raise DimensionMismatchError("weights, trials and failures must have equal length")
        for w, t, f in zip(self.weights, self.trials, self.failures):
            if not 0 <= f <= t:
                raise ValueError(f"need 0 <= failures <= trials at w={w}, got F={f} T={t}")

    def add(self, w, trials, failures):
        """Accumulate counts at weight w, keeping weights sorted."""
        if w in self.weights:
            k = self.weights.index(w)
            self.trials[k] += trials
            self.failures[k] += failures
            return
        k = int(np.searchsorted(self.weights, w))
        self.weights.insert(k, w)
        self.trials.insert(k, trials)
        self.failures.insert(k, failures)

    def fhat(self, w):
        k = self.weights.index(w)
        return self.failures[k] / self.trials[k]

    def stderr(self, w):
        k = self.weights.index(w)
        return wald_stderr(self.failures[k], self.trials[k])

    def rows(self):
        for w, t, f in zip(self.weights, self.trials, self.failures):
            if t > 0:
                yield w, t, f, f / t, wald_stderr(f, t)


@dataclass
class RateEstimate:
    p: Optional[float]
    trials: int
    failures: int
    weight: Optional[int] = None

    @property
    def phat(self):
        return self.failures / self.trials if self.trials else float("nan")

    @property
    def stderr(self):
        return wald_stderr(self.failures, self.trials)


# --- Error draws ---

def draw_weight_error(system, w, rng):
    """Uniform weight-w expanded draw folded onto compressed columns."""
    if system.is_uniform:
        return BitVec.from_support(system.n_faults, rng.choice(system.n_faults, size=w, replace=False).tolist())
    idx = rng.choice(system.n_expanded, size=w, replace=False)
    return system.compress_expanded(idx)


def draw_rate_errors(system, p, count, rng):
    q = p / system.rate_divisor
    m = np.asarray(system.multiplicities, dtype=np.int64)
    draws = rng.binomial(m, q, size=(count, system.n_faults)) & 1
    return [BitVec.from_array(row) for row in draws]


def _check_weight(system, w):
    if not 0 <= w <= system.n_expanded:
        raise ValueError(f"weight {w} outside 0..{system.n_expanded}")


def _check_rate(system, p):
    q = p / system.rate_divisor
    if not 0 <= q < 0.5:
        raise ValueError(f"need 0 <= p/b < 1/2, got p={p} b={system.rate_divisor:g}")


# --- Batch workers (module level so they pickle) ---

def _weight_batch(system, cfg, w, count, seed):
    rng = np.random.default_rng(seed)
    dec = decoder_for(system, cfg)
    return sum(dec.is_failure(draw_weight_error(system, w, rng)) for _ in range(count))


def _rate_batch(system, cfg, p, count, seed):
    rng = np.random.default_rng(seed)
    dec = decoder_for(system, cfg)
    return sum(dec.is_failure(e) for e in draw_rate_errors(system, p, count, rng))


def _batched(fn, fixed_args, trials, rng, n_workers, desc, batch_size=None):
    sizes = workers.batch_sizes(trials, batch_size)
    seeds = workers.spawn_seeds(int(rng.integers(2**63)), len(sizes))
    jobs = [(*fixed_args, n, s) for n, s in zip(sizes, seeds)]
    return int(sum(workers.run_batches(fn, jobs, n_workers, desc=desc)))


# --- Sampling operations ---

def sample_weight(system, cfg, w, trials, rng, n_workers=1):
    """Returns (failures, trials) for `trials` uniform weight-w expanded errors."""
    _check_weight(system, w)
    if w == 0 or trials == 0:
        return 0, int(trials)
    failures = _batched(_weight_batch, (system, cfg, w), trials, rng, n_workers, f"w={w}")
    logger.debug(f"{system.label} w={w}: {failures}/{trials} failures")
    return failures, int(trials)


def sample_weight_until(system, cfg, w, target_failures, max_trials, rng, batch=None, n_workers=1):
    """
    Sample weight-w errors until `target_failures` are seen or `max_trials` are spent.

    Each round runs one batch per worker, so the stopping point moves in
    steps of batch * n_workers trials.
    """
    _check_weight(system, w)
    batch = batch or config.BATCH_SIZE
    chunk = batch * max(1, n_workers)
    failures = trials = 0
    while trials < max_trials and failures < target_failures:
        n = min(chunk, max_trials - trials)
        failures += _batched(_weight_batch, (system, cfg, w), n, rng, n_workers, None, batch)
        trials += n
    if failures < target_failures:
        logger.warning(f"{system.label} w={w}: trial cap {max_trials} reached with {failures} failures")
    return failures, trials


def sample_spectrum(system, cfg, trial_plan, rng, n_workers=1):
    """Run sample_weight for every (w, T_w) in `trial_plan`."""
    spec = SpectrumEstimate(system.n_expanded, system.asymptote, label=system.label)
    for w, t in sorted(trial_plan.items()):
        f, t = sample_weight(system, cfg, w, t, rng, n_workers)
        spec.add(w, t, f)
        logger.info(f"--- SPECTRUM {system.label}: w={w} F={f} T={t} ---")
    return spec


def sample_rate(system, cfg, p, trials, rng, n_workers=1):
    """Direct Monte Carlo estimate of P(p)."""
    _check_rate(system, p)
    if p == 0 or trials == 0:
        return RateEstimate(p, int(trials), 0)
    failures = _batched(_rate_batch, (system, cfg, p), trials, rng, n_workers, f"p={p:g}")
    logger.debug(f"{system.label} p={p:g}: {failures}/{trials} failures")
    return RateEstimate(p, int(trials), failures)


# --- Binomial transform ---

def log_binomial(n, k):
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_binomial_weights(n, q, ws=None):
    """log of C(N, w) q^w (1-q)^(N-w) for w in ws (default 0..N)."""
    ws = np.arange(n + 1) if ws is None else np.asarray(ws)
    out = log_binomial(n, ws)
    with np.errstate(divide="ignore", invalid="ignore"):
        if q == 0.0:
            return np.where(ws == 0, 0.0, -np.inf)
        if q == 1.0:
            return np.where(ws == n, 0.0, -np.inf)
        return out + ws * math.log(q) + (n - ws) * math.log1p(-q)


def significant_weights(n, q, skip_ratio=SKIP_RATIO):
    """Weights whose binomial factor exceeds skip_ratio times the largest one, with their factors."""
    logs = log_binomial_weights(n, q)
    keep = logs >= logs.max() + math.log(skip_ratio)
    ws = np.flatnonzero(keep)
    return ws, np.exp(logs[ws])


def transform(g, n, q, skip_ratio=SKIP_RATIO):
    """
    Sum over w of g(w) C(N, w) q^w (1-q)^(N-w).

    `g` is a callable on integer weights or an array indexed by weight.
    Binomial factors below skip_ratio times the largest one are dropped.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    ws, factors = significant_weights(n, q, skip_ratio)
    if callable(g):
        vals = np.array([g(int(w)) for w in ws], dtype=float)
    else:
        g = np.asarray(g, dtype=float)
        vals = np.where(ws < len(g), g[np.minimum(ws, len(g) - 1)], 0.0)
    return math.fsum((vals * factors).tolist())


def importance_estimate(spec, q, window):
    """
    Importance-sampled P(q) over weights in `window`.

    Returns (estimate, stat_err, missing_mass_bound); the bound is the total
    binomial mass outside the window, an upper bound since f <= 1.
    """
    window = sorted(set(window))
    missing = [w for w in window if w not in spec.weights]
    if missing:
        raise ValueError(f"weights {missing} have no samples")
    n = spec.n_expanded
    logs = log_binomial_weights(n, q, window) if window else np.array([])
    factors = np.exp(logs)
    est = math.fsum(spec.fhat(w) * b for w, b in zip(window, factors))
    err = math.sqrt(math.fsum((b * spec.stderr(w)) ** 2 for w, b in zip(window, factors)))
    outside = np.ones(n + 1)
    outside[window] = 0.0
    return est, err, transform(outside, n, q)


# --- CSS joint sampling ---

def _css_batch(parent, split, cfg_x, cfg_z, p, w, count, seed):
    rng = np.random.default_rng(seed)
    x_sys, z_sys = split.x_system(), split.z_system()
    dx, dz = decoder_for(x_sys, cfg_x), decoder_for(z_sys, cfg_z)
    if w is None:
        errors = draw_rate_errors(parent, p, count, rng)
    else:
        errors = [draw_weight_error(parent, w, rng) for _ in range(count)]
    fails = 0
    for e in errors:
        if dx.is_failure(e.select(split.x_origin)) or dz.is_failure(e.select(split.z_origin)):
            fails += 1
    return fails


def sample_css_correlated(parent, split, cfg_x, cfg_z, trials, rng, p=None, w=None, n_workers=1):
    """Joint X/Z sampling; a trial fails when either side's decoder fails."""
    if (p is None) == (w is None):
        raise ValueError("give exactly one of p or w")
    if p is not None:
        _check_rate(parent, p)
    else:
        _check_weight(parent, w)
    failures = _batched(_css_batch, (parent, split, cfg_x, cfg_z, p, w), trials, rng, n_workers, "css")
    return RateEstimate(p, int(trials), failures, weight=w)


def split_onset_fraction(f_full, n_full, n_side, w0):
    """One-sided onset fraction assuming equal X and Z failure counts."""
    return 0.5 * f_full * math.exp(float(log_binomial(n_full, w0) - log_binomial(n_side, w0)))


def combined_rate(px, pz):
    return px + pz


# --- Exact oracles ---

def _enumerate_failures(system, cfg):
    """Yield the compressed failing errors (as int bitmasks) by Gray-code enumeration."""
    n = system.n_faults
    if n > EXACT_MAX_FAULTS:
        raise BudgetExhaustedError(f"exact enumeration over 2^{n} errors (limit 2^{EXACT_MAX_FAULTS})")
    dec = decoder_for(system, cfg)
    hcols, acols = system.h.column_bits, system.a.column_bits
    decoded = {}
    e = s = act = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        e ^= 1 << j
        s ^= hcols[j]
        act ^= acols[j]
        if s not in decoded:
            decoded[s] = dec.correction_action(BitVec(system.n_checks, s)).bits
        if decoded[s] != act:
            yield e


def _parity_polys(m):
    coeffs = np.array([math.comb(m, k) for k in range(m + 1)], dtype=float)
    even = coeffs.copy()
    even[1::2] = 0.0
    odd = coeffs - even
    return even, odd


def exact_spectrum(system, cfg):
    """f(w) for w = 0..N, counting the expanded preimages of each failing compressed error."""
    n_exp = system.n_expanded
    counts = np.zeros(n_exp + 1)
    if system.is_uniform:
        for e in _enumerate_failures(system, cfg):
            counts[e.bit_count()] += 1
    else:
        polys = [_parity_polys(m) for m in system.multiplicities]
        for e in _enumerate_failures(system, cfg):
            poly = np.ones(1)
            for j, (even, odd) in enumerate(polys):
                poly = np.convolve(poly, odd if (e >> j) & 1 else even)
            counts[: len(poly)] += poly
    totals = np.exp(log_binomial(n_exp, np.arange(n_exp + 1)))
    return counts / totals


def exact_rate(system, cfg, p):
    """P(p) summed over all failing compressed errors with parity-aggregated probabilities."""
    _check_rate(system, p)
    probs = system.fault_probabilities(p)
    log_on = np.log(probs) if p > 0 else np.full(len(probs), -np.inf)
    log_off = np.log1p(-probs)
    base = float(log_off.sum())
    delta = log_on - log_off
    terms = []
    for e in _enumerate_failures(system, cfg):
        terms.append(math.exp(base + sum(delta[j] for j in BitVec(system.n_faults, e).support())))
    return math.fsum(terms)


# --- CSV I/O ---

SPECTRUM_HEADER = ["weight", "trials", "failures", "fhat", "stderr"]
RATE_HEADER = ["p", "trials", "failures", "phat", "stderr"]


def write_spectrum_csv(spec, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# failspec spectrum label={spec.label} N={spec.n_expanded} a={spec.asymptote!r}\n")
        writer = csv.writer(fh)
        writer.writerow(SPECTRUM_HEADER)
        for w, t, f, fhat, se in spec.rows():
            writer.writerow([w, t, f, f"{fhat:.10g}", f"{se:.10g}"])
    logger.info(f"Wrote spectrum ({len(spec.weights)} weights) to {path}")
    return path


def _parse_meta(line, path):
    meta = {}
    for tok in line.lstrip("#").split()[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise SystemFormatError(f"bad header token {tok!r}", 1, path)
        meta[key] = value
    return meta


def read_spectrum_csv(path):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# failspec spectrum"):
        raise SystemFormatError("missing spectrum header comment", 1, str(path))
    meta = _parse_meta(lines[0], str(path))
    try:
        spec = SpectrumEstimate(int(meta["N"]), float(meta["a"]), label=meta.get("label", "system"))
    except (KeyError, ValueError):
        raise SystemFormatError("header needs N= and a=", 1, str(path)) from None
    reader = csv.reader(lines[1:])
    if next(reader, None) != SPECTRUM_HEADER:
        raise SystemFormatError(f"expected columns {','.join(SPECTRUM_HEADER)}", 2, str(path))
    for line_no, row in enumerate(reader, start=3):
        try:
            w, t, f = int(row[0]), int(row[1]), int(row[2])
        except (IndexError, ValueError):
            raise SystemFormatError(f"bad row {row!r}", line_no, str(path)) from None
        if not 0 <= f <= t:
            raise SystemFormatError(f"failures {f} outside 0..{t}", line_no, str(path))
        spec.add(w, t, f)
    return spec


def write_rate_csv(rates, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# failspec rates\n")
        writer = csv.writer(fh)
        writer.writerow(RATE_HEADER)
        for r in rates:
            if r.trials > 0:
                writer.writerow([f"{r.p!r}", r.trials, r.failures, f"{r.phat:.10g}", f"{r.stderr:.10g}"])
    logger.info(f"Wrote {len(rates)} rate points to {path}")
    return path


def read_rate_csv(path):
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines()]
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    if next(reader, None) != RATE_HEADER:
        raise SystemFormatError(f"expected columns {','.join(RATE_HEADER)}", None, str(path))
    rates = []
    for k, row in enumerate(reader, start=2):
        try:
            rates.append(RateEstimate(float(row[0]), int(row[1]), int(row[2])))
        except (IndexError, ValueError):
            raise SystemFormatError(f"bad row {row!r}", k, str(path)) from None
    return rates
