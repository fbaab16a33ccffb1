"""
Distance, minimum-weight logical sets and the optimal onset.

Logicals are kept in compressed form. A compressed error e stands for
rho(e) = prod m_j minimal expanded errors of the same weight |e|, which is
how counts move between the two representations.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from decoders import DecoderConfig, decode_bb, decode_restricted, default_priors
from errors import (
    BudgetExhaustedError,
    ConnectivityError,
    InfeasibleSyndromeError,
    InvariantError,
    SystemFormatError,
)
from f2linalg import BitMatrix, BitVec, sample_rowspace
from system import DecodingSystem, rotated_translations, toric_translations

logger = logging.getLogger(__name__)

PROVENANCE = ("exact", "search", "symmetry", "decimation")
MIN_WEIGHT_BACKENDS = ("lookup", "branch_and_bound")


# --- Types ---

@dataclass
class LogicalSet:
    """Distinct compressed logicals of one weight, with where each came from."""
    weight: int
    n_faults: int
    complete: bool = False
    members: dict = field(default_factory=dict)
    discovery: list = field(default_factory=list)

    def add(self, vec, provenance="search"):
        if vec.length != self.n_faults:
            raise ValueError(f"logical length {vec.length} vs {self.n_faults} faults")
        if vec.weight() != self.weight:
            raise ValueError(f"logical weight {vec.weight()} vs set weight {self.weight}")
        if vec.bits in self.members:
            return False
        self.members[vec.bits] = provenance
        return True

    def __len__(self):
        return len(self.members)

    def __contains__(self, vec):
        return vec.bits in self.members

    def __iter__(self):
        for bits in sorted(self.members):
            yield BitVec(self.n_faults, bits)

    def provenance(self, vec):
        return self.members[vec.bits]

    def verify(self, system):
        for vec in self:
            if not system.is_logical(vec):
                raise InvariantError(f"member {vec.support()} is not a logical")

    def copy(self):
        return LogicalSet(self.weight, self.n_faults, self.complete, dict(self.members), list(self.discovery))


class OnsetResult(BaseModel):
    d: int
    restrictions_count: float
    fails_count: float
    onset_fraction: float
    lower_bound: bool
    n_expanded: int


@dataclass(frozen=True)
class SymmetryGroup:
    """Generators are column permutations: perm[j] is the image of column j."""
    generators: tuple
    partial: bool = False

    def apply(self, perm, vec):
        return BitVec.from_support(vec.length, [perm[j] for j in vec.support()])


def toric_symmetry(d1, d2=None):
    return SymmetryGroup(tuple(tuple(p) for p in toric_translations(d1, d2)))


def rotated_symmetry(d):
    return SymmetryGroup(tuple(tuple(p) for p in rotated_translations(d)))


# --- LogicalSet files ---

def write_logicals(found, path):
    path = Path(path)
    lines = [f"# failspec logicals weight={found.weight} ntilde={found.n_faults} complete={int(found.complete)}"]
    for vec in found:
        cols = ",".join(str(j) for j in vec.support())
        lines.append(f"weight={found.weight} cols={cols} prov={found.provenance(vec)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(found)} weight-{found.weight} logicals to {path}")
    return path


def read_logicals(path, n_faults=None):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# failspec logicals"):
        raise SystemFormatError("missing logical-set header", 1, str(path))
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[3:] if "=" in tok)
    try:
        weight, ntilde = int(meta["weight"]), int(meta["ntilde"])
    except (KeyError, ValueError):
        raise SystemFormatError("header needs weight= and ntilde=", 1, str(path)) from None
    if n_faults is not None and n_faults != ntilde:
        raise SystemFormatError(f"file has ntilde={ntilde}, system has {n_faults}", 1, str(path))
    found = LogicalSet(weight, ntilde, complete=meta.get("complete") == "1")
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
        try:
            cols = [int(c) for c in fields["cols"].split(",")] if fields.get("cols") else []
            prov = fields.get("prov", "search")
            vec = BitVec.from_support(ntilde, cols)
        except (KeyError, ValueError) as e:
            raise SystemFormatError(f"bad logical line: {e}", line_no, str(path)) from None
        if prov not in PROVENANCE:
            raise SystemFormatError(f"unknown provenance {prov!r}", line_no, str(path))
        if int(fields.get("weight", weight)) != weight or vec.weight() != weight:
            raise SystemFormatError(f"member weight differs from set weight {weight}", line_no, str(path))
        found.add(vec, prov)
    return found


# --- Distance ---

def _require_min_weight(cfg):
    if cfg.backend not in MIN_WEIGHT_BACKENDS:
        raise ValueError(f"exact distance needs a minimum-weight backend, not {cfg.backend}")


def distance_exact(system, cfg):
    """D and its witnesses, one stacked decode per action row."""
    _require_min_weight(cfg)
    zero = BitVec.zeros(system.n_checks)
    best, witnesses = None, []
    for i in range(system.n_actions):
        try:
            x = decode_bb(system, cfg, zero, system.a.row(i)).correction
        except BudgetExhaustedError as e:
            raise BudgetExhaustedError(f"distance decode for action row {i}: {e}") from e
        except InfeasibleSyndromeError:
            logger.debug(f"Action row {i} lies in the row space of h; no logical flips it alone")
            continue
        w = x.weight()
        logger.debug(f"Action row {i}: minimum logical weight {w}")
        if best is None or w < best:
            best, witnesses = w, [x]
        elif w == best and x not in witnesses:
            witnesses.append(x)
    if best is None:
        raise InvariantError(f"{system.label} has no logical operators")
    logger.info(f"--- DISTANCE {system.label}: D={best} ({len(witnesses)} witnesses) ---")
    return best, witnesses


def _random_check_row(system, rng):
    """g = h + l with h uniform in rowspace(H) and l uniform nonzero in rowspace(A)."""
    h = sample_rowspace(system.h, rng) if not system.h.is_zero() else BitVec.zeros(system.n_faults)
    for _ in range(64):
        l = sample_rowspace(system.a, rng)
        if not l.is_zero():
            return h ^ l
    raise InvariantError("action row space sampled only zero vectors")


def distance_upper_bound(system, cfg, trials, rng):
    """Minimum witness weight over `trials` random stacked decodes."""
    if trials < 1:
        raise ValueError("need at least one trial")
    zero = BitVec.zeros(system.n_checks)
    best, witnesses, skipped = None, [], 0
    for _ in range(trials):
        g = _random_check_row(system, rng)
        try:
            x = decode_bb(system, cfg, zero, g).correction
        except (InfeasibleSyndromeError, BudgetExhaustedError):
            skipped += 1
            continue
        if not system.is_logical(x):
            raise InvariantError("stacked decode returned a non-logical")
        w = x.weight()
        if best is None or w < best:
            best, witnesses = w, [x]
        elif w == best and x not in witnesses:
            witnesses.append(x)
    if skipped:
        logger.warning(f"distance_upper_bound skipped {skipped}/{trials} decodes")
    logger.info(f"--- DISTANCE BOUND {system.label}: D <= {best} after {trials} trials ---")
    return best, witnesses


def min_stabilizer_weight(system, cfg=None):
    """Smallest nonzero x with Hx = 0 and Ax = 0, or None when there is none."""
    cfg = cfg or DecoderConfig(backend="branch_and_bound")
    stacked = system.h.vstack(system.a)
    cols = stacked.column_bits
    best = None
    probe = DecodingSystem(stacked, BitMatrix.zeros(0, system.n_faults), system.multiplicities, label="stabilizer-probe")
    for j in range(system.n_faults):
        if cols[j] == 0:
            return 1
        others = [k for k in range(system.n_faults) if k != j]
        try:
            y = decode_restricted(probe, cfg, BitVec(stacked.n_rows, cols[j]), others)
        except InfeasibleSyndromeError:
            continue
        w = 1 + y.correction.weight()
        if best is None or w < best:
            best = w
    return best


# --- Exact enumeration ---

def enumerate_logicals_exact(system, w_max, d=None, cfg=None):
    """
    All logicals of weight D..w_max, grown from each starting fault.

    Supports are grown from their smallest column by adding columns that
    touch the lowest unsatisfied check, pruned by the check-coverage bound.
    Completeness needs every such logical to be connected, which holds for
    w_max < D + min(s, D) with s the minimum stabilizer weight.
    """
    cfg = cfg or DecoderConfig(backend="branch_and_bound")
    if d is None:
        d, _ = distance_exact(system, cfg)
    s = min_stabilizer_weight(system, cfg)
    limit = d + min(s if s is not None else d, d)
    if w_max >= limit:
        raise ConnectivityError(f"w_max={w_max} >= {limit}; logicals need not be connected (D={d}, s={s})")

    hcols, acols = system.h.column_bits, system.a.column_bits
    check_columns = system.h.row_supports
    max_degree = max((c.bit_count() for c in hcols), default=1) or 1
    sets = {w: LogicalSet(w, system.n_faults, complete=True) for w in range(d, w_max + 1)}
    nodes = 0

    def grow(start, support, residual, action, size):
        nonlocal nodes
        nodes += 1
        if not residual:
            if action:
                if size < d:
                    raise InvariantError(f"found a weight-{size} logical below D={d}")
                sets[size].add(BitVec(system.n_faults, support), "exact")
            return
        if size + math.ceil(residual.bit_count() / max_degree) > w_max:
            return
        check = (residual & -residual).bit_length() - 1
        for j in check_columns[check]:
            if j <= start or (support >> j) & 1:
                continue
            grow(start, support | (1 << j), residual ^ hcols[j], action ^ acols[j], size + 1)

    for start in range(system.n_faults):
        grow(start, 1 << start, hcols[start], acols[start], 1)
    for w, found in sets.items():
        logger.info(f"--- ENUMERATE {system.label}: |L({w})| = {len(found)} ---")
    logger.debug(f"Enumeration visited {nodes} nodes")
    return sets


# --- Search ---

def _decimation_weight(rng, available):
    weights = [k for k in (1, 3, 5) if k <= available]
    probs = np.array([2.0 ** -k for k in weights])
    return int(rng.choice(weights, p=probs / probs.sum()))


def search_logicals(system, cfg, target_w, rounds, rng, decimation=False, prior_perturbation=False,
                    restrict_columns=None, found=None):
    """
    Store every verified weight-target_w logical found by random stacked decodes.

    `found.discovery` records the set size after each round.
    """
    found = found if found is not None else LogicalSet(target_w, system.n_faults)
    base = default_priors(system, cfg)
    allowed = None
    if restrict_columns is not None:
        banned = set(restrict_columns)
        allowed = [j for j in range(system.n_faults) if j not in banned]
    zero = BitVec.zeros(system.n_checks)
    skipped = 0
    for _ in range(rounds):
        g = _random_check_row(system, rng)
        priors = base
        if prior_perturbation:
            priors = np.minimum(base * rng.uniform(0.5, 2.0, size=len(base)), 0.499)
        forced = None
        if decimation:
            supp = g.support() if allowed is None else [j for j in g.support() if j not in banned]
            if supp:
                k = _decimation_weight(rng, len(supp))
                forced = sorted(rng.choice(supp, size=k, replace=False).tolist())
        try:
            x = decode_bb(system, cfg, zero, g, forced, priors=priors, allowed_columns=allowed).correction
        except (InfeasibleSyndromeError, BudgetExhaustedError):
            skipped += 1
            found.discovery.append(len(found))
            continue
        if system.is_logical(x) and x.weight() == target_w:
            found.add(x, "decimation" if forced else "search")
        found.discovery.append(len(found))
    if skipped:
        logger.warning(f"search_logicals skipped {skipped}/{rounds} decodes")
    logger.info(f"--- SEARCH {system.label}: {len(found)} weight-{target_w} logicals after {rounds} rounds ---")
    return found


def expand_by_symmetry(found, group, system):
    """Orbit closure of `found` under the group generators."""
    out = found.copy()
    frontier = list(out)
    while frontier:
        nxt = []
        for vec in frontier:
            for perm in group.generators:
                img = group.apply(perm, vec)
                if img in out:
                    continue
                if not system.is_logical(img):
                    if group.partial:
                        continue
                    raise InvariantError(f"symmetry maps logical {vec.support()} to a non-logical")
                out.add(img, "symmetry")
                nxt.append(img)
        frontier = nxt
    logger.debug(f"Symmetry expansion: {len(found)} -> {len(out)} logicals")
    return out


def coverage_estimate(found, system, cfg, fresh_samples, rng, max_rounds=None):
    """Fraction of freshly found weight-D logicals already in `found`."""
    if len(found) == 0:
        return 0.0
    max_rounds = max_rounds or 50 * fresh_samples
    fresh = LogicalSet(found.weight, system.n_faults)
    zero = BitVec.zeros(system.n_checks)
    hits = samples = rounds = 0
    while samples < fresh_samples and rounds < max_rounds:
        rounds += 1
        g = _random_check_row(system, rng)
        try:
            x = decode_bb(system, cfg, zero, g).correction
        except (InfeasibleSyndromeError, BudgetExhaustedError):
            continue
        if x.weight() != found.weight or not system.is_logical(x):
            continue
        samples += 1
        hits += x in found
        fresh.add(x)
    if samples == 0:
        raise BudgetExhaustedError(f"no weight-{found.weight} logicals sampled in {rounds} rounds")
    logger.info(f"Coverage {hits}/{samples} ({len(fresh)} distinct fresh samples)")
    return hits / samples


def expanded_logical_count(found, system):
    """Number of expanded logicals represented by the compressed set."""
    return sum(system.multiplicity_of(vec) for vec in found)


# --- Optimal onset ---

def _restrictions(found, size):
    """Distinct weight-`size` sub-supports of the members, as int bitmasks."""
    out = set()
    for bits in found.members:
        supp = BitVec(found.n_faults, bits).support()
        for combo in itertools.combinations(supp, size):
            r = 0
            for j in combo:
                r |= 1 << j
            out.add(r)
    return out


def _rho(system, bits):
    rho = 1
    m = system.multiplicities
    while bits:
        low = bits & -bits
        rho *= m[low.bit_length() - 1]
        bits ^= low
    return rho


def _image(cols, bits):
    s = 0
    while bits:
        low = bits & -bits
        s ^= cols[low.bit_length() - 1]
        bits ^= low
    return s


def _class_failures(system, restrictions):
    """Total and failing expanded mass of a restriction set under the max-class rule."""
    hcols, acols = system.h.column_bits, system.a.column_bits
    classes = {}
    total = 0
    for r in restrictions:
        rho = _rho(system, r)
        total += rho
        by_action = classes.setdefault(_image(hcols, r), {})
        a = _image(acols, r)
        by_action[a] = by_action.get(a, 0) + rho
    fails = 0
    for by_action in classes.values():
        fails += sum(by_action.values()) - max(by_action.values())
    return total, fails, len(classes)


def onset_exact(system, found, found_next=None):
    """
    Exact failing count at weight D/2 from the restrictions of `found`.

    Odd D goes to onset_exact_odd, using `found_next` as the weight-(D+1) set.
    """
    d = found.weight
    if d % 2:
        nxt = found_next if found_next is not None else LogicalSet(d + 1, found.n_faults)
        return onset_exact_odd(system, found, nxt)
    if len(found) == 0:
        raise ValueError("onset needs at least one logical")
    restrictions = _restrictions(found, d // 2)
    total, fails, n_syndromes = _class_failures(system, restrictions)
    logger.info(
        f"--- ONSET {system.label}: {len(restrictions)} compressed restrictions, "
        f"{n_syndromes} syndromes, fails={fails} ---"
    )
    return _onset_result(system, d, d // 2, total, fails, not found.complete)


def onset_exact_odd(system, found_d, found_d1):
    """Odd D: every restriction of a weight-D logical fails; weight-(D+1) ones go through max-class."""
    d = found_d.weight
    if d % 2 == 0 or found_d1.weight != d + 1:
        raise ValueError(f"need odd D and a weight-{d + 1} set, got D={d} and weight {found_d1.weight}")
    k = (d + 1) // 2
    from_d = _restrictions(found_d, k)
    from_d1 = _restrictions(found_d1, k) - from_d
    total_d = sum(_rho(system, r) for r in from_d)
    total_d1, fails_d1, _ = _class_failures(system, from_d1)
    logger.info(f"--- ONSET {system.label} (odd D={d}): {len(from_d)} + {len(from_d1)} restrictions ---")
    return _onset_result(system, d, k, total_d + total_d1, total_d + fails_d1,
                         not (found_d.complete and found_d1.complete))


def _onset_result(system, d, w, restrictions, fails, lower_bound):
    if fails > restrictions:
        raise InvariantError("failing mass exceeds restriction mass")
    denom = math.comb(system.n_expanded, w)
    return OnsetResult(
        d=d, restrictions_count=float(restrictions), fails_count=float(fails),
        onset_fraction=fails / denom, lower_bound=lower_bound, n_expanded=system.n_expanded,
    )


def _random_restriction(rng, bits, n_faults, size):
    supp = BitVec(n_faults, bits).support()
    r = 0
    for j in rng.choice(supp, size=size, replace=False):
        r |= 1 << int(j)
    return r


def restriction_term(system, members, l0, r):
    """
    (rho, g, mu) for restriction r of l0 against the logical list `members`.

    The weight-|r| errors sharing r's syndrome are the complements of r and
    of r' = l0 minus r inside the members enclosing them.
    """
    acols = system.a.column_bits
    r_prime = l0 & ~r
    errors = set()
    mu = 0
    for l in members:
        if r & ~l == 0:
            errors.add(l & ~r)
            mu += 1
        if r_prime & ~l == 0:
            errors.add(l & ~r_prime)
    if mu == 0:
        raise InvariantError("sampled restriction is not enclosed by any logical")
    sizes = {}
    for q in errors:
        a = _image(acols, q)
        sizes[a] = sizes.get(a, 0) + _rho(system, q)
    n_max = max(sizes.values())
    a_max = [a for a, n in sizes.items() if n == n_max]
    g = 1.0 - 1.0 / len(a_max) if _image(acols, r) in a_max else 1.0
    return _rho(system, r), g, mu


def onset_sampled(system, found, trials, rng):
    """Sampled estimate of the weight-D/2 failing count and its standard error."""
    d = found.weight
    if d % 2:
        raise ValueError("onset_sampled needs even D; use onset_sampled_odd")
    members = sorted(found.members)
    if not members:
        raise ValueError("onset needs at least one logical")
    terms = np.empty(trials)
    for t in range(trials):
        l0 = members[rng.integers(len(members))]
        r = _random_restriction(rng, l0, found.n_faults, d // 2)
        rho, g, mu = restriction_term(system, members, l0, r)
        terms[t] = rho * g / mu
    scale = len(members) * math.comb(d, d // 2)
    err = scale * terms.std(ddof=1) / math.sqrt(trials) if trials > 1 else float("nan")
    return scale * float(terms.mean()), float(err)


def onset_sampled_odd(system, found_d, found_d1, trials, rng):
    """Odd-D sampled estimate: weight-D restrictions all fail, weight-(D+1) ones use the max-class rule."""
    d = found_d.weight
    if d % 2 == 0 or found_d1.weight != d + 1:
        raise ValueError(f"need odd D and a weight-{d + 1} set")
    k = (d + 1) // 2
    members_d = sorted(found_d.members)
    members_d1 = sorted(found_d1.members)

    est, var = 0.0, 0.0
    if members_d:
        terms = np.empty(trials)
        for t in range(trials):
            l0 = members_d[rng.integers(len(members_d))]
            r = _random_restriction(rng, l0, found_d.n_faults, k)
            mu = sum(1 for l in members_d if r & ~l == 0)
            terms[t] = _rho(system, r) / mu
        scale = len(members_d) * math.comb(d, k)
        est += scale * float(terms.mean())
        var += (scale * terms.std(ddof=1)) ** 2 / trials if trials > 1 else 0.0
    if members_d1:
        terms = np.empty(trials)
        for t in range(trials):
            l0 = members_d1[rng.integers(len(members_d1))]
            r = _random_restriction(rng, l0, found_d1.n_faults, k)
            if any(r & ~l == 0 for l in members_d):
                terms[t] = 0.0
                continue
            rho, g, mu = restriction_term(system, members_d1, l0, r)
            terms[t] = rho * g / mu
        scale = len(members_d1) * math.comb(d + 1, k)
        est += scale * float(terms.mean())
        var += (scale * terms.std(ddof=1)) ** 2 / trials if trials > 1 else 0.0
    return est, math.sqrt(var)


# --- Extrapolation ---

def extrapolate_exponential(points, coverages=None):
    """Fit value = alpha exp(beta D) by least squares on log(value)."""
    if len(points) < 2:
        raise ValueError("need at least two points")
    ds = np.array([float(p[0]) for p in points])
    vals = np.array([float(p[1]) for p in points])
    if coverages is not None:
        vals = vals / np.asarray(coverages, dtype=float)
    if np.any(vals <= 0):
        raise ValueError("values must be positive")
    if len(set(ds.tolist())) < 2:
        raise ValueError("need at least two distinct distances")
    beta, log_alpha = np.polyfit(ds, np.log(vals), 1)
    return float(math.exp(log_alpha)), float(beta)


def predict_exponential(alpha, beta, d):
    return alpha * math.exp(beta * d)
