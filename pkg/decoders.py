"""
Decoder backends for binary decoding systems.

Every backend maps a syndrome to a correction c with H c = syndrome. The
lookup and branch-and-bound backends return a minimum-cost correction;
branch-and-bound also breaks ties by the lexicographically smallest support.
bp_osd0 runs normalised min-sum belief propagation and completes with
order-zero OSD.
"""
import heapq
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from errors import BudgetExhaustedError, DimensionMismatchError, InfeasibleSyndromeError, InvariantError
from f2linalg import INFEASIBLE, BitVec, RowReduction, syndrome_of_support

logger = logging.getLogger(__name__)

_COST_DIGITS = 9


class DecoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    backend: Literal["lookup", "branch_and_bound", "bp_osd0"] = "branch_and_bound"
    priors: Optional[tuple[float, ...]] = None
    prior_rate: float = Field(default=0.001, gt=0, lt=0.5)
    cost_model: Literal["unit", "log_prior"] = "unit"
    bp_iters: int = Field(default=30, ge=1)
    bp_scale: float = Field(default=0.625, gt=0, le=1)
    deterministic_seed: int = 0
    node_budget: int = Field(default=2_000_000, ge=1)
    lookup_max_rank: int = Field(default=22, ge=0)

    @field_validator("priors")
    @classmethod
    def _priors_in_range(cls, v):
        if v is not None and any(not 0.0 < p < 0.5 for p in v):
            raise ValueError("priors must lie in (0, 1/2)")
        return v


@dataclass(frozen=True)
class Decoding:
    """
    `weight` counts compressed columns. One copy per column is the lightest
    expanded error with a given compressed image, so this is also the
    minimum expanded weight.
    """
    correction: BitVec
    weight: int
    cost: float
    converged: bool = True


def default_priors(system, cfg):
    if cfg.priors is not None:
        if len(cfg.priors) != system.n_faults:
            raise DimensionMismatchError(f"{len(cfg.priors)} priors for {system.n_faults} faults")
        return np.asarray(cfg.priors, dtype=float)
    return system.fault_probabilities(cfg.prior_rate)


def column_costs(priors, cfg):
    if cfg.cost_model == "unit":
        return np.ones(len(priors))
    return -np.log(np.asarray(priors, dtype=float))


def _key(cost, support):
    return (round(cost, _COST_DIGITS), support)


class MatrixDecoder:
    """Shared plumbing for backends that decode against a bare check matrix."""

    def __init__(self, h, costs, priors, cfg):
        self.h = h
        self.cfg = cfg
        self.costs = np.asarray(costs, dtype=float)
        self.priors = np.asarray(priors, dtype=float)
        self.reduction = RowReduction(h)

    def _finish(self, support, converged=True):
        support = tuple(sorted(support))
        cost = float(sum(self.costs[j] for j in support))
        return Decoding(BitVec.from_support(self.h.n_cols, support), len(support), cost, converged)

    def _check_syndrome(self, syndrome):
        if syndrome.length != self.h.n_rows:
            raise DimensionMismatchError(f"syndrome length {syndrome.length} vs {self.h.n_rows} checks")
        if not self.reduction.is_feasible(syndrome):
            raise InfeasibleSyndromeError(f"syndrome {syndrome.to_string()} is not in the column space")

    def decode(self, syndrome):
        self._check_syndrome(syndrome)
        if syndrome.is_zero():
            return Decoding(BitVec.zeros(self.h.n_cols), 0, 0.0, True)
        return self._decode(syndrome)

    def _decode(self, syndrome):
        raise NotImplementedError


class LookupDecoder(MatrixDecoder):
    """Full table of minimum-cost corrections, built by Dijkstra over the syndrome space."""

    def __init__(self, h, costs, priors, cfg):
        super().__init__(h, costs, priors, cfg)
        if self.reduction.rank > cfg.lookup_max_rank:
            raise BudgetExhaustedError(
                f"lookup table needs 2^{self.reduction.rank} entries (limit 2^{cfg.lookup_max_rank})"
            )
        self.table = self._build()
        logger.debug(f"Lookup table built with {len(self.table)} syndromes")

    def _build(self):
        cols = self.h.column_bits
        costs = [round(float(c), _COST_DIGITS) for c in self.costs]
        table = {}
        heap = [(0.0, (), 0)]
        while heap:
            cost, support, s = heapq.heappop(heap)
            if s in table:
                continue
            table[s] = support
            present = set(support)
            for j, col in enumerate(cols):
                if j in present:
                    continue
                t = s ^ col
                if t in table:
                    continue
                heapq.heappush(heap, (round(cost + costs[j], _COST_DIGITS), tuple(sorted(support + (j,))), t))
        return table

    def _decode(self, syndrome):
        return self._finish(self.table[syndrome.bits])


class BranchAndBoundDecoder(MatrixDecoder):
    """
    Depth-first search branching on the columns that touch the lowest
    unsatisfied check, pruned by ceil(|unsatisfied| / max column degree).
    """

    def __init__(self, h, costs, priors, cfg):
        super().__init__(h, costs, priors, cfg)
        self.cols = h.column_bits
        self.check_columns = h.row_supports
        degrees = [c.bit_count() for c in self.cols]
        self.max_degree = max(degrees) if degrees else 1
        self.min_cost = float(self.costs.min()) if len(self.costs) else 1.0

    def lower_bound(self, residual):
        if not residual:
            return 0.0
        return math.ceil(residual.bit_count() / self.max_degree) * self.min_cost

    def _decode(self, syndrome):
        seed = self.reduction.solve(syndrome)
        best = [_key(float(sum(self.costs[j] for j in seed.support())), tuple(seed.support()))]
        nodes = [0]
        seen = set()
        budget = self.cfg.node_budget
        cols = self.cols
        costs = self.costs

        def search(residual, support_bits, cost):
            nodes[0] += 1
            if nodes[0] > budget:
                raise BudgetExhaustedError(f"branch-and-bound exceeded {budget} nodes")
            if support_bits in seen:
                return
            seen.add(support_bits)
            if not residual:
                key = _key(cost, tuple(BitVec(len(cols), support_bits).support()))
                if key < best[0]:
                    best[0] = key
                return
            if round(cost + self.lower_bound(residual), _COST_DIGITS) > best[0][0]:
                return
            low = residual & -residual
            check = low.bit_length() - 1
            candidates = [j for j in self.check_columns[check] if not (support_bits >> j) & 1]
            candidates.sort(key=lambda j: (-(cols[j] & residual).bit_count() + (cols[j] & ~residual).bit_count(), j))
            for j in candidates:
                search(residual ^ cols[j], support_bits | (1 << j), cost + costs[j])

        search(syndrome.bits, 0, 0.0)
        logger.debug(f"branch-and-bound: {nodes[0]} nodes, best cost {best[0][0]}")
        return self._finish(best[0][1])


class BpOsdDecoder(MatrixDecoder):
    """Normalised min-sum BP; order-zero OSD completes the correction when BP does not converge."""

    def __init__(self, h, costs, priors, cfg):
        super().__init__(h, costs, priors, cfg)
        arr = h.to_array()
        check_idx, var_idx = np.nonzero(arr)
        self.check_idx = check_idx
        self.var_idx = var_idx
        self.starts = np.flatnonzero(np.r_[True, check_idx[1:] != check_idx[:-1]]) if len(check_idx) else np.array([], dtype=int)
        self.active_checks = check_idx[self.starts] if len(check_idx) else np.array([], dtype=int)
        self.llr0 = np.log((1.0 - self.priors) / self.priors)
        self.dense = h.to_array().astype(np.int64)
        self.edge_slot = np.repeat(np.arange(len(self.starts)), np.diff(np.r_[self.starts, len(check_idx)])).astype(int)

    def _min_sum(self, syndrome_arr):
        n = self.h.n_cols
        scale = self.cfg.bp_scale
        var_idx, starts, edge_slot = self.var_idx, self.starts, self.edge_slot
        v2c = self.llr0[var_idx].copy()
        posterior = self.llr0.copy()
        hard = np.zeros(n, dtype=np.uint8)
        big = 1e3
        for it in range(self.cfg.bp_iters):
            mag = np.abs(v2c)
            min1 = np.minimum.reduceat(mag, starts)
            is_min = mag == min1[edge_slot]
            _, first_pos = np.unique(edge_slot[is_min], return_index=True)
            argmin_edges = np.flatnonzero(is_min)[first_pos]
            masked = mag.copy()
            masked[argmin_edges] = np.inf
            min2 = np.minimum.reduceat(masked, starts)
            is_arg = np.zeros(len(v2c), dtype=bool)
            is_arg[argmin_edges] = True
            excl = np.where(is_arg, min2[edge_slot], min1[edge_slot])
            excl = np.where(np.isinf(excl), big, excl)
            neg = (v2c < 0).astype(np.int64)
            parity = (np.add.reduceat(neg, starts) + syndrome_arr[self.active_checks]) & 1
            sign_bit = parity[edge_slot] ^ neg
            c2v = scale * excl * (1 - 2 * sign_bit)
            posterior = self.llr0 + np.bincount(var_idx, weights=c2v, minlength=n)
            v2c = posterior[var_idx] - c2v
            hard = (posterior < 0).astype(np.uint8)
            if np.array_equal(self._syndrome_of(hard), syndrome_arr):
                return hard, posterior, True, it + 1
        return hard, posterior, False, self.cfg.bp_iters

    def _syndrome_of(self, bits):
        return (self.dense @ bits) & 1

    def _decode(self, syndrome):
        syndrome_arr = syndrome.to_array().astype(np.int64)
        hard, posterior, converged, iters = self._min_sum(syndrome_arr)
        if converged:
            return self._finish(np.flatnonzero(hard).tolist(), True)
        order = np.argsort(posterior, kind="stable")
        permuted = self.h.select_columns(order.tolist())
        x = RowReduction(permuted).solve(syndrome)
        if x is INFEASIBLE:
            raise InfeasibleSyndromeError(f"syndrome {syndrome.to_string()} is not in the column space")
        support = [int(order[k]) for k in x.support()]
        logger.debug(f"BP did not converge after {iters} iterations; OSD-0 weight {len(support)}")
        return self._finish(support, False)


_BACKENDS = {
    "lookup": LookupDecoder,
    "branch_and_bound": BranchAndBoundDecoder,
    "bp_osd0": BpOsdDecoder,
}


@lru_cache(maxsize=128)
def matrix_decoder(h, cfg, priors):
    """Backend instance for a bare check matrix; priors is a tuple of per-column probabilities."""
    priors = np.asarray(priors, dtype=float)
    return _BACKENDS[cfg.backend](h, column_costs(priors, cfg), priors, cfg)


class SystemDecoder:
    """Decoder bound to a decoding system: adds failure tests and the H c = syndrome check."""

    def __init__(self, system, cfg):
        self.system = system
        self.cfg = cfg
        self.priors = default_priors(system, cfg)
        self.backend = matrix_decoder(system.h, cfg, tuple(self.priors))

    def decode(self, syndrome):
        result = self.backend.decode(syndrome)
        if syndrome_of_support(self.system.h, result.correction.support()) != syndrome:
            raise InvariantError(f"{self.cfg.backend} returned a correction with the wrong syndrome")
        return result

    def correction_action(self, syndrome):
        return self.system.action(self.decode(syndrome).correction)

    def is_failure(self, e):
        if e.is_zero():
            return False
        return self.correction_action(self.system.syndrome(e)) != self.system.action(e)


@lru_cache(maxsize=64)
def decoder_for(system, cfg):
    return SystemDecoder(system, cfg)


def decode(system, cfg, syndrome):
    """Correction for `syndrome` with H c = syndrome."""
    if syndrome.length != system.n_checks:
        raise DimensionMismatchError(f"syndrome length {syndrome.length} vs {system.n_checks} checks")
    return decoder_for(system, cfg).decode(syndrome)


def is_failure(system, cfg, error):
    """True iff A C(H e) != A e."""
    if error.length != system.n_faults:
        raise DimensionMismatchError(f"error length {error.length} vs {system.n_faults} faults")
    return decoder_for(system, cfg).is_failure(error)


def decode_restricted(system, cfg, syndrome, allowed_columns, priors=None):
    """Decode using only `allowed_columns`; the correction is returned in full-length form."""
    allowed = sorted(allowed_columns)
    priors = default_priors(system, cfg) if priors is None else np.asarray(priors, dtype=float)
    sub = system.h.select_columns(allowed)
    result = matrix_decoder(sub, cfg, tuple(priors[allowed])).decode(syndrome)
    support = [allowed[k] for k in result.correction.support()]
    return Decoding(BitVec.from_support(system.n_faults, support), len(support), result.cost, result.converged)


def decode_bb(system, cfg, syndrome, extra_row, forced_odd_support=None, priors=None, allowed_columns=None):
    """
    Decode the stacked system [H; g] with the extra syndrome bit set to 1.

    With `forced_odd_support`, the bits of supp(g) are fixed (listed ones to
    1, the rest to 0) and the residual syndrome is decoded on the remaining
    columns. `allowed_columns` restricts the search to a column subset.
    """
    if extra_row.length != system.n_faults:
        raise DimensionMismatchError(f"extra row length {extra_row.length} vs {system.n_faults} faults")
    priors = default_priors(system, cfg) if priors is None else np.asarray(priors, dtype=float)
    allowed = set(range(system.n_faults)) if allowed_columns is None else set(allowed_columns)
    if forced_odd_support is None:
        stacked = system.h.append_row(extra_row)
        cols = sorted(allowed)
        sub = stacked.select_columns(cols)
        result = matrix_decoder(sub, cfg, tuple(priors[cols])).decode(syndrome.append(1))
        support = [cols[k] for k in result.correction.support()]
        return Decoding(BitVec.from_support(system.n_faults, support), len(support), result.cost, result.converged)
    forced = sorted(forced_odd_support)
    fixed = set(extra_row.support())
    if not set(forced) <= fixed or len(forced) % 2 == 0:
        raise ValueError("forced support must be an odd-size subset of supp(extra_row)")
    residual = syndrome ^ syndrome_of_support(system.h, forced)
    free = sorted(allowed - fixed)
    rest = decode_restricted(system, cfg, residual, free, priors)
    support = sorted(set(rest.correction.support()) | set(forced))
    cost = rest.cost + float(sum(column_costs(priors, cfg)[j] for j in forced))
    return Decoding(BitVec.from_support(system.n_faults, support), len(support), cost, rest.converged)
