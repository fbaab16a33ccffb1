from itertools import combinations

import numpy as np
import pytest
from pydantic import ValidationError

from decoders import DecoderConfig, decode, decode_bb, decode_restricted, decoder_for, is_failure
from errors import BudgetExhaustedError, DimensionMismatchError, InfeasibleSyndromeError
from f2linalg import BitVec, syndrome_of_support
from sampling import draw_weight_error
from system import gen_repetition


@pytest.mark.parametrize("backend", ["lookup", "branch_and_bound"])
def test_repetition_failures_are_majority(rep5, backend):
    cfg = DecoderConfig(backend=backend)
    for w in range(6):
        for support in combinations(range(5), w):
            e = BitVec.from_support(5, support)
            assert is_failure(rep5, cfg, e) == (w >= 3)


def test_backends_agree_on_weight(ut24, rng):
    lookup = DecoderConfig(backend="lookup")
    bnb = DecoderConfig(backend="branch_and_bound")
    for w in range(1, 7):
        for _ in range(10):
            s = ut24.syndrome(draw_weight_error(ut24, w, rng))
            a = decode(ut24, lookup, s)
            b = decode(ut24, bnb, s)
            assert a.weight == b.weight


def test_bp_osd_returns_valid_correction(ut4, rng):
    cfg = DecoderConfig(backend="bp_osd0", prior_rate=0.05)
    for w in (1, 3, 6, 10):
        for _ in range(5):
            s = ut4.syndrome(draw_weight_error(ut4, w, rng))
            c = decode(ut4, cfg, s).correction
            assert syndrome_of_support(ut4.h, c.support()) == s


def test_infeasible_syndrome(ut4, bnb):
    odd = BitVec.from_support(16, [0])
    with pytest.raises(InfeasibleSyndromeError) as info:
        decode(ut4, bnb, odd)
    assert info.value.exit_code == 3


def test_node_budget(ut4):
    cfg = DecoderConfig(backend="branch_and_bound", node_budget=1)
    s = ut4.syndrome(BitVec.from_support(32, [0, 1]))
    with pytest.raises(BudgetExhaustedError) as info:
        decode(ut4, cfg, s)
    assert info.value.exit_code == 4


def test_lookup_rank_limit(ut4):
    with pytest.raises(BudgetExhaustedError):
        decoder_for(ut4, DecoderConfig(backend="lookup", lookup_max_rank=2))


def test_log_prior_costs():
    rep3 = gen_repetition(3)
    priors = (0.4, 0.4, 0.001)
    s = rep3.syndrome(BitVec.from_support(3, [2]))
    for backend in ("lookup", "branch_and_bound"):
        unit = decode(rep3, DecoderConfig(backend=backend, priors=priors), s)
        weighted = decode(rep3, DecoderConfig(backend=backend, priors=priors, cost_model="log_prior"), s)
        assert unit.correction.support() == [2]
        assert weighted.correction.support() == [0, 1]


def test_config_validation():
    with pytest.raises(ValidationError):
        DecoderConfig(prior_rate=0.7)
    with pytest.raises(ValidationError):
        DecoderConfig(priors=(0.1, 0.6))
    with pytest.raises(ValidationError):
        DecoderConfig(backend="mwpm")


def test_zero_error_never_fails(ut4, bnb):
    assert not is_failure(ut4, bnb, BitVec.zeros(32))
    with pytest.raises(DimensionMismatchError):
        is_failure(ut4, bnb, BitVec.zeros(31))


def test_decode_restricted(rep5, bnb):
    s = rep5.syndrome(BitVec.from_support(5, [0]))
    out = decode_restricted(rep5, bnb, s, [1, 2, 3, 4])
    assert out.correction.support() == [1, 2, 3, 4]
    with pytest.raises(InfeasibleSyndromeError):
        decode_restricted(rep5, bnb, s, [3, 4])


def test_decode_bb_finds_minimum_logical(rep5, ut4, bnb):
    zero = BitVec.zeros(4)
    assert decode_bb(rep5, bnb, zero, rep5.a.row(0)).weight == 5
    out = decode_bb(ut4, bnb, BitVec.zeros(16), ut4.a.row(0))
    assert out.weight == 4
    assert ut4.is_logical(out.correction)


def test_decode_bb_forced_support(rep5, bnb):
    out = decode_bb(rep5, bnb, BitVec.zeros(4), rep5.a.row(0), forced_odd_support=[0, 1, 2, 3, 4])
    assert out.correction == BitVec.ones(5)
    with pytest.raises(InfeasibleSyndromeError):
        decode_bb(rep5, bnb, BitVec.zeros(4), rep5.a.row(0), forced_odd_support=[0])
    with pytest.raises(ValueError):
        decode_bb(rep5, bnb, BitVec.zeros(4), rep5.a.row(0), forced_odd_support=[0, 1])
