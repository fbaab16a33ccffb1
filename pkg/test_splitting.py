import json
import math
from itertools import combinations

import numpy as np
import pytest
from pydantic import ValidationError

from errors import BudgetExhaustedError, InvariantError
from f2linalg import BitVec
from sampling import RateEstimate, exact_rate, sample_rate
from splitting import (
    CachedFailureOracle, ChainRecord, RateSchedule, SplitJob, bennett_kernel, build_schedule,
    chain_diagnostics, chain_log, estimate_ratio, metropolis_step, multi_seeded_split, pi_weight,
    rate_table, read_split_csv, run_chain, sample_p0, transition_probability, two_sided_schedule,
    write_split_csv,
)


def _failing_rep5():
    return [BitVec.from_support(5, s) for w in range(3, 6) for s in combinations(range(5), w)]


def _record(j, n, p=0.1):
    zeros = np.zeros(n)
    return ChainRecord(j, p, None, zeros, zeros, np.full(n, 3), 0, 0, None, True, True)


def _exact_p0(system, cfg, p0):
    return RateEstimate(p0, 10**8, int(round(10**8 * exact_rate(system, cfg, p0))))


# --- Rates and kernel ---

def test_pi_weight(rep5, circuit_toy):
    q = 0.2
    e = BitVec.from_support(5, [0, 2, 4])
    assert pi_weight(rep5, e, q) == pytest.approx(3 * math.log(q) + 2 * math.log(1 - q))
    probs = circuit_toy.fault_probabilities(0.15)
    e = BitVec.from_support(5, [1])
    expected = math.log(probs[1]) + sum(math.log(1 - probs[j]) for j in (0, 2, 3, 4))
    assert pi_weight(circuit_toy, e, 0.15) == pytest.approx(expected)
    with pytest.raises(ValueError):
        rate_table(rep5, 0.5)


def test_bennett_kernel():
    assert bennett_kernel(0.0) == 0.5
    assert bennett_kernel(1e6) == pytest.approx(0.0, abs=1e-300)
    assert bennett_kernel(-1e6) == 1.0
    assert bennett_kernel(math.log(3.0)) == pytest.approx(0.25)


def test_oracle_counts_every_query(rep5, lookup):
    oracle = CachedFailureOracle(rep5, lookup, capacity=4)
    e = BitVec.from_support(5, [0, 1, 2])
    assert oracle.is_failure(e)
    assert oracle.is_failure(e)
    assert not oracle.is_failure(BitVec.zeros(5))
    assert oracle.calls == 3
    assert oracle.cache_info().hits == 1


def test_detailed_balance(rep5, lookup):
    q = 0.2
    oracle = CachedFailureOracle(rep5, lookup)
    configs = _failing_rep5()
    checked = 0
    for e in configs:
        for f in configs:
            if e == f:
                continue
            forward = math.exp(pi_weight(rep5, e, q)) * transition_probability(rep5, oracle, e, f, q)
            backward = math.exp(pi_weight(rep5, f, q)) * transition_probability(rep5, oracle, f, e, q)
            assert forward == pytest.approx(backward, rel=1e-12)
            checked += forward > 0
    assert checked == 2 * (10 * 2 + 5)


def test_transition_probability_zero_cases(rep5, lookup):
    oracle = CachedFailureOracle(rep5, lookup)
    e = BitVec.from_support(5, [0, 1, 2])
    assert transition_probability(rep5, oracle, e, BitVec.from_support(5, [0, 1]), 0.1) == 0.0
    assert transition_probability(rep5, oracle, e, BitVec.from_support(5, [0, 1, 3, 4]), 0.1) == 0.0
    assert transition_probability(rep5, oracle, e, BitVec.from_support(5, [0, 1, 2, 3]), 0.1) == pytest.approx(
        0.1 / 0.9 / 5
    )


def test_metropolis_step(rep5, lookup, rng):
    # every flip of the all-ones configuration is a removal, which is always accepted and still fails
    for _ in range(10):
        nxt = metropolis_step(rep5, lookup, BitVec.ones(5), 0.05, rng)
        assert nxt.weight() == 4
    with pytest.raises(InvariantError):
        metropolis_step(rep5, lookup, BitVec.from_support(5, [0]), 0.05, rng)


def test_chain_samples_failing_distribution(rep5, lookup, rng):
    q = 0.2
    schedule = RateSchedule([q], [2.5])
    rec = run_chain(rep5, lookup, 0, BitVec.from_support(5, [0, 1, 2]), schedule, 150_000, rng=rng)
    assert rec.samples == 150_000
    assert not rec.has_prev and not rec.has_next
    total = 10 * q**3 * (1 - q) ** 2 + 5 * q**4 * (1 - q) + q**5
    hist = rec.weight_histogram
    for w, mass in ((3, 10 * q**3 * (1 - q) ** 2), (4, 5 * q**4 * (1 - q)), (5, q**5)):
        assert hist[w] / rec.samples == pytest.approx(mass / total, abs=0.02)
    assert set(hist) <= {3, 4, 5}
    assert rec.decoder_calls >= rec.transitions


def test_run_chain_arguments(rep5, lookup, rng):
    schedule = build_schedule(0.2, 0.1, 5, 5)
    with pytest.raises(ValueError):
        run_chain(rep5, lookup, 0, BitVec.ones(5), schedule, 1, rng=rng)
    with pytest.raises(InvariantError):
        run_chain(rep5, lookup, 0, BitVec.from_support(5, [0, 1]), schedule, 10, rng=rng)


def test_run_chain_budget_marks_partial(rep5, lookup, rng):
    schedule = build_schedule(0.2, 0.1, 5, 5)
    rec = run_chain(rep5, lookup, 0, BitVec.ones(5), schedule, 2000, epsilon=1e-9, rng=rng, budget_seconds=0.01)
    assert rec.partial
    assert rec.samples >= 2000


# --- Schedules ---

def test_schedule_first_step():
    schedule = build_schedule(0.03, 0.005, 4, 32)
    assert schedule.p_values[1] == pytest.approx(0.018375, rel=1e-3)
    assert schedule.p_values[-1] == 0.005
    assert all(a > b for a, b in zip(schedule.p_values, schedule.p_values[1:]))
    assert build_schedule(0.03, 0.03, 4, 32).p_values == [0.03]


def test_schedule_upward():
    schedule = build_schedule(0.01, 0.05, 4, 32)
    assert schedule.p_values[-1] == 0.05
    assert all(a < b for a, b in zip(schedule.p_values, schedule.p_values[1:]))
    with pytest.raises(ValueError):
        build_schedule(0.0, 0.01, 4, 32)


def test_two_sided_schedule():
    schedule = two_sided_schedule(0.1, [0.02, 0.05, 0.2], 5, 5)
    ps = schedule.p_values
    assert ps[0] == 0.2 and ps[-1] == 0.02
    assert ps[schedule.origin] == 0.1
    assert 0.05 in ps
    assert all(a > b for a, b in zip(ps, ps[1:]))
    assert schedule.neighbour(0, -1) == 0
    assert schedule.neighbour(len(ps) - 1, 1) == len(ps) - 1
    assert schedule.steps == max(schedule.origin, len(ps) - 1 - schedule.origin)


# --- Ratio estimation ---

def test_equal_rates_give_unit_ratio():
    ratio = estimate_ratio(_record(0, 50), _record(1, 50))
    assert ratio.value == pytest.approx(1.0)
    assert ratio.stderr == pytest.approx(0.0)
    with pytest.raises(ValueError):
        estimate_ratio(_record(0, 50), _record(2, 50))


def test_sample_p0(rep5, lookup, rng):
    oracle = CachedFailureOracle(rep5, lookup)
    rate, found = sample_p0(rep5, oracle, 0.2, 50, 10**5, rng, keep=3, batch=500)
    assert rate.failures >= 50
    assert len(found) == 3
    assert all(oracle.is_failure(e) for e in found)
    with pytest.raises(BudgetExhaustedError):
        sample_p0(rep5, oracle, 1e-4, 1, 10, rng, keep=1)


def test_split_matches_exact_rate(rep5, lookup, rng):
    p0, target = 0.2, 0.05
    result = multi_seeded_split(
        rep5, lookup, p0, [target], n_seeds=2, n_reps=2, t_init=2000, rng=rng, distance=5,
        epsilon=0.1, p0_rate=_exact_p0(rep5, lookup, p0),
    )
    assert len(result.instances) == 4
    estimates = result.estimates(target)
    assert len(estimates) == 4
    assert estimates[0].p_hat != estimates[1].p_hat
    mean = float(np.mean([est.p_hat for est in estimates]))
    assert mean == pytest.approx(exact_rate(rep5, lookup, target), rel=0.1)
    for est in estimates:
        assert est.p_hat == pytest.approx(est.p0_estimate * math.prod(est.ratios))
        assert len(est.ratios) == result.schedule.steps
        assert est.provenance["boundary"] == "clamped-endpoint"


def test_split_diagnostics_and_artifacts(rep5, lookup, rng, tmp_path):
    result = multi_seeded_split(
        rep5, lookup, 0.2, [0.05], n_seeds=2, n_reps=1, t_init=2000, rng=rng, distance=5,
        p0_failures=200,
    )
    diag = chain_diagnostics(result.bundles)
    assert [d["p"] for d in diag] == result.schedule.p_values
    for d in diag:
        assert d["chains"] == 2
        assert d["decoder_call_rate"] >= d["transition_rate"]
        assert min(d["weight_histogram"]) >= 3
    assert diag[0]["mean_weight"] > diag[-1]["mean_weight"]

    path = write_split_csv(result, tmp_path / "split.csv", label="rep5")
    assert path.read_text().startswith("# failspec split label=rep5 L=2 M=1")
    rows = read_split_csv(path)
    assert [r["p"] for r in rows] == result.schedule.p_values
    assert rows[0]["P_hat"] == pytest.approx(result.p0_rate.phat, rel=1e-9)
    json.dumps(chain_log(result))


def test_split_arguments(rep5, lookup, rng):
    with pytest.raises(ValueError):
        multi_seeded_split(rep5, lookup, 0.2, [0.05], n_seeds=0, n_reps=1, t_init=10, rng=rng, distance=5)


def test_split_job_validation():
    job = SplitJob(system="rep5.txt", p0=0.1, targets=[0.01])
    assert (job.L, job.M, job.T_init, job.epsilon, job.lam) == (12, 3, 1000, 0.25, 2.0)
    assert job.decoder.backend == "branch_and_bound"
    with pytest.raises(ValidationError):
        SplitJob(system="rep5.txt", p0=0.1, targets=[0.7])
    with pytest.raises(ValidationError):
        SplitJob(system="rep5.txt", p0=0.1, targets=[0.01], walkers=4)
    with pytest.raises(ValidationError):
        SplitJob(system="rep5.txt", p0=0.1, targets=[])


@pytest.mark.slow
def test_split_against_direct_sampling(ut35, lookup, rng):
    target = 0.05
    result = multi_seeded_split(ut35, lookup, 0.1, [target], n_seeds=4, n_reps=2, t_init=1000, rng=rng,
                                distance=3)
    mean, std = result.summary(result.schedule.p_values.index(target))
    direct = sample_rate(ut35, lookup, target, 200_000, rng)
    assert mean == pytest.approx(direct.phat, rel=0.3)


@pytest.mark.slow
def test_long_logical_seeding_underestimates(ut35, lookup, rng):
    # weight-5 logical running along the long side of the 3 x 5 torus
    long_logical = BitVec.from_support(30, [15 + y for y in range(5)])
    assert ut35.is_logical(long_logical)
    p0, target = 0.03, 0.005
    p0_rate, _ = sample_p0(ut35, CachedFailureOracle(ut35, lookup), p0, 1000, 10**7, rng, keep=0)

    def mean_estimate(t_init, seeds=None):
        result = multi_seeded_split(ut35, lookup, p0, [target], n_seeds=8, n_reps=2, t_init=t_init, rng=rng,
                                    distance=3, p0_rate=p0_rate, seed_configs=seeds)
        return result.summary(result.schedule.p_values.index(target))

    reference, _ = mean_estimate(1000)
    short, _ = mean_estimate(20, [long_logical])
    longer, _ = mean_estimate(200, [long_logical])
    assert short < reference
    assert short < longer
