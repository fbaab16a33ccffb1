import math

import numpy as np
import pytest

from decoders import DecoderConfig
from errors import BudgetExhaustedError, SystemFormatError
from f2linalg import BitMatrix
from sampling import (
    RateEstimate, SpectrumEstimate, combined_rate, exact_rate, exact_spectrum, importance_estimate,
    read_rate_csv, read_spectrum_csv, sample_css_correlated, sample_rate, sample_spectrum,
    sample_weight, sample_weight_until, significant_weights, split_onset_fraction, transform,
    wald_stderr, write_rate_csv, write_spectrum_csv,
)
from system import DecodingSystem, css_split, gen_repetition, gen_unrotated_toric


def test_exact_repetition(rep5, lookup):
    assert exact_spectrum(rep5, lookup).tolist() == [0, 0, 0, 1, 1, 1]
    assert exact_rate(rep5, lookup, 0.1) == pytest.approx(0.00856, rel=1e-12)
    assert transform(exact_spectrum(rep5, lookup), 5, 0.1) == pytest.approx(0.00856, rel=1e-12)


@pytest.mark.parametrize("p", [0.015, 0.15, 0.9])
def test_circuit_toy_transform_matches_rate(circuit_toy, lookup, p):
    f = exact_spectrum(circuit_toy, lookup)
    assert len(f) == 48
    assert f[0] == 0.0
    direct = exact_rate(circuit_toy, lookup, p)
    assert transform(f, 47, p / 15) == pytest.approx(direct, rel=1e-9)


def test_exact_limit(ut4, bnb):
    with pytest.raises(BudgetExhaustedError):
        exact_spectrum(ut4, bnb)


def test_sample_weight_deterministic_failures(rep5, lookup, rng):
    assert sample_weight(rep5, lookup, 3, 500, rng) == (500, 500)
    assert sample_weight(rep5, lookup, 2, 500, rng) == (0, 500)
    assert sample_weight(rep5, lookup, 0, 10, rng) == (0, 10)
    with pytest.raises(ValueError):
        sample_weight(rep5, lookup, 6, 10, rng)


def test_sample_weight_matches_exact_on_toy(circuit_toy, lookup, rng):
    f = exact_spectrum(circuit_toy, lookup)
    failures, trials = sample_weight(circuit_toy, lookup, 3, 4000, rng)
    sigma = math.sqrt(f[3] * (1 - f[3]) / trials)
    assert abs(failures / trials - f[3]) < 5 * sigma + 1e-12


def test_sampling_independent_of_worker_count(rep5, lookup):
    a = sample_rate(rep5, lookup, 0.2, 5000, np.random.default_rng(7), n_workers=1)
    b = sample_rate(rep5, lookup, 0.2, 5000, np.random.default_rng(7), n_workers=2)
    assert a.failures == b.failures


def test_sample_rate_near_exact(rep5, lookup, rng):
    est = sample_rate(rep5, lookup, 0.1, 20000, rng)
    assert abs(est.phat - 0.00856) < 4 * math.sqrt(0.00856 / 20000)
    assert sample_rate(rep5, lookup, 0.0, 100, rng).failures == 0
    with pytest.raises(ValueError):
        sample_rate(rep5, lookup, 0.5, 10, rng)


def test_sample_until_stops(rep5, lookup, rng):
    failures, trials = sample_weight_until(rep5, lookup, 3, 50, 10_000, rng, batch=20)
    assert failures == trials == 60
    failures, trials = sample_weight_until(rep5, lookup, 2, 1, 100, rng, batch=30)
    assert (failures, trials) == (0, 100)


def test_sample_until_rounds_cover_all_workers(rep5, lookup, rng):
    # one batch of 20 per worker each round
    assert sample_weight_until(rep5, lookup, 3, 50, 10_000, rng, batch=20, n_workers=2) == (80, 80)
    assert sample_weight_until(rep5, lookup, 3, 50, 70, rng, batch=20, n_workers=2) == (70, 70)


def test_spectrum_estimate_accumulates():
    spec = SpectrumEstimate(10, 0.5)
    spec.add(4, 100, 10)
    spec.add(2, 50, 0)
    spec.add(4, 100, 30)
    spec.add(6, 0, 0)
    assert spec.weights == [2, 4, 6]
    assert spec.fhat(4) == 0.2
    assert [r[0] for r in spec.rows()] == [2, 4]
    with pytest.raises(ValueError):
        SpectrumEstimate(10, 0.5, [1], [5], [6])
    assert math.isnan(wald_stderr(0, 0))
    assert math.isnan(RateEstimate(0.1, 0, 0).phat)


def test_sample_spectrum(rep5, lookup, rng):
    spec = sample_spectrum(rep5, lookup, {1: 100, 3: 100, 5: 10}, rng)
    assert spec.weights == [1, 3, 5]
    assert [spec.fhat(w) for w in spec.weights] == [0.0, 1.0, 1.0]


def test_significant_weights_cover_mass():
    ws, factors = significant_weights(1000, 0.01)
    assert 10 in ws
    assert factors.sum() == pytest.approx(1.0, rel=1e-9)
    assert transform(np.ones(1001), 1000, 0.01) == pytest.approx(1.0, rel=1e-9)


def test_importance_estimate(rep5, lookup, rng):
    spec = sample_spectrum(rep5, lookup, {w: 200 for w in range(6)}, rng)
    est, err, missing = importance_estimate(spec, 0.1, range(6))
    assert est == pytest.approx(0.00856, rel=1e-9)
    assert err == 0.0
    assert missing == pytest.approx(0.0, abs=1e-15)
    est, _, missing = importance_estimate(spec, 0.1, [3])
    assert missing > 0
    with pytest.raises(ValueError):
        importance_estimate(SpectrumEstimate(5, 0.5), 0.1, [3])


def test_css_correlated_sampling(rng):
    h = BitMatrix.from_rows(["110000", "011000", "000110", "000011"])
    a = BitMatrix.from_rows(["111000", "000111"])
    parent = DecodingSystem(h, a, label="pair")
    split = css_split(parent, [2, 3], [0, 1], [0], [1])
    cfg = DecoderConfig(backend="lookup")
    assert sample_css_correlated(parent, split, cfg, cfg, 300, rng, w=4).failures == 300
    assert sample_css_correlated(parent, split, cfg, cfg, 300, rng, w=1).failures == 0
    with pytest.raises(ValueError):
        sample_css_correlated(parent, split, cfg, cfg, 10, rng)


def test_css_helpers():
    assert combined_rate(1e-4, 2e-4) == pytest.approx(3e-4)
    assert split_onset_fraction(0.1, 4, 2, 1) == pytest.approx(0.5 * 0.1 * 4 / 2)


def test_spectrum_csv(tmp_path, rep5, lookup, rng):
    spec = sample_spectrum(rep5, lookup, {2: 40, 3: 40}, rng)
    path = write_spectrum_csv(spec, tmp_path / "spectrum.csv")
    back = read_spectrum_csv(path)
    assert back.weights == spec.weights and back.failures == spec.failures
    assert back.n_expanded == 5 and back.asymptote == 0.5
    (tmp_path / "bad.csv").write_text("weight,trials\n1,2\n")
    with pytest.raises(SystemFormatError):
        read_spectrum_csv(tmp_path / "bad.csv")


def test_rate_csv(tmp_path):
    rates = [RateEstimate(0.01, 1000, 3), RateEstimate(0.02, 0, 0)]
    back = read_rate_csv(write_rate_csv(rates, tmp_path / "rates.csv"))
    assert len(back) == 1
    assert (back[0].p, back[0].trials, back[0].failures) == (0.01, 1000, 3)


@pytest.mark.parametrize("system", [gen_repetition(7), gen_unrotated_toric(2, 4)], ids=["rep7", "ut24"])
def test_transform_of_exact_spectrum_is_exact_rate(system, lookup):
    f = exact_spectrum(system, lookup)
    for q in (0.01, 0.05, 0.2):
        assert transform(f, system.n_expanded, q) == pytest.approx(exact_rate(system, lookup, q), rel=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("system", [gen_repetition(5), gen_repetition(7), gen_unrotated_toric(2, 4)],
                         ids=["rep5", "rep7", "ut24"])
def test_sampling_agrees_with_exact_oracle(system, lookup):
    rng = np.random.default_rng(20240611)
    trials = 100_000
    f = exact_spectrum(system, lookup)
    for w in range(1, system.n_expanded + 1):
        failures, _ = sample_weight(system, lookup, w, trials, rng)
        sigma = math.sqrt(f[w] * (1 - f[w]) / trials)
        assert abs(failures / trials - f[w]) <= 3 * sigma + 1e-12, f"w={w}"
    for p in (0.05, 0.1):
        exact = exact_rate(system, lookup, p)
        est = sample_rate(system, lookup, p, trials, rng)
        assert abs(est.phat - exact) <= 3 * math.sqrt(exact * (1 - exact) / trials), f"p={p}"
