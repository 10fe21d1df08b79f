"""Metropolis-Hastings calibration and chain diagnostics."""

import math

import numpy as np
import pytest

from errors import NumericalError, ValidationError
from field import PriorBounds, assemble_reaction_vector, reference_posterior, reference_prior_bounds
from mcmc import (
    Chain,
    McmcConfig,
    acceptance_log_ratio,
    effective_sample_size,
    log_likelihood,
    make_calibration_model,
    posterior_summary,
    run_mcmc,
    uniform_ks_check,
)
from qoi import regional_averages
from solver import SolverConfig, solve_trajectory
from sparse_grid import KnotRule, grid_for_posterior

UNIT_BOX = PriorBounds(a=np.zeros(2), b=np.ones(2))


def flat_model(p):
    return np.zeros(2)


def quiet_config(**kwargs):
    kwargs.setdefault("bounds", UNIT_BOX)
    kwargs.setdefault("progress", False)
    return McmcConfig(**kwargs)


# ==============================================================================
# PROBABILITIES
# ==============================================================================

def test_log_likelihood_examples():
    assert log_likelihood([0.3, 0.4], [0.3, 0.4], 0.1) == 0.0
    assert log_likelihood([0.5, 0.4], [0.4, 0.4], 0.1) == pytest.approx(-0.5)


def test_log_likelihood_is_componentwise_sum():
    rng = np.random.default_rng(0)
    q, d = rng.random(7), rng.random(7)
    parts = sum(log_likelihood([a], [b], 0.2) for a, b in zip(q, d))
    assert log_likelihood(q, d, 0.2) == pytest.approx(parts, rel=1e-12)


def test_log_likelihood_validation():
    with pytest.raises(ValidationError, match="mismatch"):
        log_likelihood([0.1], [0.1, 0.2], 0.1)
    with pytest.raises(ValidationError, match="sigma"):
        log_likelihood([0.1], [0.1], 0.0)


def test_acceptance_ratio_out_of_box_is_minus_infinity():
    cfg = quiet_config()
    assert acceptance_log_ratio(np.array([1.5, 0.5]), np.array([0.5, 0.5]), None,
                                np.zeros(2), np.zeros(2), cfg) == -math.inf


def test_acceptance_ratio_of_unchanged_state_is_zero():
    cfg = quiet_config()
    p = np.array([0.3, 0.6])
    q = np.array([0.25, 0.7])
    assert acceptance_log_ratio(p, p, q, q, np.array([0.4, 0.4]), cfg) == 0.0


def test_acceptance_ratio_is_likelihood_difference():
    cfg = quiet_config(likelihood_sigma=0.1)
    q_data = np.array([0.4, 0.4])
    ratio = acceptance_log_ratio(np.array([0.2, 0.2]), np.array([0.5, 0.5]),
                                 np.array([0.4, 0.4]), np.array([0.5, 0.4]), q_data, cfg)
    assert ratio == pytest.approx(0.5)


def test_mcmc_config_validation():
    with pytest.raises(ValidationError, match="burn_in"):
        quiet_config(chain_length=10, burn_in=10)
    with pytest.raises(ValidationError, match="proposal_sigma"):
        quiet_config(proposal_sigma=0.0)


# ==============================================================================
# SAMPLER
# ==============================================================================

def test_chain_is_deterministic_and_stays_in_box():
    target = lambda p: 2.0 * p
    q_data = np.array([0.6, 1.2])
    cfg = quiet_config(chain_length=2000, burn_in=200, proposal_sigma=0.1, seed=17)
    a = run_mcmc(target, q_data, cfg)
    b = run_mcmc(target, q_data, cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.accepted, b.accepted)
    assert ((a.samples >= 0.0) & (a.samples <= 1.0)).all()
    other = run_mcmc(target, q_data, quiet_config(chain_length=2000, burn_in=200, proposal_sigma=0.1, seed=18))
    assert not np.array_equal(a.samples, other.samples)


def test_flat_likelihood_in_huge_box_accepts_everything():
    cfg = quiet_config(bounds=PriorBounds(a=np.full(2, -100.0), b=np.full(2, 100.0)),
                       chain_length=500, burn_in=0, proposal_sigma=0.5)
    chain = run_mcmc(flat_model, np.zeros(2), cfg)
    assert chain.acceptance_rate == 1.0


def test_tiny_proposal_width_stays_at_start():
    target = lambda p: 2.0 * p
    cfg = quiet_config(chain_length=1000, burn_in=0, proposal_sigma=1e-12, seed=4)
    chain = run_mcmc(target, np.array([0.6, 1.2]), cfg)
    np.testing.assert_allclose(chain.samples, np.full((1000, 2), 0.5), atol=1e-9)


def test_better_fit_is_always_accepted():
    calls = []

    def identity(p):
        calls.append(p.copy())
        return p.copy()

    q_data = np.array([3.0, -2.0])
    box = PriorBounds(a=np.full(2, -100.0), b=np.full(2, 100.0))
    cfg = quiet_config(bounds=box, chain_length=800, burn_in=0, proposal_sigma=0.5, seed=21)
    chain = run_mcmc(identity, q_data, cfg)

    # every proposal lies in the box, so calls[i + 1] is the proposal of step i
    assert len(calls) == 1 + chain.length
    previous = np.vstack([calls[0], np.asarray(chain.samples[:-1])])
    proposals = np.vstack(calls[1:])
    better = [
        log_likelihood(prop, q_data, cfg.likelihood_sigma) > log_likelihood(prev, q_data, cfg.likelihood_sigma)
        for prop, prev in zip(proposals, previous)
    ]
    better = np.array(better)
    assert better.any() and not better.all()
    assert chain.accepted[better].all()


def test_uniform_draw_of_zero_is_handled(monkeypatch):
    real_default_rng = np.random.default_rng

    class ZeroUniform:
        def __init__(self, seed):
            self._rng = real_default_rng(seed)

        def normal(self, *args, **kwargs):
            return self._rng.normal(*args, **kwargs)

        def random(self, *args, **kwargs):
            return 0.0

    monkeypatch.setattr(np.random, "default_rng", ZeroUniform)
    cfg = quiet_config(bounds=PriorBounds(a=np.full(2, -100.0), b=np.full(2, 100.0)),
                       chain_length=50, burn_in=0, proposal_sigma=0.5)
    chain = run_mcmc(flat_model, np.zeros(2), cfg)
    assert chain.acceptance_rate == 1.0


def test_out_of_box_proposals_are_rejected_without_evaluation():
    calls = []

    def counting_model(p):
        calls.append(p.copy())
        return np.zeros(2)

    cfg = quiet_config(chain_length=3000, burn_in=0, proposal_sigma=0.5, seed=3)
    chain = run_mcmc(counting_model, np.zeros(2), cfg)
    # One evaluation for the start point plus one per in-box proposal
    assert len(calls) == 1 + chain.accepted_count
    assert all(UNIT_BOX.contains(p) for p in calls)
    assert chain.acceptance_rate < 1.0


def test_model_failure_counts_as_rejection():
    def fragile(p):
        if p[0] > 0.6:
            raise NumericalError("blew up")
        return np.zeros(2)

    cfg = quiet_config(chain_length=3000, burn_in=0, proposal_sigma=0.1, seed=5)
    chain = run_mcmc(fragile, np.zeros(2), cfg)
    assert chain.model_failures > 0
    assert (chain.samples[:, 0] <= 0.6).all()


def test_chain_streams_to_disk_when_large(tmp_path):
    path = tmp_path / "chain.npy"
    cfg = quiet_config(chain_length=100, burn_in=0, stream_threshold=10, stream_path=path)
    chain = run_mcmc(flat_model, np.zeros(2), cfg)
    assert path.exists()
    assert isinstance(chain.samples, np.memmap)
    assert chain.samples.shape == (100, 2)
    np.testing.assert_array_equal(np.load(path), np.asarray(chain.samples))


# ==============================================================================
# SUMMARIES AND DIAGNOSTICS
# ==============================================================================

def test_posterior_summary_of_constant_chain():
    chain = Chain(samples=np.full((50, 3), 0.2), accepted=np.zeros(50, dtype=bool))
    post = posterior_summary(chain, 10)
    np.testing.assert_array_equal(post.mu, 0.2)
    np.testing.assert_array_equal(post.var, 0.0)
    assert post.is_degenerate
    with pytest.raises(ValidationError, match=r"components \[1, 2, 3\]"):
        grid_for_posterior(post, 2, KnotRule("weighted-leja", "two-step"))


def test_posterior_summary_zeroes_only_frozen_components():
    samples = np.column_stack([np.full(40, 0.1), np.linspace(0.0, 1.0, 40)])
    post = posterior_summary(Chain(samples=samples, accepted=np.ones(40, dtype=bool)), 0)
    assert post.var[0] == 0.0
    assert post.mu[0] == 0.1
    assert post.var[1] == pytest.approx(np.var(samples[:, 1], ddof=1))


def test_posterior_summary_two_samples():
    samples = np.array([[9.0], [0.0], [1.0]])
    chain = Chain(samples=samples, accepted=np.ones(3, dtype=bool))
    post = posterior_summary(chain, 1)
    assert post.mu[0] == pytest.approx(0.5)
    assert post.var[0] == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        posterior_summary(chain, 2)


def test_chain_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    chain = Chain(samples=rng.random((20, 3)), accepted=rng.random(20) < 0.5)
    path = tmp_path / "chain.csv"
    chain.to_frame().to_csv(path, index=False, float_format="%.17g")
    loaded = Chain.from_csv(path)
    np.testing.assert_array_equal(loaded.samples, chain.samples)
    np.testing.assert_array_equal(loaded.accepted, chain.accepted)
    assert list(chain.to_frame().columns) == ["step", "p_1", "p_2", "p_3", "accepted"]


def test_effective_sample_size():
    rng = np.random.default_rng(2)
    n = 20_000
    iid = rng.standard_normal(n)
    assert effective_sample_size(iid) > 0.7 * n

    phi = 0.9
    ar = np.empty(n)
    ar[0] = 0.0
    noise = rng.standard_normal(n)
    for t in range(1, n):
        ar[t] = phi * ar[t - 1] + noise[t]
    # integrated autocorrelation time (1 + phi) / (1 - phi) = 19
    assert n / 40 < effective_sample_size(ar) < n / 10

    assert effective_sample_size(np.ones(100)) == 100.0


def test_flat_likelihood_recovers_uniform_prior():
    cfg = quiet_config(chain_length=40_000, burn_in=2_000, proposal_sigma=0.3, seed=2023)
    chain = run_mcmc(flat_model, np.zeros(2), cfg)
    report = uniform_ks_check(np.asarray(chain.samples[cfg.burn_in:]), UNIT_BOX)
    assert list(report.columns) == ["component", "ks_statistic", "effective_size", "critical_value", "passed"]
    assert report["passed"].all()


@pytest.mark.slow
def test_calibration_recovers_synthetic_truth(synthetic_graph, synthetic_c0):
    truth = reference_posterior().mu
    horizon = 7.0
    cfg = SolverConfig(dt=0.2, T=horizon, sample_times=(horizon,))
    c_end = solve_trajectory(synthetic_graph, assemble_reaction_vector(synthetic_graph, truth), synthetic_c0, cfg).final
    q_data = regional_averages(synthetic_graph, c_end)

    model = make_calibration_model(synthetic_graph, synthetic_c0, None, horizon=horizon)
    mcmc_cfg = McmcConfig(bounds=reference_prior_bounds(), chain_length=20_000, burn_in=2_000,
                          proposal_sigma=1e-2, seed=2023, progress=False)
    chain = run_mcmc(model, q_data, mcmc_cfg)
    post = posterior_summary(chain, mcmc_cfg.burn_in)
    assert (np.abs(post.mu - truth) <= 2.0 * post.std).all()
    assert 0.0 < chain.acceptance_rate < 1.0
