import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from takeover.core.rng import RngStream
from takeover.domain.particles import THETA_NAMES, Posterior
from takeover.errors import InputError, InvalidParameterError
from takeover.services.calibration import (
    AbcSettings,
    abc_asmc,
    calibrate,
    distance,
    distances_to,
    in_support,
    instance_channels,
    load_bundle,
    perturb,
    posterior_summary,
    sample_prior_batch,
    simulate_takeover_batch,
    summary_frames,
    synthesize_instances,
    weighted_quantile,
    write_bundle,
    write_generation_log,
)

TRUE_THETA = [2.0, 1.0, 40.0, 0.4, 0.4, 0.2]


@pytest.fixture
def quiet_template(ea_template):
    return replace(ea_template, alpha=0.0)


@pytest.fixture(scope="module")
def instances(hdv_posterior):
    return synthesize_instances(TRUE_THETA, 2, RngStream(42), hdv_posterior, horizon=60.0)


def test_prior_draws_respect_bounds_and_simplex():
    draws = sample_prior_batch(RngStream(0), 20_000)
    assert draws.shape == (20_000, 6)
    assert in_support(draws).all()
    np.testing.assert_allclose(draws[:, 3:].sum(axis=1), 1.0)
    # uniform on the weight triangle: each weight has mean 1/3
    assert draws[:, 3].mean() == pytest.approx(1 / 3, abs=0.01)
    assert draws[:, 5].mean() == pytest.approx(1 / 3, abs=0.01)
    assert draws[:, 0].mean() == pytest.approx(5.0, abs=0.1)
    assert draws[:, 2].mean() == pytest.approx(55.0, abs=1.0)


def test_perturbation_stays_in_the_box():
    free = sample_prior_batch(RngStream(1), 2000)[:, :5]
    moved = perturb(free, np.array([5.0, 1.0, 40.0, 0.5, 0.5]), RngStream(2))
    assert np.all(moved >= [0, 0, 10, 0, 0]) and np.all(moved <= [10, 2, 100, 1, 1])
    assert np.all(moved[:, 3] + moved[:, 4] <= 1.0 + 1e-12)


def test_distance():
    assert distance(10.0, 12.0, 60.0) == 2.0
    assert distance(None, None, 60.0) == 0.0
    assert distance(None, 5.0, 60.0) == 60.0
    assert distance(5.0, None, 60.0) == 60.0
    assert distance(math.nan, None, 60.0) == 0.0
    times = np.array([10.0, np.nan, 30.0])
    np.testing.assert_allclose(distances_to(times, 12.0, 60.0), [2.0, 60.0, 18.0])
    np.testing.assert_allclose(distances_to(times, None, 60.0), [60.0, 0.0, 60.0])


def test_batch_simulation_matches_the_closed_form(quiet_template):
    channels = np.full((201, 3), 0.5)
    thetas = np.array(
        [
            [0.0, 1.0, 50.0, 0.2, 0.3, 0.5],  # E_k = 0.5 k > 50 first at k = 101
            [60.0, 1.0, 50.0, 1.0, 0.0, 0.0],  # starts above threshold
            [0.0, 1.0, 100.0, 1.0, 0.0, 0.0],  # reaches exactly 100 and never exceeds it
        ]
    )
    times = simulate_takeover_batch(thetas, channels, quiet_template, RngStream(0), k=3)
    assert times.shape == (3, 3)
    np.testing.assert_allclose(times[0], 10.1)
    np.testing.assert_array_equal(times[1], 0.0)
    assert np.isnan(times[2]).all()
    with pytest.raises(InvalidParameterError):
        simulate_takeover_batch(thetas, channels, quiet_template, RngStream(0), k=0)


def test_batch_simulation_noise_spreads_replicates(ea_template):
    noisy = replace(ea_template, alpha=1.0, sigma=2.0)
    times = simulate_takeover_batch(
        np.array([[0.0, 1.0, 50.0, 0.2, 0.3, 0.5]]), np.full((601, 3), 0.5), noisy, RngStream(3), k=50
    )
    assert np.nanstd(times) > 0
    again = simulate_takeover_batch(
        np.array([[0.0, 1.0, 50.0, 0.2, 0.3, 0.5]]), np.full((601, 3), 0.5), noisy, RngStream(3), k=50
    )
    np.testing.assert_array_equal(times, again)


def test_synthetic_instances(instances, ea_template, hdv_posterior):
    assert [inst.instance_id for inst in instances] == ["syn000", "syn001"]
    for inst in instances:
        assert inst.horizon == pytest.approx(60.0)
        assert inst.takeover_time is None or 0.0 <= inst.takeover_time <= 60.0
        channels = instance_channels(inst, ea_template)
        assert channels.shape == (601, 3)
        assert np.all((channels >= 0.0) & (channels <= 1.0))
    again = synthesize_instances(TRUE_THETA, 2, RngStream(42), hdv_posterior, horizon=60.0)
    assert [i.takeover_time for i in again] == [i.takeover_time for i in instances]


def test_abc_tolerance_shrinks(instances):
    settings = AbcSettings(replicates=2)
    post = abc_asmc(instances, 40, 3, RngStream(1), settings)
    assert len(post) == 40
    assert post.weights.sum() == pytest.approx(1.0)
    assert in_support(post.thetas).all()

    generations = [rec["generation"] for rec in post.log]
    assert generations[0] == 0 and generations == sorted(generations)
    tolerances = [rec["tolerance"] for rec in post.log]
    assert math.isinf(tolerances[0])
    assert all(b <= a for a, b in zip(tolerances, tolerances[1:]))
    for rec in post.log:
        assert 0.0 < rec["acceptance_rate"] <= 1.0
        assert rec["accepted"] <= rec["proposed"]
    if post.generation > 0:
        assert np.all(post.distances <= post.tolerance)


def test_abc_is_reproducible(instances):
    settings = AbcSettings(replicates=1)
    a = abc_asmc(instances, 20, 2, RngStream(8), settings)
    b = abc_asmc(instances, 20, 2, RngStream(8), settings, threads=2)
    np.testing.assert_array_equal(a.thetas, b.thetas)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_calibrate_per_instance_and_pooled(instances, tmp_path):
    per_instance = calibrate(instances, 20, 2, RngStream(5), AbcSettings(replicates=1))
    assert [p.instance_id for p in per_instance] == ["syn000", "syn001"]

    pooled = calibrate(instances, 20, 2, RngStream(5), AbcSettings(replicates=1, pooled=True))
    assert len(pooled) == 1 and pooled[0].instance_id is None

    log_path = write_generation_log(per_instance + pooled, tmp_path / "generations.csv")
    frame = pd.read_csv(log_path)
    assert set(frame["instance_id"]) == {"syn000", "syn001", "pooled"}
    assert {"generation", "tolerance", "acceptance_rate", "ess", "resampled"} <= set(frame.columns)


def test_abc_input_checks(instances):
    with pytest.raises(InvalidParameterError):
        abc_asmc([], 10, 2, RngStream(0))
    with pytest.raises(InvalidParameterError):
        abc_asmc(instances, 0, 2, RngStream(0))
    with pytest.raises(InvalidParameterError):
        AbcSettings(quantile=1.0)
    with pytest.raises(InvalidParameterError):
        AbcSettings(replicates=0)


def test_bundle_round_trip(instances, tmp_path, ea_template):
    manifest = write_bundle(instances, tmp_path / "bundle")
    assert manifest.name == "manifest.csv"
    loaded = load_bundle(tmp_path / "bundle")

    assert [i.instance_id for i in loaded] == [i.instance_id for i in instances]
    for orig, back in zip(instances, loaded):
        assert back.takeover_time == orig.takeover_time
        assert back.shadow_spec == orig.shadow_spec
        assert back.dt == pytest.approx(orig.dt)
        np.testing.assert_array_equal(back.av.v, orig.av.v)
        np.testing.assert_allclose(instance_channels(back, ea_template), instance_channels(orig, ea_template))


def test_bundle_errors(instances, tmp_path):
    with pytest.raises(InputError) as exc:
        load_bundle(tmp_path / "nowhere")
    assert exc.value.exit_code == 2

    manifest = write_bundle(instances, tmp_path / "bundle")
    frame = pd.read_csv(manifest, dtype=str)
    frame.loc[1, "takeover_time"] = "soon"
    frame.to_csv(manifest, index=False)
    with pytest.raises(InputError) as exc:
        load_bundle(tmp_path / "bundle")
    assert exc.value.details["row"] == 1


def test_degenerate_posterior_summary():
    summary = posterior_summary(Posterior.single(TRUE_THETA))
    assert summary.has_degenerate and summary.degenerate == THETA_NAMES
    assert summary.means["E_T"] == pytest.approx(40.0)
    assert summary.medians["w3"] == pytest.approx(0.2)
    np.testing.assert_array_equal(summary.correlation, np.zeros((6, 6)))


def test_posterior_summary_of_prior_draws():
    draws = sample_prior_batch(RngStream(6), 5000)
    summary = posterior_summary(Posterior(draws, np.ones(len(draws))), bins=10)
    assert not summary.has_degenerate
    np.testing.assert_allclose(np.diag(summary.correlation), 1.0)
    # w3 = 1 - w1 - w2
    assert summary.correlation[3, 5] < -0.3
    for name, (edges, density) in summary.marginals.items():
        assert np.sum(density * np.diff(edges)) == pytest.approx(1.0), name

    marginals, corr = summary_frames(summary)
    assert len(marginals) == 60
    assert list(corr.columns) == list(THETA_NAMES)


def test_weighted_quantile():
    values = np.array([3.0, 1.0, 4.0, 2.0])
    assert weighted_quantile(values, np.ones(4), 0.5) == 2.0
    assert weighted_quantile(values, np.array([0.0, 0.0, 1.0, 0.0]), 0.5) == 4.0
    assert weighted_quantile(values, np.ones(4), 1.0) == 4.0


def test_generation_zero_is_the_prior(instances):
    post = abc_asmc(instances, 10_000, 1, RngStream(31), AbcSettings(replicates=1))
    assert post.generation == 0 and len(post.log) == 1
    np.testing.assert_allclose(post.weights, 1.0 / 10_000)
    assert stats.kstest(post.thetas[:, 1], "uniform", args=(0.0, 2.0)).statistic < 0.05
    assert stats.kstest(post.thetas[:, 2], "uniform", args=(10.0, 90.0)).statistic < 0.05


def test_summary_recovers_a_planted_correlation():
    gen = np.random.default_rng(11)
    n = 4000
    draws = sample_prior_batch(RngStream(12), n)
    draws[:, 1] = gen.uniform(0.2, 2.0, size=n)
    # threshold grows with the drift: E_T = E0 + 40 d + noise
    draws[:, 2] = np.clip(draws[:, 0] + 40.0 * draws[:, 1] + gen.normal(0.0, 5.0, size=n), 10.0, 100.0)
    summary = posterior_summary(Posterior(draws, np.ones(n)))
    assert summary.correlation[1, 2] > 0.5
    assert summary.correlation[2, 1] == pytest.approx(summary.correlation[1, 2])


@pytest.mark.integration
def test_pooled_abc_recovers_the_generating_parameters(hdv_posterior):
    truth = [0.0, 0.8, 76.0, 0.5, 0.3, 0.2]
    observed = synthesize_instances(truth, 30, RngStream(101), hdv_posterior)
    assert any(inst.takeover_time is not None for inst in observed)

    n = 1000
    post = abc_asmc(observed, n, 8, RngStream(102), AbcSettings(pooled=True))
    assert post.generation > 0

    ratio = post.thetas[:, 2] / post.thetas[:, 1]
    assert weighted_quantile(ratio, post.weights, 0.5) == pytest.approx(76.0 / 0.8, rel=0.15)
    assert weighted_quantile(post.thetas[:, 1], post.weights, 0.5) == pytest.approx(0.8, rel=0.25)

    completed = [rec for rec in post.log if "stopped" not in rec]
    assert len(completed) >= 2
    for rec in completed:
        assert rec["ess"] >= n / 4, rec
