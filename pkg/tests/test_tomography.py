import numpy as np
import pytest
from hypothesis import given, settings

from qvortex.channel import DetectionParams, sample_counts, subtract_accidentals
from qvortex.hilbert import OAM2, POL1, POL2, DensityMatrix, fidelity, is_physical, random_state
from qvortex.optics import Readout, logical_state, make_hybrid, make_singlet
from qvortex.tomography import (
    MleOptions,
    TomographyError,
    bootstrap_sigma,
    expected_counts,
    generate_settings,
    linear_inversion,
    mle_reconstruct,
)

from strategies import seeds


def singlet():
    return make_singlet().to_density()


def hybrid_logical():
    rho, _ = logical_state(make_hybrid(), Readout.POL_THEN_OAM)
    return rho


def poisson_counts(rho, tset, per_basis, seed):
    lam = expected_counts(rho, tset, per_basis)
    return np.random.default_rng(seed).poisson(lam).astype(float)


def test_setting_counts():
    t2, t3 = generate_settings(2), generate_settings(3)
    assert len(t2.settings) == 36 and t2.n_bases == 9
    assert len(t3.settings) == 216 and t3.n_bases == 27
    assert len({s.basis for s in t3.settings}) == 27


def test_design_matrix_rank():
    assert np.linalg.matrix_rank(generate_settings(2).design_matrix()) == 16
    assert np.linalg.matrix_rank(generate_settings(3).design_matrix()) == 64


def test_each_basis_sums_to_identity():
    t = generate_settings(3)
    for b in range(t.n_bases):
        total = t.projectors[t.basis_index == b].sum(axis=0)
        assert np.allclose(total, np.eye(8), atol=1e-12)


def test_unsupported_sizes():
    with pytest.raises(TomographyError):
        generate_settings(1)


@pytest.mark.parametrize("rho", [singlet(), DensityMatrix.maximally_mixed([POL1, POL2])], ids=["singlet", "mixed"])
def test_linear_inversion_exact(rho):
    t = generate_settings(2)
    est = linear_inversion(expected_counts(rho, t, 1000.0), t)
    assert np.max(np.abs(est - rho.matrix)) < 1e-10


def test_linear_inversion_flags_unphysical_output():
    t = generate_settings(2)
    negatives = 0
    for seed in range(20):
        est = linear_inversion(poisson_counts(singlet(), t, 100.0, seed), t)
        if not is_physical(est):
            negatives += 1
            assert np.linalg.eigvalsh(est)[0] < -1e-10
    assert negatives > 0


def test_mle_exact_data_fixed_point():
    t = generate_settings(2)
    res = mle_reconstruct(expected_counts(singlet(), t, 1e5), t)
    assert res.converged
    assert fidelity(res.rho_hat, singlet()) >= 1 - 1e-8
    t3 = generate_settings(3, oam_encoded=[OAM2])
    res3 = mle_reconstruct(expected_counts(hybrid_logical(), t3, 1e5), t3)
    assert fidelity(res3.rho_hat, hybrid_logical()) >= 1 - 1e-8


def test_mle_round_trip_sampled():
    t = generate_settings(2)
    res = mle_reconstruct(poisson_counts(singlet(), t, 1e5, 0), t)
    assert fidelity(res.rho_hat, singlet()) >= 0.999
    t3 = generate_settings(3, oam_encoded=[OAM2])
    res3 = mle_reconstruct(poisson_counts(hybrid_logical(), t3, 1e5, 1), t3)
    assert fidelity(res3.rho_hat, hybrid_logical()) >= 0.995


@settings(max_examples=15)
@given(seeds)
def test_mle_likelihood_monotone_and_physical(seed):
    r = np.random.default_rng(seed)
    rho = random_state([POL1, POL2], r)
    t = generate_settings(2)
    res = mle_reconstruct(poisson_counts(rho, t, 200.0, seed), t, MleOptions(keep_trace=True))
    steps = np.diff(res.loglik_trace)
    assert (steps >= -1e-9 * abs(res.log_likelihood)).all()
    m = res.rho_hat.matrix
    assert np.max(np.abs(m - m.conj().T)) <= 1e-12
    assert abs(np.trace(m) - 1) <= 1e-12
    assert np.linalg.eigvalsh(m)[0] >= -1e-10


def test_mle_from_records_is_order_independent():
    t = generate_settings(2)
    recs = subtract_accidentals(sample_counts(singlet(), t.settings, DetectionParams(integration_s=0.01), seed=3))
    a = mle_reconstruct(recs, t)
    shuffled = [recs[i] for i in np.random.default_rng(0).permutation(len(recs))]
    b = mle_reconstruct(shuffled, t)
    assert np.max(np.abs(a.rho_hat.matrix - b.rho_hat.matrix)) < 1e-10


def test_missing_records_rejected():
    t = generate_settings(2)
    recs = sample_counts(singlet(), t.settings[:-1], DetectionParams(), seed=0)
    with pytest.raises(TomographyError):
        mle_reconstruct(recs, t)


def test_reconstruction_is_basis_consistent():
    rng = np.random.default_rng(12)
    rho = random_state([POL1, POL2, OAM2], rng)
    t = generate_settings(3)
    n = poisson_counts(rho, t, 1e6, 5)
    res = mle_reconstruct(n, t)
    p = t.probabilities(res.rho_hat)
    tot = np.bincount(t.basis_index, weights=n)[t.basis_index]
    f = n / tot
    se = np.sqrt(np.maximum(f * (1 - f), 1e-12) / tot)
    assert np.mean(np.abs(p - f) <= 4 * se) >= 0.95


def test_bootstrap_scaling_and_determinism():
    t = generate_settings(2)
    small = expected_counts(singlet(), t, 1e4)
    big = expected_counts(singlet(), t, 1e5)
    f_small, s_small = bootstrap_sigma(small, t, singlet(), 100, seed=1)
    f_big, s_big = bootstrap_sigma(big, t, singlet(), 100, seed=1)
    assert s_big < 0.01
    assert s_big / s_small < 0.5
    assert bootstrap_sigma(big, t, singlet(), 100, seed=1) == (f_big, s_big)


def test_bootstrap_requires_enough_resamples():
    t = generate_settings(2)
    with pytest.raises(ValueError):
        bootstrap_sigma(expected_counts(singlet(), t, 1e3), t, singlet(), 10)


def test_result_json_shape():
    t = generate_settings(2)
    res = mle_reconstruct(expected_counts(singlet(), t, 1e3), t)
    d = res.to_json()
    assert set(d) == {"rho", "fidelity", "sigma", "loglik", "iterations", "converged"}
    assert DensityMatrix.from_json(d["rho"]).labels == (POL1, POL2)


def test_labels_follow_request():
    t = generate_settings(2, oam_encoded=[OAM2], labels=[POL2, OAM2])
    assert t.labels == (POL2, OAM2)
    assert t.settings[0].setting_id == "tomo/ZZ:++"
