"""Acceptance gate: one verdict per criterion, at the stated tolerances and runtimes."""

import itertools
import time
from fractions import Fraction

import numpy as np

from acceptance_log import record
from qvortex.channel import DetectionParams, FiberParams, fiber_transmit
from qvortex.experiment import (
    Analysis,
    Scenario,
    ScenarioConfig,
    calibrate_source_noise,
    published_values,
    run_scenario,
)
from qvortex.hilbert import fidelity
from qvortex.nonlocality import HardySettings, _word_ops, violation_sigmas
from qvortex.optics import make_vv

TSIRELSON = 2 * np.sqrt(2)


def test_1_tsirelson_saturation():
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig(Scenario.SOURCE, infinite_statistics=True))
    dt = time.perf_counter() - t0
    chsh = rep.results["chsh"]
    err = abs(chsh["corrected"] - TSIRELSON)
    # the MLE stops at a 1e-10 per-count likelihood change, so S_max of the reconstruction is only ~1e-9 close
    recon = abs(chsh["s_max_of_settings_state"] - TSIRELSON)
    ok = err <= 1e-9 and dt < 1.0
    assert record(1, "noiseless SOURCE reaches S = 2*sqrt(2)", ok,
                  f"measured S = {chsh['corrected']:.12f}, |S - 2sqrt2| = {err:.1e} (tol 1e-9), runtime {dt:.2f} s "
                  f"(< 1 s); Horodecki S_max of the MLE state differs by {recon:.1e}")


def _three_qubit_ideal():
    t0 = time.perf_counter()
    rep = run_scenario(ScenarioConfig(Scenario.THREE_QUBIT, infinite_statistics=True))
    return rep.results, time.perf_counter() - t0


def test_2_mermin_algebraic_maximum():
    res, dt = _three_qubit_ideal()
    m = res["mermin"]["corrected"]
    ok = abs(m - 4) <= 1e-9 and dt < 1.0
    assert record(2, "noiseless THREE_QUBIT gives M = 4", ok,
                  f"M = {m:.12f}, |M - 4| = {abs(m - 4):.1e} (tol 1e-9), runtime {dt:.2f} s (< 1 s)")


def test_3_hardy_ideal_value():
    res, dt = _three_qubit_ideal()
    h = res["hardy"]["corrected"]
    ok = abs(h - 0.25) <= 1e-9 and dt < 1.0
    assert record(3, "noiseless THREE_QUBIT gives H = 0.25", ok,
                  f"H = {h:.12f}, |H - 0.25| = {abs(h - 0.25):.1e} (tol 1e-9), runtime {dt:.2f} s (< 1 s)")


def test_4_classical_bounds_by_enumeration():
    t0 = time.perf_counter()
    m_max, h_max, n = 0, None, 0
    terms = HardySettings().terms()
    for vals in itertools.product((1, -1), repeat=6):
        n += 1
        a1, a2, a3, b1, b2, b3 = vals
        m_max = max(m_max, abs(a1 * b2 * b3 + a2 * b1 * b3 + a2 * b2 * a3 - a1 * b1 * a3))
        value = {"A": {1: a1, 2: a2, 3: a3}, "B": {1: b1, 2: b2, 3: b3}}
        h = Fraction(0)
        for coef, word, outcome in terms:
            hit = all(value[l][q] == (1 if o == "+" else -1) for (l, q), o in zip(_word_ops(word), outcome))
            h += Fraction(int(coef)) * int(hit)
        h_max = h if h_max is None else max(h_max, h)
    dt = time.perf_counter() - t0
    ok = n == 64 and m_max == 2 and h_max <= 0 and dt < 1.0
    assert record(4, "64 deterministic assignments: max M = 2, max H <= 0", ok,
                  f"{n} assignments, max M = {m_max}, max H = {h_max}, runtime {dt * 1e3:.1f} ms (< 1 s)")


def test_5_tomography_round_trip():
    t0 = time.perf_counter()
    common = dict(shots_per_basis=1e5, bootstrap_resamples=0, seed=2024, analyses=(Analysis.TOMO,))
    f2 = run_scenario(ScenarioConfig(Scenario.SOURCE, **common)).results["tomography"]["corrected"]["fidelity"]
    f3 = run_scenario(ScenarioConfig(Scenario.THREE_QUBIT, **common)).results["tomography"]["corrected"]["fidelity"]
    dt = time.perf_counter() - t0
    ok = f2 >= 0.999 and f3 >= 0.995 and dt < 60
    assert record(5, "MLE round trip at 1e5 coincidences per basis", ok,
                  f"singlet F = {f2:.6f} (>= 0.999), hybrid F = {f3:.6f} (>= 0.995), runtime {dt:.2f} s (< 60 s)")


def test_6_fiber_transparency():
    errs, survivals = [], []
    for sign in (1, -1):
        out, surv = fiber_transmit(make_vv(sign), FiberParams())
        errs.append(abs(1 - fidelity(out, make_vv(sign))))
        survivals.append(surv)
    common = dict(shots_per_basis=1e5, bootstrap_resamples=0, seed=6, fiber=FiberParams(mode_mix_epsilon=0.0))
    ideal = run_scenario(ScenarioConfig(Scenario.HYENT, **common)).results["tomography"]["corrected"]
    noisy = run_scenario(ScenarioConfig(Scenario.HYENT, noise=calibrate_source_noise(0.935), **common))
    noisy_fit = noisy.results["tomography"]["corrected"]
    ok = (max(errs) <= 1e-12 and all(abs(s - 0.4994) <= 1e-4 for s in survivals)
          and ideal["fidelity"] >= 0.999 and noisy_fit["fidelity_vs_injected"] >= 0.999)
    assert record(6, "fiber preserves |r>, |a> and the HYENT state", ok,
                  f"max 1-F(|r>,|a>) = {max(errs):.1e} (<= 1e-12), survival = {survivals[0]:.6f} (0.4994 +- 1e-4), "
                  f"HYENT F vs ideal = {ideal['fidelity']:.6f} (>= 0.999), with source noise F vs injected = "
                  f"{noisy_fit['fidelity_vs_injected']:.6f} (>= 0.999) while F vs singlet = {noisy_fit['fidelity']:.4f}")


def test_7_significance_arithmetic():
    cases = [((2.62, 0.03, 2.0), 21), ((3.43, 0.04, 2.0), 35), ((3.53, 0.04, TSIRELSON), 17)]
    got = [violation_sigmas(*triple) for triple, _ in cases]
    ok = all(abs(g - want) <= 1 for g, (_, want) in zip(got, cases))
    names = ["(2.62, 0.03, 2)", "(3.43, 0.04, 2)", "(3.53, 0.04, 2sqrt2)"]
    detail = ", ".join(f"{n} -> {g:.2f} sigma (quoted {w})" for n, g, (_, w) in zip(names, got, cases))
    assert record(7, "violation_sigmas reproduces quoted significances within +-1", ok, detail)


def test_8_corrected_not_below_raw():
    det = DetectionParams(integration_s=160.0, dark_rate_hz=5e3)
    noise = calibrate_source_noise(0.935)
    wins, gaps = 0, []
    for seed in range(100):
        cfg = ScenarioConfig(Scenario.HYENT, noise=noise, detection=det, seed=seed, analyses=(Analysis.CHSH,))
        chsh = run_scenario(cfg).results["chsh"]
        wins += chsh["corrected"] >= chsh["raw"]
        gaps.append(chsh["corrected"] - chsh["raw"])
    ok = wins >= 95
    assert record(8, "S_corrected >= S_raw with dark counts (100 seeds)", ok,
                  f"{wins}/100 runs (>= 95), mean S_corr - S_raw = {np.mean(gaps):.4f}, dark rate 5 kHz")


def test_9_calibration_and_non_reproducibility():
    noise = calibrate_source_noise(0.935)
    rep = run_scenario(ScenarioConfig(Scenario.SOURCE, noise=noise, shots_per_basis=1e5, seed=9, bootstrap_resamples=100))
    fit = rep.results["tomography"]["corrected"]
    chsh = rep.results["chsh"]
    ok = abs(fit["fidelity"] - 0.935) <= 0.005
    pub = published_values()
    statement = (
        "published F_s=93.5%, F_h=97.9%, F_i=99.4%, F=88.1%, S=2.67/2.62/2.76, M=3.43, H=0.085 depend on noise "
        "not characterised in the source; they are NOT reproduced, only shown side by side by `qvortex table1`"
    )
    assert pub["table1"]["SOURCE"]["fidelity"][0] == 0.935
    assert record(9, "calibrated source noise matches F_s = 0.935 +- 0.005", ok,
                  f"fitted depolarizing p = {noise.strength:.5f}, reconstructed F_s = {fit['fidelity']:.4f} +- "
                  f"{fit['sigma']:.4f}, S = {chsh['corrected']:.3f} (Werner prediction 2.583, published 2.68); {statement}")
