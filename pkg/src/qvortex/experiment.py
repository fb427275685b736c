"""Scenario orchestration: source -> vortex plate -> fiber -> analysis -> reconstruction -> tests."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Any

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .channel import (
    CountRecord,
    DetectionParams,
    FiberParams,
    MeasurementSetting,
    NoiseKind,
    NoiseModel,
    apply_noise,
    fiber_transmit,
    sample_counts,
    subtract_accidentals,
)
from .hilbert import KET, OAM2, POL1, POL2, DensityMatrix, StateVector, fidelity, is_physical, partial_trace
from .nonlocality import (
    CHSH_CLASSICAL,
    CHSH_QUANTUM,
    HARDY_NONCONTEXTUAL,
    MERMIN_BISEPARABLE,
    MERMIN_CLASSICAL,
    ChshSettings,
    Functional,
    ViolationReport,
    chsh_functional,
    chsh_plan,
    estimate_from_counts,
    hardy_functional,
    hardy_plan,
    mermin_functional,
    mermin_plan,
    optimize_chsh,
)
from .optics import (
    Readout,
    attach_gaussian_mode,
    analysis_povm,
    encode,
    logical_state,
    make_hybrid,
    make_singlet,
)
from .tomography import (
    MleOptions,
    TomographyResult,
    bootstrap_sigma,
    generate_settings,
    linear_inversion,
    mle_reconstruct,
)

SCHEMA_VERSION = "1.0"


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class NumericalError(RuntimeError):
    """A reconstruction failed to converge."""


class Scenario(enum.Enum):
    SOURCE = "SOURCE"
    HYENT = "HYENT"
    INTRA = "INTRA"
    THREE_QUBIT = "THREE_QUBIT"


class Analysis(enum.Enum):
    TOMO = "TOMO"
    CHSH = "CHSH"
    MERMIN = "MERMIN"
    HARDY = "HARDY"


# CHSH measurement times per state, split evenly over the 16 CHSH settings
MEASUREMENT_TIME_S = {Scenario.SOURCE: 160.0, Scenario.HYENT: 2560.0, Scenario.INTRA: 1920.0, Scenario.THREE_QUBIT: 2560.0}
N_CHSH_SETTINGS = 16

DEFAULT_ANALYSES = {
    Scenario.SOURCE: (Analysis.TOMO, Analysis.CHSH),
    Scenario.HYENT: (Analysis.TOMO, Analysis.CHSH),
    Scenario.INTRA: (Analysis.TOMO, Analysis.CHSH),
    Scenario.THREE_QUBIT: (Analysis.TOMO, Analysis.MERMIN, Analysis.HARDY),
}

VARIANTS = ("both", "raw", "corrected")


@dataclass(frozen=True)
class Layout:
    readout: Readout
    labels: tuple
    oam_encoded: tuple
    chsh_pair: tuple
    target_name: str


LAYOUTS = {
    Scenario.SOURCE: Layout(Readout.POLARIZATION, (POL1, POL2), (), (POL1, POL2), "singlet"),
    # logical VV qubit of photon 2 is labelled POL2: DECODE maps it onto photon-2 polarization
    Scenario.HYENT: Layout(Readout.VECTOR_VORTEX, (POL1, POL2), (POL2,), (POL1, POL2), "singlet in {pol1} x {r, -i a}"),
    Scenario.INTRA: Layout(Readout.POL_THEN_OAM, (POL2, OAM2), (OAM2,), (POL2, OAM2), "Phi+ in {pol2} x {oam}"),
    Scenario.THREE_QUBIT: Layout(Readout.POL_THEN_OAM, (POL1, POL2, OAM2), (OAM2,), (POL1, POL2), "hybrid state"),
}

_STREAMS = {Analysis.TOMO: 0, Analysis.CHSH: 1_000_000, Analysis.MERMIN: 2_000_000, Analysis.HARDY: 3_000_000}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    fiber: FiberParams = FiberParams()
    noise: NoiseModel = NoiseModel()
    detection: DetectionParams | None = None
    seed: int = 0
    analyses: tuple[Analysis, ...] | None = None
    shots_per_basis: float | None = None
    infinite_statistics: bool = False
    bootstrap_resamples: int = 100
    variants: str = "both"

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
            analyses = DEFAULT_ANALYSES[self.scenario] if self.analyses is None else self.analyses
            analyses = tuple(sorted({Analysis(a) for a in analyses}, key=lambda a: list(Analysis).index(a)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "analyses", analyses)
        if self.detection is None:
            t = MEASUREMENT_TIME_S[self.scenario] / N_CHSH_SETTINGS
            object.__setattr__(self, "detection", DetectionParams(integration_s=t))
        if self.scenario is not Scenario.THREE_QUBIT:
            bad = [a.value for a in analyses if a in (Analysis.MERMIN, Analysis.HARDY)]
            if bad:
                raise ConfigError(f"{', '.join(bad)} need the THREE_QUBIT scenario, not {self.scenario.value}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.shots_per_basis is not None and self.shots_per_basis <= 0:
            raise ConfigError("shots_per_basis must be positive")
        if self.bootstrap_resamples and self.bootstrap_resamples < 100:
            raise ConfigError("bootstrap_resamples must be 0 (off) or at least 100")
        if self.variants not in VARIANTS:
            raise ConfigError(f"variants must be one of {VARIANTS}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"scenario", "fiber", "noise", "detection", "seed", "analyses", "shots_per_basis",
                 "infinite_statistics", "bootstrap_resamples", "variants"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in d:
            raise ConfigError("config needs a 'scenario'")
        try:
            kw: dict[str, Any] = {k: v for k, v in d.items() if k not in ("fiber", "noise", "detection")}
            if "fiber" in d:
                kw["fiber"] = FiberParams(**d["fiber"])
            if "noise" in d:
                kw["noise"] = NoiseModel(**d["noise"])
            if d.get("detection") is not None:
                scen = Scenario(d["scenario"])
                base = {"integration_s": MEASUREMENT_TIME_S[scen] / N_CHSH_SETTINGS}
                kw["detection"] = DetectionParams(**{**base, **d["detection"]})
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_json_file(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        noise = asdict(self.noise)
        noise["kind"] = self.noise.kind.value
        noise["target"] = [l.name for l in self.noise.target]
        return {
            "scenario": self.scenario.value,
            "fiber": asdict(self.fiber),
            "noise": noise,
            "detection": asdict(self.detection),
            "seed": int(self.seed),
            "analyses": [a.value for a in self.analyses],
            "shots_per_basis": self.shots_per_basis,
            "infinite_statistics": self.infinite_statistics,
            "bootstrap_resamples": self.bootstrap_resamples,
            "variants": self.variants,
        }


# --- states ---------------------------------------------------------------------------------


def source_state(c: ScenarioConfig) -> DensityMatrix:
    """State leaving the source (noise applied), before any vortex plate."""
    if c.scenario is Scenario.INTRA:
        return apply_noise(StateVector([POL2], KET["H"]).to_density(), c.noise)
    return apply_noise(make_singlet().to_density(), c.noise)


def prepare_state(c: ScenarioConfig) -> tuple[DensityMatrix, DensityMatrix, float]:
    """Physical state at the analysers, the injected (pre-fiber) state and the fiber survival."""
    src = source_state(c)
    if c.scenario is Scenario.SOURCE:
        return src, src, 1.0
    injected = encode(attach_gaussian_mode(src))
    out, survival = fiber_transmit(injected, c.fiber)
    return out, injected, survival


def ideal_target(scenario: Scenario) -> DensityMatrix:
    if scenario in (Scenario.SOURCE, Scenario.HYENT):
        return make_singlet().to_density()
    if scenario is Scenario.INTRA:
        phi = (np.kron(KET["H"], KET["H"]) + np.kron(KET["V"], KET["V"])) / np.sqrt(2)
        return StateVector([POL2, OAM2], phi).to_density()
    rho, _ = logical_state(make_hybrid().to_density(), Readout.POL_THEN_OAM)
    return rho


# --- runs -------------------------------------------------------------------------------------


def _integration_time(c: ScenarioConfig, rho: DensityMatrix, plan: list[MeasurementSetting], survival: float) -> float:
    if c.shots_per_basis is None:
        return c.detection.integration_s
    d = c.detection
    first = [s for s in plan if s.basis == plan[0].basis]
    born = 0.0
    for s in first:
        e1, e2 = analysis_povm(s.projectors, LAYOUTS[c.scenario].readout, rho.labels, rho.dims)
        born += float(np.real(np.trace(rho.matrix @ e1 @ e2)))
    rate = d.pair_rate_hz * d.detector_efficiency**2 * survival * born
    if rate <= 0:
        raise ConfigError("zero expected coincidence rate; cannot honour shots_per_basis")
    return c.shots_per_basis / rate


def _measure(c: ScenarioConfig, rho: DensityMatrix, plan, survival: float, analysis: Analysis) -> list[CountRecord]:
    det = replace(c.detection, integration_s=_integration_time(c, rho, plan, survival))
    recs = sample_counts(
        rho, plan, det, c.seed,
        survival=survival,
        readout=LAYOUTS[c.scenario].readout,
        stream_base=_STREAMS[analysis],
        infinite_statistics=c.infinite_statistics,
    )
    return subtract_accidentals(recs)


def _want(c: ScenarioConfig, variant: str) -> bool:
    return c.variants in ("both", variant)


def _violation_json(records, functional: Functional, bounds: dict, c: ScenarioConfig) -> dict:
    out: dict[str, Any] = {"raw": None, "corrected": None, "sigma": {"raw": None, "corrected": None},
                           "bounds": bounds, "sigmas": {"raw": None, "corrected": None}}
    for variant in ("raw", "corrected"):
        if not _want(c, variant):
            continue
        value, sigma = estimate_from_counts(records, functional, corrected=variant == "corrected")
        rep = ViolationReport(value, sigma if sigma > 0 else None, bounds)
        out[variant] = value
        out["sigma"][variant] = sigma
        out["sigmas"][variant] = rep.sigmas_of_violation
    return out


@dataclass
class Report:
    config: ScenarioConfig
    results: dict
    wall_clock_s: float
    version: str = __version__
    records: list[CountRecord] = field(default_factory=list, repr=False)
    rho_hat: DensityMatrix | None = None
    rho_physical: DensityMatrix | None = None

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "config": self.config.to_dict(),
            **self.results,
            "wall_clock_s": self.wall_clock_s,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @property
    def converged(self) -> bool:
        tomo = self.results.get("tomography")
        if not tomo:
            return True
        return all(v["converged"] for k, v in tomo.items() if k in ("raw", "corrected") and v)


def run_scenario(c: ScenarioConfig) -> Report:
    t0 = time.perf_counter()
    layout = LAYOUTS[c.scenario]
    rho, injected, survival = prepare_state(c)
    target = ideal_target(c.scenario)
    injected_logical, _ = logical_state(injected, layout.readout)
    results: dict[str, Any] = {
        "scenario": c.scenario.value,
        "readout": layout.readout.value,
        "logical_labels": [l.name for l in layout.labels],
        "survival_probability": survival,
        "statistics": "infinite" if c.infinite_statistics else "poisson",
    }
    records: list[CountRecord] = []
    rho_hat = None

    if Analysis.TOMO in c.analyses:
        tset = generate_settings(len(layout.labels), layout.oam_encoded, layout.labels)
        recs = _measure(c, rho, list(tset.settings), survival, Analysis.TOMO)
        records += recs
        tomo: dict[str, Any] = {
            "method": "maximum likelihood, Poisson counts, diluted RrhoR iteration",
            "uncertainty_method": "parametric bootstrap" if c.bootstrap_resamples and not c.infinite_statistics else None,
            "target": layout.target_name,
            "raw": None,
            "corrected": None,
        }
        for variant in ("raw", "corrected"):
            if not _want(c, variant):
                continue
            corr = variant == "corrected"
            fit = mle_reconstruct(recs, tset, corrected=corr)
            fit.fidelity_vs_target = fidelity(fit.rho_hat, target)
            if corr or rho_hat is None:
                rho_hat = fit.rho_hat
            if c.bootstrap_resamples and not c.infinite_statistics:
                _, fit.bootstrap_sigma = bootstrap_sigma(
                    recs, tset, target, c.bootstrap_resamples, c.seed, corrected=corr, fit=fit)
            entry = fit.to_json()
            entry["fidelity_vs_injected"] = fidelity(fit.rho_hat, injected_logical)
            tomo[variant] = entry
        lin = linear_inversion(recs, tset, corrected=c.variants != "raw")
        lam = float(np.linalg.eigvalsh(lin)[0])
        tomo["linear_inversion"] = {"min_eigenvalue": lam, "physical": bool(is_physical(lin))}
        results["tomography"] = tomo

    if Analysis.CHSH in c.analyses:
        pair = layout.chsh_pair
        extra = tuple(l for l in layout.labels if l not in pair)
        if rho_hat is not None:
            base, source = rho_hat, "optimal settings of the reconstructed state"
        else:
            base, source = target, "optimal settings of the ideal target"
        base2 = partial_trace(base, pair) if extra else base
        settings, s_state = optimize_chsh(base2)
        plan = chsh_plan(settings, pair, extra)
        recs = _measure(c, rho, plan, survival, Analysis.CHSH)
        records += recs
        chsh = _violation_json(recs, chsh_functional(len(extra)), {"classical": CHSH_CLASSICAL, "quantum": CHSH_QUANTUM}, c)
        chsh["pair"] = [l.name for l in pair]
        chsh["settings"] = settings.to_json()
        chsh["settings_source"] = source
        chsh["s_max_of_settings_state"] = s_state
        results["chsh"] = chsh

    if Analysis.MERMIN in c.analyses:
        recs = _measure(c, rho, mermin_plan(), survival, Analysis.MERMIN)
        records += recs
        results["mermin"] = _violation_json(
            recs, mermin_functional(), {"classical": MERMIN_CLASSICAL, "biseparable": MERMIN_BISEPARABLE}, c)

    if Analysis.HARDY in c.analyses:
        recs = _measure(c, rho, hardy_plan(), survival, Analysis.HARDY)
        records += recs
        results["hardy"] = _violation_json(recs, hardy_functional(), {"noncontextual": HARDY_NONCONTEXTUAL}, c)

    return Report(c, results, time.perf_counter() - t0, records=records, rho_hat=rho_hat, rho_physical=rho)


# --- calibration and the side-by-side comparison with published values -----------------------


def calibrate_source_noise(target_fidelity: float, kind: NoiseKind = NoiseKind.DEPOLARIZING) -> NoiseModel:
    """Noise strength on both photons' polarization giving the requested singlet fidelity."""
    kind = NoiseKind(kind)
    singlet = make_singlet().to_density()

    def f(p):
        return fidelity(apply_noise(singlet, NoiseModel(kind, p)), singlet) - target_fidelity

    # two-qubit dephasing is symmetric about p = 1/2 (Z (x) Z leaves the singlet invariant)
    top = 0.5 if kind is NoiseKind.DEPHASING else 1.0
    if f(0.0) < 0 or f(top) > 0:
        raise ConfigError(f"fidelity {target_fidelity} is not reachable with {kind.value} noise")
    p = brentq(f, 0.0, top, xtol=1e-15)
    return NoiseModel(kind, p)


def published_values() -> dict:
    with resources.files("qvortex").joinpath("data/published_values.json").open() as fh:
        return json.load(fh)


TABLE1_SCENARIOS = (Scenario.SOURCE, Scenario.HYENT, Scenario.INTRA)


def table1(base: ScenarioConfig) -> list[dict]:
    """Run SOURCE, HYENT and INTRA with the base config's noise, fiber and detection settings."""
    ref = published_values()["table1"]
    rows = []
    for scen in TABLE1_SCENARIOS:
        det = DetectionParams(**{**asdict(base.detection), "integration_s": MEASUREMENT_TIME_S[scen] / N_CHSH_SETTINGS})
        cfg = replace(base, scenario=scen, analyses=(Analysis.TOMO, Analysis.CHSH), detection=det)
        rep = run_scenario(cfg)
        tomo = rep.results["tomography"]
        fit = tomo.get("corrected") or tomo.get("raw")
        chsh = rep.results["chsh"]
        rows.append({
            "state": scen.value,
            "measurement_time_s": ref[scen.value]["measurement_time_s"],
            "fidelity": fit["fidelity"],
            "fidelity_sigma": fit["sigma"],
            "S_raw": chsh["raw"],
            "S_raw_sigma": chsh["sigma"]["raw"],
            "S": chsh["corrected"],
            "S_sigma": chsh["sigma"]["corrected"],
            "published": ref[scen.value],
            "converged": rep.converged,
        })
    return rows


def _pm(v, s, digits=3) -> str:
    if v is None:
        return "-"
    if s is None or s == 0:
        return f"{v:.{digits}f}"
    return f"{v:.{digits}f} +- {s:.{digits}f}"


def format_table1(rows: list[dict]) -> str:
    head = f"{'State':<8}{'Time':>7}  {'F (sim)':>16}  {'F (pub)':>14}  {'S_raw (sim)':>16}  {'S_raw (pub)':>13}  {'S (sim)':>16}  {'S (pub)':>13}"
    lines = [head, "-" * len(head)]
    for r in rows:
        p = r["published"]
        lines.append(
            f"{r['state']:<8}{r['measurement_time_s']:>6.0f}s  {_pm(r['fidelity'], r['fidelity_sigma']):>16}  "
            f"{_pm(*p['fidelity']):>14}  {_pm(r['S_raw'], r['S_raw_sigma']):>16}  {_pm(*p['S_raw'], 2):>13}  "
            f"{_pm(r['S'], r['S_sigma']):>16}  {_pm(*p['S'], 2):>13}"
        )
    lines.append("published columns are experimental reference values, shown for comparison only")
    return "\n".join(lines)
