"""Air-core fiber channel, generic noise channels and coincidence counting."""

from __future__ import annotations

import csv
import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .hilbert import (
    OAM2,
    SIGMA_Z,
    DensityMatrix,
    State,
    SubsystemLabel,
    _as_labels,
    as_density,
    embed,
    partial_trace,
    tensor,
)
from .optics import N_ORDERS, ProjectorSetting, Readout, analysis_povm, check_oam_support, oam_index


def worker_count() -> int:
    """Parallelism cap from ``QVORTEX_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("QVORTEX_THREADS", "1")))
    except ValueError:
        return 1


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, stream)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


# --- fiber -------------------------------------------------------------------------


@dataclass(frozen=True)
class FiberParams:
    length_m: float = 5.0
    loss_db_per_km: float = 1.0
    coupling_eta: float = 0.5
    mode_mix_epsilon: float = 0.0
    intermodal_phase: float = 0.0

    def __post_init__(self):
        if not 0 <= self.coupling_eta <= 1:
            raise ValueError(f"coupling_eta must lie in [0, 1], got {self.coupling_eta}")
        if not 0 <= self.mode_mix_epsilon <= 0.5:
            raise ValueError(f"mode_mix_epsilon must lie in [0, 1/2], got {self.mode_mix_epsilon}")
        if self.loss_db_per_km < 0 or self.length_m < 0:
            raise ValueError("fiber length and loss must be nonnegative")

    def survival(self) -> float:
        return self.coupling_eta * 10 ** (-self.loss_db_per_km * (self.length_m / 1000) / 10)


def _oam_swap() -> np.ndarray:
    perm = np.eye(N_ORDERS, dtype=complex)
    for a, b in ((7, -7), (14, -14)):
        i, j = oam_index(a), oam_index(b)
        perm[[i, j]] = perm[[j, i]]
    return perm


def oam_phase(phi: float) -> np.ndarray:
    """Relative phase ``exp(i phi)`` on ``|+7>`` with respect to ``|-7>``."""
    d = np.ones(N_ORDERS, dtype=complex)
    d[oam_index(7)] = np.exp(1j * phi)
    return np.diag(d)


def fiber_transmit(rho: State, p: FiberParams = FiberParams()) -> tuple[DensityMatrix, float]:
    """Send the OAM register through the fiber.

    Order of operations: intermodal phase, symmetric +7/-7 crosstalk with
    probability ``mode_mix_epsilon``, then a state-independent survival factor
    (coupling times propagation loss) reported separately.
    """
    rho = as_density(rho)
    check_oam_support(rho, (7, -7), "fiber_transmit")
    ph = embed(oam_phase(p.intermodal_phase), [OAM2], rho.labels, rho.dims)
    m = ph @ rho.matrix @ ph.conj().T
    if p.mode_mix_epsilon:
        sw = embed(_oam_swap(), [OAM2], rho.labels, rho.dims)
        m = (1 - p.mode_mix_epsilon) * m + p.mode_mix_epsilon * (sw @ m @ sw.conj().T)
    return DensityMatrix.from_matrix(rho.labels, m, rho.dims), p.survival()


# --- generic noise -------------------------------------------------------------------


class NoiseKind(enum.Enum):
    NONE = "NONE"
    DEPOLARIZING = "DEPOLARIZING"
    DEPHASING = "DEPHASING"


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.NONE
    strength: float = 0.0
    target: tuple[SubsystemLabel, ...] = (SubsystemLabel.POL1, SubsystemLabel.POL2)

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        object.__setattr__(self, "target", _as_labels(self.target))
        if not 0 <= self.strength <= 1:
            raise ValueError(f"noise strength must lie in [0, 1], got {self.strength}")


def apply_noise(rho: State, m: NoiseModel) -> DensityMatrix:
    """Depolarizing: ``(1-p) rho + p I/d (x) Tr_T rho``; dephasing: Kraus ``{sqrt(1-p) I, sqrt(p) Z}`` per target qubit.

    Targets absent from ``rho`` are ignored.
    """
    rho = as_density(rho)
    targets = [l for l in m.target if l in rho.labels]
    p = m.strength
    if m.kind is NoiseKind.NONE or p == 0 or not targets:
        return rho
    if m.kind is NoiseKind.DEPOLARIZING:
        t_dims = [rho.dims[rho.labels.index(l)] for l in targets]
        mixed = DensityMatrix.maximally_mixed(targets, t_dims)
        rest = [l for l in rho.labels if l not in targets]
        noisy = mixed if not rest else tensor(mixed, partial_trace(rho, rest))
        return DensityMatrix.from_matrix(rho.labels, (1 - p) * rho.matrix + p * noisy.matrix, rho.dims)
    out = rho.matrix
    for lab in targets:
        if rho.dims[rho.labels.index(lab)] != 2:
            raise ValueError(f"dephasing target {lab.name} is not a qubit")
        z = embed(SIGMA_Z, [lab], rho.labels, rho.dims)
        out = (1 - p) * out + p * (z @ out @ z)
    return DensityMatrix.from_matrix(rho.labels, out, rho.dims)


# --- counting --------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionParams:
    """Illustrative detector and source figures; only integration times are anchored to experiment."""

    pair_rate_hz: float = 1e5
    integration_s: float = 10.0
    coincidence_window_s: float = 1e-9
    detector_efficiency: float = 0.6
    dark_rate_hz: float = 100.0

    def __post_init__(self):
        for name in ("pair_rate_hz", "integration_s", "coincidence_window_s", "detector_efficiency", "dark_rate_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.detector_efficiency > 1:
            raise ValueError("detector_efficiency must be at most 1")


@dataclass(frozen=True)
class MeasurementSetting:
    """One outcome of one measurement basis, realised by analyser settings on logical subsystems."""

    basis: str
    outcome: str
    projectors: tuple[ProjectorSetting, ...]

    @property
    def setting_id(self) -> str:
        return f"{self.basis}:{self.outcome}"


@dataclass(frozen=True)
class CountRecord:
    basis: str
    outcome: str
    coincidences: float
    accidental_estimate: float
    singles_1: float
    singles_2: float
    integration_s: float
    seed: int
    stream: int
    corrected: float | None = None

    @property
    def setting_id(self) -> str:
        return f"{self.basis}:{self.outcome}"

    def value(self, corrected: bool = True) -> float:
        if corrected and self.corrected is not None:
            return self.corrected
        return self.coincidences


def _expected_rates(rho: np.ndarray, e1: np.ndarray, e2: np.ndarray, d: DetectionParams, survival: float):
    born = float(np.real(np.trace(rho @ e1 @ e2)))
    m1 = float(np.real(np.trace(rho @ e1)))
    m2 = float(np.real(np.trace(rho @ e2)))
    eff = d.detector_efficiency
    signal = d.pair_rate_hz * eff * eff * survival * max(born, 0.0)
    p1 = d.pair_rate_hz * eff * max(m1, 0.0)
    p2 = d.pair_rate_hz * eff * survival * max(m2, 0.0)
    return signal, p1, p2


def _accidental_rate(p1: float, p2: float, dark: float, window: float) -> float:
    # multi-pair emission is not modelled, so every accidental involves a dark count
    return ((p1 + dark) * (p2 + dark) - p1 * p2) * window


def accidental_estimate(s1: float, s2: float, d: DetectionParams, t: float) -> float:
    """Accidentals expected from measured singles and the calibrated dark rate."""
    if t <= 0:
        return 0.0
    r1, r2 = s1 / t, s2 / t
    p1, p2 = max(r1 - d.dark_rate_hz, 0.0), max(r2 - d.dark_rate_hz, 0.0)
    return (r1 * r2 - p1 * p2) * d.coincidence_window_s * t


def sample_counts(
    rho: State,
    settings: Sequence[MeasurementSetting],
    d: DetectionParams,
    seed: int,
    *,
    survival: float = 1.0,
    readout: Readout = Readout.POLARIZATION,
    stream_base: int = 0,
    infinite_statistics: bool = False,
) -> list[CountRecord]:
    """Poissonian coincidence and singles counts for each setting.

    Coincidences have mean ``(signal + accidental) * T`` with the signal rate
    ``pair_rate * eff**2 * survival * Tr(rho E1 E2)``.  Accidentals pair a dark
    count with a click on the other arm (or a second dark count) inside the
    coincidence window.  Setting ``i`` draws from stream ``stream_base + i``.
    In infinite-statistics mode the records hold the exact expected signal
    counts and zero accidentals.
    """
    if not settings:
        raise ValueError("sample_counts needs at least one setting")
    rho = as_density(rho)
    dark = d.dark_rate_hz

    def one(i: int) -> CountRecord:
        s = settings[i]
        e1, e2 = analysis_povm(s.projectors, readout, rho.labels, rho.dims)
        signal, p1, p2 = _expected_rates(rho.matrix, e1, e2, d, survival)
        t = d.integration_s
        stream = stream_base + i
        if infinite_statistics:
            return CountRecord(s.basis, s.outcome, signal * t, 0.0, (p1 + dark) * t, (p2 + dark) * t, t, seed, stream)
        rng = stream_rng(seed, stream)
        acc_rate = _accidental_rate(p1, p2, dark, d.coincidence_window_s)
        c = int(rng.poisson((signal + acc_rate) * t))
        s1 = int(rng.poisson((p1 + dark) * t))
        s2 = int(rng.poisson((p2 + dark) * t))
        return CountRecord(s.basis, s.outcome, c, accidental_estimate(s1, s2, d, t), s1, s2, t, seed, stream)

    workers = min(worker_count(), len(settings))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, range(len(settings))))
    return [one(i) for i in range(len(settings))]


def subtract_accidentals(records: Iterable[CountRecord]) -> list[CountRecord]:
    """Corrected counts ``max(0, c - accidentals)``; raw counts are kept."""
    return [replace(r, corrected=max(0.0, r.coincidences - r.accidental_estimate)) for r in records]


CSV_HEADER = ["setting_id", "c_raw", "c_corrected", "accidentals", "singles_1", "singles_2", "integration_s", "seed", "stream"]


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) or float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


def write_counts_csv(records: Iterable[CountRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([
                r.setting_id, _num(r.coincidences), _num(r.corrected), repr(float(r.accidental_estimate)),
                _num(r.singles_1), _num(r.singles_2), repr(float(r.integration_s)), r.seed, r.stream,
            ])


def read_counts_csv(path) -> list[CountRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"counts CSV is missing columns {sorted(missing)}")
        for row in reader:
            basis, _, outcome = row["setting_id"].rpartition(":")
            if not basis:
                raise ValueError(f"malformed setting_id {row['setting_id']!r}")
            out.append(CountRecord(
                basis=basis,
                outcome=outcome,
                coincidences=float(row["c_raw"]),
                accidental_estimate=float(row["accidentals"]),
                singles_1=float(row["singles_1"]),
                singles_2=float(row["singles_2"]),
                integration_s=float(row["integration_s"]),
                seed=int(row["seed"]),
                stream=int(row["stream"]),
                corrected=float(row["c_corrected"]) if row["c_corrected"] != "" else None,
            ))
    return out
