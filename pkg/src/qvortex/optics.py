"""Optical elements as matrices: waveplates, PBS analysers, the vortex plate and SMF filtering.

Photon 2's spatial mode lives in a short register of OAM orders
``OAM_ORDERS = (0, +7, -7, +14, -14)``.  Order 0 is the Gaussian mode that a
single-mode fiber accepts; orders +-14 are where the second vortex plate sends
the spin-orbit-aligned components ``|L,+7>`` and ``|R,-7>``.

Vortex plate rule (2q = 7)::

    |L,k> -> |R,k+7>      |R,k> -> |L,k-7>

ENCODE is this map restricted to k = 0, DECODE the same plate restricted to
k = +-7.  Under the package's circular convention ``ENCODE|H,0> = |r>`` exactly
and ``ENCODE|V,0> = -i|a>``; the logical VV qubit therefore uses
``|1_vv> = -i|a>`` so that DECODE maps ``|r>, -i|a>`` onto ``|H>, |V>``.

A quarter-wave plate at 45 degrees maps ``|H>`` onto ``|R>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .hilbert import (
    KET,
    OAM2,
    POL1,
    POL2,
    DensityMatrix,
    LabelError,
    Observable,
    State,
    StateVector,
    SubsystemLabel,
    _as_labels,
    as_density,
    embed,
    partial_trace,
    tensor,
)

OAM_ORDERS = (0, 7, -7, 14, -14)
N_ORDERS = len(OAM_ORDERS)
DOMAIN_TOL = 1e-9


class DomainError(ValueError):
    """A state has support outside the legal domain of an optical element."""


def oam_index(k: int) -> int:
    try:
        return OAM_ORDERS.index(k)
    except ValueError:
        raise DomainError(f"OAM order {k:+d} is not represented (orders {OAM_ORDERS})") from None


def oam_ket(k: int) -> np.ndarray:
    v = np.zeros(N_ORDERS, dtype=complex)
    v[oam_index(k)] = 1
    return v


# --- waveplates and analysers ------------------------------------------------


class PlateKind(enum.Enum):
    HALF = "HALF"
    QUARTER = "QUARTER"


class Port(enum.Enum):
    TRANSMIT = "TRANSMIT"
    REFLECT = "REFLECT"


def _norm_angle(theta: float) -> float:
    t = float(np.mod(theta, np.pi))
    return 0.0 if np.isclose(t, np.pi, atol=1e-15, rtol=0) else t


def _rot(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class WaveplateSetting:
    kind: PlateKind
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "kind", PlateKind(self.kind))
        object.__setattr__(self, "theta", _norm_angle(self.theta))


def waveplate_unitary(s: WaveplateSetting) -> np.ndarray:
    # retarder with fast axis at theta, global phase dropped
    retard = np.diag([1, -1]) if s.kind is PlateKind.HALF else np.diag([1, 1j])
    return _rot(s.theta) @ retard @ _rot(-s.theta)


def hwp(theta: float) -> np.ndarray:
    return waveplate_unitary(WaveplateSetting(PlateKind.HALF, theta))


def qwp(theta: float) -> np.ndarray:
    return waveplate_unitary(WaveplateSetting(PlateKind.QUARTER, theta))


@dataclass(frozen=True)
class ProjectorSetting:
    """QWP -> HWP -> PBS analyser on one subsystem."""

    subsystem: SubsystemLabel
    qwp: float
    hwp: float
    port: Port = Port.TRANSMIT

    def __post_init__(self):
        sub = self.subsystem
        object.__setattr__(self, "subsystem", SubsystemLabel[sub] if isinstance(sub, str) else SubsystemLabel(sub))
        object.__setattr__(self, "qwp", _norm_angle(self.qwp))
        object.__setattr__(self, "hwp", _norm_angle(self.hwp))
        object.__setattr__(self, "port", Port(self.port))

    def other_port(self) -> "ProjectorSetting":
        port = Port.REFLECT if self.port is Port.TRANSMIT else Port.TRANSMIT
        return ProjectorSetting(self.subsystem, self.qwp, self.hwp, port)


def analyzer_kraus(s: ProjectorSetting) -> np.ndarray:
    """Jones matrix of the analyser, including the PBS port (output is |H> or |V>)."""
    port = np.diag([1, 0]) if s.port is Port.TRANSMIT else np.diag([0, 1])
    return port @ hwp(s.hwp) @ qwp(s.qwp)


def projector(s: ProjectorSetting) -> Observable:
    k = analyzer_kraus(s)
    return Observable([s.subsystem], k.conj().T @ k)


# (qwp, hwp, port) for the six canonical projectors; all on the transmitted port
PRESET_TABLE: dict[str, tuple[float, float, str]] = {
    "H": (0.0, 0.0, "TRANSMIT"),
    "V": (0.0, np.pi / 4, "TRANSMIT"),
    "D": (np.pi / 4, np.pi / 8, "TRANSMIT"),
    "A": (np.pi / 4, 7 * np.pi / 8, "TRANSMIT"),
    "R": (np.pi / 4, np.pi / 4, "TRANSMIT"),
    "L": (np.pi / 4, 0.0, "TRANSMIT"),
}

# Pauli basis + outcome sign -> preset; Y's +1 eigenvector is |L> in this convention
PAULI_PRESET = {
    ("Z", "+"): "H", ("Z", "-"): "V",
    ("X", "+"): "D", ("X", "-"): "A",
    ("Y", "+"): "L", ("Y", "-"): "R",
}


def preset(name: str, subsystem) -> ProjectorSetting:
    q, h, port = PRESET_TABLE[name]
    return ProjectorSetting(subsystem, q, h, port)


def waveplates_for_state(vec, subsystem) -> ProjectorSetting:
    """Analyser settings whose transmitted port projects onto the polarization ``vec``.

    The QWP is aligned with the ellipse's major axis, turning the state linear;
    the HWP then rotates that linear state onto H.
    """
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    a, b = v
    s1 = abs(a) ** 2 - abs(b) ** 2
    s2 = 2 * (np.conj(a) * b).real
    q = 0.5 * np.arctan2(s2, s1)
    w = qwp(q) @ v
    # w is linear up to a global phase
    phase = w[0] if abs(w[0]) > abs(w[1]) else w[1]
    w = w * np.conj(phase) / abs(phase)
    beta = np.arctan2(w[1].real, w[0].real)
    return ProjectorSetting(subsystem, q, beta / 2, Port.TRANSMIT)


# --- vortex plate ------------------------------------------------------------


class Direction(enum.Enum):
    ENCODE = "ENCODE"
    DECODE = "DECODE"


@dataclass(frozen=True)
class VortexPlateSpec:
    direction: Direction = Direction.ENCODE
    two_q: int = 7

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.two_q != 7:
            raise ValueError(f"only vortex plates with 2q = 7 are modelled, got {self.two_q}")


def _op(out_pol: str, in_pol: str, k_out: int, k_in: int) -> np.ndarray:
    return np.kron(np.outer(KET[out_pol], KET[in_pol].conj()), np.outer(oam_ket(k_out), oam_ket(k_in)))


def _legal_orders(direction: Direction) -> tuple[int, ...]:
    return (0,) if direction is Direction.ENCODE else (7, -7)


def vortex_plate_matrix(direction: Direction) -> np.ndarray:
    """Plate action on POL (x) OAM register, zero outside the direction's legal domain."""
    m = np.zeros((2 * N_ORDERS, 2 * N_ORDERS), dtype=complex)
    for k in _legal_orders(Direction(direction)):
        m += _op("R", "L", k + 7, k) + _op("L", "R", k - 7, k)
    return m


def _oam_weights(state: State) -> dict[int, float]:
    rho = as_density(state)
    if OAM2 not in rho.labels or rho.dims[rho.labels.index(OAM2)] != N_ORDERS:
        raise LabelError("state has no OAM order register")
    p = np.real(np.diag(partial_trace(rho, [OAM2]).matrix))
    return {k: float(p[i]) for i, k in enumerate(OAM_ORDERS)}


def check_oam_support(state: State, orders, what: str) -> None:
    for k, w in _oam_weights(state).items():
        if k not in orders and np.sqrt(max(w, 0.0)) > DOMAIN_TOL:
            raise DomainError(
                f"{what} requires OAM support in {tuple(f'{o:+d}' for o in orders)}; "
                f"component at order {k:+d} has weight {w:.3g}"
            )


def vortex_plate(state: State, spec: VortexPlateSpec = VortexPlateSpec(), pol=POL2) -> State:
    spec = VortexPlateSpec(spec) if isinstance(spec, (str, Direction)) else spec
    check_oam_support(state, _legal_orders(spec.direction), spec.direction.value)
    m = vortex_plate_matrix(spec.direction)
    full = embed(m, [pol, OAM2], state.labels, state.dims)
    if isinstance(state, StateVector):
        return StateVector(state.labels, full @ state.amplitudes, state.dims)
    return DensityMatrix(state.labels, full @ state.matrix @ full.conj().T, state.dims)


def encode(state: State, pol=POL2) -> State:
    return vortex_plate(state, VortexPlateSpec(Direction.ENCODE), pol)


def decode(state: State, pol=POL2) -> State:
    return vortex_plate(state, VortexPlateSpec(Direction.DECODE), pol)


def gaussian_mode() -> StateVector:
    return StateVector([OAM2], oam_ket(0), [N_ORDERS])


def attach_gaussian_mode(state: State) -> State:
    """Tensor a photon-2 state with the OAM order-0 mode."""
    return tensor(state, gaussian_mode())


def smf_filter(state: State) -> tuple[DensityMatrix | None, float]:
    """Keep only OAM order 0 and drop the OAM register.

    Returns the renormalized state on the remaining subsystems and the
    pre-normalization weight.  Zero weight gives ``(None, 0.0)``.
    """
    rho = as_density(state)
    if OAM2 not in rho.labels:
        raise LabelError("smf_filter needs a state with an OAM register")
    i = rho.labels.index(OAM2)
    rest = [l for l in rho.labels if l != OAM2]
    rest_dims = [d for j, d in enumerate(rho.dims) if j != i]
    sel = _select_rows(rho, i)
    m = sel @ rho.matrix @ sel.conj().T
    p = float(np.real(np.trace(m)))
    if p < 1e-15:
        return None, 0.0
    return DensityMatrix.from_matrix(rest, m / p, rest_dims), p


def _select_rows(rho: DensityMatrix, oam_pos: int) -> np.ndarray:
    """Matrix mapping the full space onto the subspace with OAM order 0 (register removed)."""
    mats = []
    for j, d in enumerate(rho.dims):
        mats.append(oam_ket(0)[None, :] if j == oam_pos else np.eye(d))
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


# --- named states ---------------------------------------------------------------


def make_singlet() -> StateVector:
    hv = np.kron(KET["H"], KET["V"])
    vh = np.kron(KET["V"], KET["H"])
    return StateVector([POL1, POL2], (hv - vh) / np.sqrt(2))


def _vv_amplitudes(sign: int) -> np.ndarray:
    r7 = np.kron(KET["R"], oam_ket(7))
    l7 = np.kron(KET["L"], oam_ket(-7))
    return (r7 + sign * l7) / np.sqrt(2)


def make_vv(sign: int = +1) -> StateVector:
    """``|r> = (|R,+7> + |L,-7>)/sqrt2`` for ``sign=+1``, ``|a>`` for ``sign=-1``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 (|r>) or -1 (|a>)")
    return StateVector([POL2, OAM2], _vv_amplitudes(sign), [2, N_ORDERS])


def make_hybrid() -> StateVector:
    """Singlet with photon 2 sent through the encoding vortex plate."""
    return encode(attach_gaussian_mode(make_singlet()))


def make_heralded_vv() -> StateVector:
    """Horizontally polarized photon 2 after the vortex plate, i.e. ``|r>``."""
    return encode(attach_gaussian_mode(StateVector([POL2], KET["H"])))


# --- logical encodings ---------------------------------------------------------


def oam_logical_isometry() -> np.ndarray:
    """Columns ``|0> = (|+7>+|-7>)/sqrt2`` and ``|1> = i(|-7>-|+7>)/sqrt2``."""
    zero = (oam_ket(7) + oam_ket(-7)) / np.sqrt(2)
    one = 1j * (oam_ket(-7) - oam_ket(7)) / np.sqrt(2)
    return np.stack([zero, one], axis=1)


def vv_logical_isometry() -> np.ndarray:
    """Columns ``|r>`` and ``-i|a>`` on POL2 (x) OAM register."""
    return np.stack([_vv_amplitudes(+1), -1j * _vv_amplitudes(-1)], axis=1)


class Readout(enum.Enum):
    """How photon 2 is analysed."""

    POLARIZATION = "POLARIZATION"  # PBS analyser only, no OAM register
    VECTOR_VORTEX = "VECTOR_VORTEX"  # VP -> analyser -> SMF; logical VV qubit labelled POL2
    POL_THEN_OAM = "POL_THEN_OAM"  # analyser, then VP -> analyser -> SMF


def _photon2_iso(readout: Readout) -> tuple[np.ndarray, list, list]:
    """Isometry logical -> physical on photon 2, with physical labels and dims."""
    if readout is Readout.VECTOR_VORTEX:
        return vv_logical_isometry(), [POL2, OAM2], [2, N_ORDERS]
    if readout is Readout.POL_THEN_OAM:
        return oam_logical_isometry(), [OAM2], [N_ORDERS]
    raise ValueError(f"{readout} has no OAM encoding")


def logical_state(rho: State, readout: Readout) -> tuple[DensityMatrix, float]:
    """Project a physical state onto the logical qubits the readout measures.

    Returns the renormalized logical state and the weight inside the logical
    subspace (1 when nothing leaked).
    """
    rho = as_density(rho)
    if readout is Readout.POLARIZATION:
        return rho, 1.0
    iso, phys_labels, _ = _photon2_iso(readout)
    others = [l for l in rho.labels if l not in phys_labels]
    full = np.ones((1, 1))
    for lab, d in zip(rho.labels, rho.dims):
        if lab in others:
            full = np.kron(full, np.eye(d))
        elif lab == phys_labels[0]:
            full = np.kron(full, iso)
    m = full.conj().T @ rho.matrix @ full
    w = float(np.real(np.trace(m)))
    if readout is Readout.VECTOR_VORTEX:
        labels = others + [POL2]
    else:
        labels = others + [OAM2]
    return DensityMatrix.from_matrix(labels, m / w), w


def physical_state(rho_logical: State, readout: Readout) -> DensityMatrix:
    """Inverse of :func:`logical_state` for states inside the logical subspace."""
    rho = as_density(rho_logical)
    if readout is Readout.POLARIZATION:
        return rho
    iso, phys_labels, phys_dims = _photon2_iso(readout)
    lab2 = POL2 if readout is Readout.VECTOR_VORTEX else OAM2
    full = np.ones((1, 1))
    labels, dims = [], []
    for lab, d in zip(rho.labels, rho.dims):
        if lab == lab2:
            full = np.kron(full, iso)
            labels += phys_labels
            dims += phys_dims
        else:
            full = np.kron(full, np.eye(d))
            labels.append(lab)
            dims.append(d)
    return DensityMatrix.from_matrix(labels, full @ rho.matrix @ full.conj().T, dims)


# --- measurement chains ----------------------------------------------------------


def _photon2_kraus(settings: dict, readout: Readout) -> np.ndarray:
    eye2 = np.eye(2, dtype=complex)
    if readout is Readout.POLARIZATION:
        return analyzer_kraus(settings[POL2]) if POL2 in settings else eye2
    dec = vortex_plate_matrix(Direction.DECODE)
    smf = np.kron(eye2, oam_ket(0)[None, :])
    eye_o = np.eye(N_ORDERS)
    if readout is Readout.VECTOR_VORTEX:
        a = analyzer_kraus(settings[POL2]) if POL2 in settings else eye2
        return smf @ np.kron(a, eye_o) @ dec
    pre = np.kron(analyzer_kraus(settings[POL2]), eye_o) if POL2 in settings else np.eye(2 * N_ORDERS)
    post = analyzer_kraus(settings[OAM2]) if OAM2 in settings else eye2
    return smf @ np.kron(post, eye_o) @ dec @ pre


def analysis_povm(projectors, readout: Readout, labels, dims) -> tuple[np.ndarray, np.ndarray]:
    """POVM elements of arm 1 and arm 2 for one setting, on the full physical space.

    ``projectors`` are :class:`ProjectorSetting` objects labelled by *logical*
    subsystem.  Arm 1 without a POL1 setting (or without POL1 at all) is a
    bare herald detector.
    """
    labels = tuple(labels)
    by_label = {p.subsystem: p for p in projectors}
    if len(by_label) != len(projectors):
        raise LabelError("two analyser settings for the same subsystem")
    e1 = np.eye(int(np.prod(dims)), dtype=complex)
    if POL1 in by_label:
        if POL1 not in labels:
            raise LabelError("POL1 setting given but the state has no POL1")
        e1 = embed(projector(by_label[POL1]).matrix, [POL1], labels, dims)
    k2 = _photon2_kraus(by_label, readout)
    photon2 = [l for l in labels if l in (POL2, OAM2)]
    if readout is Readout.POLARIZATION and OAM2 in photon2:
        raise LabelError("polarization readout on a state that carries an OAM register")
    e2 = embed(k2.conj().T @ k2, photon2, labels, dims)
    return e1, e2
