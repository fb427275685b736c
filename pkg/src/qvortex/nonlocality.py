"""CHSH, Mermin and three-party Hardy statistics, from states or from counts."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import CountRecord, MeasurementSetting
from .hilbert import (
    OAM2,
    POL1,
    POL2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    LabelError,
    Observable,
    State,
    as_density,
    expectation,
    tensor,
)
from .optics import waveplates_for_state

SQRT2 = np.sqrt(2.0)
CHSH_CLASSICAL = 2.0
CHSH_QUANTUM = 2 * SQRT2
MERMIN_CLASSICAL = 2.0
MERMIN_BISEPARABLE = 2 * SQRT2
MERMIN_ALGEBRAIC = 4.0
HARDY_NONCONTEXTUAL = 0.0


def _check_dichotomic(*obs: Observable) -> None:
    for o in obs:
        if o.matrix.shape != (2, 2) or not o.is_dichotomic():
            raise ValueError("observable is not dichotomic (its square is not the identity)")


def _qobs(m: np.ndarray, label) -> Observable:
    return Observable([label], m)


def _joint(rho: DensityMatrix, mats: Sequence[np.ndarray]) -> float:
    """``<X1 (x) X2 (x) ...>`` with one 2x2 operator per subsystem of ``rho`` in its label order."""
    op = mats[0]
    for m in mats[1:]:
        op = np.kron(op, m)
    return float(np.real(np.trace(rho.matrix @ op)))


# --- CHSH -------------------------------------------------------------------------


@dataclass(frozen=True)
class ChshSettings:
    A0: np.ndarray
    A1: np.ndarray
    B0: np.ndarray
    B1: np.ndarray

    def observables(self, labels) -> tuple[Observable, ...]:
        la, lb = labels
        return (_qobs(self.A0, la), _qobs(self.A1, la), _qobs(self.B0, lb), _qobs(self.B1, lb))

    @classmethod
    def from_bloch(cls, a0, a1, b0, b1) -> "ChshSettings":
        return cls(*(bloch_matrix(v) for v in (a0, a1, b0, b1)))

    def to_json(self) -> dict:
        return {k: bloch_vector(getattr(self, k)).tolist() for k in ("A0", "A1", "B0", "B1")}


def bloch_matrix(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    return n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z


def bloch_vector(m: np.ndarray) -> np.ndarray:
    return np.real([np.trace(m @ s) / 2 for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


def _two_qubit(rho: State) -> DensityMatrix:
    rho = as_density(rho)
    if len(rho.labels) != 2 or rho.dims != (2, 2):
        raise LabelError(f"CHSH needs a two-qubit state, got dims {rho.dims}")
    return rho


def chsh_value(rho: State, s: ChshSettings) -> float:
    """``S = <A1 B1> - <A1 B0> + <A0 B1> + <A0 B0>``."""
    rho = _two_qubit(rho)
    _check_dichotomic(*s.observables(rho.labels))
    e = lambda a, b: _joint(rho, [a, b])
    return e(s.A1, s.B1) - e(s.A1, s.B0) + e(s.A0, s.B1) + e(s.A0, s.B0)


def correlation_matrix(rho: State) -> np.ndarray:
    """``T_ij = Tr(rho sigma_i (x) sigma_j)``."""
    rho = _two_qubit(rho)
    p = (SIGMA_X, SIGMA_Y, SIGMA_Z)
    return np.array([[_joint(rho, [a, b]) for b in p] for a in p])


def _unit(v: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v)
    return v / nv if nv > 1e-14 else fallback


def optimize_chsh(rho: State) -> tuple[ChshSettings, float]:
    """Settings reaching ``2 sqrt(m1 + m2)``, the two largest eigenvalues of ``T^T T``."""
    t = correlation_matrix(rho)
    w, v = np.linalg.eigh(t.T @ t)
    m1, m2 = max(w[2], 0.0), max(w[1], 0.0)
    c1, c2 = v[:, 2], v[:, 1]
    theta = np.arctan2(np.sqrt(m2), np.sqrt(m1)) if m1 > 0 else np.pi / 4
    b0 = np.cos(theta) * c1 + np.sin(theta) * c2
    b1 = np.cos(theta) * c1 - np.sin(theta) * c2
    a0 = _unit(t @ (b0 + b1), np.array([0.0, 0.0, 1.0]))
    a1 = _unit(t @ (b1 - b0), np.array([1.0, 0.0, 0.0]))
    return ChshSettings.from_bloch(a0, a1, b0, b1), 2 * np.sqrt(m1 + m2)


def _sphere(theta, phi):
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def grid_search_chsh(rho: State, coarse: int = 12, levels: int = 40) -> float:
    """Brute-force maximum of S over Bloch directions (coarse grid, then shrinking local grids).

    Alice's directions are optimised in closed form for given ``b0, b1``:
    ``S = |T(b0 + b1)| + |T(b1 - b0)|``.  Ties resolve to the first grid point.
    """
    t = correlation_matrix(rho)

    def score(x):
        b0 = _sphere(x[..., 0], x[..., 1])
        b1 = _sphere(x[..., 2], x[..., 3])
        return np.linalg.norm((b0 + b1) @ t.T, axis=-1) + np.linalg.norm((b1 - b0) @ t.T, axis=-1)

    th = (np.arange(coarse) + 0.5) * np.pi / coarse
    ph = np.arange(coarse) * 2 * np.pi / coarse
    grid = np.stack(np.meshgrid(th, ph, th, ph, indexing="ij"), axis=-1).reshape(-1, 4)
    vals = score(grid)
    best = grid[np.argmax(vals)]
    best_val = vals.max()
    step = np.array([np.pi / coarse, 2 * np.pi / coarse] * 2)
    offsets = np.stack(np.meshgrid(*[np.linspace(-1, 1, 5)] * 4, indexing="ij"), axis=-1).reshape(-1, 4)
    for _ in range(levels):
        cand = best + offsets * step
        v = score(cand)
        i = int(np.argmax(v))
        if v[i] > best_val:
            best, best_val = cand[i], v[i]
        step = step * 0.6
    return float(best_val)


# --- Mermin / Hardy -------------------------------------------------------------------


def _three_qubit(rho: State) -> DensityMatrix:
    rho = as_density(rho)
    if len(rho.labels) != 3 or rho.dims != (2, 2, 2):
        raise LabelError(f"this test needs a three-qubit state, got dims {rho.dims}")
    return rho


@dataclass(frozen=True)
class MerminSettings:
    """Defaults: ``A1=-Z, A2=X`` (photon 1), ``B1=-Z, B2=X`` (photon 2 pol), ``C1=Z, C2=X`` (OAM)."""

    A1: np.ndarray = field(default_factory=lambda: -SIGMA_Z)
    A2: np.ndarray = field(default_factory=lambda: SIGMA_X)
    B1: np.ndarray = field(default_factory=lambda: -SIGMA_Z)
    B2: np.ndarray = field(default_factory=lambda: SIGMA_X)
    C1: np.ndarray = field(default_factory=lambda: SIGMA_Z)
    C2: np.ndarray = field(default_factory=lambda: SIGMA_X)

    def terms(self) -> list[tuple[float, str, tuple[np.ndarray, ...]]]:
        return [
            (+1.0, "A1B2C2", (self.A1, self.B2, self.C2)),
            (+1.0, "A2B1C2", (self.A2, self.B1, self.C2)),
            (+1.0, "A2B2C1", (self.A2, self.B2, self.C1)),
            (-1.0, "A1B1C1", (self.A1, self.B1, self.C1)),
        ]

    def conjugated(self, u1, u2, u3) -> "MerminSettings":
        c = lambda u, m: u @ m @ u.conj().T
        return MerminSettings(c(u1, self.A1), c(u1, self.A2), c(u2, self.B1), c(u2, self.B2), c(u3, self.C1), c(u3, self.C2))


def mermin_value(rho: State, s: MerminSettings = MerminSettings()) -> float:
    """``M = |<A1B2C2> + <A2B1C2> + <A2B2C1> - <A1B1C1>|``."""
    rho = _three_qubit(rho)
    for m in (s.A1, s.A2, s.B1, s.B2, s.C1, s.C2):
        _check_dichotomic(_qobs(m, POL1))
    return abs(sum(c * _joint(rho, ops) for c, _, ops in s.terms()))


@dataclass(frozen=True)
class HardySettings:
    """``A`` and ``B`` per qubit; defaults ``A1=A2=-A3=Z``, ``B1=B2=B3=X``."""

    A: tuple[np.ndarray, np.ndarray, np.ndarray] = field(default_factory=lambda: (SIGMA_Z, SIGMA_Z, -SIGMA_Z))
    B: tuple[np.ndarray, np.ndarray, np.ndarray] = field(default_factory=lambda: (SIGMA_X, SIGMA_X, SIGMA_X))

    def conjugated(self, u1, u2, u3) -> "HardySettings":
        us = (u1, u2, u3)
        return HardySettings(
            tuple(u @ m @ u.conj().T for u, m in zip(us, self.A)),
            tuple(u @ m @ u.conj().T for u, m in zip(us, self.B)),
        )

    def terms(self) -> list[tuple[float, str, str]]:
        """(coefficient, basis word, outcome word); a bar is the ``-`` outcome of the unbarred observable."""
        return [
            (+1.0, "A1A2A3", "+++"),
            (-1.0, "A1B2B3", "+++"),
            (-1.0, "A1B2B3", "+--"),
            (-1.0, "B1A2B3", "+++"),
            (-1.0, "B1A2B3", "-+-"),
            (-1.0, "B1B2A3", "+++"),
            (-1.0, "B1B2A3", "--+"),
        ]

    def observable(self, letter: str, qubit: int) -> np.ndarray:
        return (self.A if letter == "A" else self.B)[qubit - 1]


def _plus_projector(m: np.ndarray, sign: str) -> np.ndarray:
    return (np.eye(2) + (1 if sign == "+" else -1) * m) / 2


def _word_ops(word: str) -> list[tuple[str, int]]:
    return [(word[i], int(word[i + 1])) for i in range(0, len(word), 2)]


def hardy_value(rho: State, s: HardySettings = HardySettings()) -> float:
    """Generalized three-qubit Hardy quantity; ``P(XYZ)`` is the joint probability of +1 outcomes."""
    rho = _three_qubit(rho)
    for m in s.A + s.B:
        _check_dichotomic(_qobs(m, POL1))
    total = 0.0
    for coef, word, outcome in s.terms():
        mats = [_plus_projector(s.observable(l, q), o) for (l, q), o in zip(_word_ops(word), outcome)]
        total += coef * _joint(rho, mats)
    return total


def classical_mermin_max() -> int:
    """Largest M over the 64 deterministic +-1 assignments."""
    best = 0
    for a1, a2, b1, b2, c1, c2 in itertools.product((1, -1), repeat=6):
        best = max(best, abs(a1 * b2 * c2 + a2 * b1 * c2 + a2 * b2 * c1 - a1 * b1 * c1))
    return best


def classical_hardy_max() -> int:
    """Largest H over the 64 deterministic noncontextual assignments of (A_i, B_i)."""
    best = None
    for vals in itertools.product((1, -1), repeat=6):
        a = dict(zip((1, 2, 3), vals[:3]))
        b = dict(zip((1, 2, 3), vals[3:]))
        value = {"A": a, "B": b}
        h = 0
        for coef, word, outcome in HardySettings().terms():
            hit = all(value[l][q] == (1 if o == "+" else -1) for (l, q), o in zip(_word_ops(word), outcome))
            h += int(coef) * int(hit)
        best = h if best is None else max(best, h)
    return best


# --- statistics from counts -------------------------------------------------------------


@dataclass(frozen=True)
class ViolationReport:
    value: float
    sigma: float | None
    bounds: dict[str, float]

    @property
    def sigmas_of_violation(self) -> dict[str, float | None]:
        if not self.sigma:
            return {k: None for k in self.bounds}
        return {k: violation_sigmas(self.value, self.sigma, b) for k, b in self.bounds.items()}


def violation_sigmas(value: float, sigma: float, bound: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return (value - bound) / sigma


@dataclass(frozen=True)
class Functional:
    """Linear combination of outcome frequencies: basis -> {outcome: weight}."""

    name: str
    weights: dict[str, dict[str, float]]
    absolute: bool = False


def _signs(outcome: str) -> list[int]:
    return [1 if c == "+" else -1 for c in outcome]


def _correlator_weights(n: int, coef: float = 1.0, ignore: Sequence[int] = ()) -> dict[str, float]:
    out = {}
    for o in itertools.product("+-", repeat=n):
        out["".join(o)] = coef * float(np.prod([s for i, s in enumerate(_signs(o)) if i not in ignore]))
    return out


def estimate_from_counts(records: Sequence[CountRecord], functional: Functional, corrected: bool = True) -> tuple[float, float]:
    """Value and Poissonian standard deviation of a frequency functional.

    Per basis the estimate is ``g = sum_o w_o c_o / C`` with variance
    ``sum_o (w_o - g)**2 c_o / C**2`` using raw counts as Poisson variances;
    bases are independent and combine in quadrature.
    """
    by_basis: dict[str, dict[str, CountRecord]] = {}
    for r in records:
        by_basis.setdefault(r.basis, {})[r.outcome] = r
    value, var = 0.0, 0.0
    for basis, w in functional.weights.items():
        if basis not in by_basis:
            raise ValueError(f"no counts for basis {basis!r} needed by {functional.name}")
        recs = by_basis[basis]
        c = np.array([recs[o].value(corrected) if o in recs else 0.0 for o in w])
        raw = np.array([recs[o].coincidences if o in recs else 0.0 for o in w])
        ws = np.array(list(w.values()))
        tot = c.sum()
        if tot <= 0:
            raise ValueError(f"zero total counts in basis {basis!r}")
        g = float(ws @ c / tot)
        value += g
        var += float(np.sum((ws - g) ** 2 * raw)) / tot**2
    if functional.absolute:
        value = abs(value)
    return value, float(np.sqrt(var))


def _setting_for(m: np.ndarray, sign: str, label):
    w, v = np.linalg.eigh(m)
    vec = v[:, 1] if sign == "+" else v[:, 0]
    return waveplates_for_state(vec, label)


def _plan(prefix: str, words: Sequence[tuple[str, Sequence[np.ndarray]]], labels, z_labels=()) -> list[MeasurementSetting]:
    """Measurement settings for product bases; ``z_labels`` are measured in Z and summed over."""
    out = []
    all_labels = list(labels) + list(z_labels)
    for word, mats in words:
        mats = list(mats) + [SIGMA_Z] * len(z_labels)
        for signs in itertools.product("+-", repeat=len(mats)):
            projs = tuple(_setting_for(m, s, lab) for m, s, lab in zip(mats, signs, all_labels))
            projs = tuple(sorted(projs, key=lambda p: p.subsystem))
            out.append(MeasurementSetting(f"{prefix}/{word}", "".join(signs), projs))
    return out


def chsh_plan(s: ChshSettings, labels, z_labels=()) -> list[MeasurementSetting]:
    words = [(f"A{i}B{j}" + "Z" * len(z_labels), (getattr(s, f"A{i}"), getattr(s, f"B{j}"))) for i in (0, 1) for j in (0, 1)]
    return _plan("chsh", words, labels, z_labels)


def chsh_functional(n_extra: int = 0) -> Functional:
    z = "Z" * n_extra
    coef = {"A1B1": 1.0, "A1B0": -1.0, "A0B1": 1.0, "A0B0": 1.0}
    return Functional(
        "chsh",
        {f"chsh/{k}{z}": _correlator_weights(2 + n_extra, c, ignore=range(2, 2 + n_extra)) for k, c in coef.items()},
    )


def mermin_plan(s: MerminSettings = MerminSettings(), labels=(POL1, POL2, OAM2)) -> list[MeasurementSetting]:
    return _plan("mermin", [(w, ops) for _, w, ops in s.terms()], labels)


def mermin_functional(s: MerminSettings = MerminSettings()) -> Functional:
    return Functional("mermin", {f"mermin/{w}": _correlator_weights(3, c) for c, w, _ in s.terms()}, absolute=True)


def hardy_plan(s: HardySettings = HardySettings(), labels=(POL1, POL2, OAM2)) -> list[MeasurementSetting]:
    words = []
    for _, word, _ in s.terms():
        if word not in [w for w, _ in words]:
            words.append((word, [s.observable(l, q) for l, q in _word_ops(word)]))
    return _plan("hardy", words, labels)


def hardy_functional(s: HardySettings = HardySettings()) -> Functional:
    weights: dict[str, dict[str, float]] = {}
    for coef, word, outcome in s.terms():
        w = weights.setdefault(f"hardy/{word}", {"".join(o): 0.0 for o in itertools.product("+-", repeat=3)})
        w[outcome] += coef
    return Functional("hardy", weights)
