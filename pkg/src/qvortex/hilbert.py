"""Small dense Hilbert spaces built from labeled subsystems.

Conventions used everywhere in the package:

* ``|H> = (1, 0)``, ``|V> = (0, 1)``
* ``|R> = (|H> - i|V>)/sqrt(2)``, ``|L> = (|H> + i|V>)/sqrt(2)``
* canonical tensor order ``POL1 < POL2 < OAM2``

Polarization subsystems are always qubits.  ``OAM2`` is either a logical
qubit (dimension 2) or, inside the optics layer, a short register of OAM
orders (see :data:`qvortex.optics.OAM_ORDERS`).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
NORM_TOL = 1e-12


class LabelError(ValueError):
    """Subsystem labels are missing, duplicated or inconsistent."""


class PhysicalityError(ValueError):
    """A matrix fails the Hermitian / unit-trace / PSD checks."""


class SubsystemLabel(enum.IntEnum):
    POL1 = 0
    POL2 = 1
    OAM2 = 2


POL1 = SubsystemLabel.POL1
POL2 = SubsystemLabel.POL2
OAM2 = SubsystemLabel.OAM2


def _as_labels(labels: Iterable) -> tuple[SubsystemLabel, ...]:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            lab = SubsystemLabel[lab]
        out.append(SubsystemLabel(lab))
    if len(set(out)) != len(out):
        raise LabelError(f"duplicate subsystem labels: {[l.name for l in out]}")
    return tuple(out)


def _as_dims(dims, n: int) -> tuple[int, ...]:
    if dims is None:
        return (2,) * n
    dims = tuple(int(d) for d in dims)
    if len(dims) != n:
        raise LabelError(f"{len(dims)} dims given for {n} labels")
    return dims


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _permute_axes(arr: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors of a vector or square matrix; ``perm[i]`` is the old index of new factor i."""
    n = len(dims)
    if list(perm) == list(range(n)):
        return arr
    new_dims = [dims[p] for p in perm]
    d = int(np.prod(dims))
    if arr.ndim == 1:
        return arr.reshape(dims).transpose(perm).reshape(d)
    t = arr.reshape(list(dims) * 2)
    t = t.transpose(list(perm) + [p + n for p in perm])
    return t.reshape(int(np.prod(new_dims)), int(np.prod(new_dims)))


def _canonical(labels, dims, arr):
    perm = sorted(range(len(labels)), key=lambda i: labels[i])
    return (
        tuple(labels[i] for i in perm),
        tuple(dims[i] for i in perm),
        _permute_axes(arr, dims, perm),
    )


@dataclass(frozen=True)
class StateVector:
    labels: tuple[SubsystemLabel, ...]
    amplitudes: np.ndarray
    dims: tuple[int, ...] = None

    def __post_init__(self):
        labels = _as_labels(self.labels)
        dims = _as_dims(self.dims, len(labels))
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != int(np.prod(dims)):
            raise LabelError(f"amplitude length {amps.size} does not match dims {dims}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > NORM_TOL:
            raise PhysicalityError(f"state norm is {norm!r}, expected 1")
        labels, dims, amps = _canonical(labels, dims, amps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def from_unnormalized(cls, labels, amplitudes, dims=None) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        return cls(labels, amps / np.linalg.norm(amps), dims)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.labels, np.outer(a, a.conj()), self.dims)

    def overlap(self, other: "StateVector") -> complex:
        _check_same_space(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    labels: tuple[SubsystemLabel, ...]
    matrix: np.ndarray
    dims: tuple[int, ...] = None

    def __post_init__(self):
        labels = _as_labels(self.labels)
        dims = _as_dims(self.dims, len(labels))
        m = np.asarray(self.matrix, dtype=complex)
        d = int(np.prod(dims))
        if m.shape != (d, d):
            raise LabelError(f"matrix shape {m.shape} does not match dims {dims}")
        check_physical(m)
        labels, dims, m = _canonical(labels, dims, m)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def from_matrix(cls, labels, matrix, dims=None) -> "DensityMatrix":
        """Symmetrize and renormalize ``matrix`` before validating it."""
        m = np.asarray(matrix, dtype=complex)
        m = (m + m.conj().T) / 2
        return cls(labels, m / np.trace(m).real, dims)

    @classmethod
    def maximally_mixed(cls, labels, dims=None) -> "DensityMatrix":
        dims = _as_dims(dims, len(tuple(labels)))
        d = int(np.prod(dims))
        return cls(labels, np.eye(d) / d, dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def to_json(self) -> dict:
        out = {
            "labels": [lab.name for lab in self.labels],
            "re": self.matrix.real.tolist(),
            "im": self.matrix.imag.tolist(),
        }
        if any(d != 2 for d in self.dims):
            out["dims"] = list(self.dims)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DensityMatrix":
        m = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
        return cls(obj["labels"], m, obj.get("dims"))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class Observable:
    labels: tuple[SubsystemLabel, ...]
    matrix: np.ndarray
    dims: tuple[int, ...] = None

    def __post_init__(self):
        labels = _as_labels(self.labels)
        dims = _as_dims(self.dims, len(labels))
        m = np.asarray(self.matrix, dtype=complex)
        d = int(np.prod(dims))
        if m.shape != (d, d):
            raise LabelError(f"matrix shape {m.shape} does not match dims {dims}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise PhysicalityError("observable is not Hermitian")
        labels, dims, m = _canonical(labels, dims, m)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "matrix", _frozen(m))

    def is_dichotomic(self, tol: float = 1e-10) -> bool:
        m = self.matrix
        return bool(np.max(np.abs(m @ m - np.eye(m.shape[0]))) <= tol)

    def __add__(self, other: "Observable") -> "Observable":
        _check_same_space(self, other)
        return Observable(self.labels, self.matrix + other.matrix, self.dims)

    def __mul__(self, c: float) -> "Observable":
        return Observable(self.labels, self.matrix * c, self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "Observable":
        return self * -1.0


State = Union[StateVector, DensityMatrix]


def check_physical(m: np.ndarray) -> None:
    """Raise :class:`PhysicalityError` unless ``m`` is Hermitian, unit trace and PSD."""
    herm = np.max(np.abs(m - m.conj().T), initial=0.0)
    if herm > HERMITIAN_TOL:
        raise PhysicalityError(f"matrix is not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(m)
    if abs(tr - 1) > TRACE_TOL:
        raise PhysicalityError(f"trace is {tr.real:.15g}, expected 1")
    lam = np.linalg.eigvalsh((m + m.conj().T) / 2)[0]
    if lam < -PSD_TOL:
        raise PhysicalityError(f"minimum eigenvalue {lam:.3g} below -{PSD_TOL:g}")


def is_physical(m: np.ndarray) -> bool:
    try:
        check_physical(np.asarray(m, dtype=complex))
    except PhysicalityError:
        return False
    return True


def as_density(s: State) -> DensityMatrix:
    return s.to_density() if isinstance(s, StateVector) else s


def _check_same_space(a, b) -> None:
    if a.labels != b.labels or a.dims != b.dims:
        raise LabelError(
            f"space mismatch: {[l.name for l in a.labels]}{a.dims} vs {[l.name for l in b.labels]}{b.dims}"
        )


def tensor(a, b):
    """Tensor product of two states or two observables, reordered canonically."""
    overlap = set(a.labels) & set(b.labels)
    if overlap:
        raise LabelError(f"label collision in tensor product: {sorted(l.name for l in overlap)}")
    labels = a.labels + b.labels
    dims = a.dims + b.dims
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(labels, np.kron(a.amplitudes, b.amplitudes), dims)
    if isinstance(a, Observable) and isinstance(b, Observable):
        return Observable(labels, np.kron(a.matrix, b.matrix), dims)
    a, b = as_density(a), as_density(b)
    return DensityMatrix(labels, np.kron(a.matrix, b.matrix), dims)


def identity(labels, dims=None) -> Observable:
    labels = _as_labels(labels)
    dims = _as_dims(dims, len(labels))
    return Observable(labels, np.eye(int(np.prod(dims))), dims)


def embed(op: np.ndarray, op_labels, labels, dims) -> np.ndarray:
    """Pad an operator on ``op_labels`` with identities to the full (canonical) space ``labels``."""
    op_labels = _as_labels(op_labels)
    labels = tuple(labels)
    missing = [l for l in op_labels if l not in labels]
    if missing:
        raise LabelError(f"operator acts on {[l.name for l in missing]} absent from the space")
    rest = [i for i, l in enumerate(labels) if l not in op_labels]
    order = [labels.index(l) for l in op_labels] + rest
    d_rest = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(d_rest))
    # factors of `full` are currently in `order`; bring them back to canonical order
    cur_dims = [dims[i] for i in order]
    inv = np.argsort(order)
    return _permute_axes(full, cur_dims, list(inv))


def partial_trace(rho: State, keep) -> DensityMatrix:
    rho = as_density(rho)
    keep = set(_as_labels(keep))
    if not keep:
        raise LabelError("partial_trace needs at least one label to keep")
    if not keep <= set(rho.labels):
        extra = sorted(l.name for l in keep - set(rho.labels))
        raise LabelError(f"cannot keep {extra}: not in {[l.name for l in rho.labels]}")
    n = len(rho.labels)
    kept = [i for i, l in enumerate(rho.labels) if l in keep]
    traced = [i for i in range(n) if i not in kept]
    t = rho.matrix.reshape(list(rho.dims) * 2)
    # einsum: contract row/col indices of traced factors
    letters = "abcdefghijklmnop"
    rows = [letters[i] for i in range(n)]
    cols = [letters[i] if i in traced else letters[i].upper() for i in range(n)]
    out = "".join(rows[i] for i in kept) + "".join(cols[i] for i in kept)
    red = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([rho.dims[i] for i in kept]))
    red = red.reshape(dk, dk)
    return DensityMatrix([rho.labels[i] for i in kept], (red + red.conj().T) / 2, [rho.dims[i] for i in kept])


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    # eigenvalues at round-off level are zero; their square roots (~1e-8) would not be
    floor = m.shape[0] * np.finfo(float).eps * max(w[-1], 0.0)
    return (v * np.sqrt(np.where(w > floor, w, 0.0))) @ v.conj().T


def fidelity(rho: State, sigma: State) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    Computed as the squared nuclear norm of ``sqrt(rho) sqrt(sigma)``, which stays
    accurate to machine precision for rank-deficient (pure) inputs.
    """
    rho, sigma = as_density(rho), as_density(sigma)
    _check_same_space(rho, sigma)
    s = np.linalg.svd(_sqrt_psd(rho.matrix) @ _sqrt_psd(sigma.matrix), compute_uv=False)
    return float(min(max(np.sum(s) ** 2, 0.0), 1.0))


def trace_distance(rho: State, sigma: State) -> float:
    rho, sigma = as_density(rho), as_density(sigma)
    _check_same_space(rho, sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(rho.matrix - sigma.matrix))))


def expectation(rho: State, obs: Observable) -> float:
    """``Tr(rho O)`` with ``O`` padded by identities on the subsystems it does not touch."""
    rho = as_density(rho)
    if not isinstance(obs, Observable):
        raise TypeError("expectation needs an Observable")
    if set(obs.labels) == set(rho.labels):
        red = rho
    else:
        red = partial_trace(rho, obs.labels)
    if red.dims != obs.dims:
        raise LabelError(f"observable dims {obs.dims} do not match state dims {red.dims}")
    val = np.trace(red.matrix @ obs.matrix)
    if abs(val.imag) > 1e-10:
        raise PhysicalityError(f"expectation has imaginary part {val.imag:.3g}")
    return float(val.real)


def equal_up_to_phase(a: StateVector, b: StateVector, atol: float = 1e-10) -> bool:
    """Phase-insensitive comparison of two pure states."""
    _check_same_space(a, b)
    return abs(abs(np.vdot(a.amplitudes, b.amplitudes)) - 1) <= atol


def allclose(a: StateVector, b: StateVector, atol: float = 1e-12) -> bool:
    """Strict amplitude comparison (global phase matters)."""
    _check_same_space(a, b)
    return bool(np.allclose(a.amplitudes, b.amplitudes, atol=atol, rtol=0))


def apply_unitary(state: State, u: np.ndarray, labels) -> State:
    """Apply ``u`` (acting on ``labels``) to a state; works for partial isometries with equal in/out dims."""
    full = embed(np.asarray(u, dtype=complex), labels, state.labels, state.dims)
    if isinstance(state, StateVector):
        return StateVector(state.labels, full @ state.amplitudes, state.dims)
    return DensityMatrix(state.labels, full @ state.matrix @ full.conj().T, state.dims)


# single-qubit basics
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": np.eye(2, dtype=complex), "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}

KET = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "A": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "R": np.array([1, -1j], dtype=complex) / np.sqrt(2),
    "L": np.array([1, 1j], dtype=complex) / np.sqrt(2),
}


def ket(label, name: str) -> StateVector:
    return StateVector([label], KET[name])


def pauli(label, name: str) -> Observable:
    return Observable([label], PAULIS[name])


def bloch_observable(label, n) -> Observable:
    """Dichotomic observable ``n . sigma`` for a unit vector ``n``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    return Observable([label], n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z)


def random_state(labels, rng: np.random.Generator, dims=None, rank: int | None = None) -> DensityMatrix:
    """Random density matrix from a Ginibre ensemble (``rank=None`` gives full rank)."""
    labels = _as_labels(labels)
    dims = _as_dims(dims, len(labels))
    d = int(np.prod(dims))
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ g.conj().T
    return DensityMatrix.from_matrix(labels, m, dims)


def random_pure(labels, rng: np.random.Generator, dims=None) -> StateVector:
    labels = _as_labels(labels)
    dims = _as_dims(dims, len(labels))
    d = int(np.prod(dims))
    return StateVector.from_unnormalized(labels, rng.normal(size=d) + 1j * rng.normal(size=d), dims)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
