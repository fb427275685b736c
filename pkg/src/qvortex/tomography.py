"""State tomography: Pauli-basis measurement sets, linear inversion, MLE and bootstrap errors."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import CountRecord, MeasurementSetting, stream_rng, worker_count
from .hilbert import KET, OAM2, POL1, POL2, DensityMatrix, State, _as_labels, as_density, fidelity
from .optics import PAULI_PRESET, preset

BASIS_PREFIX = "tomo/"


class TomographyError(ValueError):
    pass


@dataclass(frozen=True)
class TomographySet:
    """All ``6**n`` products of the H/V/D/A/R/L projectors, grouped into ``3**n`` Pauli bases."""

    labels: tuple
    settings: tuple[MeasurementSetting, ...]
    projectors: np.ndarray  # (6**n, 2**n, 2**n) logical projectors
    basis_index: np.ndarray  # basis number of each outcome
    oam_encoded: frozenset = frozenset()

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    @property
    def n_bases(self) -> int:
        return 3 ** self.n_qubits

    def index(self) -> dict[str, int]:
        return {s.setting_id: i for i, s in enumerate(self.settings)}

    def design_matrix(self) -> np.ndarray:
        """Real linear map from Pauli-product coordinates of rho to outcome probabilities."""
        n = self.n_qubits
        paulis = _pauli_products(n)
        return np.real(np.einsum("kij,pji->kp", self.projectors, paulis)) / 2**n

    def probabilities(self, rho: State) -> np.ndarray:
        m = as_density(rho).matrix
        return np.real(np.einsum("kij,ji->k", self.projectors, m))


def _pauli_products(n: int) -> np.ndarray:
    from .hilbert import PAULIS

    mats = []
    for names in itertools.product("IXYZ", repeat=n):
        m = np.ones((1, 1), dtype=complex)
        for c in names:
            m = np.kron(m, PAULIS[c])
        mats.append(m)
    return np.array(mats)


DEFAULT_LABELS = {2: (POL1, POL2), 3: (POL1, POL2, OAM2)}


def generate_settings(n_qubits: int, oam_encoded=(), labels=None) -> TomographySet:
    """Informationally complete Pauli-basis set on ``n_qubits`` logical qubits.

    OAM-encoded qubits use the same logical projectors; the measurement chain
    (vortex plate, analyser, SMF) is applied when counts are simulated.
    """
    if n_qubits not in (2, 3):
        raise TomographyError(f"tomography supports 2 or 3 qubits, got {n_qubits}")
    labels = _as_labels(labels) if labels is not None else DEFAULT_LABELS[n_qubits]
    if len(labels) != n_qubits:
        raise TomographyError("one label per qubit required")
    labels = tuple(sorted(labels))
    settings, projs, bidx = [], [], []
    for b, bases in enumerate(itertools.product("ZXY", repeat=n_qubits)):
        for signs in itertools.product("+-", repeat=n_qubits):
            names = [PAULI_PRESET[(p, s)] for p, s in zip(bases, signs)]
            settings.append(MeasurementSetting(
                BASIS_PREFIX + "".join(bases),
                "".join(signs),
                tuple(preset(nm, lab) for nm, lab in zip(names, labels)),
            ))
            m = np.ones((1, 1), dtype=complex)
            for nm in names:
                m = np.kron(m, np.outer(KET[nm], KET[nm].conj()))
            projs.append(m)
            bidx.append(b)
    return TomographySet(labels, tuple(settings), np.array(projs), np.array(bidx), frozenset(_as_labels(oam_encoded)))


def counts_vector(records: Sequence[CountRecord], tset: TomographySet, corrected: bool = True) -> np.ndarray:
    """Counts aligned with ``tset`` by setting id (record order is irrelevant)."""
    idx = tset.index()
    n = np.full(len(tset.settings), np.nan)
    for r in records:
        if r.setting_id in idx:
            n[idx[r.setting_id]] = r.value(corrected)
    if np.isnan(n).any():
        missing = [tset.settings[i].setting_id for i in np.flatnonzero(np.isnan(n))[:3]]
        raise TomographyError(f"records do not cover the tomography set (missing e.g. {missing})")
    return n


def _as_counts(data, tset: TomographySet, corrected: bool) -> np.ndarray:
    if isinstance(data, np.ndarray) and data.dtype.kind in "fiu":
        n = np.asarray(data, dtype=float)
    elif len(data) and isinstance(data[0], CountRecord):
        n = counts_vector(data, tset, corrected)
    else:
        n = np.asarray(data, dtype=float)
    if n.shape != (len(tset.settings),):
        raise TomographyError(f"expected {len(tset.settings)} counts, got shape {n.shape}")
    if (n < 0).any():
        raise TomographyError("negative counts")
    return n


def _basis_frequencies(n: np.ndarray, tset: TomographySet) -> np.ndarray:
    tot = np.bincount(tset.basis_index, weights=n, minlength=tset.n_bases)
    if (tot == 0).any():
        raise TomographyError("a measurement basis has zero total counts")
    return n / tot[tset.basis_index]


def linear_inversion(data, tset: TomographySet, corrected: bool = True) -> np.ndarray:
    """Least-squares inversion of the Born rule on per-basis frequencies.

    The result is Hermitian with unit trace but may have negative eigenvalues.
    """
    n = _as_counts(data, tset, corrected)
    f = _basis_frequencies(n, tset)
    a = tset.design_matrix()
    rank = np.linalg.matrix_rank(a)
    if rank < a.shape[1]:
        raise TomographyError(f"design matrix has rank {rank} < {a.shape[1]}")
    coef, *_ = np.linalg.lstsq(a, f, rcond=None)
    paulis = _pauli_products(tset.n_qubits)
    m = np.einsum("p,pij->ij", coef, paulis) / 2**tset.n_qubits
    m = (m + m.conj().T) / 2
    return m / np.trace(m).real


@dataclass
class TomographyResult:
    rho_hat: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    fidelity_vs_target: float | None = None
    bootstrap_sigma: float | None = None
    loglik_trace: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "rho": self.rho_hat.to_json(),
            "fidelity": self.fidelity_vs_target,
            "sigma": self.bootstrap_sigma,
            "loglik": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class MleOptions:
    max_iter: int = 10_000
    tol: float = 1e-10
    keep_trace: bool = False


def _loglik(n: np.ndarray, p: np.ndarray, scale: float) -> float:
    # Poisson log-likelihood with the intensity fixed at its ML value; log n! dropped
    mu = scale * p
    pos = n > 0
    if (mu[pos] <= 0).any():
        return -np.inf
    return float(np.sum(n[pos] * np.log(mu[pos])) - np.sum(mu))


def mle_reconstruct(data, tset: TomographySet, options: MleOptions = MleOptions(), *,
                    corrected: bool = True, rho0: np.ndarray | None = None) -> TomographyResult:
    """Maximum-likelihood state under independent Poisson counts.

    Diluted ``R rho R`` iteration: each step tries the full fixed-point update
    and halves the dilution until the likelihood does not decrease.  Stops when
    the per-count log-likelihood changes by less than ``options.tol``.
    """
    n = _as_counts(data, tset, corrected)
    total = n.sum()
    if total <= 0:
        raise TomographyError("all counts are zero")
    d = 2**tset.n_qubits
    e = tset.projectors.reshape(len(n), d * d)
    # every basis sums to the identity, so sum_k Tr(rho E_k) = number of bases
    scale = total / tset.n_bases

    def probs(rho):
        return np.real(e @ rho.T.reshape(-1))

    rho = np.eye(d, dtype=complex) / d if rho0 is None else np.array(rho0, dtype=complex)
    p = probs(rho)
    ll = _loglik(n, p, scale)
    trace = [ll]
    converged = False
    it = 0
    eps = None  # dilution; None is the undiluted fixed-point step
    eye = np.eye(d)
    while it < options.max_iter:
        it += 1
        w = np.where(n > 0, n / np.maximum(p, 1e-300), 0.0) / total
        r = (w @ e).reshape(d, d)
        while True:
            g = r if eps is None else (eye + eps * r) / (1 + eps)
            new = g @ rho @ g.conj().T
            new = (new + new.conj().T) / 2
            new /= np.trace(new).real
            p_new = probs(new)
            ll_new = _loglik(n, p_new, scale)
            if ll_new >= ll:
                break
            eps = 1.0 if eps is None else eps / 2
            if eps < 1e-12:
                break
        if ll_new < ll:
            # no ascent left at machine precision
            converged = True
            break
        delta = (ll_new - ll) / total
        rho, p, ll = new, p_new, ll_new
        if options.keep_trace:
            trace.append(ll)
        if eps is not None:
            eps = None if eps > 5e5 else eps * 2
        if abs(delta) < options.tol:
            converged = True
            break
    rho_hat = DensityMatrix.from_matrix(tset.labels, _clip_psd(rho))
    return TomographyResult(rho_hat, ll, it, converged, loglik_trace=trace if options.keep_trace else [])


def _clip_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    w = np.clip(w, 0, None)
    m = (v * w) @ v.conj().T
    return m / np.trace(m).real


def expected_counts(rho: State, tset: TomographySet, per_basis: float) -> np.ndarray:
    """Noiseless counts ``per_basis * Tr(rho E_k)``."""
    return per_basis * np.clip(tset.probabilities(rho), 0, None)


def bootstrap_sigma(data, tset: TomographySet, target: State, n_resamples: int = 100, seed: int = 0, *,
                    corrected: bool = True, options: MleOptions = MleOptions(),
                    fit: TomographyResult | None = None) -> tuple[float, float]:
    """Fidelity of the MLE fit against ``target`` and its parametric-bootstrap standard deviation.

    Each resample redraws every count from ``Poisson(observed)`` on its own
    stream ``(seed, i)`` and refits, warm-started from the original estimate.
    """
    if n_resamples < 100:
        raise ValueError("bootstrap needs at least 100 resamples")
    n = _as_counts(data, tset, corrected)
    fit = fit or mle_reconstruct(n, tset, options)
    target = as_density(target)
    f0 = fidelity(fit.rho_hat, target)
    start = fit.rho_hat.matrix

    def one(i: int) -> float:
        rng = stream_rng(seed, i)
        resampled = rng.poisson(n).astype(float)
        res = mle_reconstruct(resampled, tset, options, rho0=_mix_in(start))
        return fidelity(res.rho_hat, target)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            fids = list(ex.map(one, range(n_resamples)))
    else:
        fids = [one(i) for i in range(n_resamples)]
    return f0, float(np.std(fids, ddof=1))


def _mix_in(m: np.ndarray, amount: float = 1e-3) -> np.ndarray:
    # a full-rank start keeps every outcome probability positive
    d = m.shape[0]
    return (1 - amount) * m + amount * np.eye(d) / d
