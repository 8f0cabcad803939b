"""
Eigen Scheme — Statistical Hybrid Beamforming with Two Digital Beamformers
============================================================================
- Analog: dominant eigenvector of each subarray's subcarrier-averaged
  covariance, projected onto the constant-modulus set (phases kept)
- Receive combiner from the averaged receive covariance, same projection
- Compensation digital beamformer F_BB,c[k] = (W^H W)^{−1/2}·V̄[k]
- IBI elimination: RCI over ĥ[λ]·F_BB,c[k] for λ = k−1, k, k+1,
  ĥ[λ] = v^H H[λ] W (f_BB[k] reaches λ through H[λ])
- Equivalence check against fully digital beamforming on channels that
  share one eigenbasis across subcarriers
"""

import time
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import eigh

from config import SystemConfig, DomainError, StructuralError
from thz_channel import ChannelRealization
from multicarrier import (
    IbiSequence, Scheme, SchemeResult, central_taps, ibi_for, sinr_per_subcarrier,
)
from codebook_scheme import HybridBeamformer, normalize_digital, rci_digital

logger = logging.getLogger("eigen")

ZERO_TOL = 1e-12


# ─── Covariances ───────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SubarrayCovariance:
    """(1/K)Σ H_n^H[k]H_n[k] per chain and (1/K)Σ H[k]H^H[k] at the receiver."""

    per_chain: np.ndarray
    receive: np.ndarray

    def is_valid(self, tol: float = 1e-10) -> bool:
        for R in [*self.per_chain, self.receive]:
            if np.max(np.abs(R - R.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
                return False
            if np.min(np.linalg.eigvalsh(R)) < -tol * max(np.real(np.trace(R)), 0.0):
                return False
        return True


def _hermitize(R: np.ndarray) -> np.ndarray:
    return 0.5 * (R + np.swapaxes(R, -1, -2).conj())


def average_covariances(channel: ChannelRealization, n_rf: int) -> SubarrayCovariance:
    H = channel.per_subcarrier
    if n_rf < 1 or channel.n_bs % n_rf:
        raise StructuralError(f"N_BS={channel.n_bs} cannot be split into {n_rf} subarrays")
    size = channel.n_bs // n_rf
    blocks = H.reshape(H.shape[0], H.shape[1], n_rf, size)
    per_chain = np.einsum("kuns,kunt->nst", blocks.conj(), blocks) / H.shape[0]
    receive = np.einsum("kub,kvb->uv", H, H.conj()) / H.shape[0]
    return SubarrayCovariance(_hermitize(per_chain), _hermitize(receive))


# ─── Analog Design ─────────────────────────────────────

def phase_fix(u: np.ndarray) -> np.ndarray:
    """Unit-norm copy with the first nonzero entry real positive."""
    u = np.asarray(u, dtype=complex)
    mag = np.abs(u)
    if mag.max() == 0:
        return u.copy()
    first = int(np.flatnonzero(mag > ZERO_TOL * mag.max())[0])
    fixed = u * np.exp(-1j * np.angle(u[first]))
    return fixed / np.linalg.norm(fixed)


def phase_project(u: np.ndarray) -> np.ndarray:
    """(1/√n)·e^{j∠u_i}; entries that are numerically zero get phase 0."""
    fixed = phase_fix(u)
    mag = np.abs(fixed)
    keep = mag > ZERO_TOL * max(mag.max(), np.finfo(float).tiny)
    return np.where(keep, np.exp(1j * np.angle(fixed)), 1.0) / np.sqrt(fixed.size)


def dominant_direction(R: np.ndarray, constant_modulus: bool = True) -> np.ndarray:
    """Dominant eigenvector of R, phase-projected when constant_modulus.

    Among tied top eigenvectors the one whose projection maximizes w^H R w
    wins, lowest index first.
    """
    R = _hermitize(np.asarray(R, dtype=complex))
    n = R.shape[0]
    vals, vecs = eigh(R)
    top = vals[-1]
    if top <= ZERO_TOL * max(np.max(np.abs(R)), np.finfo(float).tiny) or top <= 0:
        logger.warning("Zero covariance; falling back to the phase-0 analog vector")
        return np.ones(n, dtype=complex) / np.sqrt(n)

    tied = np.flatnonzero(vals >= top - 1e-10 * abs(top))[::-1]
    best, best_value = None, -np.inf
    for i in tied:
        candidate = phase_project(vecs[:, i]) if constant_modulus else phase_fix(vecs[:, i])
        value = float(np.real(candidate.conj() @ R @ candidate))
        if best is None or value > best_value + 1e-12 * abs(best_value):
            best, best_value = candidate, value
    return best


def eigen_analog(cov: SubarrayCovariance,
                 constant_modulus: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """(v, [w_1 … w_N_RF]) from the averaged covariances."""
    v = dominant_direction(cov.receive, constant_modulus)
    w = np.array([dominant_direction(R, constant_modulus) for R in cov.per_chain])
    return v, w


# ─── Compensation Digital Beamformer ───────────────────

def inverse_sqrt(G: np.ndarray) -> np.ndarray:
    """G^{−1/2} of a Hermitian PD matrix, eigenvalues floored at 10⁻¹²·λ_max."""
    vals, vecs = eigh(_hermitize(G))
    vals = np.maximum(vals, ZERO_TOL * vals[-1])
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


def compensation_digital(channel, W: np.ndarray) -> np.ndarray:
    """F_BB,c[k] = (W^H W)^{−1/2}·V̄[k] with H[k]W(W^H W)^{−1/2} = Ū[k]Σ̄[k]V̄^H[k]."""
    H = channel.per_subcarrier if isinstance(channel, ChannelRealization) else np.asarray(channel)
    W = np.asarray(W, dtype=complex)
    if H.shape[2] != W.shape[0]:
        raise StructuralError(f"W has {W.shape[0]} rows, channel has N_BS={H.shape[2]}")
    gram = W.conj().T @ W
    vals = np.linalg.eigvalsh(gram)
    if vals[-1] <= 0 or vals[0] < ZERO_TOL * vals[-1]:
        raise StructuralError("analog precoder W is not full column rank")
    root = inverse_sqrt(gram)
    _, _, vh = np.linalg.svd(H @ W @ root, full_matrices=True)
    return root[None, :, :] @ np.swapaxes(vh, -1, -2).conj()


# ─── Scheme ────────────────────────────────────────────

def run_eigen_scheme(channel: ChannelRealization, config: SystemConfig,
                     ibi: Optional[IbiSequence] = None,
                     constant_modulus: bool = True,
                     ibi_elimination: bool = True,
                     receive: Optional[np.ndarray] = None,
                     realization_id: int = 0,
                     scheme_id: Optional[Scheme] = None) -> Tuple[HybridBeamformer, SchemeResult]:
    """Statistical-eigen analog + compensation + RCI digital beamforming.

    constant_modulus=False skips the phase projection (unconstrained hybrid);
    ibi_elimination=False replaces RCI by a matched filter to ĥ[k].
    """
    start = time.perf_counter()
    ibi = ibi or ibi_for(config)
    cov = average_covariances(channel, config.n_rf)
    v, w = eigen_analog(cov, constant_modulus)
    if receive is not None:
        v = np.asarray(receive, dtype=complex)

    W = HybridBeamformer(v, w, np.zeros((1, w.shape[0]))).analog_matrix()
    f_c = compensation_digital(channel, W)
    h = np.einsum("u,kub->kb", v.conj(), channel.per_subcarrier) @ W
    h_c = np.einsum("kr,krs->ks", h, f_c)

    if ibi_elimination:
        f_i = rci_digital(h, central_taps(ibi), config.psi, compensation=f_c)
    else:
        f_i = h_c.conj()
    f_bb = normalize_digital(W, np.einsum("krs,ks->kr", f_c, f_i))
    bf = HybridBeamformer(v, w, f_bb, f_bb_c=f_c, constant_modulus=constant_modulus)

    if scheme_id is None:
        if not ibi_elimination:
            scheme_id = Scheme.NO_ELIMINATION
        else:
            scheme_id = Scheme.EIGEN if constant_modulus else Scheme.EIGEN_UNCONSTRAINED
    sinr = sinr_per_subcarrier(channel, bf, ibi, config.psi)
    result = SchemeResult.from_sinr(sinr, config.bandwidth_hz, scheme_id,
                                    realization_id, time.perf_counter() - start)
    return bf, result


# ─── Fully-Digital Equivalence ─────────────────────────

def common_basis_channels(K: int, n_u: int, n_bs: int, rank: int,
                          rng: np.random.Generator, spread: float = 0.1,
                          scale: float = 1.0) -> np.ndarray:
    """H[k] = U·diag(s[k])·V^H with U, V shared by every k.

    Singular values are spaced by 3× with ±spread variation, so their order
    is the same on every subcarrier. spread=0 gives identical Λ̃[k].
    """
    if not 1 <= rank <= min(n_u, n_bs):
        raise DomainError(f"rank {rank} outside 1..{min(n_u, n_bs)}")

    def unitary(n):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        return q

    U, V = unitary(n_u), unitary(n_bs)
    base = 3.0 ** -np.arange(rank)
    s = scale * base[None, :] * (1 + spread * rng.uniform(-1, 1, (K, rank)))
    return np.einsum("ur,kr,br->kub", U[:, :rank], s, V[:, :rank].conj())


def _trace_sinr(grams: np.ndarray, precoder: np.ndarray, k: int,
                ibi: IbiSequence, psi: float) -> float:
    """tr{|S_0|²R̂[k](Σ_{λ≠k}|S_{λ−k}|²R̂[λ] + ψI)^{−1}} with R̂[λ] = W^H H^H[λ]H[λ] W."""
    projected = precoder.conj().T[None] @ grams @ precoder[None]
    leakage = ibi.leakage_matrix()[:, k]
    interference = np.einsum("l,lij->ij", leakage, projected) + psi * np.eye(precoder.shape[1])
    signal = abs(ibi.tap(0)) ** 2 * projected[k]
    return float(np.real(np.trace(signal @ np.linalg.inv(interference))))


def hybrid_digital_equivalence(channels, config: SystemConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier SINR of the unconstrained statistical-eigen hybrid design
    (W = top-N_RF eigenvectors of the averaged covariance) and of per-subcarrier
    fully digital eigen-beamforming.
    """
    H = channels.per_subcarrier if isinstance(channels, ChannelRealization) else np.asarray(channels)
    K = H.shape[0]
    ibi = ibi_for(config.replace(num_subcarriers=K))
    grams = np.swapaxes(H, -1, -2).conj() @ H
    _, vecs = eigh(_hermitize(grams.mean(axis=0)))
    hybrid_w = vecs[:, ::-1][:, :config.n_rf]

    hybrid = np.array([_trace_sinr(grams, hybrid_w, k, ibi, config.psi) for k in range(K)])
    digital = np.empty(K)
    for k in range(K):
        _, vecs_k = eigh(_hermitize(grams[k]))
        digital[k] = _trace_sinr(grams, vecs_k[:, ::-1], k, ibi, config.psi)
    return hybrid, digital
