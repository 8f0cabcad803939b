"""
Multi-Carrier — CFO Leakage, SINR & Rate
==========================================
- IBI coefficients S_i from the normalized CFO ε (closed form, exact at ε = 0)
- Per-subcarrier SINR with inter-band interference from every other subcarrier
- Average achievable rate R = (1/K)·Σ B·log₂(1 + γ_k)
- 3-tap truncation {S_−1, S_0, S_1} used by the RCI digital stage
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from config import SystemConfig, DomainError, StructuralError, linear_to_db
from thz_channel import ChannelRealization

logger = logging.getLogger("multicarrier")

ChannelLike = Union[ChannelRealization, np.ndarray]


class Scheme(str, Enum):
    FULLY_DIGITAL = "fully_digital"
    EIGEN = "eigen"
    EIGEN_UNCONSTRAINED = "eigen_unconstrained"
    CODEBOOK = "codebook"
    EXISTING_HYBRID = "existing_hybrid"
    NO_ELIMINATION = "no_elimination"
    ROBUST = "robust"
    NON_ROBUST = "non_robust"
    PERFECT_CSI = "perfect_csi"


# ─── IBI Coefficients ──────────────────────────────────

@dataclass(frozen=True, eq=False)
class IbiSequence:
    """S_i for i = 1−K … K−1, stored at position i + K − 1."""

    coefficients: np.ndarray
    epsilon: float
    K: int

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=complex).ravel()
        if coeffs.shape[0] != 2 * self.K - 1:
            raise StructuralError(f"expected {2 * self.K - 1} coefficients, got {coeffs.shape[0]}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def impulse(cls, K: int) -> "IbiSequence":
        coeffs = np.zeros(2 * K - 1, dtype=complex)
        coeffs[K - 1] = 1.0
        return cls(coeffs, 0.0, K)

    def tap(self, i: int) -> complex:
        """S_i, zero outside 1−K … K−1."""
        if abs(i) >= self.K:
            return 0j
        return complex(self.coefficients[i + self.K - 1])

    def leakage_matrix(self) -> np.ndarray:
        """L[λ, k] = |S_{λ−k}|² with a zero diagonal."""
        idx = np.arange(self.K)
        power = np.abs(self.coefficients) ** 2
        L = power[idx[:, None] - idx[None, :] + self.K - 1]
        np.fill_diagonal(L, 0.0)
        return L

    def window_energy(self, anchor: int) -> float:
        """Σ_{i=−k+1}^{K−k} |S_i|² for anchor k in 1..K."""
        lo, hi = -anchor + 1, self.K - anchor
        window = self.coefficients[lo + self.K - 1:hi + self.K]
        return float(np.sum(np.abs(window) ** 2))


def ibi_coefficients(K: int, epsilon: float) -> IbiSequence:
    """S_i = sin π(i+ε) / (K·sin(π(i+ε)/K))·e^{jπ(1−1/K)(i+ε)}."""
    if K < 2:
        raise DomainError(f"IBI needs K ≥ 2, got {K}")
    if not abs(epsilon) < 1:
        raise DomainError(f"CFO ratio must satisfy |ε| < 1, got {epsilon}")
    if epsilon == 0:
        return IbiSequence.impulse(K)
    x = np.arange(1 - K, K) + epsilon
    # sin(πx)/(K·sin(πx/K)) written as sinc ratios so x = 0 evaluates to 1
    magnitude = np.sinc(x) / np.sinc(x / K)
    return IbiSequence(magnitude * np.exp(1j * np.pi * (1 - 1 / K) * x), float(epsilon), K)


def ibi_for(config: SystemConfig) -> IbiSequence:
    """IBI sequence of a scenario (single subcarrier has no neighbours)."""
    if config.num_subcarriers == 1:
        return IbiSequence.impulse(1)
    return ibi_coefficients(config.num_subcarriers, config.epsilon_cfo)


@dataclass(frozen=True)
class TruncatedIbi:
    taps: Tuple[complex, complex, complex]
    discarded_energy: float


def central_taps(ibi: IbiSequence) -> Tuple[complex, complex, complex]:
    return ibi.tap(-1), ibi.tap(0), ibi.tap(1)


def truncate_ibi(ibi: IbiSequence) -> TruncatedIbi:
    """{S_−1, S_0, S_1} plus the energy 1 − Σ|taps|² left outside them."""
    if ibi.K < 3:
        raise DomainError(f"3-tap truncation needs K ≥ 3, got {ibi.K}")
    taps = central_taps(ibi)
    discarded = 1.0 - sum(abs(s) ** 2 for s in taps)
    return TruncatedIbi(taps, float(max(discarded, 0.0)))


# ─── SINR & Rate ───────────────────────────────────────

def _matrices(channel: ChannelLike) -> np.ndarray:
    if isinstance(channel, ChannelRealization):
        return channel.per_subcarrier
    H = np.asarray(channel, dtype=complex)
    if H.ndim != 3:
        raise StructuralError(f"expected (K, N_U, N_BS) channel, got shape {H.shape}")
    return H


def cross_gains(channel: ChannelLike, v: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    """G[λ, k] = v^H H[λ] x_k for per-subcarrier precoders x_k (rows of `precoders`)."""
    H = _matrices(channel)
    K, n_u, n_bs = H.shape
    v = np.asarray(v, dtype=complex).ravel()
    x = np.asarray(precoders, dtype=complex)
    if v.shape[0] != n_u:
        raise StructuralError(f"combiner length {v.shape[0]} != N_U={n_u}")
    if x.shape != (K, n_bs):
        raise StructuralError(f"precoders shape {x.shape} != ({K}, {n_bs})")
    combined = np.einsum("u,kub->kb", v.conj(), H)
    return combined @ x.T


def sinr_from_gains(G: np.ndarray, ibi: IbiSequence, psi: float,
                    window: Optional[int] = None) -> np.ndarray:
    """γ_k from G[λ, k]; `window` keeps only |λ − k| ≤ window interferers."""
    if psi <= 0:
        raise DomainError(f"ψ must be positive, got {psi}")
    K = G.shape[0]
    if ibi.K != K:
        raise StructuralError(f"IBI sequence for K={ibi.K} applied to {K} subcarriers")
    power = np.abs(G) ** 2
    leakage = ibi.leakage_matrix()
    if window is not None:
        idx = np.arange(K)
        leakage = np.where(np.abs(idx[:, None] - idx[None, :]) <= window, leakage, 0.0)
    signal = abs(ibi.tap(0)) ** 2 * np.diag(power)
    interference = np.sum(leakage * power, axis=0)
    return signal / (interference + psi)


def sinr_per_subcarrier(channel: ChannelLike, bf, ibi: IbiSequence, psi: float,
                        window: Optional[int] = None) -> np.ndarray:
    """γ_k = |S_0|²|v^H H[k] W f[k]|² / (Σ_{λ≠k}|S_{λ−k}|²|v^H H[λ] W f[k]|² + ψ)."""
    G = cross_gains(channel, bf.v, bf.precoders())
    return sinr_from_gains(G, ibi, psi, window)


def average_rate(sinr, bandwidth_hz: float) -> float:
    gamma = np.asarray(sinr, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("SINR values must be non-negative")
    return float(np.mean(bandwidth_hz * np.log2(1.0 + gamma)))


@dataclass(frozen=True, eq=False)
class SchemeResult:
    """Per-subcarrier SINR (linear) and the averaged rate of one scheme run."""

    per_subcarrier_sinr: np.ndarray
    avg_rate: float
    scheme_id: Scheme
    realization_id: int
    bandwidth_hz: float
    runtime_s: float = 0.0

    @classmethod
    def from_sinr(cls, sinr, bandwidth_hz: float, scheme_id: Scheme,
                  realization_id: int = 0, runtime_s: float = 0.0) -> "SchemeResult":
        gamma = np.array(sinr, dtype=float).ravel()
        gamma.setflags(write=False)
        return cls(gamma, average_rate(gamma, bandwidth_hz), Scheme(scheme_id),
                   int(realization_id), float(bandwidth_hz), float(runtime_s))

    @property
    def mean_sinr_db(self) -> float:
        return linear_to_db(float(np.mean(self.per_subcarrier_sinr)))

    @property
    def spectral_efficiency(self) -> float:
        """bit/s/Hz."""
        return self.avg_rate / self.bandwidth_hz

    def recomputed_rate(self) -> float:
        return average_rate(self.per_subcarrier_sinr, self.bandwidth_hz)
