"""
Codebook Scheme — Two-Stage Wideband Hybrid Beamforming
=========================================================
Analog stage: beamsteering codebook search. Each subcarrier's beam gain is
divided by its path loss F(f_k, d), so the strongest (lowest) subcarriers do
not dictate the beam.
Digital stage: regularized channel inversion (RCI) over the 3-tap combined
channel [S_−1·ĥ[k−1]; S_0·ĥ[k]; S_1·ĥ[k+1]] with loading β = ψ, then
normalized to ‖W f_BB[k]‖ = 1.

With disjoint constant-modulus subarrays W^H W = I, so the power constraint
gives ‖f_BB[k]‖ = 1 and the optimal loading ψ/‖f_BB[k]‖² reduces to ψ.
"""

import time
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from config import SystemConfig, DomainError, StructuralError
from thz_channel import (
    AbsorptionModel, ChannelRealization, UpaGeometry, path_gain,
    steering_matrix, subarray_geometry, ue_geometry,
)
from multicarrier import (
    IbiSequence, Scheme, SchemeResult, TruncatedIbi, central_taps, ibi_for,
    sinr_per_subcarrier,
)

logger = logging.getLogger("codebook")

Taps = Union[TruncatedIbi, Sequence[complex]]
TIE_RTOL = 1e-9


# ─── Beamformer ────────────────────────────────────────

@dataclass(eq=False)
class HybridBeamformer:
    """Receive combiner v, per-chain analog vectors w_n and digital f_BB[k]."""

    v: np.ndarray
    w: np.ndarray
    f_bb: np.ndarray
    f_bb_c: Optional[np.ndarray] = None
    constant_modulus: bool = True

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=complex).ravel()
        self.w = np.atleast_2d(np.asarray(self.w, dtype=complex))
        self.f_bb = np.atleast_2d(np.asarray(self.f_bb, dtype=complex))
        if self.f_bb.shape[1] != self.w.shape[0]:
            raise StructuralError(
                f"digital vectors of length {self.f_bb.shape[1]} for {self.w.shape[0]} RF chains")
        if self.f_bb_c is not None:
            self.f_bb_c = np.asarray(self.f_bb_c, dtype=complex)
            n_rf = self.w.shape[0]
            if self.f_bb_c.shape != (self.f_bb.shape[0], n_rf, n_rf):
                raise StructuralError(f"compensation shape {self.f_bb_c.shape} mismatched")

    @property
    def n_rf(self) -> int:
        return self.w.shape[0]

    @property
    def subarray_size(self) -> int:
        return self.w.shape[1]

    @property
    def num_subcarriers(self) -> int:
        return self.f_bb.shape[0]

    def analog_matrix(self) -> np.ndarray:
        """W = diag{w_1, …, w_N_RF}, shape (N_BS, N_RF)."""
        return block_diag(*[w_n[:, None] for w_n in self.w])

    def precoders(self) -> np.ndarray:
        """Rows W·f_BB[k], shape (K, N_BS)."""
        return self.f_bb @ self.analog_matrix().T

    def invariant_errors(self) -> Dict[str, float]:
        """Worst deviation of each structural constraint."""
        errors = {}
        if self.constant_modulus:
            errors["tx_modulus"] = float(np.max(np.abs(np.abs(self.w) - 1 / np.sqrt(self.subarray_size))))
            errors["rx_modulus"] = float(np.max(np.abs(np.abs(self.v) - 1 / np.sqrt(self.v.size))))
        else:
            errors["tx_norm"] = float(np.max(np.abs(np.linalg.norm(self.w, axis=1) - 1)))
            errors["rx_norm"] = float(abs(np.linalg.norm(self.v) - 1))
        norms = np.linalg.norm(self.precoders(), axis=1)
        active = norms > 0
        errors["power"] = float(np.max(np.abs(norms[active] - 1))) if np.any(active) else 0.0
        return errors

    def check_invariants(self, tol: float = 1e-12):
        bad = {name: err for name, err in self.invariant_errors().items() if err > tol}
        if bad:
            raise StructuralError(f"beamformer constraints violated: {bad}")


def normalize_digital(W: np.ndarray, f_bb: np.ndarray) -> np.ndarray:
    """Scale each f_BB[k] so ‖W f_BB[k]‖ = 1; zero vectors stay zero."""
    f_bb = np.atleast_2d(np.asarray(f_bb, dtype=complex))
    norms = np.linalg.norm(f_bb @ W.T, axis=1)
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return f_bb * scale[:, None]


# ─── Codebook ──────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class BeamsteeringCodebook:
    """Steering vectors on a uniform (azimuth × elevation) grid, azimuth-major."""

    azimuths: np.ndarray
    elevations: np.ndarray
    vectors: np.ndarray
    bits_azimuth: int
    bits_elevation: int
    geometry: UpaGeometry

    def __len__(self) -> int:
        return self.vectors.shape[1]

    @property
    def entries(self) -> List[Tuple[float, float, np.ndarray]]:
        return [(float(a), float(e), self.vectors[:, i])
                for i, (a, e) in enumerate(zip(self.azimuths, self.elevations))]


def build_codebook(geometry: UpaGeometry, bits_az: int, bits_el: int) -> BeamsteeringCodebook:
    """2^bits_az azimuths over [−π, π) × 2^bits_el elevations over [−π/2, π/2)."""
    if bits_az < 1 or bits_el < 1:
        raise DomainError(f"codebook bits must be ≥ 1, got ({bits_az}, {bits_el})")
    n_az, n_el = 2 ** bits_az, 2 ** bits_el
    az_grid = -np.pi + 2 * np.pi * np.arange(n_az) / n_az
    el_grid = -np.pi / 2 + np.pi * np.arange(n_el) / n_el
    az, el = np.meshgrid(az_grid, el_grid, indexing="ij")
    az, el = az.ravel(), el.ravel()
    return BeamsteeringCodebook(az, el, steering_matrix(geometry, az, el),
                                bits_az, bits_el, geometry)


def argmax_lowest(values: np.ndarray, rtol: float = TIE_RTOL) -> int:
    """Index of the maximum; near-ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    best = np.max(values)
    return int(np.flatnonzero(values >= best - rtol * abs(best))[0])


# ─── Analog Search ─────────────────────────────────────

def normalization_factor(f, d: float, absorption: AbsorptionModel):
    """F(f_k, d) = (c/(4πf_k d))²·e^{−k_abs(f_k)d}."""
    return path_gain(f, d, absorption)


def channel_normalization(channel: ChannelRealization) -> np.ndarray:
    """F(f_k, d) for every subcarrier of a realization."""
    freqs = channel.center_frequencies
    absorption = channel.absorption or AbsorptionModel.constant(
        0.0, float(freqs.min()), float(freqs.max()) * (1 + 1e-9))
    return np.atleast_1d(normalization_factor(freqs, channel.distance, absorption))


def receive_objective(channel: ChannelRealization, vectors: np.ndarray) -> np.ndarray:
    """Σ_k ‖a^H H[k]‖²/F(f_k, d) for every candidate column a."""
    H = channel.per_subcarrier
    weights = 1.0 / channel_normalization(channel)
    cov = np.einsum("k,kub,kvb->uv", weights, H, H.conj())
    return np.real(np.einsum("ul,uv,vl->l", vectors.conj(), cov, vectors))


def transmit_objective(channel: ChannelRealization, v: np.ndarray, vectors: np.ndarray,
                       chain: int) -> np.ndarray:
    """Σ_k |v^H H_n[k] a|²/F(f_k, d) for every candidate column a of chain n."""
    H_n = channel.subarray(chain, vectors.shape[0])
    y = np.einsum("u,kus->ks", np.asarray(v).conj(), H_n)
    y = y / np.sqrt(channel_normalization(channel))[:, None]
    return np.sum(np.abs(y @ vectors) ** 2, axis=0)


def search_receive_beam(channel: ChannelRealization,
                        codebook: BeamsteeringCodebook) -> Tuple[Tuple[float, float], np.ndarray]:
    if len(codebook) == 0:
        raise DomainError("receive codebook is empty")
    if codebook.geometry.size != channel.n_u:
        raise StructuralError(f"receive codebook for {codebook.geometry.size} antennas, N_U={channel.n_u}")
    best = argmax_lowest(receive_objective(channel, codebook.vectors))
    return (float(codebook.azimuths[best]), float(codebook.elevations[best])), codebook.vectors[:, best]


def search_transmit_beams(channel: ChannelRealization, v: np.ndarray,
                          codebook: BeamsteeringCodebook) -> Tuple[List[Tuple[float, float]], np.ndarray]:
    """Independent per-chain argmax over the transmit codebook."""
    size = codebook.geometry.size
    if channel.n_bs % size:
        raise StructuralError(f"N_BS={channel.n_bs} is not a multiple of subarray size {size}")
    angles, beams = [], []
    for chain in range(channel.n_bs // size):
        best = argmax_lowest(transmit_objective(channel, v, codebook.vectors, chain))
        angles.append((float(codebook.azimuths[best]), float(codebook.elevations[best])))
        beams.append(codebook.vectors[:, best])
    return angles, np.array(beams)


def effective_channel(channel, bf: HybridBeamformer) -> np.ndarray:
    """ĥ[k] = v^H H[k] W, shape (K, N_RF)."""
    H = channel.per_subcarrier if isinstance(channel, ChannelRealization) else np.asarray(channel)
    W = bf.analog_matrix()
    if H.shape[1] != bf.v.size or H.shape[2] != W.shape[0]:
        raise StructuralError(
            f"channel {H.shape[1:]} does not fit v ({bf.v.size}) and W ({W.shape[0]} rows)")
    return np.einsum("u,kub->kb", bf.v.conj(), H) @ W


# ─── RCI Digital Stage ─────────────────────────────────

def _taps(taps: Taps) -> Tuple[complex, complex, complex]:
    if isinstance(taps, TruncatedIbi):
        return taps.taps
    if isinstance(taps, IbiSequence):
        return central_taps(taps)
    s_m1, s_0, s_p1 = taps
    return complex(s_m1), complex(s_0), complex(s_p1)


def combined_channel(effective: np.ndarray, taps: Taps, k: int) -> np.ndarray:
    """Rows S_0ĥ[k], S_−1ĥ[k−1], S_1ĥ[k+1]; edge subcarriers drop the missing neighbour."""
    s_m1, s_0, s_p1 = _taps(taps)
    rows = [s_0 * effective[k]]
    if k > 0:
        rows.append(s_m1 * effective[k - 1])
    if k < effective.shape[0] - 1:
        rows.append(s_p1 * effective[k + 1])
    return np.vstack(rows)


def rci_with_loading(effective: np.ndarray, taps: Taps, beta: float,
                     compensation: Optional[np.ndarray] = None) -> np.ndarray:
    """Column k of (H_comb^H H_comb + βI)^{−1} H_comb^H for every subcarrier.

    With `compensation` the k-th combined channel is built from ĥ[λ]·F[k],
    since f_BB[k] = F[k]·f reaches subcarrier λ through H[λ].
    """
    h = np.atleast_2d(np.asarray(effective, dtype=complex))
    K, n = h.shape
    if compensation is not None and compensation.shape[:2] != (K, n):
        raise StructuralError(f"compensation shape {compensation.shape} for {K} subcarriers")
    n_out = n if compensation is None else compensation.shape[2]
    out = np.zeros((K, n_out), dtype=complex)
    for k in range(K):
        basis = h if compensation is None else h @ compensation[k]
        comb = combined_channel(basis, taps, k)
        gram = comb.conj().T @ comb + beta * np.eye(n_out)
        out[k] = np.linalg.solve(gram, comb[0].conj())
    return out


def rci_digital(effective: np.ndarray, taps: Taps, psi: float,
                compensation: Optional[np.ndarray] = None) -> np.ndarray:
    """RCI digital vectors before power normalization, loading β = ψ."""
    if psi <= 0:
        raise DomainError(f"ψ must be positive, got {psi}")
    return rci_with_loading(effective, taps, psi, compensation)


def windowed_sinr(effective: np.ndarray, taps: Taps, f_bb: np.ndarray, psi: float) -> np.ndarray:
    """3-tap SINR of unit-power digital vectors (W^H W = I assumed)."""
    h = np.atleast_2d(effective)
    out = np.zeros(h.shape[0])
    for k in range(h.shape[0]):
        f = f_bb[k]
        norm = np.linalg.norm(f)
        if norm == 0:
            continue
        received = combined_channel(h, taps, k) @ (f / norm)
        power = np.abs(received) ** 2
        out[k] = power[0] / (np.sum(power[1:]) + psi)
    return out


def rci_sinr_closed_form(effective: np.ndarray, taps: Taps, psi: float) -> np.ndarray:
    """γ_k = tr{|S_0|²R̂[k](Σ_{λ≠k}|S_{λ−k}|²R̂[λ] + ψI)^{−1}} over the 3-tap window."""
    h = np.atleast_2d(effective)
    n = h.shape[1]
    out = np.zeros(h.shape[0])
    for k in range(h.shape[0]):
        comb = combined_channel(h, taps, k)
        interference = comb[1:].conj().T @ comb[1:] + psi * np.eye(n)
        signal = np.outer(comb[0].conj(), comb[0])
        out[k] = float(np.real(np.trace(signal @ np.linalg.inv(interference))))
    return out


def rci_signal_fraction(effective: np.ndarray, taps: Taps, psi: float) -> np.ndarray:
    """ω_k = S_0ĥ[k](H_comb^H H_comb + ψI)^{−1}(S_0ĥ[k])^H; γ_k = ω_k/(1 − ω_k)."""
    h = np.atleast_2d(effective)
    n = h.shape[1]
    out = np.zeros(h.shape[0])
    for k in range(h.shape[0]):
        comb = combined_channel(h, taps, k)
        gram = comb.conj().T @ comb + psi * np.eye(n)
        out[k] = float(np.real(comb[0] @ np.linalg.solve(gram, comb[0].conj())))
    return out


# ─── Scheme ────────────────────────────────────────────

def scheme_codebooks(config: SystemConfig) -> Tuple[BeamsteeringCodebook, BeamsteeringCodebook]:
    """(receive codebook 𝒱, transmit subarray codebook 𝒲)."""
    bits = (config.codebook_bits_az, config.codebook_bits_el)
    return build_codebook(ue_geometry(config), *bits), build_codebook(subarray_geometry(config), *bits)


def run_codebook_scheme(channel: ChannelRealization, config: SystemConfig,
                        ibi: Optional[IbiSequence] = None,
                        receive: Optional[np.ndarray] = None,
                        realization_id: int = 0) -> Tuple[HybridBeamformer, SchemeResult]:
    """Codebook search for v and w_n, then RCI digital beamforming.

    `receive` replaces the searched combiner (shared-combiner comparisons).
    """
    start = time.perf_counter()
    ibi = ibi or ibi_for(config)
    codebook_v, codebook_w = scheme_codebooks(config)

    if receive is None:
        angles, v = search_receive_beam(channel, codebook_v)
        logger.debug(f"Receive beam az={np.rad2deg(angles[0]):.1f}° el={np.rad2deg(angles[1]):.1f}°")
    else:
        v = np.asarray(receive, dtype=complex)
    _, w = search_transmit_beams(channel, v, codebook_w)

    analog = HybridBeamformer(v, w, np.zeros((channel.num_subcarriers, w.shape[0])))
    h = effective_channel(channel, analog)
    f_bb = normalize_digital(analog.analog_matrix(), rci_digital(h, central_taps(ibi), config.psi))
    bf = HybridBeamformer(v, w, f_bb)

    sinr = sinr_per_subcarrier(channel, bf, ibi, config.psi)
    result = SchemeResult.from_sinr(sinr, config.bandwidth_hz, Scheme.CODEBOOK,
                                    realization_id, time.perf_counter() - start)
    return bf, result
