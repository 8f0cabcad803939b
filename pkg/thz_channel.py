"""
THz Channel — Wideband 3D Channel Synthesis
=============================================
- Spreading + molecular absorption path loss
- UPA steering vectors and the closed-form equivalent array gain
- 1 LOS ray + clustered NLOS rays (Gaussian-mixture angle spread)
- Per-subcarrier channel matrices H[k] through the pulse-shaping DFT P_r(k, τ)

Array layout: element (m, n) of an M×N UPA sits at index m·N + n. The full BS
array is (N_RF·M_t) × N_t, so chain n drives the contiguous column block
[n·M_tN_t, (n+1)·M_tN_t) of every H[k].
"""

import hashlib
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from config import SystemConfig, DomainError, StructuralError

logger = logging.getLogger("thz_channel")

Pulse = Callable[[np.ndarray], np.ndarray]


# ─── Geometry ──────────────────────────────────────────

@dataclass(frozen=True)
class UpaGeometry:
    """M×N uniform planar array, spacing in carrier wavelengths."""

    rows: int
    cols: int
    element_spacing: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"UPA needs rows, cols ≥ 1, got {self.rows}×{self.cols}")
        if self.element_spacing <= 0:
            raise DomainError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.rows * self.cols


def bs_geometry(config: SystemConfig) -> UpaGeometry:
    return UpaGeometry(config.n_rf * config.m_t, config.n_t, config.element_spacing)


def subarray_geometry(config: SystemConfig) -> UpaGeometry:
    return UpaGeometry(config.m_t, config.n_t, config.element_spacing)


def ue_geometry(config: SystemConfig) -> UpaGeometry:
    return UpaGeometry(config.m_r, config.n_r, config.element_spacing)


def _direction_cosines(azimuth, elevation) -> Tuple[np.ndarray, np.ndarray]:
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    return np.cos(az) * np.sin(el), np.sin(az) * np.sin(el)


def steering_matrix(geometry: UpaGeometry, azimuths: Sequence[float],
                    elevations: Sequence[float]) -> np.ndarray:
    """Columns are unit-norm steering vectors, shape (rows·cols, L)."""
    ux, uy = _direction_cosines(np.ravel(azimuths), np.ravel(elevations))
    m = np.arange(geometry.rows)[:, None, None]
    n = np.arange(geometry.cols)[None, :, None]
    phase = 2 * np.pi * geometry.element_spacing * (m * ux[None, None, :] + n * uy[None, None, :])
    return np.exp(1j * phase).reshape(geometry.size, -1) / np.sqrt(geometry.size)


def steering_vector(geometry: UpaGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Entries e^{j2πa(m·cosθ·sinφ + n·sinθ·sinφ)}/√(MN); entry (0,0) is real positive."""
    return steering_matrix(geometry, [azimuth], [elevation])[:, 0]


def _dirichlet(count: int, x: np.ndarray) -> np.ndarray:
    """Σ_{m<count} e^{j2mx} = e^{j(count−1)x}·sin(count·x)/sin(x)."""
    x = np.asarray(x, dtype=float)
    turns = np.round(x / np.pi)
    delta = x - turns * np.pi
    sign = np.where(np.mod(turns * (count - 1), 2) == 0, 1.0, -1.0)
    small = np.abs(delta) < 1e-12
    ratio = np.where(small, float(count),
                     np.sin(count * delta) / np.where(small, 1.0, np.sin(delta)))
    return np.exp(1j * (count - 1) * x) * sign * ratio


def equivalent_array_gain(geometry: UpaGeometry, target: Tuple[float, float],
                          actual: Tuple[float, float]) -> complex:
    """A^eq = √(MN)·a^H(target)·a(actual); modulus peaks at √(MN) when actual = target."""
    ux_t, uy_t = _direction_cosines(*target)
    ux_a, uy_a = _direction_cosines(*actual)
    x = np.pi * geometry.element_spacing * (ux_a - ux_t)
    y = np.pi * geometry.element_spacing * (uy_a - uy_t)
    value = _dirichlet(geometry.rows, x) * _dirichlet(geometry.cols, y)
    return complex(value / np.sqrt(geometry.size))


# ─── Absorption & Path Loss ────────────────────────────

@dataclass(frozen=True)
class AbsorptionModel:
    """k_abs(f) in 1/m, piecewise-linear between (frequency Hz, k_abs) samples."""

    samples: Tuple[Tuple[float, float], ...]
    interpolation: str = "piecewise-linear"

    def __post_init__(self):
        samples = tuple((float(f), float(k)) for f, k in self.samples)
        object.__setattr__(self, "samples", samples)
        if self.interpolation != "piecewise-linear":
            raise DomainError(f"unsupported interpolation '{self.interpolation}'")
        if len(samples) < 2:
            raise DomainError("absorption model needs at least two samples")
        if np.any(np.diff(self.frequencies) <= 0):
            raise DomainError("absorption frequencies must be strictly increasing")
        if np.any(self.coefficients < 0):
            raise DomainError("absorption coefficients must be non-negative")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.samples])

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([k for _, k in self.samples])

    @property
    def coverage(self) -> Tuple[float, float]:
        return self.samples[0][0], self.samples[-1][0]

    def covers(self, f_lo: float, f_hi: float) -> bool:
        lo, hi = self.coverage
        return lo <= f_lo and f_hi <= hi

    def k_abs(self, frequency):
        f = np.asarray(frequency, dtype=float)
        lo, hi = self.coverage
        slack = 1e-12 * hi
        if np.any(f < lo - slack) or np.any(f > hi + slack):
            raise DomainError(
                f"frequency outside absorption coverage [{lo:.4g}, {hi:.4g}] Hz")
        value = np.interp(f, self.frequencies, self.coefficients)
        return float(value) if value.ndim == 0 else value

    @classmethod
    def constant(cls, k_abs: float, f_lo: float, f_hi: float) -> "AbsorptionModel":
        return cls(((f_lo, k_abs), (f_hi, k_abs)))

    @classmethod
    def from_file(cls, path: str) -> "AbsorptionModel":
        """Read `frequency_hz,k_abs_per_m` lines; '#' starts a comment."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as e:
            raise OSError(f"cannot read absorption table {path}: {e}") from e

        samples = []
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 2:
                raise DomainError(f"{path}:{lineno}: expected 'frequency_hz,k_abs_per_m'")
            try:
                samples.append((float(parts[0]), float(parts[1])))
            except ValueError as e:
                raise DomainError(f"{path}:{lineno}: {e}") from e
        logger.debug(f"Loaded {len(samples)} absorption samples from {path}")
        return cls(tuple(samples))


def absorption_model(config: SystemConfig) -> AbsorptionModel:
    """Table from config if set, else constant k_abs over the configured window."""
    if config.absorption_table:
        model = AbsorptionModel.from_file(config.absorption_table)
        if not model.covers(config.f_start_hz, config.f_end_hz):
            raise DomainError(
                f"absorption table {config.absorption_table} does not cover "
                f"{config.f_start_hz:.4g}-{config.f_end_hz:.4g} Hz")
        return model
    return AbsorptionModel.constant(config.k_abs_default, config.f_start_hz, config.f_end_hz)


def path_gain(f, d: float, absorption: AbsorptionModel):
    """(c/(4πfd))²·exp(−k_abs(f)·d), linear power gain."""
    if d <= 0:
        raise DomainError(f"distance must be positive, got {d}")
    f_arr = np.asarray(f, dtype=float)
    k = absorption.k_abs(f_arr)
    gain = (SPEED_OF_LIGHT / (4 * np.pi * f_arr * d)) ** 2 * np.exp(-np.asarray(k) * d)
    return float(gain) if np.ndim(gain) == 0 else gain


# ─── Paths ─────────────────────────────────────────────

class PathKind(str, Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class PathComponent:
    """One ray. complex_gain is α at the first subcarrier centre."""

    kind: PathKind
    complex_gain: complex
    delay: float
    aod_azimuth: float
    aod_elevation: float
    aoa_azimuth: float
    aoa_elevation: float
    cluster_id: int
    path_length: float
    reflection: float = 1.0
    phase_offset: float = 0.0
    antenna_gain: float = 1.0
    pulse_delay: float = 0.0

    def gain_at(self, frequency, absorption: AbsorptionModel):
        """α(f) = √(path_gain(f, length))·Γ·e^{jϕ}·e^{−j2πfτ}."""
        f = np.asarray(frequency, dtype=float)
        amplitude = np.sqrt(path_gain(f, self.path_length, absorption)) * self.reflection
        return amplitude * np.exp(1j * self.phase_offset) * np.exp(-2j * np.pi * f * self.delay)


def _wrap_azimuth(angle: float) -> float:
    return float(np.mod(angle + np.pi, 2 * np.pi) - np.pi)


def _clip_elevation(angle: float) -> float:
    return float(np.clip(angle, -np.pi / 2, np.pi / 2))


def _unit_direction(azimuth: float, elevation: float) -> np.ndarray:
    return np.array([np.cos(elevation) * np.cos(azimuth),
                     np.cos(elevation) * np.sin(azimuth),
                     np.sin(elevation)])


def _inside_cone(azimuth: float, elevation: float, axis: Tuple[float, float],
                 half_angle: float) -> bool:
    cos_sep = np.dot(_unit_direction(azimuth, elevation), _unit_direction(*axis))
    return bool(np.arccos(np.clip(cos_sep, -1.0, 1.0)) <= half_angle)


def _gmm_shifts(config: SystemConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    first = rng.random(count) < config.gmm_weight1
    sigma = np.deg2rad(np.where(first, config.gmm_sigma1_deg, config.gmm_sigma2_deg))
    return rng.standard_normal(count) * sigma


def generate_paths(config: SystemConfig, rng: np.random.Generator,
                   absorption: Optional[AbsorptionModel] = None) -> List[PathComponent]:
    """1 LOS ray + n_clusters·rays_per_cluster NLOS rays."""
    absorption = absorption or absorption_model(config)
    f_ref = float(config.subcarrier_frequencies[0])
    d = config.distance_m
    los_delay = d / SPEED_OF_LIGHT
    amplitude = np.sqrt(config.antenna_gain_linear)
    window = (config.cyclic_prefix - 1) * config.sampling_time
    half_angle = np.deg2rad(config.beamwidth_deg) / 2

    aod_az, aod_el, aoa_az, aoa_el = rng.uniform(
        [-np.pi, -np.pi / 2, -np.pi, -np.pi / 2], [np.pi, np.pi / 2, np.pi, np.pi / 2])
    los = PathComponent(
        kind=PathKind.LOS, complex_gain=0j, delay=los_delay,
        aod_azimuth=float(aod_az), aod_elevation=float(aod_el),
        aoa_azimuth=float(aoa_az), aoa_elevation=float(aoa_el),
        cluster_id=0, path_length=d, antenna_gain=amplitude,
        pulse_delay=config.sampling_time)
    paths = [los]

    for cluster in range(1, config.n_clusters + 1):
        centre = rng.uniform([-np.pi, -np.pi / 2, -np.pi, -np.pi / 2],
                             [np.pi, np.pi / 2, np.pi, np.pi / 2])
        for _ in range(config.rays_per_cluster):
            shift = _gmm_shifts(config, rng, 4)
            excess = rng.uniform(config.excess_min, config.excess_max)
            phase = rng.uniform(0.0, 2 * np.pi)
            length = d * (1.0 + excess)
            delay = length / SPEED_OF_LIGHT

            t_az, t_el = _wrap_azimuth(centre[0] + shift[0]), _clip_elevation(centre[1] + shift[1])
            r_az, r_el = _wrap_azimuth(centre[2] + shift[2]), _clip_elevation(centre[3] + shift[3])

            gain = amplitude
            if config.antenna_gate and not (
                    _inside_cone(t_az, t_el, (los.aod_azimuth, los.aod_elevation), half_angle)
                    and _inside_cone(r_az, r_el, (los.aoa_azimuth, los.aoa_elevation), half_angle)):
                gain = 0.0

            excess_delay = np.mod(delay - los_delay, window) if window > 0 else 0.0
            paths.append(PathComponent(
                kind=PathKind.NLOS, complex_gain=0j, delay=delay,
                aod_azimuth=t_az, aod_elevation=t_el, aoa_azimuth=r_az, aoa_elevation=r_el,
                cluster_id=cluster, path_length=length,
                reflection=config.reflection_coeff, phase_offset=float(phase),
                antenna_gain=gain, pulse_delay=config.sampling_time + float(excess_delay)))

    # α at the first subcarrier, filled once the geometry is fixed
    paths = [replace(p, complex_gain=complex(p.gain_at(f_ref, absorption))) for p in paths]
    logger.debug(f"Generated {len(paths)} paths ({len(paths) - 1} NLOS)")
    return paths


# ─── Pulse Shaping ─────────────────────────────────────

def raised_cosine(t, sampling_time: float, rolloff: float = 1.0,
                  span: Optional[int] = None) -> np.ndarray:
    """Raised-cosine pulse centred at 0, optionally truncated to |t| ≤ span·T_s/2."""
    t = np.asarray(t, dtype=float)
    x = t / sampling_time
    out = np.sinc(x)
    if rolloff > 0:
        den = 1.0 - (2.0 * rolloff * x) ** 2
        singular = np.abs(den) < 1e-10
        limit = (np.pi / 4) * np.sinc(1.0 / (2.0 * rolloff))
        out = np.where(singular, limit,
                       np.sinc(x) * np.cos(np.pi * rolloff * x) / np.where(singular, 1.0, den))
    if span is not None:
        out = np.where(np.abs(t) <= span * sampling_time / 2 * (1 + 1e-12), out, 0.0)
    return out


def default_pulse(config: SystemConfig) -> Pulse:
    return lambda t: raised_cosine(t, config.sampling_time, config.pulse_rolloff,
                                   span=config.cyclic_prefix)


def unit_impulse(sampling_time: float) -> Pulse:
    """p(t) = 1 at t = 0, zero at every other sampling instant."""
    return lambda t: np.where(np.abs(np.asarray(t, dtype=float)) < 1e-6 * sampling_time, 1.0, 0.0)


def _pulse_matrix(taus: Sequence[float], config: SystemConfig,
                  pulse: Optional[Pulse] = None) -> np.ndarray:
    """P_r(k, τ) for every τ (rows) and k = 1..K (columns)."""
    pulse = pulse or default_pulse(config)
    K, Q = config.num_subcarriers, config.cyclic_prefix
    q = np.arange(1, Q + 1)
    k = np.arange(1, K + 1)
    samples = pulse(q[None, :] * config.sampling_time - np.asarray(taus, dtype=float)[:, None])
    return samples @ np.exp(-2j * np.pi * np.outer(q, k) / K)


def pulse_spectrum(k: int, tau: float, config: SystemConfig,
                   pulse: Optional[Pulse] = None) -> complex:
    """P_r(k, τ) = Σ_{q=1}^{Q} p_r(qT_s − τ)·e^{−j2πkq/K}, k counted from 1."""
    if not 1 <= k <= config.num_subcarriers:
        raise DomainError(f"subcarrier {k} outside 1..{config.num_subcarriers}")
    pulse = pulse or default_pulse(config)
    q = np.arange(1, config.cyclic_prefix + 1)
    samples = pulse(q * config.sampling_time - tau)
    return complex(np.sum(samples * np.exp(-2j * np.pi * k * q / config.num_subcarriers)))


# ─── Channel Realization ───────────────────────────────

@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """H[k] for k = 0..K-1 (array index), shape (K, N_U, N_BS). Read-only."""

    per_subcarrier: np.ndarray
    paths: Tuple[PathComponent, ...]
    center_frequencies: np.ndarray
    distance: float
    absorption: Optional[AbsorptionModel] = None

    def __post_init__(self):
        H = np.array(self.per_subcarrier, dtype=complex)
        if H.ndim != 3 or H.shape[0] < 1:
            raise StructuralError(f"expected (K, N_U, N_BS) matrices, got shape {H.shape}")
        freqs = np.array(self.center_frequencies, dtype=float).ravel()
        if freqs.shape[0] != H.shape[0]:
            raise StructuralError(
                f"{freqs.shape[0]} centre frequencies for {H.shape[0]} subcarriers")
        H.setflags(write=False)
        freqs.setflags(write=False)
        object.__setattr__(self, "per_subcarrier", H)
        object.__setattr__(self, "center_frequencies", freqs)
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def num_subcarriers(self) -> int:
        return self.per_subcarrier.shape[0]

    @property
    def n_u(self) -> int:
        return self.per_subcarrier.shape[1]

    @property
    def n_bs(self) -> int:
        return self.per_subcarrier.shape[2]

    def subarray(self, chain: int, size: int) -> np.ndarray:
        """H_n[k] for every k: the column block driven by RF chain `chain`."""
        if (chain + 1) * size > self.n_bs:
            raise StructuralError(f"chain {chain} with {size} antennas exceeds N_BS={self.n_bs}")
        return self.per_subcarrier[:, :, chain * size:(chain + 1) * size]

    def with_matrices(self, matrices: np.ndarray) -> "ChannelRealization":
        """Same metadata, different H[k] (e.g. an estimate of this channel)."""
        return ChannelRealization(matrices, self.paths, self.center_frequencies,
                                  self.distance, self.absorption)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.per_subcarrier.tobytes()).hexdigest()[:16]


def channel_from_paths(paths: Sequence[PathComponent], config: SystemConfig,
                       absorption: AbsorptionModel,
                       pulse: Optional[Pulse] = None) -> ChannelRealization:
    """H[k] = Σ_p α_p(f_k)·√(G_tG_r)·P_r(k, τ_p)·a_r,p·a_t,p^H."""
    freqs = config.subcarrier_frequencies
    a_t = steering_matrix(bs_geometry(config),
                          [p.aod_azimuth for p in paths], [p.aod_elevation for p in paths])
    a_r = steering_matrix(ue_geometry(config),
                          [p.aoa_azimuth for p in paths], [p.aoa_elevation for p in paths])
    gains = np.array([p.gain_at(freqs, absorption) * p.antenna_gain for p in paths])
    spectra = _pulse_matrix([p.pulse_delay for p in paths], config, pulse)
    H = np.einsum("pk,up,bp->kub", gains * spectra, a_r, a_t.conj())
    return ChannelRealization(H, tuple(paths), freqs, config.distance_m, absorption)


def realize_channel(config: SystemConfig, rng: np.random.Generator,
                    absorption: Optional[AbsorptionModel] = None,
                    pulse: Optional[Pulse] = None) -> ChannelRealization:
    absorption = absorption or absorption_model(config)
    paths = generate_paths(config, rng, absorption)
    return channel_from_paths(paths, config, absorption, pulse)
