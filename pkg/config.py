"""
Simulation Config — Scenario Parameters & Seeding
===================================================
- SystemConfig: every scenario knob, with desk / paper presets (full is an alias of paper)
- key = value config files (unknown keys are errors)
- .env overrides (SEED, WORKERS, LOG_LEVEL)
- dBm ↔ linear conversions, noise-to-signal ratio ψ = Kσ²/P_s
- Independent RNG streams derived from (master seed, keys...)
"""

import os
import logging
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

load_dotenv()
logger = logging.getLogger("config")


# ─── Errors ────────────────────────────────────────────

class DomainError(ValueError):
    """Numeric input outside the domain of an operation."""


class StructuralError(ValueError):
    """Array dimensions or ranks that do not fit together."""


class ConfigError(ValueError):
    """Malformed configuration file."""


# ─── Unit Conversions ──────────────────────────────────

def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        return float("-inf")
    return 10.0 * np.log10(value)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return linear_to_db(watts) + 30.0


# ─── Seeding ───────────────────────────────────────────

def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (master_seed, *keys).

    Stream keys in use: (0, r) channel of realization r, (1, r) CSI error,
    (2, r, k) randomization for subcarrier k.
    """
    return np.random.default_rng([int(master_seed), *[int(k) for k in keys]])


# ─── System Config ─────────────────────────────────────

SWEEP_VARIABLES = ("p_s_dbm", "distance_m", "n_rf", "nmse", "epsilon_cfo")
SWEEP_ALIASES = {"p_s": "p_s_dbm", "d": "distance_m", "n_rf": "n_rf",
                 "nmse": "nmse", "epsilon": "epsilon_cfo"}


@dataclass(frozen=True)
class SystemConfig:
    """One simulation scenario. Defaults are the desk-scale preset."""

    # Multi-carrier
    num_subcarriers: int = 16
    bandwidth_hz: float = 1e9
    f_start_hz: float = 300e9
    epsilon_cfo: float = 0.3
    cyclic_prefix: int = 16
    sampling_time: float = 7.8e-12
    pulse_rolloff: float = 1.0

    # Power
    p_s_dbm: float = 10.0
    noise_power_dbm: float = -75.0

    # Geometry
    distance_m: float = 5.0
    n_rf: int = 4
    m_t: int = 4
    n_t: int = 4
    m_r: int = 4
    n_r: int = 4
    element_spacing: float = 0.5

    # Codebooks
    codebook_bits_az: int = 3
    codebook_bits_el: int = 3

    # Channel
    n_clusters: int = 3
    rays_per_cluster: int = 1
    gmm_sigma1_deg: float = 2.0
    gmm_sigma2_deg: float = 6.0
    gmm_weight1: float = 0.7
    tx_gain_dbi: float = 20.0
    rx_gain_dbi: float = 20.0
    beamwidth_deg: float = 20.0
    antenna_gate: bool = False
    reflection_coeff: float = 0.15
    excess_min: float = 0.1
    excess_max: float = 0.5
    k_abs_default: float = 0.005
    absorption_table: Optional[str] = None

    # Imperfect CSI / robust design
    nmse: float = 0.002
    t_k: float = 1e-8
    p_k: float = 0.05
    n_candidates: int = 100
    robust_full_ibi: bool = False

    # Harness
    shared_combiner: bool = False
    n_realizations: int = 100
    master_seed: int = 2024
    workers: int = 4

    def __post_init__(self):
        positive = ("num_subcarriers", "bandwidth_hz", "f_start_hz", "cyclic_prefix",
                    "sampling_time", "distance_m", "n_rf", "m_t", "n_t", "m_r", "n_r",
                    "element_spacing", "codebook_bits_az", "codebook_bits_el",
                    "beamwidth_deg", "t_k", "n_candidates", "n_realizations", "workers")
        for name in positive:
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("n_clusters", "rays_per_cluster", "reflection_coeff",
                     "k_abs_default", "gmm_sigma1_deg", "gmm_sigma2_deg", "master_seed"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not abs(self.epsilon_cfo) < 1:
            raise DomainError(f"epsilon_cfo must satisfy |ε| < 1, got {self.epsilon_cfo}")
        if not 0 <= self.nmse < 1:
            raise DomainError(f"nmse must lie in [0, 1), got {self.nmse}")
        if not 0 < self.p_k < 1:
            raise DomainError(f"p_k must lie in (0, 1), got {self.p_k}")
        if not 0 <= self.gmm_weight1 <= 1:
            raise DomainError(f"gmm_weight1 must lie in [0, 1], got {self.gmm_weight1}")
        if not 0 <= self.excess_min <= self.excess_max:
            raise DomainError("excess path range must satisfy 0 ≤ excess_min ≤ excess_max")
        if not 0 <= self.pulse_rolloff <= 1:
            raise DomainError(f"pulse_rolloff must lie in [0, 1], got {self.pulse_rolloff}")

    # ─── Presets ───────────────────────────────────────

    @classmethod
    def desk(cls) -> "SystemConfig":
        """K=16, 4×4 subarrays, N_RF=4, 4×4 receiver, 100 realizations."""
        return cls()

    @classmethod
    def paper(cls) -> "SystemConfig":
        """Full-size scenario: K=128, 8×8 subarrays, 8×8 receiver."""
        return cls(num_subcarriers=128, m_t=8, n_t=8, m_r=8, n_r=8)

    @classmethod
    def preset(cls, scale: str) -> "SystemConfig":
        if scale == "desk":
            return cls.desk()
        if scale in ("paper", "full"):
            return cls.paper()
        raise ConfigError(f"unknown scale '{scale}' (expected desk, paper or full)")

    def replace(self, **overrides) -> "SystemConfig":
        return replace(self, **overrides)

    # ─── Derived quantities ────────────────────────────

    @property
    def subarray_size(self) -> int:
        return self.m_t * self.n_t

    @property
    def n_bs(self) -> int:
        return self.n_rf * self.subarray_size

    @property
    def n_u(self) -> int:
        return self.m_r * self.n_r

    @property
    def p_s_watts(self) -> float:
        return dbm_to_watts(self.p_s_dbm)

    @property
    def noise_watts(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    @property
    def psi(self) -> float:
        """ψ = K·σ_n²/P_s in linear units."""
        return self.num_subcarriers * self.noise_watts / self.p_s_watts

    @property
    def antenna_gain_linear(self) -> float:
        """Power gain G_t·G_r."""
        return db_to_linear(self.tx_gain_dbi + self.rx_gain_dbi)

    @property
    def subcarrier_frequencies(self) -> np.ndarray:
        """f_k = f_start + (k − ½)·B for k = 1..K."""
        k = np.arange(1, self.num_subcarriers + 1)
        return self.f_start_hz + (k - 0.5) * self.bandwidth_hz

    @property
    def f_end_hz(self) -> float:
        return self.f_start_hz + self.num_subcarriers * self.bandwidth_hz

    def with_sweep_value(self, variable: str, value: float) -> "SystemConfig":
        """Copy with one sweep variable set.

        An n_rf change keeps the total BS array fixed by rescaling m_t.
        """
        variable = SWEEP_ALIASES.get(variable, variable)
        if variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable '{variable}'")
        if variable == "n_rf":
            n_rf = int(round(value))
            rows = self.n_rf * self.m_t
            if n_rf <= 0 or rows % n_rf:
                raise DomainError(
                    f"n_rf={n_rf} does not divide the {rows}-row BS array")
            return self.replace(n_rf=n_rf, m_t=rows // n_rf)
        return self.replace(**{variable: float(value)})


# ─── Sweep Spec ────────────────────────────────────────

@dataclass(frozen=True)
class SweepSpec:
    """Sweep axis plus the scheme ids evaluated at every point."""

    variable: str
    values: Tuple[float, ...]
    schemes: Tuple[str, ...]

    def __post_init__(self):
        variable = SWEEP_ALIASES.get(self.variable, self.variable)
        if variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable '{self.variable}'")
        object.__setattr__(self, "variable", variable)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if not self.schemes:
            raise ConfigError("sweep needs at least one scheme")


# ─── Config File ───────────────────────────────────────

SWEEP_KEYS = ("sweep_variable", "sweep_values", "sweep_schemes")


def _parse_value(raw: str, default, name: str):
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false for {name}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if raw.lower() in ("", "none"):
        return None
    return raw


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def load_config(path: str,
                base: Optional[SystemConfig] = None) -> Tuple[SystemConfig, Optional[SweepSpec]]:
    """Parse a `key = value` file on top of `base` (desk preset by default)."""
    base = base or SystemConfig.desk()
    known = {f.name for f in fields(SystemConfig)}
    overrides: Dict[str, object] = {}
    sweep: Dict[str, str] = {}

    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key in SWEEP_KEYS:
            sweep[key] = raw
            continue
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            value = _parse_value(raw, getattr(base, key), key)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r} ({e})") from e
        if key == "absorption_table" and value and not os.path.isabs(value):
            value = os.path.join(os.path.dirname(os.path.abspath(path)), value)
        overrides[key] = value

    try:
        config = base.replace(**overrides)
    except DomainError as e:
        raise ConfigError(f"{path}: {e}") from e

    spec = None
    if sweep:
        if "sweep_variable" not in sweep or "sweep_values" not in sweep:
            raise ConfigError(f"{path}: sweep needs sweep_variable and sweep_values")
        try:
            values = [float(v) for v in _split_list(sweep["sweep_values"])]
        except ValueError as e:
            raise ConfigError(f"{path}: bad sweep_values: {e}") from e
        schemes = _split_list(sweep.get("sweep_schemes", "")) or list(DEFAULT_SCHEMES)
        spec = SweepSpec(sweep["sweep_variable"], tuple(values), tuple(schemes))

    logger.info(f"Loaded {len(overrides)} overrides from {path}")
    return config, spec


def apply_env_overrides(config: SystemConfig) -> SystemConfig:
    """SEED and WORKERS from the environment (or .env)."""
    overrides = {}
    seed = os.getenv("SEED", "").strip()
    if seed:
        overrides["master_seed"] = int(seed)
    workers = os.getenv("WORKERS", "").strip()
    if workers:
        overrides["workers"] = int(workers)
    if overrides:
        logger.info(f"Environment overrides: {overrides}")
        return config.replace(**overrides)
    return config


DEFAULT_SCHEMES = ("fully_digital", "eigen", "codebook", "existing_hybrid")
