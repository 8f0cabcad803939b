#!/usr/bin/env python3
"""
Config tests — presets, derived quantities, config files, env overrides, seeding.
Run: pytest test_config.py  (or python test_config.py)
"""

import os
import sys
import tempfile

import numpy as np
import pytest

from config import (
    SystemConfig, SweepSpec, ConfigError, DomainError, DEFAULT_SCHEMES,
    apply_env_overrides, db_to_linear, dbm_to_watts, derive_rng, linear_to_db,
    load_config, watts_to_dbm,
)


def _write(text: str) -> str:
    fd, path = tempfile.mkstemp(suffix=".cfg")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def test_desk_preset_derived_quantities():
    config = SystemConfig.desk()
    assert config.num_subcarriers == 16
    assert config.n_bs == 64
    assert config.n_u == 16
    assert config.subarray_size == 16
    # ψ = 16·10^-10.5 W / 10^-2 W
    assert config.psi == pytest.approx(16 * 10 ** -10.5 / 1e-2, rel=1e-12)


def test_paper_preset_dimensions():
    config = SystemConfig.preset("paper")
    assert SystemConfig.preset("full") == config == SystemConfig.paper()
    assert config.num_subcarriers == 128
    assert config.n_bs == 4 * 64
    assert config.n_u == 64
    with pytest.raises(ConfigError):
        SystemConfig.preset("huge")


def test_unit_conversions():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert watts_to_dbm(1e-3) == pytest.approx(0.0, abs=1e-12)
    assert db_to_linear(20.0) == pytest.approx(100.0)
    assert linear_to_db(0.0) == float("-inf")


def test_subcarrier_frequencies():
    config = SystemConfig.desk()
    freqs = config.subcarrier_frequencies
    assert freqs[0] == pytest.approx(300.5e9)
    assert np.allclose(np.diff(freqs), 1e9)
    assert config.f_end_hz == pytest.approx(316e9)


def test_domain_validation():
    with pytest.raises(DomainError):
        SystemConfig.desk().replace(epsilon_cfo=1.0)
    with pytest.raises(DomainError):
        SystemConfig.desk().replace(nmse=1.0)
    with pytest.raises(DomainError):
        SystemConfig.desk().replace(distance_m=0.0)
    with pytest.raises(DomainError):
        SystemConfig.desk().replace(p_k=0.0)


def test_n_rf_sweep_keeps_array_size():
    config = SystemConfig.desk()
    two = config.with_sweep_value("n_rf", 2)
    assert (two.n_rf, two.m_t, two.n_bs) == (2, 8, 64)
    eight = config.with_sweep_value("n_rf", 8)
    assert (eight.m_t, eight.n_bs) == (2, 64)
    with pytest.raises(DomainError):
        config.with_sweep_value("n_rf", 3)
    with pytest.raises(ConfigError):
        config.with_sweep_value("bandwidth", 1.0)


def test_sweep_spec_aliases_and_guards():
    spec = SweepSpec("p_s", (0, 10), ("eigen",))
    assert spec.variable == "p_s_dbm"
    assert spec.values == (0.0, 10.0)
    with pytest.raises(ConfigError):
        SweepSpec("p_s_dbm", (), ("eigen",))
    with pytest.raises(ConfigError):
        SweepSpec("p_s_dbm", (1.0,), ())


def test_load_config_with_sweep():
    path = _write(
        "# scenario\n"
        "p_s_dbm = 20\n"
        "num_subcarriers = 8   # fewer tones\n"
        "antenna_gate = true\n"
        "absorption_table = tables/abs.txt\n"
        "sweep_variable = d\n"
        "sweep_values = 1, 2, 5\n"
    )
    try:
        config, spec = load_config(path)
    finally:
        os.remove(path)
    assert config.p_s_dbm == 20.0
    assert config.num_subcarriers == 8
    assert config.antenna_gate is True
    assert config.absorption_table == os.path.join(os.path.dirname(path), "tables/abs.txt")
    assert spec.variable == "distance_m"
    assert spec.values == (1.0, 2.0, 5.0)
    assert spec.schemes == DEFAULT_SCHEMES


def test_load_config_errors_carry_line_numbers():
    for text, fragment in (("p_s_dbm = 10\nbogus = 1\n", ":2:"),
                           ("num_subcarriers = many\n", ":1:"),
                           ("\n\np_s_dbm 10\n", ":3:")):
        path = _write(text)
        try:
            with pytest.raises(ConfigError) as err:
                load_config(path)
            assert fragment in str(err.value)
        finally:
            os.remove(path)


def test_env_overrides():
    saved = {k: os.environ.get(k) for k in ("SEED", "WORKERS")}
    try:
        os.environ["SEED"] = "77"
        os.environ["WORKERS"] = "2"
        config = apply_env_overrides(SystemConfig.desk())
        assert config.master_seed == 77
        assert config.workers == 2
    finally:
        for key, value in saved.items():
            if value is None:
                os.environ.pop(key, None)
            else:
                os.environ[key] = value


def test_derive_rng_streams():
    a = derive_rng(2024, 0, 5).standard_normal(4)
    b = derive_rng(2024, 0, 5).standard_normal(4)
    c = derive_rng(2024, 1, 5).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


if __name__ == "__main__":
    tests = [(name, fn) for name, fn in list(globals().items())
             if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"✅ {name}")
        except Exception as e:
            failed += 1
            print(f"❌ {name}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} tests passed")
    sys.exit(1 if failed else 0)
