#!/usr/bin/env python3
"""
THz channel tests — path loss, absorption tables, steering vectors, paths, H[k].
Run: pytest test_thz_channel.py  (or python test_thz_channel.py)
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

from config import SystemConfig, DomainError, derive_rng
from thz_channel import (
    AbsorptionModel, PathKind, UpaGeometry, absorption_model, channel_from_paths,
    equivalent_array_gain, generate_paths, path_gain, pulse_spectrum, raised_cosine,
    realize_channel, steering_matrix, steering_vector, unit_impulse,
)

HERE = os.path.dirname(os.path.abspath(__file__))
TABLE = os.path.join(HERE, "tables", "absorption_300_450ghz.txt")


def test_spreading_loss_at_300ghz():
    free = AbsorptionModel.constant(0.0, 299e9, 301e9)
    assert path_gain(300e9, 5.0, free) == pytest.approx(2.533e-10, rel=2e-3)


def test_absorption_factor():
    free = AbsorptionModel.constant(0.0, 299e9, 301e9)
    lossy = AbsorptionModel.constant(0.01, 299e9, 301e9)
    ratio = path_gain(300e9, 10.0, lossy) / path_gain(300e9, 10.0, free)
    assert ratio == pytest.approx(np.exp(-0.1), rel=1e-12)


def test_path_gain_domain_errors():
    model = AbsorptionModel.constant(0.005, 300e9, 316e9)
    with pytest.raises(DomainError):
        path_gain(300e9, 0.0, model)
    with pytest.raises(DomainError):
        path_gain(400e9, 5.0, model)


def test_path_gain_decreases_with_frequency_and_distance():
    model = absorption_model(SystemConfig.desk())
    freqs = SystemConfig.desk().subcarrier_frequencies
    gains = path_gain(freqs, 5.0, model)
    assert np.all(np.diff(gains) < 0)
    assert path_gain(freqs[0], 2.0, model) > path_gain(freqs[0], 5.0, model)


def test_absorption_table_file():
    model = AbsorptionModel.from_file(TABLE)
    assert model.covers(300e9, 450e9)
    assert model.k_abs(300e9) == pytest.approx(0.0021)
    assert model.k_abs(305e9) == pytest.approx((0.0021 + 0.0032) / 2)
    config = SystemConfig.desk().replace(absorption_table=TABLE)
    assert absorption_model(config).samples == model.samples


def test_absorption_model_rejects_bad_samples():
    with pytest.raises(DomainError):
        AbsorptionModel(((300e9, 0.1),))
    with pytest.raises(DomainError):
        AbsorptionModel(((310e9, 0.1), (300e9, 0.1)))
    with pytest.raises(DomainError):
        AbsorptionModel(((300e9, -0.1), (310e9, 0.1)))


def test_steering_vectors_unit_norm_constant_modulus():
    geometry = UpaGeometry(4, 4)
    rng = np.random.default_rng(3)
    A = steering_matrix(geometry, rng.uniform(-np.pi, np.pi, 10), rng.uniform(-np.pi / 2, np.pi / 2, 10))
    assert A.shape == (16, 10)
    assert np.allclose(np.linalg.norm(A, axis=0), 1.0)
    assert np.allclose(np.abs(A), 0.25)
    a = steering_vector(geometry, 0.4, 0.3)
    assert a[0] == pytest.approx(0.25)


def test_equivalent_array_gain_matches_inner_product():
    geometry = UpaGeometry(4, 8)
    target = (0.3, 0.7)
    assert abs(equivalent_array_gain(geometry, target, target)) == pytest.approx(np.sqrt(32))
    rng = np.random.default_rng(11)
    for _ in range(10):
        actual = (rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
        inner = steering_vector(geometry, *target).conj() @ steering_vector(geometry, *actual)
        assert equivalent_array_gain(geometry, target, actual) == pytest.approx(np.sqrt(32) * inner, abs=1e-9)


def test_generate_paths_structure():
    config = SystemConfig.desk().replace(n_clusters=3, rays_per_cluster=2)
    paths = generate_paths(config, derive_rng(1, 0, 0))
    assert len(paths) == 1 + 6
    los, nlos = paths[0], paths[1:]
    assert los.kind == PathKind.LOS
    assert los.path_length == config.distance_m
    assert los.pulse_delay == config.sampling_time
    window_end = config.sampling_time * config.cyclic_prefix
    for p in nlos:
        assert p.kind == PathKind.NLOS
        assert 1.1 * config.distance_m <= p.path_length <= 1.5 * config.distance_m
        assert config.sampling_time <= p.pulse_delay < window_end
        assert abs(p.complex_gain) < config.reflection_coeff * abs(los.complex_gain)
        assert -np.pi / 2 <= p.aoa_elevation <= np.pi / 2


def test_antenna_gate_blocks_rays_outside_cone():
    config = SystemConfig.desk().replace(antenna_gate=True, beamwidth_deg=1e-3)
    paths = generate_paths(config, derive_rng(5, 0, 0))
    assert paths[0].antenna_gain > 0
    assert all(p.antenna_gain == 0 for p in paths[1:])


def test_pulse_shapes():
    T = 7.8e-12
    assert raised_cosine(0.0, T) == pytest.approx(1.0)
    assert raised_cosine(T, T) == pytest.approx(0.0, abs=1e-12)
    assert raised_cosine(T / 2, T, rolloff=1.0) == pytest.approx(0.5)
    assert raised_cosine(20 * T, T, span=16) == 0.0


def test_pulse_spectrum_of_unit_impulse():
    config = SystemConfig.desk()
    pulse = unit_impulse(config.sampling_time)
    K = config.num_subcarriers
    for k in (1, 5, K):
        value = pulse_spectrum(k, config.sampling_time, config, pulse)
        assert value == pytest.approx(np.exp(-2j * np.pi * k / K))
    with pytest.raises(DomainError):
        pulse_spectrum(0, 0.0, config)


def test_realization_shape_and_determinism():
    config = SystemConfig.desk()
    first = realize_channel(config, derive_rng(9, 0, 0))
    again = realize_channel(config, derive_rng(9, 0, 0))
    other = realize_channel(config, derive_rng(9, 0, 1))
    assert first.per_subcarrier.shape == (16, 16, 64)
    assert first.fingerprint() == again.fingerprint()
    assert first.fingerprint() != other.fingerprint()
    with pytest.raises(ValueError):
        first.per_subcarrier[0, 0, 0] = 1.0


def test_pure_los_channel_is_rank_one():
    config = SystemConfig.desk().replace(n_clusters=0)
    channel = realize_channel(config, derive_rng(4, 0, 0))
    s = np.linalg.svd(channel.per_subcarrier, compute_uv=False)
    assert np.all(s[:, 1] <= 1e-10 * s[:, 0])


def test_channel_from_single_path():
    config = SystemConfig.desk().replace(n_clusters=0)
    absorption = absorption_model(config)
    los = replace(generate_paths(config, derive_rng(2, 0, 0), absorption)[0],
                  aod_azimuth=0.2, aod_elevation=0.4, aoa_azimuth=-0.5, aoa_elevation=0.1)
    pulse = unit_impulse(config.sampling_time)
    channel = channel_from_paths([los], config, absorption, pulse)
    a_r = steering_vector(UpaGeometry(4, 4), -0.5, 0.1)
    a_t = steering_vector(UpaGeometry(16, 4), 0.2, 0.4)
    k = 3
    expected = (los.gain_at(config.subcarrier_frequencies[k], absorption) * los.antenna_gain
                * pulse_spectrum(k + 1, los.pulse_delay, config, pulse) * np.outer(a_r, a_t.conj()))
    assert np.allclose(channel.per_subcarrier[k], expected, rtol=1e-10, atol=0)


def test_equivalent_array_gain_against_double_sum():
    geometry = UpaGeometry(4, 8)
    rng = np.random.default_rng(12)
    m = np.arange(geometry.rows)[:, None]
    n = np.arange(geometry.cols)[None, :]
    offsets = [0.0, 1e-13, 1e-10, 1e-7]
    for i in range(100):
        target = (rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
        if i < 40:
            shift = offsets[i % len(offsets)]
            actual = (target[0] + shift, target[1] - shift)
        else:
            actual = (rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2, np.pi / 2))
        du = np.cos(actual[0]) * np.sin(actual[1]) - np.cos(target[0]) * np.sin(target[1])
        dv = np.sin(actual[0]) * np.sin(actual[1]) - np.sin(target[0]) * np.sin(target[1])
        direct = np.sum(np.exp(2j * np.pi * 0.5 * (m * du + n * dv))) / np.sqrt(geometry.size)
        assert equivalent_array_gain(geometry, target, actual) == pytest.approx(direct, abs=1e-9)


def test_los_dominates_nlos_by_15_db():
    config = SystemConfig.desk().replace(n_clusters=4, rays_per_cluster=1)
    absorption = absorption_model(config)
    los, nlos = [], []
    for r in range(2500):
        paths = generate_paths(config, derive_rng(21, 0, r), absorption)
        los.append(abs(paths[0].complex_gain * paths[0].antenna_gain) ** 2)
        nlos.extend(abs(p.complex_gain * p.antenna_gain) ** 2 for p in paths[1:])
    assert len(nlos) == 10_000
    assert 10 * np.log10(np.mean(los) / np.mean(nlos)) >= 15.0


def test_dominant_transmit_direction_is_shared_across_band():
    config = SystemConfig.desk()
    for r in range(5):
        H = realize_channel(config, derive_rng(config.master_seed, 0, r)).per_subcarrier
        first = np.linalg.svd(H[0])[2][0]
        last = np.linalg.svd(H[-1])[2][0]
        assert abs(np.vdot(first, last)) > 0.9


def test_multipath_channel_is_sum_of_path_terms():
    config = SystemConfig.desk()
    channel = realize_channel(config, derive_rng(3, 0, 0))
    absorption = channel.absorption
    bs, ue = UpaGeometry(16, 4), UpaGeometry(4, 4)
    assert len(channel.paths) == 1 + config.n_clusters * config.rays_per_cluster
    for k in (0, config.num_subcarriers - 1):
        f = config.subcarrier_frequencies[k]
        expected = sum(
            p.gain_at(f, absorption) * p.antenna_gain * pulse_spectrum(k + 1, p.pulse_delay, config)
            * np.outer(steering_vector(ue, p.aoa_azimuth, p.aoa_elevation),
                       steering_vector(bs, p.aod_azimuth, p.aod_elevation).conj())
            for p in channel.paths)
        scale = np.max(np.abs(expected))
        assert np.allclose(channel.per_subcarrier[k], expected, rtol=1e-10, atol=1e-12 * scale)


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
