#!/usr/bin/env python3
"""
Codebook scheme tests — codebook layout, beam search, RCI digital stage.
Run: pytest test_codebook_scheme.py  (or python test_codebook_scheme.py)
"""

import sys
from dataclasses import replace

import numpy as np
import pytest

from config import SystemConfig, StructuralError, derive_rng
from thz_channel import (
    ChannelRealization, UpaGeometry, absorption_model, channel_from_paths, generate_paths, path_gain,
    realize_channel, steering_vector,
)
from multicarrier import Scheme, central_taps, ibi_coefficients
from codebook_scheme import (
    HybridBeamformer, argmax_lowest, build_codebook, channel_normalization, combined_channel,
    normalize_digital, rci_sinr_closed_form, rci_signal_fraction, rci_with_loading,
    run_codebook_scheme, scheme_codebooks, search_receive_beam, search_transmit_beams,
    windowed_sinr,
)


def _random_effective(rng, K=8, n=4):
    return (rng.standard_normal((K, n)) + 1j * rng.standard_normal((K, n))) / np.sqrt(2)


def test_codebook_layout_is_azimuth_major():
    codebook = build_codebook(UpaGeometry(4, 4), 3, 3)
    assert len(codebook) == 64
    assert np.all(codebook.azimuths[:8] == -np.pi)
    assert np.allclose(codebook.elevations[:8], -np.pi / 2 + np.pi * np.arange(8) / 8)
    assert np.allclose(np.abs(codebook.vectors), 0.25)
    az, el, vec = codebook.entries[9]
    assert np.allclose(vec, steering_vector(UpaGeometry(4, 4), az, el))


def test_argmax_ties_go_to_lowest_index():
    assert argmax_lowest([1.0, 3.0, 3.0]) == 1
    assert argmax_lowest([2.0, 1.0, 2.0 * (1 - 1e-12)]) == 0


def test_analog_matrix_is_block_diagonal():
    config = SystemConfig.desk()
    _, codebook_w = scheme_codebooks(config)
    w = codebook_w.vectors[:, [0, 5, 9, 20]].T
    bf = HybridBeamformer(np.ones(16) / 4, w, np.ones((3, 4)))
    W = bf.analog_matrix()
    assert W.shape == (64, 4)
    assert np.allclose(W.conj().T @ W, np.eye(4))
    assert np.allclose(W[16:32, 1], w[1])
    assert np.all(W[16:32, 0] == 0)


def test_normalize_digital():
    W = np.kron(np.eye(2), np.ones((4, 1)) / 2)
    f = np.array([[3.0, 4.0], [0.0, 0.0]], dtype=complex)
    out = normalize_digital(W, f)
    assert np.linalg.norm(W @ out[0]) == pytest.approx(1.0)
    assert np.all(out[1] == 0)


def test_beamformer_shape_checks():
    with pytest.raises(StructuralError):
        HybridBeamformer(np.ones(4), np.ones((2, 4)), np.ones((3, 3)))


def test_search_recovers_on_grid_los_direction():
    config = SystemConfig.desk().replace(n_clusters=0, n_rf=1, m_t=4)
    absorption = absorption_model(config)
    aoa = (-np.pi / 4, np.pi / 8)
    aod = (np.pi / 4, np.pi / 4)
    los = replace(generate_paths(config, derive_rng(1, 0, 0), absorption)[0],
                  aoa_azimuth=aoa[0], aoa_elevation=aoa[1],
                  aod_azimuth=aod[0], aod_elevation=aod[1])
    channel = channel_from_paths([los], config, absorption)
    codebook_v, codebook_w = scheme_codebooks(config)

    _, v = search_receive_beam(channel, codebook_v)
    assert np.allclose(v, steering_vector(UpaGeometry(4, 4), *aoa))
    _, w = search_transmit_beams(channel, v, codebook_w)
    assert np.allclose(w[0], steering_vector(UpaGeometry(4, 4), *aod))


def test_search_rejects_mismatched_codebook():
    config = SystemConfig.desk()
    channel = realize_channel(config, derive_rng(1, 0, 0))
    wrong = build_codebook(UpaGeometry(2, 2), 2, 2)
    with pytest.raises(StructuralError):
        search_receive_beam(channel, wrong)
    with pytest.raises(StructuralError):
        search_transmit_beams(channel, np.ones(16) / 4, build_codebook(UpaGeometry(3, 3), 2, 2))


def test_channel_normalization_is_path_gain():
    config = SystemConfig.desk()
    channel = realize_channel(config, derive_rng(1, 0, 0))
    expected = path_gain(config.subcarrier_frequencies, config.distance_m, absorption_model(config))
    assert np.allclose(channel_normalization(channel), expected, rtol=1e-12)


def test_combined_channel_edges():
    h = _random_effective(np.random.default_rng(0))
    taps = central_taps(ibi_coefficients(8, 0.3))
    assert combined_channel(h, taps, 0).shape == (2, 4)
    assert combined_channel(h, taps, 3).shape == (3, 4)
    assert combined_channel(h, taps, 7).shape == (2, 4)
    assert np.allclose(combined_channel(h, taps, 3)[0], taps[1] * h[3])


def test_rci_at_psi_is_optimal_and_matches_closed_form():
    rng = np.random.default_rng(42)
    for _ in range(3):
        h = _random_effective(rng)
        taps = central_taps(ibi_coefficients(8, rng.uniform(0.1, 0.4)))
        psi = 0.3
        best = windowed_sinr(h, taps, rci_with_loading(h, taps, psi), psi)
        closed = rci_sinr_closed_form(h, taps, psi)
        assert np.allclose(best, closed, rtol=1e-9, atol=0)
        for beta in psi * np.logspace(-6, 6, 25):
            other = windowed_sinr(h, taps, rci_with_loading(h, taps, beta), psi)
            assert np.all(other <= best * (1 + 1e-9))
        omega = rci_signal_fraction(h, taps, psi)
        assert np.allclose(omega / (1 - omega), closed, rtol=1e-8)


def test_rci_with_compensation_reaches_neighbours_through_their_channel():
    rng = np.random.default_rng(43)
    h = _random_effective(rng)
    taps = central_taps(ibi_coefficients(8, 0.25))
    plain = rci_with_loading(h, taps, 0.3)
    identity = np.broadcast_to(np.eye(4), (8, 4, 4))
    assert np.allclose(rci_with_loading(h, taps, 0.3, compensation=identity), plain, atol=1e-12)

    rotations = np.array([np.linalg.qr(_random_effective(rng, 4, 4))[0] for _ in range(8)])
    rotated = rci_with_loading(h, taps, 0.3, compensation=rotations)
    assert np.allclose(np.einsum("krs,ks->kr", rotations, rotated), plain, atol=1e-10)
    with pytest.raises(StructuralError):
        rci_with_loading(h, taps, 0.3, compensation=rotations[:5])


def test_search_invariant_to_matched_scaling():
    config = SystemConfig.desk()
    channel = realize_channel(config, derive_rng(2, 0, 0))
    codebook_v, codebook_w = scheme_codebooks(config)
    _, v = search_receive_beam(channel, codebook_v)
    _, w = search_transmit_beams(channel, v, codebook_w)

    far = ChannelRealization(channel.per_subcarrier, channel.paths, channel.center_frequencies,
                             2 * channel.distance, channel.absorption)
    ratio = np.sqrt(channel_normalization(far) / channel_normalization(channel))
    matched = far.with_matrices(7.5 * channel.per_subcarrier * ratio[:, None, None])
    _, v_matched = search_receive_beam(matched, codebook_v)
    _, w_matched = search_transmit_beams(matched, v_matched, codebook_w)
    assert np.array_equal(v_matched, v)
    assert np.array_equal(w_matched, w)


def test_codebook_scheme_end_to_end():
    config = SystemConfig.desk()
    channel = realize_channel(config, derive_rng(config.master_seed, 0, 0))
    bf, result = run_codebook_scheme(channel, config, realization_id=3)
    bf.check_invariants(1e-12)
    assert result.scheme_id == Scheme.CODEBOOK
    assert result.realization_id == 3
    assert result.per_subcarrier_sinr.shape == (16,)
    assert result.avg_rate > 0
    assert bf.f_bb.shape == (16, 4)


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
