#!/usr/bin/env python3
"""
Harness tests — baselines, dispatch, paired sweeps and result files.
Run: pytest test_harness.py  (or python test_harness.py)
"""

import os
import sys
import tempfile

import numpy as np
import pandas as pd
import pytest

from config import SystemConfig, SweepSpec, ConfigError
from multicarrier import Scheme
from eigen_scheme import average_covariances, dominant_direction, run_eigen_scheme
from harness import (
    RESULT_COLUMNS, SCHEME_IDS, complexity_table, emit_results, evaluate_schemes,
    existing_hybrid_baseline, fully_digital_baseline, read_results, realization_channel,
    run_sweep, summarize,
)

SMALL = SystemConfig.desk().replace(n_realizations=2, n_candidates=20, workers=2)


def test_fully_digital_baseline_is_top_singular_value():
    channel = realization_channel(SMALL, 0)
    result = fully_digital_baseline(channel, SMALL)
    sigma = np.linalg.svd(channel.per_subcarrier[5], compute_uv=False)[0]
    assert result.per_subcarrier_sinr[5] == pytest.approx(sigma ** 2 / SMALL.psi)
    assert result.scheme_id == Scheme.FULLY_DIGITAL


def test_every_scheme_bounded_by_fully_digital():
    channel = realization_channel(SMALL, 1)
    results = evaluate_schemes(channel, SMALL, SCHEME_IDS, 1)
    assert [r.scheme_id.value for r in results] == list(SCHEME_IDS)
    digital = results[0].per_subcarrier_sinr
    for result in results:
        assert result.realization_id == 1
        assert np.all(result.per_subcarrier_sinr <= digital * (1 + 1e-9))


def test_shared_combiner_dispatch():
    config = SMALL.replace(shared_combiner=True)
    channel = realization_channel(config, 0)
    results = evaluate_schemes(channel, config, ("eigen", "codebook", "existing_hybrid"), 0)
    assert len(results) == 3
    assert all(r.avg_rate > 0 for r in results)


def test_existing_hybrid_baseline_runs():
    channel = realization_channel(SMALL, 0)
    result = existing_hybrid_baseline(channel, SMALL)
    assert result.scheme_id == Scheme.EXISTING_HYBRID
    assert result.per_subcarrier_sinr.shape == (16,)
    assert np.all(result.per_subcarrier_sinr > 0) and result.avg_rate > 0


def test_unconstrained_eigen_follows_the_shared_combiner():
    config = SMALL.replace(shared_combiner=True)
    channel = realization_channel(config, 0)
    (unconstrained,) = evaluate_schemes(channel, config, ("eigen_unconstrained",), 0)
    v = dominant_direction(average_covariances(channel, config.n_rf).receive)
    _, expected = run_eigen_scheme(channel, config, constant_modulus=False, receive=v)
    assert np.array_equal(unconstrained.per_subcarrier_sinr, expected.per_subcarrier_sinr)


def test_runtime_follows_search_size():
    config = SMALL.replace(codebook_bits_az=4, codebook_bits_el=4)
    channel = realization_channel(config, 0)
    runs = {"eigen": [], "codebook": [], "existing_hybrid": []}
    for _ in range(3):
        for result in evaluate_schemes(channel, config, tuple(runs), 0):
            runs[result.scheme_id.value].append(result.runtime_s)
    fastest = {name: min(times) for name, times in runs.items()}
    assert fastest["existing_hybrid"] > fastest["eigen"]
    assert fastest["existing_hybrid"] > fastest["codebook"]


def test_unknown_schemes_rejected():
    with pytest.raises(ValueError):
        evaluate_schemes(realization_channel(SMALL, 0), SMALL, ("magic",), 0)
    with pytest.raises(ConfigError):
        run_sweep(SweepSpec("p_s_dbm", (10.0,), ("magic",)), SMALL, progress=False)


def test_complexity_ordering():
    table = complexity_table(SystemConfig.desk()).set_index("scheme")["operations"]
    assert table["eigen"] < table["codebook"] < table["existing_hybrid"]
    assert table["codebook"] == 16 * 16 * 128 * 64 * 16


def test_single_point_single_row():
    table = run_sweep(SweepSpec("p_s_dbm", (10.0,), ("eigen",)),
                      SMALL.replace(n_realizations=1), progress=False)
    assert list(table.columns) == RESULT_COLUMNS
    assert len(table) == 1
    row = table.iloc[0]
    assert (row["scheme"], row["variable"], row["value"], row["realization"]) == ("eigen", "p_s_dbm", 10.0, 0)


def test_paired_channels_across_sweep_points():
    assert realization_channel(SMALL, 3).fingerprint() == realization_channel(SMALL, 3).fingerprint()
    two = SMALL.with_sweep_value("n_rf", 2)
    assert realization_channel(two, 3).fingerprint() == realization_channel(SMALL, 3).fingerprint()
    louder = SMALL.with_sweep_value("p_s_dbm", 20.0)
    assert realization_channel(louder, 3).fingerprint() == realization_channel(SMALL, 3).fingerprint()


def test_power_sweep_monotone_for_fully_digital():
    table = run_sweep(SweepSpec("p_s_dbm", (0.0, 10.0, 20.0), ("fully_digital", "eigen")),
                      SMALL, progress=False)
    assert len(table) == 3 * 2 * 2
    assert table.equals(table.sort_values(["scheme", "value", "realization"]).reset_index(drop=True))
    means = summarize(table).set_index(["scheme", "value"])["rate_gbps"]
    assert means[("fully_digital", 0.0)] <= means[("fully_digital", 10.0)] <= means[("fully_digital", 20.0)]


def test_emit_guards_empty_table():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "empty.csv")
        with pytest.raises(ValueError):
            emit_results(pd.DataFrame(columns=RESULT_COLUMNS), path)
        assert not os.path.exists(path)
        assert not os.path.exists(os.path.join(tmp, "empty_plot.py"))


def test_emit_round_trip_and_plot_script():
    table = run_sweep(SweepSpec("distance_m", (2.0, 5.0), ("eigen", "codebook")), SMALL, progress=False)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "distance.csv")
        csv_path, plot_path = emit_results(table, path)
        with open(csv_path, "rb") as fh:
            raw = fh.read()
        assert raw.startswith(b"scheme,variable,value,realization,avg_rate_bps,mean_sinr_db\n")
        assert b"\r\n" not in raw
        pd.testing.assert_frame_equal(read_results(csv_path), table)
        with open(plot_path, encoding="utf-8") as fh:
            script = fh.read()
        assert "distance.csv" in script
        assert 'groupby("scheme")' in script


def test_emit_unwritable_path_names_it():
    table = run_sweep(SweepSpec("p_s_dbm", (10.0,), ("eigen",)),
                      SMALL.replace(n_realizations=1), progress=False)
    path = os.path.join(tempfile.gettempdir(), "no-such-dir-for-results", "out.csv")
    with pytest.raises(OSError) as err:
        emit_results(table, path)
    assert path in str(err.value)


def test_reruns_are_byte_identical():
    spec = SweepSpec("nmse", (0.002,), ("robust", "non_robust", "perfect_csi"))
    with tempfile.TemporaryDirectory() as tmp:
        paths = [os.path.join(tmp, f"run{i}.csv") for i in range(2)]
        emit_results(run_sweep(spec, SMALL, workers=1, progress=False), paths[0])
        emit_results(run_sweep(spec, SMALL, workers=3, progress=False), paths[1])
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()


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
