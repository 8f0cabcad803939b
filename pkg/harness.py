"""
Harness — Baselines, Monte Carlo Sweeps & Result Files
========================================================
- Fully digital beamforming with no IBI (upper reference)
- Existing hybrid baseline: joint exhaustive codebook search without path-loss
  normalization, matched-filter digital stage, no IBI elimination
- Eigen scheme with IBI treated as noise
- Paired-seed sweeps over P_s, d, N_RF, NMSE or ε, threaded across realizations
- CSV + companion matplotlib script
- Approximate operation counts per scheme
"""

import os
import time
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import SystemConfig, SweepSpec, ConfigError, derive_rng
from thz_channel import ChannelRealization, realize_channel
from multicarrier import IbiSequence, Scheme, SchemeResult, ibi_for, sinr_per_subcarrier
from codebook_scheme import (
    HybridBeamformer, argmax_lowest, effective_channel, normalize_digital,
    run_codebook_scheme, scheme_codebooks,
)
from eigen_scheme import average_covariances, dominant_direction, run_eigen_scheme
from robust_scheme import (
    inject_estimation_error, run_non_robust_scheme, run_robust_scheme,
)

logger = logging.getLogger("harness")

RESULT_COLUMNS = ["scheme", "variable", "value", "realization", "avg_rate_bps", "mean_sinr_db"]
SCHEME_IDS = tuple(s.value for s in Scheme)


# ─── Baselines ─────────────────────────────────────────

def fully_digital_baseline(channel: ChannelRealization, config: SystemConfig,
                           realization_id: int = 0) -> SchemeResult:
    """γ_k = σ_max(H[k])²/ψ: dominant singular pair, S_0 = 1, no interference."""
    start = time.perf_counter()
    sigma = np.linalg.svd(channel.per_subcarrier, compute_uv=False)[:, 0]
    return SchemeResult.from_sinr(sigma ** 2 / config.psi, config.bandwidth_hz,
                                  Scheme.FULLY_DIGITAL, realization_id,
                                  time.perf_counter() - start)


def _chain_objectives(y: np.ndarray, vectors: np.ndarray, n_rf: int) -> np.ndarray:
    """Σ_k |y_n[k]·a|² for every chain n and codeword a, y[k] = v^H H[k]."""
    blocks = y.reshape(y.shape[0], n_rf, -1)
    return np.sum(np.abs(np.einsum("kns,sl->nkl", blocks, vectors)) ** 2, axis=1)


def existing_hybrid_baseline(channel: ChannelRealization, config: SystemConfig,
                             ibi: Optional[IbiSequence] = None,
                             receive: Optional[np.ndarray] = None,
                             realization_id: int = 0) -> SchemeResult:
    """Joint (v, w_n) codebook search on Σ_k |v^H H_n[k] a|², matched-filter digital."""
    start = time.perf_counter()
    ibi = ibi or ibi_for(config)
    codebook_v, codebook_w = scheme_codebooks(config)
    H = channel.per_subcarrier
    candidates = codebook_v.vectors if receive is None else np.asarray(receive)[:, None]

    best_total, best = -np.inf, None
    for i in range(candidates.shape[1]):
        v = candidates[:, i]
        objective = _chain_objectives(np.einsum("u,kub->kb", v.conj(), H),
                                      codebook_w.vectors, config.n_rf)
        picks = [argmax_lowest(row) for row in objective]
        total = float(sum(objective[n, p] for n, p in enumerate(picks)))
        if best is None or total > best_total + 1e-9 * abs(best_total):
            best_total, best = total, (v, picks)

    v, picks = best
    w = codebook_w.vectors[:, picks].T
    analog = HybridBeamformer(v, w, np.zeros((channel.num_subcarriers, config.n_rf)))
    f_bb = normalize_digital(analog.analog_matrix(), effective_channel(channel, analog).conj())
    bf = HybridBeamformer(v, w, f_bb)
    sinr = sinr_per_subcarrier(channel, bf, ibi, config.psi)
    return SchemeResult.from_sinr(sinr, config.bandwidth_hz, Scheme.EXISTING_HYBRID,
                                  realization_id, time.perf_counter() - start)


def no_elimination_variant(channel: ChannelRealization, config: SystemConfig,
                           ibi: Optional[IbiSequence] = None,
                           receive: Optional[np.ndarray] = None,
                           realization_id: int = 0) -> SchemeResult:
    """Eigen analog + compensation, matched filter instead of RCI."""
    _, result = run_eigen_scheme(channel, config, ibi, ibi_elimination=False,
                                 receive=receive, realization_id=realization_id)
    return result


def complexity_table(config: SystemConfig) -> pd.DataFrame:
    """Dominant operation counts per scheme."""
    K, n_rf, n_bs, n_u = config.num_subcarriers, config.n_rf, config.n_bs, config.n_u
    size_w = size_v = 2 ** (config.codebook_bits_az + config.codebook_bits_el)
    rows = [
        ("codebook", "O(K·N_RF²·(|W|+|V|)·N_BS·N_U)",
         K * n_rf ** 2 * (size_w + size_v) * n_bs * n_u),
        ("eigen", "O(K·N_RF²·N_BS·N_U) + O(K·N_RF³)",
         K * n_rf ** 2 * n_bs * n_u + K * n_rf ** 3),
        ("existing_hybrid", "O(K·N_RF²·|W|·|V|·N_BS·N_U)",
         K * n_rf ** 2 * size_w * size_v * n_bs * n_u),
    ]
    return pd.DataFrame(rows, columns=["scheme", "complexity", "operations"])


# ─── Scheme Dispatch ───────────────────────────────────

def realization_channel(config: SystemConfig, realization: int) -> ChannelRealization:
    """Channel of realization r: identical for every scheme of a sweep point."""
    return realize_channel(config, derive_rng(config.master_seed, 0, realization))


def evaluate_schemes(channel: ChannelRealization, config: SystemConfig,
                     schemes: Sequence[str], realization_id: int = 0) -> List[SchemeResult]:
    ibi = ibi_for(config)
    receive = None
    if config.shared_combiner:
        receive = dominant_direction(average_covariances(channel, config.n_rf).receive)

    csi = None
    results = []
    for name in schemes:
        scheme = Scheme(name)
        if scheme == Scheme.FULLY_DIGITAL:
            results.append(fully_digital_baseline(channel, config, realization_id))
        elif scheme == Scheme.EIGEN:
            results.append(run_eigen_scheme(channel, config, ibi, receive=receive,
                                            realization_id=realization_id)[1])
        elif scheme == Scheme.EIGEN_UNCONSTRAINED:
            results.append(run_eigen_scheme(channel, config, ibi, constant_modulus=False,
                                            receive=receive, realization_id=realization_id)[1])
        elif scheme == Scheme.CODEBOOK:
            results.append(run_codebook_scheme(channel, config, ibi, receive=receive,
                                               realization_id=realization_id)[1])
        elif scheme == Scheme.EXISTING_HYBRID:
            results.append(existing_hybrid_baseline(channel, config, ibi, receive=receive,
                                                    realization_id=realization_id))
        elif scheme == Scheme.NO_ELIMINATION:
            results.append(no_elimination_variant(channel, config, ibi, receive=receive,
                                                  realization_id=realization_id))
        elif scheme == Scheme.PERFECT_CSI:
            results.append(run_eigen_scheme(channel, config, ibi, realization_id=realization_id,
                                            scheme_id=Scheme.PERFECT_CSI)[1])
        else:
            if csi is None:
                csi = inject_estimation_error(
                    channel, config.nmse, derive_rng(config.master_seed, 1, realization_id))
            runner = run_robust_scheme if scheme == Scheme.ROBUST else run_non_robust_scheme
            results.append(runner(csi, config, ibi, realization_id)[1])
    return results


# ─── Sweeps ────────────────────────────────────────────

def _row(result: SchemeResult, variable: str, value: float) -> Dict:
    return {
        "scheme": result.scheme_id.value,
        "variable": variable,
        "value": float(value),
        "realization": int(result.realization_id),
        "avg_rate_bps": float(result.avg_rate),
        "mean_sinr_db": float(result.mean_sinr_db),
    }


def run_sweep(spec: SweepSpec, config: SystemConfig, workers: Optional[int] = None,
              progress: bool = True) -> pd.DataFrame:
    """One row per (scheme, value, realization), sorted; channels paired across schemes."""
    unknown = [s for s in spec.schemes if s not in SCHEME_IDS]
    if unknown:
        raise ConfigError(f"unknown scheme(s) {unknown}; expected some of {list(SCHEME_IDS)}")

    points = {value: config.with_sweep_value(spec.variable, value) for value in spec.values}

    def task(value: float, realization: int) -> List[Dict]:
        cfg = points[value]
        channel = realization_channel(cfg, realization)
        logger.debug(f"{spec.variable}={value} r={realization} channel {channel.fingerprint()}")
        return [_row(res, spec.variable, value)
                for res in evaluate_schemes(channel, cfg, spec.schemes, realization)]

    jobs = [(value, r) for value in spec.values for r in range(config.n_realizations)]
    workers = workers or config.workers
    logger.info(f"Sweep {spec.variable} over {list(spec.values)}: "
                f"{len(jobs)} realizations × {len(spec.schemes)} schemes, {workers} workers")

    rows: List[Dict] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task, value, r) for value, r in jobs]
        for future in tqdm(as_completed(futures), total=len(futures),
                           desc=f"sweep {spec.variable}", disable=not progress):
            rows.extend(future.result())

    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return table.sort_values(["scheme", "value", "realization"], kind="mergesort").reset_index(drop=True)


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean rate (Gbit/s) and mean SINR per scheme and sweep value."""
    summary = table.groupby(["scheme", "value"], sort=True).agg(
        rate_gbps=("avg_rate_bps", lambda x: x.mean() / 1e9),
        sinr_db=("mean_sinr_db", "mean"),
        realizations=("realization", "count"),
    )
    return summary.reset_index()


# ─── Emission ──────────────────────────────────────────

PLOT_TEMPLATE = '''"""
Plot {csv_name}: mean average rate per scheme over {variable}.
Usage: python {script_name}
"""

import os

import matplotlib.pyplot as plt
import pandas as pd

HERE = os.path.dirname(os.path.abspath(__file__))
df = pd.read_csv(os.path.join(HERE, "{csv_name}"))
summary = df.groupby(["scheme", "value"])["avg_rate_bps"].mean().reset_index()

fig, ax = plt.subplots(figsize=(7, 4.5))
for scheme, group in summary.groupby("scheme"):
    ax.plot(group["value"], group["avg_rate_bps"] / 1e9, marker="o", label=scheme)
ax.set_xlabel("{variable}")
ax.set_ylabel("average rate (Gbit/s)")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "{stem}.png"), dpi=150)
plt.show()
'''


def emit_results(table: pd.DataFrame, path: str) -> Tuple[str, str]:
    """Write the CSV (LF endings, round-trip floats) and `<stem>_plot.py` next to it."""
    if table is None or table.empty or table["scheme"].nunique() == 0:
        raise ValueError("no scheme results to emit")
    missing = [c for c in RESULT_COLUMNS if c not in table.columns]
    if missing:
        raise ValueError(f"result table lacks columns {missing}")

    stem = os.path.splitext(path)[0]
    plot_path = f"{stem}_plot.py"
    script = PLOT_TEMPLATE.format(csv_name=os.path.basename(path),
                                  script_name=os.path.basename(plot_path),
                                  variable=str(table["variable"].iloc[0]),
                                  stem=os.path.basename(stem))
    try:
        table[RESULT_COLUMNS].to_csv(path, index=False, lineterminator="\n")
        with open(plot_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(script)
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e}") from e

    logger.info(f"Wrote {len(table)} rows to {path} (plot script {plot_path})")
    return path, plot_path


def read_results(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
