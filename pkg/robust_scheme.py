"""
Robust Scheme — Probabilistic Robust Hybrid Beamforming under Imperfect CSI
=============================================================================
- Synthetic estimation error at an exact NMSE
- Extended (IBI-weighted) channel of the other subcarriers, full or 3-tap,
  on the receive-combined rows v^H H_e[λ]
- Interference matrix = estimated neighbour leakage + expected error load
- Markov-bounded interference budget p_k·T_k/(1 − √ε)
- max tr{AM} s.t. tr{BM} ≤ budget, tr{M} ≤ 1, M ⪰ 0 (rank-one optimum)
- Gaussian randomization, common analog recovery, digital stage re-solved
  inside the analog subspace
- Evaluation on the true channel; robust vs non-robust vs perfect-CSI
"""

import time
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import eigh

from config import SystemConfig, DomainError, StructuralError, derive_rng
from thz_channel import ChannelRealization
from multicarrier import IbiSequence, Scheme, SchemeResult, ibi_for, sinr_per_subcarrier
from codebook_scheme import HybridBeamformer, normalize_digital
from eigen_scheme import average_covariances, dominant_direction, phase_fix, run_eigen_scheme

logger = logging.getLogger("robust")

# ─── Imperfect CSI ─────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ImperfectCsi:
    """Estimated H_e[k]; true_ref is kept for evaluation in simulation only."""

    estimated: np.ndarray
    nmse: float
    true_ref: Optional[ChannelRealization] = None

    @property
    def measured_nmse(self) -> float:
        if self.true_ref is None:
            raise StructuralError("measured NMSE needs the true channel")
        H = self.true_ref.per_subcarrier
        return float(np.sum(np.abs(H - self.estimated) ** 2) / np.sum(np.abs(H) ** 2))

    def as_channel(self) -> ChannelRealization:
        """The estimate wrapped as a realization (for schemes that take one)."""
        if self.true_ref is not None:
            return self.true_ref.with_matrices(self.estimated)
        K = self.estimated.shape[0]
        return ChannelRealization(self.estimated, (), np.arange(1, K + 1, dtype=float), 1.0)

def inject_estimation_error(channel: ChannelRealization, nmse: float,
                            rng: np.random.Generator) -> ImperfectCsi:
    """H_e[k] = H[k] + E[k], E i.i.d. CN, rescaled so the realized NMSE is exact."""
    if not 0 <= nmse < 1:
        raise DomainError(f"NMSE must lie in [0, 1), got {nmse}")
    H = channel.per_subcarrier
    if nmse == 0:
        return ImperfectCsi(H.copy(), 0.0, channel)
    E = (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape)) / np.sqrt(2)
    E *= np.sqrt(nmse * np.sum(np.abs(H) ** 2) / np.sum(np.abs(E) ** 2))
    return ImperfectCsi(H + E, float(nmse), channel)

def _neighbours(K: int, k: int, truncated: bool) -> list:
    if not 0 <= k < K:
        raise DomainError(f"subcarrier index {k} outside 0..{K - 1}")
    return [lam for lam in range(K) if lam != k and (not truncated or abs(lam - k) == 1)]

def combine_rows(H: np.ndarray, v: np.ndarray) -> np.ndarray:
    """v^H H[λ] as (K, 1, N_BS) blocks."""
    return np.einsum("u,kub->kb", np.asarray(v, dtype=complex).conj(), H)[:, None, :]

def extended_channel(csi, k: int, ibi: IbiSequence, truncated: bool = False) -> np.ndarray:
    """H̃[k]: rows S_{λ−k}·H[λ] for λ ≠ k, stacked in subcarrier order (k is 0-based).

    truncated keeps only λ = k ± 1.
    """
    H = csi.estimated if isinstance(csi, ImperfectCsi) else np.asarray(csi)
    others = _neighbours(H.shape[0], k, truncated)
    if not others:
        return np.zeros((0, H.shape[2]), dtype=complex)
    return np.vstack([ibi.tap(lam - k) * H[lam] for lam in others])

def error_covariance_load(csi: ImperfectCsi, k: int, ibi: IbiSequence,
                          truncated: bool = False, rows: Optional[int] = None) -> float:
    """c with E[Ẽ^H Ẽ] = c·I for the error part of H̃[k].

    Error entries have variance σ² = ε·‖H_e‖²/(K·N_U·N_BS). Each neighbour
    block adds |S_{λ−k}|²·rows·σ²; rows is N_U, or 1 after a unit-norm combiner.
    """
    H_e = csi.estimated
    neighbours = _neighbours(H_e.shape[0], k, truncated)
    if csi.nmse == 0:
        return 0.0
    rows = H_e.shape[1] if rows is None else rows
    sigma2 = csi.nmse * float(np.sum(np.abs(H_e) ** 2)) / H_e.size
    return rows * sigma2 * sum(abs(ibi.tap(lam - k)) ** 2 for lam in neighbours)

def markov_budget(t_k: float, p_k: float, nmse: float) -> float:
    """p_k·T_k/(1 − √ε)."""
    if t_k <= 0:
        raise DomainError(f"T_k must be positive, got {t_k}")
    if not 0 < p_k < 1:
        raise DomainError(f"p_k must lie in (0, 1), got {p_k}")
    if not 0 <= nmse < 1:
        raise DomainError(f"NMSE must lie in [0, 1), got {nmse}")
    return p_k * t_k / (1.0 - np.sqrt(nmse))

# ─── PSD Program ───────────────────────────────────────

@dataclass(frozen=True, eq=False)
class RobustProblem:
    """max tr{A·M} s.t. tr{B·M} ≤ budget, tr{M} ≤ power (when set), M ⪰ 0."""

    signal_matrix: np.ndarray
    interference_matrix: np.ndarray
    budget: float
    power: Optional[float] = None

    def __post_init__(self):
        if self.budget <= 0:
            raise DomainError(f"budget must be positive, got {self.budget}")
        if self.power is not None and not self.power > 0:
            raise DomainError(f"power bound must be positive, got {self.power}")
        for name in ("signal_matrix", "interference_matrix"):
            R = np.asarray(getattr(self, name), dtype=complex)
            if R.ndim != 2 or R.shape[0] != R.shape[1]:
                raise StructuralError(f"{name} must be square, got {R.shape}")
            scale = max(np.max(np.abs(R)), np.finfo(float).tiny)
            if np.max(np.abs(R - R.conj().T)) > 1e-10 * scale:
                raise DomainError(f"{name} is not Hermitian")
            object.__setattr__(self, name, 0.5 * (R + R.conj().T))
        if self.signal_matrix.shape != self.interference_matrix.shape:
            raise StructuralError("signal and interference matrices differ in size")

    @property
    def dim(self) -> int:
        return self.signal_matrix.shape[0]

    def objective(self, M: np.ndarray) -> float:
        return float(np.real(np.trace(self.signal_matrix @ M)))

    def interference(self, M: np.ndarray) -> float:
        return float(np.real(np.trace(self.interference_matrix @ M)))

def receive_combiner(csi: ImperfectCsi, config: SystemConfig) -> np.ndarray:
    """Constant-modulus v from the estimated receive covariance."""
    return dominant_direction(average_covariances(csi.as_channel(), config.n_rf).receive)

def build_problem(csi: ImperfectCsi, k: int, ibi: IbiSequence, config: SystemConfig,
                  v: Optional[np.ndarray] = None,
                  power: Optional[float] = 1.0) -> RobustProblem:
    """A = H_k^H H_k, B = H̃^H H̃ + c·I at the Markov budget.

    With a combiner v every H_e[λ] is replaced by its row v^H H_e[λ].
    c is the expected error load of the neighbour blocks.
    """
    H = csi.estimated if v is None else combine_rows(csi.estimated, v)
    truncated = not config.robust_full_ibi
    H_ext = extended_channel(H, k, ibi, truncated)
    H_k = H[k]
    load = error_covariance_load(csi, k, ibi, truncated, rows=H.shape[1])
    B = H_ext.conj().T @ H_ext + load * np.eye(H.shape[2])
    return RobustProblem(H_k.conj().T @ H_k, B,
                         markov_budget(config.t_k, config.p_k, csi.nmse), power)

def _is_zero(R: np.ndarray) -> bool:
    return not np.any(np.abs(R) > 0)

def _top_eigenvector(R: np.ndarray) -> np.ndarray:
    _, vecs = eigh(0.5 * (R + R.conj().T))
    return vecs[:, -1]

def _power_limited(problem: RobustProblem) -> np.ndarray:
    """Optimum when both the budget and the power bound bind.

    The maximizer is the top eigenvector of A − μB at the μ ≥ 0 where
    power·u^H B u = budget. μ is bisected; a jump of the eigenvector at that
    μ is bridged along the arc between the vectors on either side.
    """
    A, B = problem.signal_matrix, problem.interference_matrix
    power = problem.power
    target = problem.budget / power

    def load(u):
        return float(np.real(u.conj() @ B @ u))

    def top(mu):
        return _top_eigenvector(A - mu * B)

    u = top(0.0)
    if load(u) <= target:
        return power * np.outer(u, u.conj())

    b_vals, b_vecs = eigh(B)
    if b_vals[0] > target:
        logger.warning("Budget unreachable at full power; least-loaded direction at reduced power")
        u = b_vecs[:, 0]
        return (problem.budget / b_vals[0]) * np.outer(u, u.conj())

    lo = 0.0
    hi = max(float(np.linalg.eigvalsh(A)[-1] / b_vals[-1]), np.finfo(float).tiny)
    for _ in range(200):
        if load(top(hi)) <= target:
            break
        lo, hi = hi, 2.0 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if load(top(mid)) <= target:
            hi = mid
        else:
            lo = mid

    u_lo, u_hi = top(lo), top(hi)
    u_hi = u_hi * np.exp(1j * np.angle(u_hi.conj() @ u_lo))

    def arc(t):
        x = np.cos(t) * u_lo + np.sin(t) * u_hi
        return x / np.linalg.norm(x)

    a, b = 0.0, 0.5 * np.pi
    for _ in range(60):
        t = 0.5 * (a + b)
        if load(arc(t)) <= target:
            b = t
        else:
            a = t
    u = arc(b)
    return power * np.outer(u, u.conj())

def solve_psd_program(problem: RobustProblem) -> np.ndarray:
    """Rank-one optimum of the program.

    Budget only: M = budget/(u^H B u)·u u^H, u the top generalized eigenvector
    of (A, B + δI), δ = 10⁻¹⁰·tr(B)/dim only when B is singular. That M is
    kept while its trace fits the power bound. B = 0 returns the top
    eigenvector of A at the power bound (unit trace when unset).
    """
    A, B, n = problem.signal_matrix, problem.interference_matrix, problem.dim
    if _is_zero(A):
        logger.warning("Signal matrix is zero; returning M = 0")
        return np.zeros((n, n), dtype=complex)
    if _is_zero(B):
        u = _top_eigenvector(A)
        return (problem.power or 1.0) * np.outer(u, u.conj())

    b_vals = np.linalg.eigvalsh(B)
    delta = 0.0
    if b_vals[0] <= 1e-12 * b_vals[-1]:
        delta = 1e-10 * float(np.real(np.trace(B))) / n
    _, vecs = eigh(A, B + delta * np.eye(n))
    u = vecs[:, -1]
    load = max(float(np.real(u.conj() @ B @ u)), delta * float(np.real(u.conj() @ u)))
    M = (problem.budget / load) * np.outer(u, u.conj())
    if problem.power is None or float(np.real(np.trace(M))) <= problem.power * (1 + 1e-12):
        return M
    return _power_limited(problem)

def top_generalized_eigenvalue(problem: RobustProblem) -> float:
    return float(eigh(problem.signal_matrix, problem.interference_matrix, eigvals_only=True)[-1])

# ─── Randomization & Recovery ──────────────────────────

def randomize_and_select(M_opt: np.ndarray, problem: RobustProblem, n_candidates: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Candidate 0 is √λ₁·u₁ of M_opt; candidates i ≥ 1 are Û·Λ̂^{1/2}·v_i, v_i ~ CN(0, I).

    With a power bound every candidate is set to that power, pulled back
    onto the budget boundary if it violates it, and the largest signal wins.
    Without one, candidates are scaled onto the budget boundary and the
    smallest norm wins (best unit-norm signal when B = 0). Ties go to the
    lowest index.
    """
    if n_candidates < 1:
        raise DomainError(f"need at least one candidate, got {n_candidates}")
    n = M_opt.shape[0]
    vals, vecs = eigh(0.5 * (M_opt + M_opt.conj().T))
    vals = np.clip(vals, 0.0, None)
    root = vecs * np.sqrt(vals)

    draws = (rng.standard_normal((n, n_candidates - 1))
             + 1j * rng.standard_normal((n, n_candidates - 1))) / np.sqrt(2)
    candidates = np.column_stack([root[:, -1], root @ draws]) if n_candidates > 1 else root[:, -1:]

    A, B = problem.signal_matrix, problem.interference_matrix
    norms = np.linalg.norm(candidates, axis=0)
    usable = norms > 0
    if not np.any(usable):
        return np.zeros(n, dtype=complex)
    unit = candidates / np.where(usable, norms, 1.0)

    def strongest(x):
        signal = np.where(usable, np.real(np.einsum("il,ij,jl->l", x.conj(), A, x)), -np.inf)
        top = np.max(signal)
        return int(np.flatnonzero(signal >= top - 1e-12 * abs(top))[0])

    if problem.power is not None:
        x = np.sqrt(problem.power) * unit
        load = np.real(np.einsum("il,ij,jl->l", x.conj(), B, x))
        x = x * np.where(load > problem.budget,
                         np.sqrt(problem.budget / np.where(load > 0, load, 1.0)), 1.0)
        return x[:, strongest(x)]

    if _is_zero(B):
        return candidates[:, strongest(unit)]

    load = np.real(np.einsum("il,ij,jl->l", candidates.conj(), B, candidates))
    scale = np.where(load > 0, np.sqrt(problem.budget / np.where(load > 0, load, 1.0)), 1.0)
    scaled = candidates * scale
    scaled_norms = np.where(usable, np.linalg.norm(scaled, axis=0), np.inf)
    smallest = np.min(scaled_norms)
    best = int(np.flatnonzero(scaled_norms <= smallest * (1 + 1e-12))[0])
    return scaled[:, best]

@dataclass(frozen=True, eq=False)
class HybridFactors:
    w: np.ndarray
    f_bb: np.ndarray
    residual: float

def recover_hybrid(f_hybrid: np.ndarray, config: SystemConfig) -> HybridFactors:
    """w_n = phase projection of block n (first entry real positive),
    f_BB = least-squares fit of W f_BB ≈ f_hybrid, normalized to ‖W f_BB‖ = 1.
    """
    f = np.asarray(f_hybrid, dtype=complex).ravel()
    size = config.subarray_size
    if f.size != config.n_bs:
        raise StructuralError(f"hybrid vector of length {f.size}, expected N_BS={config.n_bs}")
    blocks = f.reshape(config.n_rf, size)
    w = np.empty_like(blocks)
    for n, block in enumerate(blocks):
        if np.max(np.abs(block)) == 0:
            w[n] = np.ones(size) / np.sqrt(size)
        else:
            fixed = phase_fix(block)
            keep = np.abs(fixed) > 1e-12 * np.max(np.abs(fixed))
            w[n] = np.where(keep, np.exp(1j * np.angle(fixed)), 1.0) / np.sqrt(size)
    W = HybridBeamformer(np.ones(1), w, np.zeros((1, config.n_rf))).analog_matrix()
    f_bb, *_ = np.linalg.lstsq(W, f, rcond=None)
    norm = np.linalg.norm(f)
    residual = float(np.linalg.norm(W @ f_bb - f) / norm) if norm > 0 else 0.0
    return HybridFactors(w, normalize_digital(W, f_bb)[0], residual)

# ─── Scheme ────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class RobustDesign:
    """Per-subcarrier problems and the (pre-normalization) hybrid design."""

    problems: Tuple[RobustProblem, ...]
    hybrid_vectors: np.ndarray
    v: np.ndarray
    w: np.ndarray
    f_bb_raw: np.ndarray
    analog_source: str = "recovered"

    @property
    def analog_matrix(self) -> np.ndarray:
        return HybridBeamformer(self.v, self.w, self.f_bb_raw).analog_matrix()

    def interference_loads(self) -> np.ndarray:
        """tr{B·(W f)(W f)^H} per subcarrier before power normalization."""
        x = self.f_bb_raw @ self.analog_matrix.T
        return np.array([float(np.real(x[k].conj() @ p.interference_matrix @ x[k]))
                         for k, p in enumerate(self.problems)])

def _common_analog(vectors: np.ndarray, config: SystemConfig) -> np.ndarray:
    """One w_n for all subcarriers: projected dominant direction of Σ_k f_k,n f_k,n^H/‖f_k‖²."""
    norms = np.linalg.norm(vectors, axis=1)
    unit = vectors / np.where(norms > 0, norms, 1.0)[:, None]
    blocks = unit.reshape(unit.shape[0], config.n_rf, config.subarray_size)
    cov = np.einsum("kns,knt->nst", blocks, blocks.conj()) / unit.shape[0]
    return np.array([dominant_direction(R) for R in cov])

def digital_in_subspace(problems, W: np.ndarray) -> np.ndarray:
    """f_BB[k] solving each program over x = W·f (W^H W = I keeps tr{M} = ‖f‖²)."""
    Wh = W.conj().T
    out = np.zeros((len(problems), W.shape[1]), dtype=complex)
    for k, p in enumerate(problems):
        reduced = RobustProblem(Wh @ p.signal_matrix @ W, Wh @ p.interference_matrix @ W,
                                p.budget, p.power)
        vals, vecs = eigh(solve_psd_program(reduced))
        out[k] = np.sqrt(max(vals[-1], 0.0)) * vecs[:, -1]
    return out

def robust_design(csi: ImperfectCsi, config: SystemConfig,
                  ibi: Optional[IbiSequence] = None,
                  realization_id: int = 0) -> RobustDesign:
    """Robust vectors per subcarrier, a common analog, then the digital stage.

    The analog recovered from the robust vectors competes with the
    statistical-eigen analog; the one whose digital stage collects the larger
    total signal under the budgets is kept.
    """
    ibi = ibi or ibi_for(config)
    K = csi.estimated.shape[0]
    cov = average_covariances(csi.as_channel(), config.n_rf)
    v = dominant_direction(cov.receive)

    problems, vectors = [], []
    for k in range(K):
        problem = build_problem(csi, k, ibi, config, v)
        M = solve_psd_program(problem)
        rng = derive_rng(config.master_seed, 2, realization_id, k)
        problems.append(problem)
        vectors.append(randomize_and_select(M, problem, config.n_candidates, rng))
    vectors = np.array(vectors)

    analogs = (("recovered", _common_analog(vectors, config)),
               ("statistical", np.array([dominant_direction(R) for R in cov.per_chain])))
    best = None
    for source, w in analogs:
        W = HybridBeamformer(v, w, np.zeros((1, config.n_rf))).analog_matrix()
        f_bb = digital_in_subspace(problems, W)
        x = f_bb @ W.T
        signal = sum(float(np.real(x[k].conj() @ p.signal_matrix @ x[k]))
                     for k, p in enumerate(problems))
        if best is None or signal > best[0] + 1e-12 * abs(best[0]):
            best = (signal, source, w, f_bb)
    signal, source, w, f_bb = best
    logger.debug(f"Robust analog: {source} (total signal {signal:.3e})")
    return RobustDesign(tuple(problems), vectors, v, w, f_bb, source)

def _evaluate(bf: HybridBeamformer, csi: ImperfectCsi, config: SystemConfig,
              ibi: IbiSequence, scheme: Scheme, realization_id: int, elapsed: float) -> SchemeResult:
    truth = csi.true_ref
    if truth is None:
        logger.warning("No true channel attached; evaluating on the estimate")
        truth = csi.as_channel()
    sinr = sinr_per_subcarrier(truth, bf, ibi, config.psi)
    return SchemeResult.from_sinr(sinr, config.bandwidth_hz, scheme, realization_id, elapsed)

def run_robust_scheme(csi: ImperfectCsi, config: SystemConfig,
                      ibi: Optional[IbiSequence] = None,
                      realization_id: int = 0) -> Tuple[HybridBeamformer, SchemeResult]:
    """Robust design on H_e, SINR measured on the true channel."""
    start = time.perf_counter()
    ibi = ibi or ibi_for(config)
    design = robust_design(csi, config, ibi, realization_id)
    f_bb = normalize_digital(design.analog_matrix, design.f_bb_raw)
    bf = HybridBeamformer(design.v, design.w, f_bb)
    result = _evaluate(bf, csi, config, ibi, Scheme.ROBUST, realization_id,
                       time.perf_counter() - start)
    return bf, result

def run_non_robust_scheme(csi: ImperfectCsi, config: SystemConfig,
                          ibi: Optional[IbiSequence] = None,
                          realization_id: int = 0) -> Tuple[HybridBeamformer, SchemeResult]:
    """Eigen scheme designed on H_e as if it were exact, evaluated on the truth."""
    start = time.perf_counter()
    ibi = ibi or ibi_for(config)
    bf, _ = run_eigen_scheme(csi.as_channel(), config, ibi, realization_id=realization_id)
    result = _evaluate(bf, csi, config, ibi, Scheme.NON_ROBUST, realization_id,
                       time.perf_counter() - start)
    return bf, result

def run_robust_comparison(csi: ImperfectCsi, config: SystemConfig,
                          ibi: Optional[IbiSequence] = None,
                          realization_id: int = 0) -> Dict[Scheme, SchemeResult]:
    """Perfect-CSI eigen, robust and non-robust results on one realization."""
    if csi.true_ref is None:
        raise StructuralError("comparison needs the true channel")
    ibi = ibi or ibi_for(config)
    _, perfect = run_eigen_scheme(csi.true_ref, config, ibi, realization_id=realization_id,
                                  scheme_id=Scheme.PERFECT_CSI)
    _, robust = run_robust_scheme(csi, config, ibi, realization_id)
    _, non_robust = run_non_robust_scheme(csi, config, ibi, realization_id)
    return {Scheme.PERFECT_CSI: perfect, Scheme.ROBUST: robust, Scheme.NON_ROBUST: non_robust}

# ─── Probabilistic Constraint Check ────────────────────

def interference_exceedance(csi: ImperfectCsi, k: int, ibi: IbiSequence, M: np.ndarray,
                            config: SystemConfig, rng: np.random.Generator,
                            n_draws: int = 1000,
                            v: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """(empirical Pr{Z_k ≥ T_k}, E[Z_k]/T_k) over channels redrawn around H_e at the CSI NMSE.

    Z_k = tr{H̃^H[k]H̃[k]·M}, on combined rows when v is given; Markov's
    inequality bounds the first by the second.
    """
    H_e = csi.estimated
    energy = np.sum(np.abs(H_e) ** 2)
    truncated = not config.robust_full_ibi
    loads = np.empty(n_draws)
    for i in range(n_draws):
        E = (rng.standard_normal(H_e.shape) + 1j * rng.standard_normal(H_e.shape)) / np.sqrt(2)
        if csi.nmse > 0:
            E *= np.sqrt(csi.nmse * energy / np.sum(np.abs(E) ** 2))
        else:
            E[:] = 0
        drawn = H_e - E if v is None else combine_rows(H_e - E, v)
        H_ext = extended_channel(drawn, k, ibi, truncated)
        loads[i] = float(np.real(np.trace(H_ext.conj().T @ H_ext @ M)))
    return float(np.mean(loads >= config.t_k)), float(np.mean(loads) / config.t_k)
