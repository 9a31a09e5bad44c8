"""
スペクトル解析モジュール
誤差伝播作用素 E_k の |||·|||_{1,k} ノルムを計測し、1 サイクルあたりの実行時間を報告します。

‖E‖ は S = K Ĝ⁻¹ K を計量とする作用素ノルム。小さいレベルでは E を密行列化して
一般化固有値問題を解き、大きいレベルでは一般化べき乗法を使う。
"""

import logging
import math
import statistics
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg as la

from saddlegrid.errors import NumericalError
from saddlegrid.hierarchy import LevelOperators, build_levels
from saddlegrid.mesh import DomainSpec
from saddlegrid.multigrid import CycleConfig, CycleType, SaddleMultigrid, build_damping
from saddlegrid.preconditioner import ReactionDiffusionHierarchy
from saddlegrid.saddle import BlockVector, MeshNorms, SaddleBlockMatrix

logger = logging.getLogger(__name__)

# 密行列化する際に一度に流す列数
_DENSE_CHUNK = 256


@dataclass
class LevelContraction:
    """1 レベル分の計測結果"""
    level: int
    norm_Ek: float
    iterations_used: int
    converged: bool
    seconds_per_cycle: float
    method: str = "power"


@dataclass
class ContractionReport:
    """(領域, β, サイクル, m1, m2) ごとの計測結果"""
    domain: str
    beta: float
    cycle: str
    m1: int
    m2: int
    seed: int
    entries: list[LevelContraction] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        """CSV 用の行"""
        return [
            {
                "domain": self.domain,
                "beta": self.beta,
                "cycle": self.cycle,
                "m1": self.m1,
                "m2": self.m2,
                "level": e.level,
                "norm_Ek": e.norm_Ek,
                "converged": e.converged,
                "seconds_per_cycle": e.seconds_per_cycle,
            }
            for e in self.entries
        ]

    def to_dict(self) -> dict:
        return asdict(self)


def apply_E(mg: SaddleMultigrid, level: int, u: np.ndarray) -> np.ndarray:
    """E_k u: 右辺 0、初期値 u でサイクルを 1 回適用する"""
    return mg.cycle(level, np.zeros_like(u, dtype=float), u)


def apply_E_block(mg: SaddleMultigrid, u: BlockVector) -> BlockVector:
    return BlockVector.from_stacked(apply_E(mg, u.level, u.stacked()), u.level)


def dense_error_operator(mg: SaddleMultigrid, level: int) -> np.ndarray:
    """単位ベクトルへの適用で E_k を密行列化する"""
    size = 2 * mg.n(level)
    E = np.empty((size, size))
    for start in range(0, size, _DENSE_CHUNK):
        stop = min(start + _DENSE_CHUNK, size)
        cols = np.zeros((size, stop - start))
        cols[np.arange(start, stop), np.arange(stop - start)] = 1.0
        E[:, start:stop] = apply_E(mg, level, cols)
    return E


def dense_operator_norm(E: np.ndarray, S: np.ndarray) -> float:
    """S 計量での ‖E‖ = sqrt(λ_max(Eᵀ S E, S))"""
    if E.size == 0:
        return 0.0
    A = E.T @ S @ E
    A = 0.5 * (A + A.T)
    size = A.shape[0]
    mu = la.eigh(A, S, eigvals_only=True, subset_by_index=[size - 1, size - 1])
    return math.sqrt(max(float(mu[0]), 0.0))


@dataclass(frozen=True)
class PowerResult:
    value: float
    iterations: int
    converged: bool


def operator_norm_power(
    mg: SaddleMultigrid,
    level: int,
    norms: MeshNorms,
    tol: float = 1e-4,
    max_iters: int = 200,
    seed: int = 0,
) -> PowerResult:
    """一般化べき乗法 v ← E* E v で ‖E‖ を推定する

    S 計量での随伴は E* = K⁻¹ Ĝ E' Ĝ⁻¹ K。E' は前後の平滑化回数を入れ替えた
    サイクルで、これが E の ℬ 随伴になる。
    """
    size = 2 * mg.n(level)
    if level == 0 or size == 0:
        return PowerResult(0.0, 0, True)
    adjoint = mg if mg.config.symmetric else mg.with_config(mg.config.swapped())
    K = norms.saddle.K
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v /= norms.norm_1k(v)
    previous = None
    stable = 0
    estimate = 0.0
    for it in range(1, max_iters + 1):
        w = apply_E(mg, level, v)
        kw = K @ w
        gkw = norms.solve_G(kw)
        sq = float(kw @ gkw)
        if sq <= 0.0:
            return PowerResult(0.0, it, True)
        estimate = math.sqrt(sq)
        z = norms.solve_K(norms.apply_G(apply_E(adjoint, level, gkw)))
        znorm = norms.norm_1k(z)
        if previous is not None and abs(estimate - previous) < tol * estimate:
            stable += 1
            if stable >= 3:
                return PowerResult(estimate, it, True)
        else:
            stable = 0
        previous = estimate
        if znorm == 0.0:
            return PowerResult(estimate, it, True)
        v = z / znorm
        logger.debug(f"べき乗法 レベル {level} 反復 {it}: {estimate:.6e}")
    logger.warning(f"べき乗法がレベル {level} で収束しませんでした (推定値 {estimate:.4e})")
    return PowerResult(estimate, max_iters, False)


def time_cycle(mg: SaddleMultigrid, level: int, repeats: int = 3, seed: int = 0) -> float:
    """ウォームアップ 1 回の後、repeats 回のサイクル時間の中央値"""
    rng = np.random.default_rng(seed)
    size = 2 * mg.n(level)
    u = rng.standard_normal(size)
    f = np.zeros(size)
    mg.cycle(level, f, u)
    samples = []
    for _ in range(max(repeats, 1)):
        start = time.perf_counter()
        mg.cycle(level, f, u)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


@dataclass(frozen=True)
class MeasurementSettings:
    """計測の設定"""
    tol: float = 1e-4
    max_iters: int = 200
    dense_threshold: int = 2500
    timing_repeats: int = 3
    seed: int = 0


def measure_contraction(
    mg: SaddleMultigrid,
    level: int,
    norms: MeshNorms,
    settings: MeasurementSettings,
) -> LevelContraction:
    """1 レベル分の ‖E_k‖ と 1 サイクルの時間を計測する"""
    seconds = time_cycle(mg, level, settings.timing_repeats, settings.seed)
    if level == 0:
        return LevelContraction(0, 0.0, 0, True, seconds, "exact")
    if mg.n(level) <= settings.dense_threshold:
        E = dense_error_operator(mg, level)
        value = dense_operator_norm(E, norms.dense_metric())
        return LevelContraction(level, value, 1, True, seconds, "dense")
    result = operator_norm_power(
        mg, level, norms, settings.tol, settings.max_iters, settings.seed
    )
    return LevelContraction(
        level, result.value, result.iterations, result.converged, seconds, "power"
    )


def _measure_beta(
    domain: DomainSpec,
    levels: Sequence[LevelOperators],
    beta: float,
    level_list: Sequence[int],
    m_pairs: Sequence[tuple[int, int]],
    template: CycleConfig,
    inner_nu: int,
    settings: MeasurementSettings,
    inner_damping: float | None = None,
) -> list[ContractionReport]:
    config = CycleConfig(
        beta=beta,
        m1=m_pairs[0][0],
        m2=m_pairs[0][1],
        cycle=template.cycle,
        c_dagger=template.c_dagger,
        lanczos_steps=template.lanczos_steps,
        seed=template.seed,
    )
    saddles = [SaddleBlockMatrix(beta, ops) for ops in levels]
    preconditioner = ReactionDiffusionHierarchy(
        list(levels), beta, nu=inner_nu, damping=inner_damping
    )
    damping = build_damping(levels, saddles, preconditioner, config)
    base = SaddleMultigrid(levels, config, preconditioner, damping, saddles)
    norms: dict[int, MeshNorms] = {}

    reports = []
    for m1, m2 in m_pairs:
        mg = base.with_config(replace(config, m1=m1, m2=m2))
        report = ContractionReport(
            domain=domain.name,
            beta=beta,
            cycle=config.cycle.value,
            m1=m1,
            m2=m2,
            seed=settings.seed,
        )
        for level in level_list:
            try:
                if level not in norms:
                    norms[level] = MeshNorms(saddles[level])
                entry = measure_contraction(mg, level, norms[level], settings)
            except (NumericalError, np.linalg.LinAlgError, la.LinAlgError) as e:
                message = f"{domain.name} β={beta:g} m=({m1},{m2}) k={level}: {e}"
                logger.error(f"計測に失敗しました: {message}")
                report.errors.append(message)
                entry = LevelContraction(level, float("nan"), 0, False, float("nan"), "failed")
            logger.info(
                f"{domain.name} β={beta:g} {config.cycle.value}({m1},{m2}) k={level}: "
                f"‖E‖={entry.norm_Ek:.3e} ({entry.method}), {entry.seconds_per_cycle:.3e}s/cycle"
            )
            report.entries.append(entry)
        reports.append(report)
    return reports


def sweep(
    domains: Sequence[DomainSpec],
    betas: Sequence[float],
    levels: Sequence[int],
    m_pairs: Sequence[tuple[int, int]],
    template: CycleConfig,
    inner_nu: int = 4,
    settings: MeasurementSettings | None = None,
    jobs: int = 1,
    inner_damping: float | None = None,
) -> list[ContractionReport]:
    """領域 × β × m × レベルの格子で縮小率を計測する"""
    settings = settings or MeasurementSettings(seed=template.seed)
    if template.cycle is CycleType.FMG:
        raise ValueError("FMG は線形反復ではないため縮小率を計測できません")
    if not levels or not m_pairs:
        return []
    max_level = max(levels)
    tasks = []
    for domain in domains:
        hierarchy = build_levels(domain, max_level)
        for beta in betas:
            tasks.append((domain, hierarchy, beta))

    def run(task):
        domain, hierarchy, beta = task
        return _measure_beta(
            domain, hierarchy, beta, levels, m_pairs, template, inner_nu, settings,
            inner_damping,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    return [report for group in results for report in group]
