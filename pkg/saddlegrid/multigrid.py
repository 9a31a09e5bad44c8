"""
鞍点マルチグリッドモジュール
減衰係数の選択、前後 Richardson 平滑化、W/V/2 グリッドサイクル、FMG を実装します。

作用素はすべて係数表現（[·,·]_k に関する表現）で扱い、右辺 f は K x = D f の D f に対応する。
"""

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from saddlegrid.errors import ConfigError, FMGConvergenceError
from saddlegrid.hierarchy import LevelOperators
from saddlegrid.preconditioner import ReactionDiffusionHierarchy
from saddlegrid.saddle import BlockVector, SaddleBlockMatrix, Solver, factorize

logger = logging.getLogger(__name__)


class CycleType(Enum):
    """サイクルの種類"""
    W = "w"
    V = "v"
    TWO_GRID = "two-grid"
    FMG = "fmg"


@dataclass(frozen=True)
class CycleConfig:
    """外側マルチグリッドの設定"""
    beta: float
    m1: int = 1
    m2: int = 1
    cycle: CycleType = CycleType.W
    c_dagger: float | None = None
    lanczos_steps: int = 80
    fmg_tolerance: float = 1e-8
    fmg_max_iterations: int = 100
    fmg_cycle: CycleType = CycleType.W
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"β は正である必要があります: {self.beta}")
        if self.m1 < 0 or self.m2 < 0:
            raise ConfigError(f"平滑化回数は 0 以上: m1={self.m1}, m2={self.m2}")
        if self.m1 + self.m2 == 0:
            raise ConfigError("m1 と m2 の少なくとも一方は 1 以上が必要です")
        if self.c_dagger is not None and not self.c_dagger > 0:
            raise ConfigError(f"c_dagger は正である必要があります: {self.c_dagger}")
        if self.lanczos_steps < 1:
            raise ConfigError(f"lanczos_steps は 1 以上: {self.lanczos_steps}")
        if self.fmg_cycle is CycleType.FMG:
            raise ConfigError("FMG 内の反復サイクルに FMG は指定できません")

    @property
    def symmetric(self) -> bool:
        return self.m1 == self.m2

    def swapped(self) -> "CycleConfig":
        """前後の平滑化回数を入れ替えた設定（ℬ 随伴サイクル）"""
        return replace(self, m1=self.m2, m2=self.m1)


class Regime(Enum):
    """減衰係数の選択規則"""
    WELL_CONDITIONED = "well-conditioned"
    ILL_CONDITIONED = "ill-conditioned"


@dataclass(frozen=True)
class DampingEntry:
    level: int
    lam: float
    regime: Regime
    est_min: float
    est_max: float
    # √β h_k⁻²
    condition: float

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "lambda": self.lam,
            "regime": self.regime.value,
            "est_min": self.est_min,
            "est_max": self.est_max,
            "condition": self.condition,
        }


@dataclass(frozen=True)
class DampingTable:
    entries: tuple[DampingEntry, ...]
    c_dagger: float

    def lam(self, level: int) -> float:
        return self.entries[level].lam

    def __len__(self) -> int:
        return len(self.entries)


def lanczos_extremes(
    apply_op: Callable[[np.ndarray], np.ndarray],
    n: int,
    steps: int,
    rng: np.random.Generator,
    max_restarts: int = 3,
) -> tuple[float, float]:
    """完全再直交化付き Lanczos で対称作用素の最小・最大固有値を推定する

    破綻（Krylov 部分空間が不変になる）時は既存基底に直交する乱数ベクトルで
    再開し、最大 max_restarts 回まで続ける。
    """
    if n == 0:
        return 0.0, 0.0
    steps = min(steps, n)
    Q = np.zeros((n, steps))
    alphas: list[float] = []
    betas: list[float] = []
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    restarts = 0
    beta_prev = 0.0
    for j in range(steps):
        Q[:, j] = q
        w = apply_op(q)
        alpha = float(q @ w)
        alphas.append(alpha)
        # 完全再直交化（2 回）
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        beta = float(np.linalg.norm(w))
        if j == steps - 1:
            break
        scale = max(abs(alpha), beta_prev, 1.0)
        if beta <= 1e-12 * scale:
            if restarts >= max_restarts:
                break
            restarts += 1
            logger.debug(f"Lanczos 破綻 (step {j + 1})、再開 {restarts}/{max_restarts}")
            w = rng.standard_normal(n)
            for _ in range(2):
                w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
            q = w / np.linalg.norm(w)
            beta = 0.0
        else:
            q = w / beta
        betas.append(beta)
        beta_prev = beta
    m = len(alphas)
    if m == 1:
        return alphas[0], alphas[0]
    evals = la.eigh_tridiagonal(np.array(alphas), np.array(betas[: m - 1]), eigvals_only=True)
    return float(evals[0]), float(evals[-1])


class SaddleMultigrid:
    """鞍点系 𝔅_k u = f のマルチグリッド解法"""

    def __init__(
        self,
        levels: Sequence[LevelOperators],
        config: CycleConfig,
        preconditioner: ReactionDiffusionHierarchy | None = None,
        damping: DampingTable | None = None,
        saddles: Sequence[SaddleBlockMatrix] | None = None,
        inner_nu: int = 4,
    ):
        self.levels = list(levels)
        self.config = config
        self.saddles = (
            list(saddles)
            if saddles is not None
            else [SaddleBlockMatrix(config.beta, ops) for ops in self.levels]
        )
        self.preconditioner = preconditioner or ReactionDiffusionHierarchy(
            self.levels, config.beta, nu=inner_nu
        )
        self._block_prolongations: list[sp.csr_matrix | None] = [None] + [
            sp.block_diag([ops.prolongation.matrix] * 2, format="csr")  # type: ignore[union-attr]
            for ops in self.levels[1:]
        ]
        self._exact: dict[int, Solver] = {0: factorize(self.saddles[0].K)}
        self.damping = damping if damping is not None else build_damping(
            self.levels, self.saddles, self.preconditioner, config
        )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def with_config(self, config: CycleConfig) -> "SaddleMultigrid":
        """同じ階層・前処理・減衰表で設定だけを変えたインスタンス"""
        if config.beta != self.config.beta:
            raise ValueError("β の異なる設定には作り直しが必要です")
        return SaddleMultigrid(
            self.levels, config, self.preconditioner, self.damping, self.saddles
        )

    def n(self, level: int) -> int:
        return self.saddles[level].n

    # ---- 基本演算 ----

    def residual(self, level: int, f: np.ndarray, u: np.ndarray) -> np.ndarray:
        """f − 𝔅u"""
        return f - self.saddles[level].apply(u)

    def restrict(self, level: int, r: np.ndarray) -> np.ndarray:
        """レベル level からレベル level−1 への制限 (h_k/h_{k-1})² Pᵀ"""
        ratio = (self.levels[level].h / self.levels[level - 1].h) ** 2
        P = self._block_prolongations[level]
        assert P is not None
        return ratio * (P.T @ r)

    def prolong(self, level: int, e: np.ndarray) -> np.ndarray:
        """レベル level−1 からレベル level への延長"""
        P = self._block_prolongations[level]
        assert P is not None
        return P @ e

    def exact_solve(self, level: int, f: np.ndarray) -> np.ndarray:
        """𝔅_k⁻¹ f（K x = D f を直接法で解く）"""
        if level not in self._exact:
            self._exact[level] = factorize(self.saddles[level].K)
        return self._exact[level](self.saddles[level].metric.weight * f)

    def coarse_solve(self, f: np.ndarray) -> np.ndarray:
        return self.exact_solve(0, f)

    def ritz_projection(self, level: int, u: np.ndarray) -> np.ndarray:
        """ℬ 直交射影 P^{k-1}_k u: 𝔅_{k-1} x = R 𝔅_k u の解"""
        if not 1 <= level < self.num_levels:
            raise ValueError(f"レベル {level} は範囲外です（1〜{self.num_levels - 1}）")
        return self.exact_solve(level - 1, self.restrict(level, self.saddles[level].apply(u)))

    # ---- 平滑化 ----

    def smooth_pre(self, level: int, u: np.ndarray, f: np.ndarray, lam: float | None = None) -> np.ndarray:
        """u + λ C⁻¹𝔅 (f − 𝔅u)"""
        lam = self.damping.lam(level) if lam is None else lam
        r = self.residual(level, f, u)
        return u + lam * self.preconditioner.apply_Cinv(level, self.saddles[level].apply(r))

    def smooth_post(self, level: int, u: np.ndarray, f: np.ndarray, lam: float | None = None) -> np.ndarray:
        """u + λ 𝔅C⁻¹ (f − 𝔅u)"""
        lam = self.damping.lam(level) if lam is None else lam
        r = self.residual(level, f, u)
        return u + lam * self.saddles[level].apply(self.preconditioner.apply_Cinv(level, r))

    # ---- サイクル ----

    def cycle(
        self,
        level: int,
        f: np.ndarray,
        u0: np.ndarray,
        kind: CycleType | None = None,
    ) -> np.ndarray:
        """設定のサイクルを 1 回適用する"""
        kind = kind or self.config.cycle
        if kind is CycleType.FMG:
            kind = self.config.fmg_cycle
        if not 0 <= level < self.num_levels:
            raise ValueError(f"レベル {level} は範囲外です（0〜{self.num_levels - 1}）")
        return self._cycle(level, f, u0, kind)

    def _cycle(self, level: int, f: np.ndarray, u: np.ndarray, kind: CycleType) -> np.ndarray:
        if level == 0:
            return self.coarse_solve(f)
        lam = self.damping.lam(level)
        for _ in range(self.config.m1):
            u = self.smooth_pre(level, u, f, lam)
        fc = self.restrict(level, self.residual(level, f, u))
        if kind is CycleType.TWO_GRID:
            ec = self.exact_solve(level - 1, fc)
        else:
            ec = self._cycle(level - 1, fc, np.zeros_like(fc), kind)
            if kind is CycleType.W:
                # 2 回目の再帰呼び出しは 1 回目の出力から始める
                ec = self._cycle(level - 1, fc, ec, kind)
        u = u + self.prolong(level, ec)
        for _ in range(self.config.m2):
            u = self.smooth_post(level, u, f, lam)
        return u

    def wcycle(self, level: int, f: np.ndarray, u0: np.ndarray) -> np.ndarray:
        return self.cycle(level, f, u0, CycleType.W)

    def vcycle(self, level: int, f: np.ndarray, u0: np.ndarray) -> np.ndarray:
        return self.cycle(level, f, u0, CycleType.V)

    def two_grid(self, level: int, f: np.ndarray, u0: np.ndarray) -> np.ndarray:
        return self.cycle(level, f, u0, CycleType.TWO_GRID)

    # ---- FMG ----

    def relative_residual(self, level: int, f: np.ndarray, u: np.ndarray) -> float:
        """組み立て済み系 K u = D f のユークリッド相対残差"""
        saddle = self.saddles[level]
        b = saddle.metric.weight * f
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return float(np.linalg.norm(saddle.K @ u))
        return float(np.linalg.norm(b - saddle.K @ u)) / bnorm

    def full_multigrid(self, rhs: Sequence[np.ndarray]) -> "FMGResult":
        """FMG: 最粗レベルを厳密に解き、延長した解を初期値に各レベルで反復する"""
        if len(rhs) != self.num_levels:
            raise ValueError(f"右辺の数 {len(rhs)} がレベル数 {self.num_levels} と一致しません")
        kind = self.config.fmg_cycle
        tol = self.config.fmg_tolerance
        start = time.perf_counter()
        solutions = [self.coarse_solve(rhs[0])]
        iterations = [0]
        histories: list[list[float]] = [[self.relative_residual(0, rhs[0], solutions[0])]]
        for level in range(1, self.num_levels):
            u = self.prolong(level, solutions[-1])
            history = [self.relative_residual(level, rhs[level], u)]
            its = 0
            while history[-1] > tol:
                if its >= self.config.fmg_max_iterations:
                    raise FMGConvergenceError(
                        f"FMG がレベル {level} で {its} 回以内に収束しませんでした "
                        f"(相対残差 {history[-1]:.3e})",
                        level=level,
                        residual_history=history,
                    )
                u = self._cycle(level, rhs[level], u, kind)
                its += 1
                history.append(self.relative_residual(level, rhs[level], u))
            logger.info(f"FMG レベル {level}: {its} 回, 相対残差 {history[-1]:.3e}")
            solutions.append(u)
            iterations.append(its)
            histories.append(history)
        return FMGResult(
            solutions=solutions,
            iterations=iterations,
            residual_histories=histories,
            seconds=time.perf_counter() - start,
        )


@dataclass
class FMGResult:
    """FMG の結果（解は縦積みの係数表現）"""
    solutions: list[np.ndarray]
    iterations: list[int]
    residual_histories: list[list[float]]
    seconds: float = 0.0

    def finest(self, level: int | None = None) -> BlockVector:
        k = len(self.solutions) - 1 if level is None else level
        return BlockVector.from_stacked(self.solutions[k], k)


def build_damping(
    levels: Sequence[LevelOperators],
    saddles: Sequence[SaddleBlockMatrix],
    preconditioner: ReactionDiffusionHierarchy,
    config: CycleConfig,
) -> DampingTable:
    """各レベルの減衰係数 λ_k を決める

    𝔅C⁻¹𝔅 の [·,·]_k に関する極値固有値を Lanczos で推定する。D は h_k² I なので
    [·,·]_k 直交性はユークリッド直交性と一致する。
    """
    rng = np.random.default_rng(config.seed)
    estimates: list[tuple[float, float]] = []
    for ops, saddle in zip(levels, saddles):
        k = ops.level

        def op(u: np.ndarray, k: int = k, saddle: SaddleBlockMatrix = saddle) -> np.ndarray:
            return saddle.apply(preconditioner.apply_Cinv(k, saddle.apply(u)))

        estimates.append(lanczos_extremes(op, 2 * saddle.n, config.lanczos_steps, rng))

    sb = math.sqrt(config.beta)
    conditions = [sb / ops.h**2 for ops in levels]
    if config.c_dagger is not None:
        c_dagger = config.c_dagger
    else:
        ratios = [est[1] / (1.0 + c) for est, c in zip(estimates, conditions) if est[1] > 0]
        c_dagger = 1.1 * max(ratios) if ratios else 1.0

    entries = []
    for ops, (est_min, est_max), cond in zip(levels, estimates, conditions):
        if cond < 1.0:
            regime = Regime.WELL_CONDITIONED
            lam = 2.0 / (est_min + est_max) if est_max > 0 else 0.0
        else:
            regime = Regime.ILL_CONDITIONED
            lam = 1.0 / (c_dagger * (1.0 + cond))
            if lam * est_max > 1.0:
                logger.warning(
                    f"レベル {ops.level}: λ·λ_max = {lam * est_max:.3f} > 1 (c_dagger が小さすぎます)"
                )
        entries.append(DampingEntry(ops.level, lam, regime, est_min, est_max, cond))
        logger.info(
            f"減衰係数 レベル {ops.level}: λ={lam:.4e} ({regime.value}), "
            f"推定固有値 [{est_min:.4e}, {est_max:.4e}], √β h⁻²={cond:.3g}"
        )
    return DampingTable(entries=tuple(entries), c_dagger=c_dagger)


def smooth_pre(mg: SaddleMultigrid, u: BlockVector, f: BlockVector, level: int, lam: float) -> BlockVector:
    return BlockVector.from_stacked(mg.smooth_pre(level, u.stacked(), f.stacked(), lam), level)


def smooth_post(mg: SaddleMultigrid, u: BlockVector, f: BlockVector, level: int, lam: float) -> BlockVector:
    return BlockVector.from_stacked(mg.smooth_post(level, u.stacked(), f.stacked(), lam), level)


def wcycle(mg: SaddleMultigrid, level: int, f: BlockVector, u0: BlockVector) -> BlockVector:
    return BlockVector.from_stacked(mg.wcycle(level, f.stacked(), u0.stacked()), level)


def vcycle(mg: SaddleMultigrid, level: int, f: BlockVector, u0: BlockVector) -> BlockVector:
    return BlockVector.from_stacked(mg.vcycle(level, f.stacked(), u0.stacked()), level)


def full_multigrid(mg: SaddleMultigrid, rhs: Sequence[BlockVector]) -> FMGResult:
    return mg.full_multigrid([r.stacked() for r in rhs])
