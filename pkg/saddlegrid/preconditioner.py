"""
内部前処理モジュール
拡散反応問題 −√β Δu + u = φ の離散系 G x = D·rhs を対称 V(ν,ν) サイクル
（減衰 Jacobi 平滑化）で近似的に解く L_k⁻¹ と、ブロック前処理 C_k⁻¹ を提供します。
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from saddlegrid.assembly import Prolongation
from saddlegrid.hierarchy import LevelOperators
from saddlegrid.saddle import BlockVector, Solver, apply_blockwise, factorize

logger = logging.getLogger(__name__)

# 次元ごとの Jacobi 減衰係数の既定値
DEFAULT_JACOBI_DAMPING = {2: 2.0 / 3.0, 3: 4.0 / 7.0}


@dataclass(frozen=True, eq=False)
class ReactionDiffusionLevel:
    """G = √β A + M とその Jacobi 用対角"""
    G: sp.csr_matrix
    diag_inv: np.ndarray
    prolongation: Prolongation | None
    weight: float


def _scale_rows(d: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (d * x.T).T


class ReactionDiffusionHierarchy:
    """L_k⁻¹ を与える V(ν,ν) マルチグリッド

    exact=True のときは全レベルで直接法を使う（検証用）。
    """

    def __init__(
        self,
        levels: list[LevelOperators],
        beta: float,
        nu: int = 4,
        damping: float | None = None,
        exact: bool = False,
    ):
        if nu < 1:
            raise ValueError(f"平滑化回数 ν は 1 以上: {nu}")
        self.beta = beta
        self.nu = nu
        self.exact = exact
        dim = levels[0].dim
        self.jacobi_damping = damping if damping is not None else DEFAULT_JACOBI_DAMPING[dim]
        sb = math.sqrt(beta)
        self.levels: list[ReactionDiffusionLevel] = []
        for ops in levels:
            G = (sb * ops.stiffness + ops.mass).tocsr()
            diag = G.diagonal()
            self.levels.append(
                ReactionDiffusionLevel(
                    G=G,
                    diag_inv=1.0 / diag if diag.size else diag,
                    prolongation=ops.prolongation,
                    weight=ops.metric.weight,
                )
            )
        self._direct: dict[int, Solver] = {0: factorize(self.levels[0].G)}

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def direct_solver(self, level: int) -> Solver:
        """G_level の厳密ソルバ（遅延分解）"""
        if level not in self._direct:
            self._direct[level] = factorize(self.levels[level].G)
        return self._direct[level]

    def _check_level(self, level: int) -> None:
        if not 0 <= level < self.num_levels:
            raise ValueError(f"レベル {level} は範囲外です（0〜{self.num_levels - 1}）")

    def vcycle(self, level: int, b: np.ndarray) -> np.ndarray:
        """G x = b に対する初期値 0 の V(ν,ν) サイクル 1 回"""
        if level == 0 or self.exact:
            return self.direct_solver(level)(b)
        lv = self.levels[level]
        omega = self.jacobi_damping
        x = np.zeros_like(b, dtype=float)
        for _ in range(self.nu):
            x += omega * _scale_rows(lv.diag_inv, b - lv.G @ x)
        r = b - lv.G @ x
        assert lv.prolongation is not None
        xc = self.vcycle(level - 1, lv.prolongation.transpose(r))
        x += lv.prolongation.apply(xc)
        for _ in range(self.nu):
            x += omega * _scale_rows(lv.diag_inv, b - lv.G @ x)
        return x

    def apply_Linv(self, level: int, rhs: np.ndarray) -> np.ndarray:
        """L_k⁻¹ rhs（G x = D·rhs を近似的に解く）"""
        self._check_level(level)
        return self.vcycle(level, self.levels[level].weight * rhs)

    def apply_Cinv(self, level: int, u: np.ndarray) -> np.ndarray:
        """C_k⁻¹ u（縦積みベクトルの各ブロックに L_k⁻¹）"""
        self._check_level(level)
        n = self.levels[level].G.shape[0]
        return apply_blockwise(lambda w: self.apply_Linv(level, w), u, n)

    def apply_C(self, level: int, u: np.ndarray) -> np.ndarray:
        """厳密版の C_k u = D⁻¹ Ĝ u（exact=True のときの逆作用素）"""
        lv = self.levels[level]
        n = lv.G.shape[0]
        return apply_blockwise(lambda w: (lv.G @ w) / lv.weight, u, n)


def apply_Linv(h: ReactionDiffusionHierarchy, level: int, rhs: np.ndarray) -> np.ndarray:
    return h.apply_Linv(level, rhs)


def apply_Cinv(h: ReactionDiffusionHierarchy, level: int, u: BlockVector) -> BlockVector:
    return BlockVector.from_stacked(h.apply_Cinv(level, u.stacked()), u.level)


@dataclass(frozen=True)
class CycleContraction:
    """内部 V サイクルの G ノルム縮小率の推定結果"""
    value: float
    iterations: int
    converged: bool


def estimate_cycle_contraction(
    h: ReactionDiffusionHierarchy,
    level: int,
    max_iters: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
) -> CycleContraction:
    """誤差伝播 e ← e − V(G e) の G ノルムをべき乗法で推定する"""
    h._check_level(level)
    if level == 0 or h.exact:
        return CycleContraction(0.0, 0, True)
    G = h.levels[level].G
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(G.shape[0])
    v /= math.sqrt(v @ (G @ v))
    estimate = 0.0
    for it in range(1, max_iters + 1):
        w = v - h.vcycle(level, G @ v)
        norm = math.sqrt(max(w @ (G @ w), 0.0))
        if norm == 0.0:
            return CycleContraction(0.0, it, True)
        if abs(norm - estimate) <= tol * norm:
            return CycleContraction(norm, it, True)
        estimate = norm
        v = w / norm
    logger.warning(f"内部サイクルの縮小率推定が収束しませんでした (レベル {level})")
    return CycleContraction(estimate, max_iters, False)
