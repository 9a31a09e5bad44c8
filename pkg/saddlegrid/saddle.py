"""
鞍点作用素モジュール
双一次形式 ℬ、その係数表現 𝔅_k = D⁻¹K、ブロック内積とメッシュ依存ノルムを実装します。

ブロックベクトルは内部では p と y を縦に並べた配列 (2n,) または (2n, r) で扱う。
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from saddlegrid.assembly import LumpedMetric
from saddlegrid.errors import NumericalError
from saddlegrid.hierarchy import LevelOperators

logger = logging.getLogger(__name__)

Solver = Callable[[np.ndarray], np.ndarray]


def factorize(matrix: sp.spmatrix) -> Solver:
    """疎 LU 分解を作り、ソルバ関数を返す（0×0 行列も扱う）"""
    if matrix.shape[0] == 0:
        return lambda b: np.zeros_like(b, dtype=float)
    try:
        lu = splu(sp.csc_matrix(matrix))
    except RuntimeError as e:
        raise NumericalError(f"行列の分解に失敗しました: {e}") from e
    return lu.solve


def apply_blockwise(func: Solver, u: np.ndarray, n: int) -> np.ndarray:
    """(2n, ...) の縦積みベクトルの p, y 各ブロックに同じ線形作用素を適用する"""
    tail = u.shape[1:]
    w = np.moveaxis(u.reshape((2, n) + tail), 0, 1).reshape(n, -1)
    out = np.asarray(func(w)).reshape((n, 2) + tail)
    return np.moveaxis(out, 1, 0).reshape(u.shape)


@dataclass(frozen=True)
class BlockVector:
    """V_k × V_k の元 (p, y)"""
    p: np.ndarray
    y: np.ndarray
    level: int

    def __post_init__(self):
        if self.p.shape != self.y.shape:
            raise ValueError(f"p と y の長さが一致しません: {self.p.shape} != {self.y.shape}")

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.p, self.y])

    @classmethod
    def from_stacked(cls, u: np.ndarray, level: int) -> "BlockVector":
        n = u.shape[0] // 2
        return cls(p=np.array(u[:n]), y=np.array(u[n:]), level=level)

    @classmethod
    def zeros(cls, n: int, level: int) -> "BlockVector":
        return cls(p=np.zeros(n), y=np.zeros(n), level=level)

    def __add__(self, other: "BlockVector") -> "BlockVector":
        _check_levels(self, other)
        return BlockVector(self.p + other.p, self.y + other.y, self.level)

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        _check_levels(self, other)
        return BlockVector(self.p - other.p, self.y - other.y, self.level)

    def scaled(self, alpha: float) -> "BlockVector":
        return BlockVector(alpha * self.p, alpha * self.y, self.level)


def _check_levels(a: BlockVector, b: BlockVector) -> None:
    if a.level != b.level:
        raise ValueError(f"レベルが一致しません: {a.level} != {b.level}")


class SaddleBlockMatrix:
    """K = [[√β A, −M], [−M, −√β A]] と重み付き H¹ ノルム"""

    def __init__(self, beta: float, ops: LevelOperators):
        if beta <= 0:
            raise ValueError(f"β は正である必要があります: {beta}")
        self.beta = beta
        self.level = ops.level
        self.h = ops.h
        self.A = ops.stiffness
        self.M = ops.mass
        self.metric: LumpedMetric = ops.metric
        self.sqrt_beta = math.sqrt(beta)
        sb = self.sqrt_beta
        self.K = sp.bmat(
            [[sb * self.A, -self.M], [-self.M, -sb * self.A]], format="csr"
        )
        self.G = (sb * self.A + self.M).tocsr()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def apply_K(self, u: np.ndarray) -> np.ndarray:
        return self.K @ u

    def apply(self, u: np.ndarray) -> np.ndarray:
        """𝔅_k の係数表現 D⁻¹ K u"""
        return (self.K @ u) / self.metric.weight

    def form(self, u: np.ndarray, v: np.ndarray) -> float:
        """ℬ(u, v) = vᵀ K u"""
        return float(v @ (self.K @ u))

    def bracket(self, u: np.ndarray, v: np.ndarray) -> float:
        """[u, v]_k"""
        return float(self.metric.weight * np.dot(u, v))

    def h1beta_sq(self, v: np.ndarray) -> float:
        """‖v‖²_{H¹_β} = vᵀ M v + √β vᵀ A v（スカラー成分）"""
        return float(v @ (self.G @ v))

    def pair_norm(self, u: np.ndarray) -> float:
        """(‖p‖²_{H¹_β} + ‖y‖²_{H¹_β})^{1/2}"""
        n = self.n
        return math.sqrt(self.h1beta_sq(u[:n]) + self.h1beta_sq(u[n:]))


def apply_B(saddle: SaddleBlockMatrix, u: BlockVector) -> BlockVector:
    """𝔅_k u"""
    if u.level != saddle.level:
        raise ValueError(f"レベルが一致しません: {u.level} != {saddle.level}")
    return BlockVector.from_stacked(saddle.apply(u.stacked()), u.level)


def inf_sup_witness(saddle: SaddleBlockMatrix, u: BlockVector) -> tuple[BlockVector, float]:
    """inf-sup 条件の証拠 (p−y, −y−p) と比 ℬ(u, w)/‖w‖ を返す"""
    w = BlockVector(u.p - u.y, -u.y - u.p, u.level)
    ws = w.stacked()
    wnorm = saddle.pair_norm(ws)
    if wnorm == 0.0:
        raise ValueError("u = 0 に対して証拠は定義されません")
    return w, saddle.form(u.stacked(), ws) / wnorm


class MeshNorms:
    """メッシュ依存ノルム |||·|||_{0,k}, |||·|||_{1,k}（Ĝ は厳密解法）"""

    def __init__(self, saddle: SaddleBlockMatrix):
        self.saddle = saddle
        self.metric = saddle.metric
        self._g_solve = factorize(saddle.G)
        self._k_solve: Solver | None = None

    def solve_G(self, w: np.ndarray) -> np.ndarray:
        """Ĝ⁻¹ w（ブロックごと）"""
        return apply_blockwise(self._g_solve, w, self.saddle.n)

    def apply_G(self, w: np.ndarray) -> np.ndarray:
        """Ĝ w"""
        return apply_blockwise(lambda x: self.saddle.G @ x, w, self.saddle.n)

    def solve_K(self, w: np.ndarray) -> np.ndarray:
        """K⁻¹ w（初回に分解する）"""
        if self._k_solve is None:
            self._k_solve = factorize(self.saddle.K)
        return self._k_solve(w)

    def s_apply(self, u: np.ndarray) -> np.ndarray:
        """S u = K Ĝ⁻¹ K u"""
        return self.saddle.K @ self.solve_G(self.saddle.K @ u)

    def s_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        ku = self.saddle.K @ u
        kv = self.saddle.K @ v
        return float(kv @ self.solve_G(ku))

    def norm_1k(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.s_inner(u, u), 0.0))

    def norm_0k(self, u: np.ndarray) -> float:
        return math.sqrt(self.saddle.bracket(u, u))

    def dense_metric(self) -> np.ndarray:
        """S = K Ĝ⁻¹ K を密行列で返す"""
        kd = self.saddle.K.toarray()
        s = kd @ self.solve_G(kd)
        return 0.5 * (s + s.T)


def norm_1k(norms: MeshNorms, u: BlockVector) -> float:
    return norms.norm_1k(u.stacked())


def norm_0k(norms: MeshNorms, u: BlockVector) -> float:
    return norms.norm_0k(u.stacked())
