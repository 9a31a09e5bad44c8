"""
参照解モジュール
単位正方形上の最適制御問題の厳密解を二重フーリエサイン級数で与え、
離散解の相対誤差（H¹ 半ノルム・L² ノルム）を評価します。
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from saddlegrid.assembly import assemble_load, cell_geometry
from saddlegrid.errors import SeriesTruncationError
from saddlegrid.mesh import MeshLevel
from saddlegrid.quadrature import quadrature_points
from saddlegrid.saddle import BlockVector

logger = logging.getLogger(__name__)


class DesiredState(Enum):
    """目標状態 y_d"""
    ONE = "one"
    BUBBLE = "bubble"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        if self is DesiredState.ONE:
            return np.ones_like(x)
        return x * (1.0 - x) * y * (1.0 - y)

    def coefficients_1d(self, modes: np.ndarray) -> np.ndarray:
        """y_d = a(x₁) a(x₂) と分解したときの a のサイン係数 2∫₀¹ a(x) sin(mπx) dx"""
        m = modes.astype(float)
        odd = (modes % 2) == 1
        if self is DesiredState.ONE:
            vals = 4.0 / (m * math.pi)
        else:
            vals = 8.0 / (m * math.pi) ** 3
        return np.where(odd, vals, 0.0)


@dataclass(frozen=True, eq=False)
class SineSeries:
    """Σ c_mn sin(mπx₁) sin(nπx₂)

    tail は打ち切りで落とした部分のノルムに対する相対的な推定値。
    """
    modes_m: np.ndarray
    modes_n: np.ndarray
    coefficients: np.ndarray
    truncation: int
    tail: float = 0.0

    @property
    def eigenvalues(self) -> np.ndarray:
        return math.pi**2 * (self.modes_m[:, None] ** 2 + self.modes_n[None, :] ** 2)

    @property
    def l2_norm_sq(self) -> float:
        return float(np.sum(self.coefficients**2) / 4.0)

    @property
    def h1_seminorm_sq(self) -> float:
        return float(np.sum(self.eigenvalues * self.coefficients**2) / 4.0)

    def scaled(self, alpha: float) -> "SineSeries":
        return SineSeries(
            self.modes_m, self.modes_n, alpha * self.coefficients, self.truncation, self.tail
        )

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """値と勾配 (npts,), (npts, 2)

        積分点の座標は少数の値しか取らないので、x₁, x₂ の一意な値ごとに
        サイン・コサインを作り行列積で評価する。
        """
        ux, ix = np.unique(np.round(points[:, 0], 12), return_inverse=True)
        uy, iy = np.unique(np.round(points[:, 1], 12), return_inverse=True)
        ix, iy = ix.ravel(), iy.ravel()
        am = math.pi * self.modes_m
        an = math.pi * self.modes_n
        sx = np.sin(np.outer(ux, am))
        cx = np.cos(np.outer(ux, am)) * am
        sy = np.sin(np.outer(uy, an))
        cy = np.cos(np.outer(uy, an)) * an
        sc = sx @ self.coefficients
        values = (sc @ sy.T)[ix, iy]
        dy = (sc @ cy.T)[ix, iy]
        dx = ((cx @ self.coefficients) @ sy.T)[ix, iy]
        return values, np.column_stack([dx, dy])

    def interpolate(self, mesh: MeshLevel) -> np.ndarray:
        """内部頂点での節点値"""
        values, _ = self.evaluate(mesh.points[mesh.interior_vertices])
        return values


def solve_mode_system(beta: float, lam: float, d: float) -> tuple[float, float]:
    """1 モード分の最適性系 λp = y − d, λy = −p/β を直接解く"""
    mat = np.array([[lam, -1.0], [1.0 / beta, lam]])
    p, y = np.linalg.solve(mat, np.array([-d, 0.0]))
    return float(p), float(y)


def mode_solution(beta: float, lam: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """閉じた形: ȳ = d/(1+βλ²), p̄ = −βλd/(1+βλ²)"""
    denom = 1.0 + beta * lam**2
    return -beta * lam * d / denom, d / denom


def _series_pair(beta: float, yd: DesiredState, N: int) -> tuple[SineSeries, SineSeries]:
    modes = np.arange(1, N + 1, 2)
    a = yd.coefficients_1d(modes)
    d = np.outer(a, a)
    lam = math.pi**2 * (modes[:, None] ** 2 + modes[None, :] ** 2)
    p, y = mode_solution(beta, lam, d)
    return SineSeries(modes, modes, p, N), SineSeries(modes, modes, y, N)


def _norms(pair: tuple[SineSeries, SineSeries]) -> np.ndarray:
    p, y = pair
    return np.array([p.l2_norm_sq, p.h1_seminorm_sq, y.l2_norm_sq, y.h1_seminorm_sq])


def exact_solution(
    beta: float,
    yd: DesiredState,
    tolerance: float = 1e-10,
    max_modes: int = 4096,
) -> tuple[SineSeries, SineSeries]:
    """(p̄, ȳ) のサイン級数を返す

    y_d の係数は奇数モードにしか現れないので奇数モードだけを保持する。
    打ち切り N は 16 から倍々に増やし、N と 2N の閉形式ノルムの相対差が
    tolerance を下回ったところで止める。
    """
    if not beta > 0:
        raise ValueError(f"β は正である必要があります: {beta}")
    N = 16
    current = _series_pair(beta, yd, N)
    tail = 1.0
    while True:
        if 2 * N > max_modes:
            logger.warning(
                f"サイン級数が上限 N={N} に達しました (β={beta:g}, y_d={yd.value}, "
                f"残差推定 {tail:.2e})"
            )
            break
        finer = _series_pair(beta, yd, 2 * N)
        n1, n2 = _norms(current), _norms(finer)
        nz = n2 > 0
        tail = float(np.max(np.abs(n2[nz] - n1[nz]) / n2[nz])) if nz.any() else 0.0
        current, N = finer, 2 * N
        if tail < tolerance:
            break
    logger.debug(f"サイン級数 N={N} (β={beta:g}, y_d={yd.value}, 残差推定 {tail:.2e})")
    p, y = current
    return (
        SineSeries(p.modes_m, p.modes_n, p.coefficients, N, tail),
        SineSeries(y.modes_m, y.modes_n, y.coefficients, N, tail),
    )


def to_original_variables(u: BlockVector, beta: float) -> BlockVector:
    """p̄ = β^{1/4} p̃, ȳ = β^{−1/4} ỹ"""
    s = beta**0.25
    return BlockVector(s * u.p, u.y / s, u.level)


def balanced_rhs(mesh: MeshLevel, yd: DesiredState, beta: float, degree: int = 2) -> np.ndarray:
    """釣り合い系の右辺（係数表現、縦積み）: (−β^{1/4}(y_d, q) / h², 0)"""
    load = assemble_load(mesh, yd, degree)
    f = -(beta**0.25) * load / mesh.h**2
    return np.concatenate([f, np.zeros_like(f)])


@dataclass(frozen=True)
class ComponentError:
    rel_h1: float
    rel_l2: float


@dataclass(frozen=True)
class ErrorNorms:
    """相対誤差の 4 列"""
    rel_h1_p: float
    rel_l2_p: float
    rel_h1_y: float
    rel_l2_y: float

    def to_dict(self) -> dict[str, float]:
        return {
            "rel_H1_p": self.rel_h1_p,
            "rel_L2_p": self.rel_l2_p,
            "rel_H1_y": self.rel_h1_y,
            "rel_L2_y": self.rel_l2_y,
        }


def component_error(
    mesh: MeshLevel,
    values: np.ndarray,
    series: SineSeries,
    degree: int = 4,
    max_tail: float = 1e-6,
) -> ComponentError:
    """内部節点値 values の P1 関数と級数との相対誤差"""
    if series.tail > max_tail:
        raise SeriesTruncationError(
            f"サイン級数の打ち切りが不十分です (残差推定 {series.tail:.2e} > {max_tail:.0e})"
        )
    full = np.zeros(mesh.num_vertices)
    full[mesh.interior_vertices] = values
    points, weights, bary = quadrature_points(mesh, degree)
    nc, nq, _ = points.shape
    _, grads = cell_geometry(mesh)
    local = full[mesh.cells]
    uh = local @ bary.T
    grad_uh = np.einsum("ci,cid->cd", local, grads)
    exact, grad_exact = series.evaluate(points.reshape(-1, 2))
    exact = exact.reshape(nc, nq)
    grad_exact = grad_exact.reshape(nc, nq, 2)
    err_l2 = float(np.sum(weights * (exact - uh) ** 2))
    err_h1 = float(np.sum(weights * np.sum((grad_exact - grad_uh[:, None, :]) ** 2, axis=2)))

    def rel(err_sq: float, norm_sq: float) -> float:
        return math.sqrt(err_sq / norm_sq) if norm_sq > 0 else math.sqrt(err_sq)

    return ComponentError(rel(err_h1, series.h1_seminorm_sq), rel(err_l2, series.l2_norm_sq))


def error_norms(
    mesh: MeshLevel,
    solution: BlockVector,
    exact: tuple[SineSeries, SineSeries],
    degree: int = 4,
    max_tail: float = 1e-6,
) -> ErrorNorms:
    """元の変数に戻した離散解 (p̄_h, ȳ_h) の相対誤差"""
    if mesh.dim != 2:
        raise ValueError("参照解は 2 次元の単位正方形のみ対応しています")
    p_series, y_series = exact
    ep = component_error(mesh, solution.p, p_series, degree, max_tail)
    ey = component_error(mesh, solution.y, y_series, degree, max_tail)
    return ErrorNorms(ep.rel_h1, ep.rel_l2, ey.rel_h1, ey.rel_l2)


def control_error(
    mesh: MeshLevel,
    p_h: np.ndarray,
    p_exact: SineSeries,
    beta: float,
    degree: int = 4,
) -> ComponentError:
    """制御 ū_h = −β⁻¹ p̄_h の相対誤差（p̄_h の相対誤差と一致する）"""
    scale = -1.0 / beta
    return component_error(mesh, scale * p_h, p_exact.scaled(scale), degree)
