"""
有限要素組み立てモジュール
P1 要素の剛性行列・質量行列・集中計量・荷重ベクトルと、
粗いレベルから細かいレベルへの自然な埋め込み（延長作用素）を組み立てます。
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from saddlegrid.errors import AssemblyError
from saddlegrid.mesh import MeshLevel
from saddlegrid.quadrature import quadrature_points

logger = logging.getLogger(__name__)

# 内部自由度上の疎対称行列（CSR）
SparseSymMatrix = sp.csr_matrix


def cell_geometry(mesh: MeshLevel) -> tuple[np.ndarray, np.ndarray]:
    """セル体積と重心座標関数の勾配を返す

    Returns:
        (vol (nc,), grads (nc, d+1, d))
    """
    p = mesh.points[mesh.cells]
    edges = p[:, 1:, :] - p[:, :1, :]
    det = np.linalg.det(edges)
    vol = np.abs(det) / math.factorial(mesh.dim)
    scale = np.max(np.abs(edges), axis=(1, 2)) ** mesh.dim
    degenerate = np.flatnonzero(vol <= 1e-14 * scale)
    if degenerate.size:
        raise AssemblyError(
            f"体積ゼロのセルがあります: レベル {mesh.level}, セル {degenerate[:5].tolist()}"
        )
    grads = np.empty((mesh.num_cells, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = np.linalg.inv(edges).transpose(0, 2, 1)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return vol, grads


def _assemble(mesh: MeshLevel, local: np.ndarray, full: bool) -> sp.csr_matrix:
    """局所行列 (nc, d+1, d+1) を大域行列へ足し込む"""
    nloc = mesh.dim + 1
    rows = np.repeat(mesh.cells, nloc, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nloc)).ravel()
    n = mesh.num_vertices
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # 加算順序による丸め差を消して厳密に対称にする
    mat = ((mat + mat.T) * 0.5).tocsr()
    if full:
        return mat
    idx = mesh.interior_vertices
    return mat[idx][:, idx].tocsr()


def assemble_stiffness(mesh: MeshLevel, full: bool = False) -> sp.csr_matrix:
    """剛性行列 A_k（既定は内部自由度のみ）"""
    vol, grads = cell_geometry(mesh)
    local = vol[:, None, None] * np.einsum("cid,cjd->cij", grads, grads)
    return _assemble(mesh, local, full)


def assemble_mass(mesh: MeshLevel, full: bool = False) -> sp.csr_matrix:
    """整合質量行列 M_k（既定は内部自由度のみ）"""
    vol, _ = cell_geometry(mesh)
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = vol[:, None, None] * ref[None, :, :]
    return _assemble(mesh, local, full)


@dataclass(frozen=True)
class LumpedMetric:
    """メッシュ依存内積 (v, w)_k = h_k² Σ v(x) w(x)"""
    n: int
    weight: float

    def inner(self, v: np.ndarray, w: np.ndarray) -> float:
        return float(self.weight * np.dot(v, w))

    def norm(self, v: np.ndarray) -> float:
        return math.sqrt(self.inner(v, v))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """D v"""
        return self.weight * v

    def solve(self, v: np.ndarray) -> np.ndarray:
        """D⁻¹ v"""
        return v / self.weight


def lumped_metric(mesh: MeshLevel) -> LumpedMetric:
    # 次元によらず重みは h_k²
    return LumpedMetric(n=mesh.num_interior, weight=mesh.h**2)


@dataclass(frozen=True, eq=False)
class Prolongation:
    """粗い内部自由度から細かい内部自由度への延長 I^k_{k-1}"""
    matrix: sp.csr_matrix

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def transpose(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.T @ v

    def restrict(self, v: np.ndarray, h_fine: float, h_coarse: float) -> np.ndarray:
        """[·,·]-随伴な制限 R = (h_k/h_{k-1})² Pᵀ"""
        return (h_fine / h_coarse) ** 2 * (self.matrix.T @ v)


def assemble_prolongation(fine: MeshLevel, coarse: MeshLevel) -> Prolongation:
    """細分の親情報から延長行列を作る"""
    if (
        fine.parents is None
        or fine.level != coarse.level + 1
        or fine.domain != coarse.domain
        or fine.parents.shape[0] != fine.num_vertices
        or int(fine.parents.max()) >= coarse.num_vertices
    ):
        raise ValueError(
            f"レベルが整合しません: fine={fine.level}, coarse={coarse.level}"
        )
    fine_dofs = fine.interior_vertices
    par = fine.parents[fine_dofs]
    rows = np.repeat(np.arange(fine_dofs.size), 2)
    cols = coarse.interior_index[par.ravel()]
    keep = cols >= 0
    data = np.full(rows.size, 0.5)
    mat = sp.coo_matrix(
        (data[keep], (rows[keep], cols[keep])),
        shape=(fine.num_interior, coarse.num_interior),
    ).tocsr()
    return Prolongation(matrix=mat)


def assemble_load(
    mesh: MeshLevel,
    f: Callable[[np.ndarray], np.ndarray],
    degree: int = 2,
) -> np.ndarray:
    """荷重ベクトル (f, φ_i) を内部自由度について返す

    f は形状 (npts, d) の座標を受け取り (npts,) の値を返す関数。
    """
    points, weights, bary = quadrature_points(mesh, degree)
    nc, nq, d = points.shape
    values = np.asarray(f(points.reshape(-1, d)), dtype=float).reshape(nc, nq)
    local = np.einsum("cq,qi->ci", weights * values, bary)
    full = np.bincount(
        mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.num_vertices
    )
    return full[mesh.interior_vertices]


def dump_matrix_triplets(matrix: sp.spmatrix, path: str | Path) -> Path:
    """行列を 1 始まりの (i, j, value) 三つ組テキストで書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as f:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i + 1} {j + 1} {v!r}\n")
    logger.info(f"行列を書き出しました: {path} (nnz={coo.nnz})")
    return path
