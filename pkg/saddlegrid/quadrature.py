"""
単体上の数値積分則
重心座標と（体積で正規化した）重みの組を返します。
"""

import numpy as np

from saddlegrid.mesh import MeshLevel, cell_volumes


def _perm3(a: float, b: float) -> list[list[float]]:
    """(a, b, b) の巡回置換"""
    return [[a, b, b], [b, a, b], [b, b, a]]


def _triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if degree == 2:
        # 辺の中点則
        bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        return bary, np.full(3, 1 / 3)
    if degree <= 4:
        bary = np.array(
            _perm3(0.108103018168070, 0.445948490915965)
            + _perm3(0.816847572980459, 0.091576213509771)
        )
        w = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
        return bary, w
    if degree == 5:
        bary = np.array(
            [[1 / 3, 1 / 3, 1 / 3]]
            + _perm3(0.059715871789770, 0.470142064105115)
            + _perm3(0.797426985353087, 0.101286507323456)
        )
        w = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)
        return bary, w
    raise ValueError(f"三角形の積分次数 {degree} には対応していません（最大 5）")


def _tetrahedron_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree <= 1:
        return np.full((1, 4), 0.25), np.array([1.0])
    if degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        bary = np.full((4, 4), b)
        np.fill_diagonal(bary, a)
        return bary, np.full(4, 0.25)
    raise ValueError(f"四面体の積分次数 {degree} には対応していません（最大 2）")


def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """次数 degree まで厳密な単体積分則 (重心座標 (nq, dim+1), 重み (nq,))"""
    if dim == 2:
        return _triangle_rule(degree)
    if dim == 3:
        return _tetrahedron_rule(degree)
    raise ValueError(f"未対応の次元: {dim}")


def quadrature_points(mesh: MeshLevel, degree: int):
    """全セルの積分点

    Returns:
        (points (nc, nq, d), weights (nc, nq), bary (nq, d+1))
    """
    bary, w = simplex_rule(mesh.dim, degree)
    corners = mesh.points[mesh.cells]
    points = np.einsum("qi,cid->cqd", bary, corners)
    weights = cell_volumes(mesh)[:, None] * w[None, :]
    return points, weights, bary
