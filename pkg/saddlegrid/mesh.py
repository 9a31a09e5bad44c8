"""
メッシュ生成モジュール
単位正方形・五角形・単位立方体・L 字領域の初期単体分割と、
一様細分による階層 T_0 … T_K（h_k = h_{k-1}/2）を生成します。
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


class DomainKind(Enum):
    """計算領域の種類"""
    UNIT_SQUARE = "unit-square"
    PENTAGON = "pentagon"
    UNIT_CUBE = "unit-cube"
    L_SHAPE = "l-shape"


# 領域ごとの (次元, 体積, h_0, 最大レベル)
_DOMAIN_TABLE: dict[DomainKind, tuple[int, float, float, int]] = {
    DomainKind.UNIT_SQUARE: (2, 1.0, 0.5, 7),
    DomainKind.PENTAGON: (2, 0.875, 0.5, 6),
    DomainKind.UNIT_CUBE: (3, 1.0, 1.0, 5),
    DomainKind.L_SHAPE: (2, 3.0, 0.5, 6),
}


@dataclass(frozen=True)
class DomainSpec:
    """計算領域の記述"""
    kind: DomainKind

    @classmethod
    def from_name(cls, name: str) -> "DomainSpec":
        try:
            return cls(DomainKind(name))
        except ValueError:
            choices = ", ".join(k.value for k in DomainKind)
            raise ValueError(f"未知の領域です: {name}（選択肢: {choices}）") from None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def dim(self) -> int:
        return _DOMAIN_TABLE[self.kind][0]

    @property
    def volume(self) -> float:
        return _DOMAIN_TABLE[self.kind][1]

    @property
    def h0(self) -> float:
        return _DOMAIN_TABLE[self.kind][2]

    @property
    def max_level(self) -> int:
        return _DOMAIN_TABLE[self.kind][3]


@dataclass(frozen=True)
class Vertex:
    """メッシュ頂点"""
    coords: tuple[float, ...]
    is_interior: bool


@dataclass(frozen=True, eq=False)
class MeshLevel:
    """1 レベル分の単体分割

    parents は細分で生成された頂点の親情報で、行 (a, b) は粗い辺 (a, b) の中点、
    (a, a) は粗い頂点 a そのものを表す。レベル 0 では None。
    """
    domain: DomainSpec
    level: int
    h: float
    points: np.ndarray
    cells: np.ndarray
    interior: np.ndarray
    interior_index: np.ndarray
    parents: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.points.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def num_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def interior_vertices(self) -> np.ndarray:
        """自由度番号順に並べた内部頂点の番号"""
        return np.flatnonzero(self.interior)

    def vertex(self, i: int) -> Vertex:
        return Vertex(tuple(float(c) for c in self.points[i]), bool(self.interior[i]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "domain": self.domain.name,
            "level": self.level,
            "h": self.h,
            "vertices": self.points.tolist(),
            "cells": self.cells.tolist(),
            "interior": self.interior.tolist(),
        }


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def _boundary_vertex_mask(cells: np.ndarray, num_vertices: int) -> np.ndarray:
    """1 つのセルにしか属さない面（境界面）上の頂点を True にする"""
    nv_cell = cells.shape[1]
    facets = np.concatenate(
        [np.delete(cells, j, axis=1) for j in range(nv_cell)], axis=0
    )
    facets = np.sort(facets, axis=1)
    uniq, counts = np.unique(facets, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise ValueError("非適合なメッシュです（3 つ以上のセルが共有する面があります）")
    mask = np.zeros(num_vertices, dtype=bool)
    mask[uniq[counts == 1].ravel()] = True
    return mask


def _make_level(
    domain: DomainSpec,
    level: int,
    points: np.ndarray,
    cells: np.ndarray,
    parents: np.ndarray | None,
) -> MeshLevel:
    points = np.ascontiguousarray(points, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    interior = ~_boundary_vertex_mask(cells, points.shape[0])
    interior_index = np.full(points.shape[0], -1, dtype=np.int64)
    interior_index[interior] = np.arange(int(interior.sum()))
    arrays = [points, cells, interior, interior_index]
    if parents is not None:
        parents = np.ascontiguousarray(parents, dtype=np.int64)
        arrays.append(parents)
    _freeze(*arrays)
    return MeshLevel(
        domain=domain,
        level=level,
        h=domain.h0 / 2**level,
        points=points,
        cells=cells,
        interior=interior,
        interior_index=interior_index,
        parents=parents,
    )


def _square_grid(x0: float, y0: float, nx: int, ny: int, h: float, keep=None):
    """正の傾きの対角線で分割した正方格子の三角形分割"""
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    points = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(xs[i], ys[j]):
                continue
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append([v00, v10, v11])
            cells.append([v00, v11, v01])
    return points, np.array(cells, dtype=np.int64)


def _compact(points: np.ndarray, cells: np.ndarray):
    """セルから参照されない頂点を除いて番号を詰める"""
    used = np.unique(cells)
    remap = np.full(points.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return points[used], remap[cells]


def build_initial_mesh(domain: DomainSpec) -> MeshLevel:
    """初期メッシュ T_0 を構築する"""
    kind = domain.kind
    if kind is DomainKind.UNIT_SQUARE:
        points, cells = _square_grid(0.0, 0.0, 2, 2, 0.5)
    elif kind is DomainKind.PENTAGON:
        points, cells = _square_grid(0.0, 0.0, 2, 2, 0.5)
        # 右上の小正方形の 2 三角形を除き、切断辺 (1,.5)-(.5,1) を持つ三角形を加える
        center, right, top = 4, 5, 7
        corner = 8
        cells = cells[~np.any(cells == corner, axis=1)]
        cells = np.vstack([cells, [[center, right, top]]])
        points, cells = _compact(points, cells)
    elif kind is DomainKind.L_SHAPE:
        points, cells = _square_grid(
            -1.0, -1.0, 4, 4, 0.5, keep=lambda x, y: not (x >= 0.0 and y < 0.0)
        )
        points, cells = _compact(points, cells)
    elif kind is DomainKind.UNIT_CUBE:
        points = np.array(
            [[(v >> 0) & 1, (v >> 1) & 1, (v >> 2) & 1] for v in range(8)], dtype=float
        )
        axis_bit = (1, 2, 4)
        cells_list = []
        for perm in itertools.permutations(range(3)):
            # Kuhn 分割: 対角線 (0,0,0)→(1,1,1) に沿う経路
            v1 = axis_bit[perm[0]]
            v2 = v1 + axis_bit[perm[1]]
            cells_list.append([0, v1, v2, 7])
        cells = np.array(cells_list, dtype=np.int64)
    else:  # pragma: no cover
        raise ValueError(f"未対応の領域: {kind}")

    mesh = _make_level(domain, 0, points, cells, None)
    logger.debug(
        f"初期メッシュ {domain.name}: セル {mesh.num_cells}, 頂点 {mesh.num_vertices}, "
        f"内部 {mesh.num_interior}"
    )
    return mesh


# セル内の局所辺（2D: 3 本, 3D: 6 本）
_LOCAL_EDGES = {
    2: np.array([[0, 1], [1, 2], [2, 0]]),
    3: np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]),
}


def refine(coarse: MeshLevel) -> MeshLevel:
    """一様細分（2D: 4 分割, 3D: Bey の赤細分による 8 分割）"""
    dim = coarse.dim
    cells = coarse.cells
    nc = cells.shape[0]
    nv = coarse.num_vertices
    local = _LOCAL_EDGES[dim]

    edges = np.sort(cells[:, local], axis=2).reshape(-1, 2)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    mid = nv + inverse.reshape(nc, local.shape[0])

    points = np.vstack([coarse.points, 0.5 * (coarse.points[uniq[:, 0]] + coarse.points[uniq[:, 1]])])
    same = np.arange(nv)
    parents = np.vstack([np.column_stack([same, same]), uniq])

    if dim == 2:
        v0, v1, v2 = cells.T
        m01, m12, m20 = mid.T
        children = np.stack(
            [
                np.column_stack([v0, m01, m20]),
                np.column_stack([m01, v1, m12]),
                np.column_stack([m20, m12, v2]),
                np.column_stack([m01, m12, m20]),
            ],
            axis=1,
        )
    else:
        x0, x1, x2, x3 = cells.T
        x01, x02, x03, x12, x13, x23 = mid.T
        # 内部八面体は対角線 x02-x13 で分割する（頂点順序は子でも保持）
        children = np.stack(
            [
                np.column_stack([x0, x01, x02, x03]),
                np.column_stack([x01, x1, x12, x13]),
                np.column_stack([x02, x12, x2, x23]),
                np.column_stack([x03, x13, x23, x3]),
                np.column_stack([x01, x02, x03, x13]),
                np.column_stack([x01, x02, x12, x13]),
                np.column_stack([x02, x03, x13, x23]),
                np.column_stack([x02, x12, x13, x23]),
            ],
            axis=1,
        )
    new_cells = children.reshape(-1, dim + 1)
    return _make_level(coarse.domain, coarse.level + 1, points, new_cells, parents)


def build_mesh_hierarchy(domain: DomainSpec, max_level: int) -> list[MeshLevel]:
    """レベル 0 から max_level までのメッシュ列を生成する"""
    if max_level < 0 or max_level > domain.max_level:
        raise ValueError(
            f"{domain.name} の最大レベルは {domain.max_level} です（指定: {max_level}）"
        )
    meshes = [build_initial_mesh(domain)]
    for _ in range(max_level):
        meshes.append(refine(meshes[-1]))
    return meshes


def interior_dof_count(mesh: MeshLevel) -> int:
    """内部頂点数（= V_k の次元）"""
    return mesh.num_interior


def signed_volumes(mesh: MeshLevel) -> np.ndarray:
    """セルの符号付き体積"""
    p = mesh.points[mesh.cells]
    edges = p[:, 1:, :] - p[:, :1, :]
    return np.linalg.det(edges) / math.factorial(mesh.dim)


def cell_volumes(mesh: MeshLevel) -> np.ndarray:
    return np.abs(signed_volumes(mesh))


def oriented_cells(mesh: MeshLevel) -> np.ndarray:
    """負の向きのセルの末尾 2 頂点を入れ替えた正の向きのセル配列"""
    cells = mesh.cells.copy()
    flip = signed_volumes(mesh) < 0
    cells[flip, -2], cells[flip, -1] = mesh.cells[flip, -1], mesh.cells[flip, -2]
    return cells


def cell_quality(mesh: MeshLevel) -> np.ndarray:
    """形状品質（正単体で 1）

    2D: 4√3·面積 / Σ辺長², 3D: 6√2·体積 / (辺長の二乗平均平方根)³
    """
    p = mesh.points[mesh.cells]
    local = _LOCAL_EDGES[mesh.dim]
    diff = p[:, local[:, 1], :] - p[:, local[:, 0], :]
    sq = np.sum(diff**2, axis=2)
    vol = cell_volumes(mesh)
    if mesh.dim == 2:
        return 4.0 * math.sqrt(3.0) * vol / sq.sum(axis=1)
    rms = np.sqrt(sq.mean(axis=1))
    return 6.0 * math.sqrt(2.0) * vol / rms**3


def dump_mesh_json(mesh: MeshLevel, path: str | Path) -> Path:
    """デバッグ用に JSON で書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(mesh.to_dict(), f)
    logger.info(f"メッシュを書き出しました: {path}")
    return path
