"""
レベル階層モジュール
各レベルのメッシュと β に依存しない行列（A_k, M_k, 集中計量, 延長）をまとめます。
"""

import logging
import time
from dataclasses import dataclass

import scipy.sparse as sp

from saddlegrid.assembly import (
    LumpedMetric,
    Prolongation,
    assemble_mass,
    assemble_prolongation,
    assemble_stiffness,
    lumped_metric,
)
from saddlegrid.mesh import DomainSpec, MeshLevel, build_mesh_hierarchy

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LevelOperators:
    """1 レベル分の組み立て済み作用素

    prolongation はレベル k-1 から k への延長で、レベル 0 では None。
    """
    mesh: MeshLevel
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    metric: LumpedMetric
    prolongation: Prolongation | None

    @property
    def level(self) -> int:
        return self.mesh.level

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def n(self) -> int:
        return self.mesh.num_interior

    @property
    def dim(self) -> int:
        return self.mesh.dim


def build_levels(domain: DomainSpec, max_level: int) -> list[LevelOperators]:
    """メッシュ階層を作り、全レベルの行列を組み立てる"""
    start = time.perf_counter()
    meshes = build_mesh_hierarchy(domain, max_level)
    levels: list[LevelOperators] = []
    for k, mesh in enumerate(meshes):
        prolongation = assemble_prolongation(mesh, meshes[k - 1]) if k > 0 else None
        levels.append(
            LevelOperators(
                mesh=mesh,
                stiffness=assemble_stiffness(mesh),
                mass=assemble_mass(mesh),
                metric=lumped_metric(mesh),
                prolongation=prolongation,
            )
        )
    logger.info(
        f"{domain.name}: レベル 0〜{max_level} を組み立てました "
        f"(最細レベル自由度 {levels[-1].n}, {time.perf_counter() - start:.2f}s)"
    )
    return levels
