"""
テスト共通フィクスチャ
"""

import numpy as np
import pytest
import yaml

import saddlegrid.config as config_module
from saddlegrid.hierarchy import build_levels
from saddlegrid.mesh import DomainKind, DomainSpec
from saddlegrid.multigrid import CycleConfig, SaddleMultigrid
from saddlegrid.preconditioner import ReactionDiffusionHierarchy
from saddlegrid.saddle import SaddleBlockMatrix


@pytest.fixture(autouse=True)
def reset_config_cache():
    """テストごとに設定キャッシュを破棄する"""
    config_module._config = None
    config_module._loaded_config_path = None
    yield
    config_module._config = None
    config_module._loaded_config_path = None


@pytest.fixture
def sample_config(tmp_path):
    """テスト用の設定辞書"""
    return {
        "logging": {"level": "INFO"},
        "run": {
            "domain": "unit-square",
            "mode": "contraction-sweep",
            "betas": [1.0e-2],
            "max_level": 2,
            "cycle": "w",
            "m_values": [1],
            "m1": None,
            "m2": None,
            "seed": 7,
            "output_path": str(tmp_path / "results" / "contraction.csv"),
            "jobs": 1,
            "yd": "one",
        },
        "inner": {"inner_nu": 4, "inner_smoother_damping": None},
        "multigrid": {
            "c_dagger": None,
            "lanczos_steps": 40,
            "fmg_tolerance": 1.0e-8,
            "fmg_max_iterations": 100,
            "fmg_cycle": "w",
            "fmg_m": 2,
        },
        "spectral": {
            "power_tolerance": 1.0e-4,
            "power_max_iterations": 200,
            "dense_threshold": 2500,
            "timing_repeats": 1,
        },
        "assembly": {"load_quadrature_degree": 2},
        "reference": {
            "series_tolerance": 1.0e-10,
            "series_max_modes": 4096,
            "error_quadrature_degree": 4,
        },
    }


@pytest.fixture
def config_file(tmp_path, sample_config):
    """テスト用の config.yaml ファイルを作成"""
    config_path = tmp_path / "config.yaml"
    with open(config_path, "w", encoding="utf-8") as f:
        yaml.dump(sample_config, f, allow_unicode=True, default_flow_style=False)
    return str(config_path)


@pytest.fixture(scope="session")
def square() -> DomainSpec:
    return DomainSpec(DomainKind.UNIT_SQUARE)


@pytest.fixture(scope="session")
def square_levels(square):
    """単位正方形のレベル 0〜3（最細レベルの自由度 225）"""
    return build_levels(square, 3)


@pytest.fixture(scope="session")
def square_levels_4(square):
    """単位正方形のレベル 0〜4（最細レベルの自由度 961）"""
    return build_levels(square, 4)


@pytest.fixture(scope="session")
def cube_levels():
    return build_levels(DomainSpec(DomainKind.UNIT_CUBE), 2)


@pytest.fixture(scope="session")
def square_multigrid(square_levels):
    """β = 1e-2 の W(1,1) サイクル"""
    config = CycleConfig(beta=1e-2, m1=1, m2=1, lanczos_steps=40, seed=3)
    return SaddleMultigrid(square_levels, config)


@pytest.fixture(scope="session")
def small_beta_multigrid(square_levels):
    """β = 1e-6 の W(1,1) サイクル（レベル 0〜3 はすべて √βh⁻² < 1）"""
    config = CycleConfig(beta=1e-6, m1=1, m2=1, lanczos_steps=40, seed=3)
    saddles = [SaddleBlockMatrix(1e-6, ops) for ops in square_levels]
    inner = ReactionDiffusionHierarchy(square_levels, 1e-6)
    return SaddleMultigrid(square_levels, config, inner, saddles=saddles)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
