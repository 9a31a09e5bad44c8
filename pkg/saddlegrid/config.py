"""
設定管理モジュール
config.yaml を読み込み、実験全体で利用する既定値を提供します。
"""

import copy
import logging
import os
from typing import Any

import yaml

logger = logging.getLogger(__name__)

# config.yaml に書かれていないキーの既定値
_DEFAULTS: dict[str, Any] = {
    "logging": {"level": "INFO"},
    "run": {
        "domain": "unit-square",
        "mode": "contraction-sweep",
        "betas": [1.0e-2, 1.0e-4, 1.0e-6],
        "max_level": 4,
        "cycle": "w",
        "m_values": [1],
        "m1": None,
        "m2": None,
        "seed": 20190501,
        "output_path": None,
        "jobs": 1,
        "yd": "one",
    },
    "inner": {
        "inner_nu": 4,
        "inner_smoother_damping": None,
    },
    "multigrid": {
        "c_dagger": None,
        "lanczos_steps": 80,
        "fmg_tolerance": 1.0e-8,
        "fmg_max_iterations": 100,
        "fmg_cycle": "w",
        "fmg_m": 2,
    },
    "spectral": {
        "power_tolerance": 1.0e-4,
        "power_max_iterations": 200,
        "dense_threshold": 2500,
        "timing_repeats": 3,
    },
    "assembly": {"load_quadrature_degree": 2},
    "reference": {
        "series_tolerance": 1.0e-10,
        "series_max_modes": 4096,
        "error_quadrature_degree": 4,
    },
}


def _find_config_path() -> str | None:
    """config.yaml のパスを決定する（見つからなければ None）"""
    # 1. プロジェクトルート（開発環境）
    project_root = os.path.join(
        os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config.yaml"
    )
    if os.path.exists(project_root):
        return project_root

    # 2. ユーザーディレクトリ
    user_config = os.path.expanduser("~/.saddlegrid/config.yaml")
    if os.path.exists(user_config):
        return user_config

    return None


_config: dict[str, Any] | None = None
_loaded_config_path: str | None = None


def load_config(config_path: str | None = None) -> dict[str, Any]:
    """設定ファイルを読み込み、既定値とマージしてキャッシュする

    明示されたパスが存在しない場合は FileNotFoundError を送出する。
    """
    global _config, _loaded_config_path
    path = config_path or _find_config_path()
    raw: dict[str, Any] = {}
    if path is None:
        logger.info("config.yaml が見つからないため既定値を使用します")
    else:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"設定ファイルの形式が不正です: {path}")
    _config = _deep_merge(_DEFAULTS, raw)
    _loaded_config_path = path
    # パスの展開
    out = _config["run"].get("output_path")
    if out:
        _config["run"]["output_path"] = os.path.expanduser(out)
    return _config


def get_config() -> dict[str, Any]:
    """現在の設定を取得する（未読み込みなら読み込む）"""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def get_config_path() -> str | None:
    """現在読み込まれている設定ファイルのパスを返す"""
    return _loaded_config_path


def default_config() -> dict[str, Any]:
    """組み込みの既定値のコピーを返す"""
    return copy.deepcopy(_DEFAULTS)


def _deep_merge(base: dict, override: dict) -> dict:
    """辞書の深いマージ（override の値で base を上書き）"""
    result = copy.deepcopy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result
