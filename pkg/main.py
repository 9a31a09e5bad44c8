"""
SaddleGrid メインエントリーポイント
最適制御問題の鞍点系マルチグリッドをコマンドラインから実行します。
"""

import argparse
import logging
import os
import sys

import yaml

# パスの設定
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from saddlegrid.config import get_config, load_config
from saddlegrid.errors import ConfigError
from saddlegrid.runner import RunConfig, RunMode, RunResult, run


def setup_logging(verbose: bool = False):
    """ロギングの設定

    優先順位: --verbose フラグ > config.yaml の logging.level > デフォルト (INFO)
    """
    if verbose:
        level = logging.DEBUG
    else:
        cfg = get_config()
        level_name = str(cfg.get("logging", {}).get("level", "INFO")).upper()
        level = getattr(logging, level_name, logging.INFO)

    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _print_artifacts(result: RunResult):
    for path in result.artifacts:
        print(f"  → {path}")


def cmd_solve(config: RunConfig) -> int:
    """FMG で解き、解の要約（単位正方形では誤差表）を出力"""
    print(f"🧮 FMG 求解: {config.domain.name}, レベル {config.max_level}, β = {config.betas}")
    status, result = run(config)
    if result is None:
        return status
    print(result.text)
    print("✅ 求解が完了しました")
    _print_artifacts(result)
    return status


def cmd_sweep(config: RunConfig) -> int:
    """縮小率 ‖E_k‖ の計測"""
    pairs = ", ".join(f"({m1},{m2})" for m1, m2 in config.m_pairs)
    print(
        f"📊 縮小率の計測: {config.domain.name}, {config.cycle.value}-cycle, "
        f"m = {pairs}, レベル 1〜{config.max_level}"
    )
    status, result = run(config)
    if result is None:
        return status
    print(result.text)
    unconverged = [r for r in result.rows if not r["converged"]]
    if unconverged:
        print(f"⚠️  収束しなかった計測が {len(unconverged)} 件あります")
    print(f"✅ {len(result.rows)} 行を書き出しました")
    _print_artifacts(result)
    return status


def cmd_table1(config: RunConfig) -> int:
    """参照解との誤差表（y_d = 1 とバブル関数）"""
    print(f"📊 誤差表: h = 2^-{config.max_level + 1}, β = {config.betas}")
    status, result = run(config)
    if result is None:
        return status
    print(result.text)
    print("✅ 誤差表を作成しました")
    _print_artifacts(result)
    return status


_COMMANDS = {
    RunMode.SOLVE: cmd_solve,
    RunMode.CONTRACTION_SWEEP: cmd_sweep,
    RunMode.TABLE1: cmd_table1,
}

_EXIT_MESSAGES = {
    2: "❌ 設定エラーで終了しました",
    3: "❌ 数値計算に失敗しました（詳細はログを参照）",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="SaddleGrid - 楕円型最適制御問題の β ロバストなマルチグリッド",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  python main.py --mode contraction-sweep --domain unit-square --beta 1e-2 --m 1 --max-level 3
  python main.py --mode contraction-sweep --beta 1e-2 1e-4 1e-6 --m 1 2 4 --jobs 3
  python main.py --mode contraction-sweep --cycle v --inner-nu 1 --domain l-shape
  python main.py --mode solve --domain pentagon --beta 1e-4 --max-level 5
  python main.py --mode table1 --beta 1e-2 1e-4 1e-6 --max-level 5
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="詳細ログを表示")
    parser.add_argument("-c", "--config", type=str, help="設定ファイル (config.yaml) のパス")
    parser.add_argument(
        "--mode", choices=[m.value for m in RunMode], help="実行モード"
    )
    parser.add_argument(
        "--domain",
        choices=["unit-square", "pentagon", "unit-cube", "l-shape"],
        help="計算領域",
    )
    parser.add_argument(
        "--beta", "--betas", dest="betas", type=float, nargs="+", help="正則化パラメータ β（複数可）"
    )
    parser.add_argument("--max-level", dest="max_level", type=int, help="最細レベル k")
    parser.add_argument(
        "--cycle", choices=["w", "v", "two-grid", "fmg"], help="サイクルの種類"
    )
    parser.add_argument(
        "--m", dest="m_values", type=int, nargs="+", help="対称平滑化回数 m（複数可）"
    )
    parser.add_argument("--m1", type=int, help="前平滑化回数（--m より優先）")
    parser.add_argument("--m2", type=int, help="後平滑化回数（--m より優先）")
    parser.add_argument("--inner-nu", dest="inner_nu", type=int, help="内側 V(ν,ν) の平滑化回数")
    parser.add_argument("--seed", type=int, help="乱数シード")
    parser.add_argument("--out", dest="output_path", type=str, help="出力ファイルのパス")
    parser.add_argument("--jobs", type=int, help="計測の並列数")
    parser.add_argument("--yd", choices=["one", "bubble"], help="目標状態 y_d (solve モード)")
    parser.add_argument(
        "--dump-mesh", dest="dump_mesh", type=str, help="最細メッシュを JSON で書き出す (solve モード)"
    )
    parser.add_argument(
        "--dump-matrices",
        dest="dump_matrices",
        type=str,
        help="最細レベルの A, M を三つ組形式で書き出すディレクトリ (solve モード)",
    )
    return parser


_OVERRIDE_KEYS = (
    "mode", "domain", "betas", "max_level", "cycle", "m_values", "m1", "m2",
    "inner_nu", "seed", "output_path", "jobs", "yd", "dump_mesh", "dump_matrices",
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # 設定の読み込み
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"❌ 設定ファイルが見つかりません: {args.config}")
        return 2
    except (ValueError, yaml.YAMLError) as e:
        print(f"❌ {e}")
        return 2
    setup_logging(args.verbose)

    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
    try:
        config = RunConfig.from_sources(cfg, overrides)
    except ConfigError as e:
        print(f"❌ 設定エラー: {e}")
        return 2

    status = _COMMANDS[config.mode](config)
    if status in _EXIT_MESSAGES:
        print(_EXIT_MESSAGES[status])
    return status


if __name__ == "__main__":
    sys.exit(main())
