"""
実行モジュール
設定ファイルとコマンドライン引数から RunConfig を作り、
solve / contraction-sweep / table1 の各モードを実行して成果物を書き出します。
"""

import csv
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from saddlegrid.assembly import dump_matrix_triplets
from saddlegrid.errors import ConfigError, NumericalError
from saddlegrid.exporter import (
    format_contraction_table,
    format_error_table,
    write_contraction_csv,
    write_json,
    write_text,
)
from saddlegrid.hierarchy import LevelOperators, build_levels
from saddlegrid.mesh import DomainKind, DomainSpec, cell_quality, dump_mesh_json
from saddlegrid.multigrid import CycleConfig, CycleType, FMGResult, SaddleMultigrid
from saddlegrid.preconditioner import ReactionDiffusionHierarchy
from saddlegrid.reference import (
    DesiredState,
    balanced_rhs,
    control_error,
    error_norms,
    exact_solution,
    to_original_variables,
)
from saddlegrid.saddle import SaddleBlockMatrix
from saddlegrid.spectral import MeasurementSettings, sweep

logger = logging.getLogger(__name__)


class RunMode(Enum):
    SOLVE = "solve"
    CONTRACTION_SWEEP = "contraction-sweep"
    TABLE1 = "table1"


# モードごとの既定の出力先
_DEFAULT_OUTPUTS = {
    RunMode.SOLVE: "results/solve.json",
    RunMode.CONTRACTION_SWEEP: "results/contraction.csv",
    RunMode.TABLE1: "results/table1.csv",
}

# solve モードでは無視される（FMG は fmg_cycle / fmg_m を使う）
_SWEEP_ONLY_KEYS = ("cycle", "m_values", "m1", "m2")


@dataclass
class RunConfig:
    """1 回の実行の設定"""
    domain: DomainSpec
    betas: list[float]
    max_level: int
    cycle: CycleType = CycleType.W
    m_values: list[int] = field(default_factory=lambda: [1])
    m1: int | None = None
    m2: int | None = None
    inner_nu: int = 4
    inner_damping: float | None = None
    mode: RunMode = RunMode.CONTRACTION_SWEEP
    seed: int = 20190501
    output_path: str | None = None
    jobs: int = 1
    yd: DesiredState = DesiredState.ONE
    # 外側マルチグリッド
    c_dagger: float | None = None
    lanczos_steps: int = 80
    fmg_tolerance: float = 1e-8
    fmg_max_iterations: int = 100
    fmg_cycle: CycleType = CycleType.W
    fmg_m: int = 2
    # 計測
    power_tolerance: float = 1e-4
    power_max_iterations: int = 200
    dense_threshold: int = 2500
    timing_repeats: int = 3
    # 組み立て・参照解
    load_degree: int = 2
    series_tolerance: float = 1e-10
    series_max_modes: int = 4096
    error_degree: int = 4
    # デバッグ出力
    dump_mesh: str | None = None
    dump_matrices: str | None = None

    def validate(self) -> "RunConfig":
        """不正な値があれば ConfigError を送出する"""
        if not self.betas:
            raise ConfigError("β が 1 つも指定されていません")
        for beta in self.betas:
            if not (isinstance(beta, (int, float)) and math.isfinite(beta) and beta > 0):
                raise ConfigError(f"β は正の有限値である必要があります: {beta}")
        cap = self.domain.max_level
        if not 0 <= self.max_level <= cap:
            raise ConfigError(
                f"{self.domain.name} の max_level は 0〜{cap} の範囲です: {self.max_level}"
            )
        if not self.m_values or any(m < 1 for m in self.m_values):
            raise ConfigError(f"m は 1 以上の整数のリストです: {self.m_values}")
        for name in ("m1", "m2"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} は 0 以上: {value}")
        if any(m1 + m2 == 0 for m1, m2 in self.m_pairs):
            raise ConfigError("m1 と m2 の少なくとも一方は 1 以上が必要です")
        if self.inner_nu < 1:
            raise ConfigError(f"inner_nu は 1 以上: {self.inner_nu}")
        if self.inner_damping is not None and not 0 < self.inner_damping <= 1:
            raise ConfigError(f"inner_smoother_damping は (0, 1] の範囲: {self.inner_damping}")
        if self.jobs < 1:
            raise ConfigError(f"jobs は 1 以上: {self.jobs}")
        if self.fmg_m < 1:
            raise ConfigError(f"fmg_m は 1 以上: {self.fmg_m}")
        if self.fmg_cycle is CycleType.FMG:
            raise ConfigError("fmg_cycle に fmg は指定できません")
        if self.mode is RunMode.CONTRACTION_SWEEP and self.cycle is CycleType.FMG:
            raise ConfigError("FMG は縮小率の計測対象になりません (--cycle w|v|two-grid)")
        if self.mode is RunMode.TABLE1:
            if self.domain.kind is not DomainKind.UNIT_SQUARE:
                raise ConfigError("table1 モードは unit-square のみ対応しています")
            if self.max_level < 1:
                raise ConfigError("table1 モードには max_level ≥ 1 が必要です")
        allowed = {2: (1, 2, 4, 5), 3: (1, 2)}[self.domain.dim]
        if self.load_degree not in allowed:
            raise ConfigError(
                f"{self.domain.dim} 次元の load_quadrature_degree は {allowed} のいずれか: "
                f"{self.load_degree}"
            )
        if self.error_degree not in (1, 2, 4, 5):
            raise ConfigError(f"error_quadrature_degree は 1, 2, 4, 5 のいずれか: {self.error_degree}")
        if self.power_tolerance <= 0 or self.power_max_iterations < 1:
            raise ConfigError("power_tolerance は正、power_max_iterations は 1 以上が必要です")
        if self.timing_repeats < 1:
            raise ConfigError(f"timing_repeats は 1 以上: {self.timing_repeats}")
        return self

    @property
    def m_pairs(self) -> list[tuple[int, int]]:
        """(m1, m2) の組。m1/m2 の指定は m_values より優先する"""
        if self.m1 is not None or self.m2 is not None:
            m1 = self.m1 if self.m1 is not None else self.m2
            m2 = self.m2 if self.m2 is not None else self.m1
            return [(int(m1), int(m2))]  # type: ignore[arg-type]
        return [(m, m) for m in self.m_values]

    @property
    def output(self) -> Path:
        return Path(self.output_path or _DEFAULT_OUTPUTS[self.mode])

    def cycle_template(self, beta: float) -> CycleConfig:
        m1, m2 = self.m_pairs[0]
        return CycleConfig(
            beta=beta,
            m1=m1,
            m2=m2,
            cycle=self.cycle,
            c_dagger=self.c_dagger,
            lanczos_steps=self.lanczos_steps,
            fmg_tolerance=self.fmg_tolerance,
            fmg_max_iterations=self.fmg_max_iterations,
            fmg_cycle=self.fmg_cycle,
            seed=self.seed,
        )

    def fmg_config(self, beta: float) -> CycleConfig:
        """FMG 用: 対称 (fmg_m, fmg_m) 平滑化"""
        return CycleConfig(
            beta=beta,
            m1=self.fmg_m,
            m2=self.fmg_m,
            cycle=CycleType.FMG,
            c_dagger=self.c_dagger,
            lanczos_steps=self.lanczos_steps,
            fmg_tolerance=self.fmg_tolerance,
            fmg_max_iterations=self.fmg_max_iterations,
            fmg_cycle=self.fmg_cycle,
            seed=self.seed,
        )

    def measurement_settings(self) -> MeasurementSettings:
        return MeasurementSettings(
            tol=self.power_tolerance,
            max_iters=self.power_max_iterations,
            dense_threshold=self.dense_threshold,
            timing_repeats=self.timing_repeats,
            seed=self.seed,
        )

    @classmethod
    def from_sources(
        cls, cfg: dict[str, Any], overrides: dict[str, Any] | None = None
    ) -> "RunConfig":
        """config.yaml の辞書と CLI 引数（None は未指定）をマージして検証する

        overrides のキーは run セクションと同じ名前に加えて
        inner_nu, dump_mesh, dump_matrices を受け付ける。
        """
        run = dict(cfg.get("run", {}))
        inner = cfg.get("inner", {})
        mg = cfg.get("multigrid", {})
        spectral = cfg.get("spectral", {})
        assembly = cfg.get("assembly", {})
        reference = cfg.get("reference", {})
        merged: dict[str, Any] = {**run, "inner_nu": inner.get("inner_nu", 4)}
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        # --m1/--m2 を指定した場合は config の m_values より優先される
        try:
            config = cls(
                domain=DomainSpec.from_name(str(merged.get("domain", "unit-square"))),
                betas=[float(b) for b in _as_list(merged.get("betas", [1e-2]))],
                max_level=int(merged.get("max_level", 4)),
                cycle=_enum(CycleType, merged.get("cycle", "w"), "cycle"),
                m_values=[int(m) for m in _as_list(merged.get("m_values", [1]))],
                m1=_opt_int(merged.get("m1")),
                m2=_opt_int(merged.get("m2")),
                inner_nu=int(merged["inner_nu"]),
                inner_damping=_opt_float(inner.get("inner_smoother_damping")),
                mode=_enum(RunMode, merged.get("mode", "contraction-sweep"), "mode"),
                seed=int(merged.get("seed", 20190501)),
                output_path=merged.get("output_path"),
                jobs=int(merged.get("jobs", 1)),
                yd=_enum(DesiredState, merged.get("yd", "one"), "yd"),
                c_dagger=_opt_float(mg.get("c_dagger")),
                lanczos_steps=int(mg.get("lanczos_steps", 80)),
                fmg_tolerance=float(mg.get("fmg_tolerance", 1e-8)),
                fmg_max_iterations=int(mg.get("fmg_max_iterations", 100)),
                fmg_cycle=_enum(CycleType, mg.get("fmg_cycle", "w"), "fmg_cycle"),
                fmg_m=int(mg.get("fmg_m", 2)),
                power_tolerance=float(spectral.get("power_tolerance", 1e-4)),
                power_max_iterations=int(spectral.get("power_max_iterations", 200)),
                dense_threshold=int(spectral.get("dense_threshold", 2500)),
                timing_repeats=int(spectral.get("timing_repeats", 3)),
                load_degree=int(assembly.get("load_quadrature_degree", 2)),
                series_tolerance=float(reference.get("series_tolerance", 1e-10)),
                series_max_modes=int(reference.get("series_max_modes", 4096)),
                error_degree=int(reference.get("error_quadrature_degree", 4)),
                dump_mesh=merged.get("dump_mesh"),
                dump_matrices=merged.get("dump_matrices"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"設定値が不正です: {e}") from e
        config.validate()
        if config.mode is RunMode.SOLVE:
            ignored = [key for key in _SWEEP_ONLY_KEYS if (overrides or {}).get(key) is not None]
            if ignored:
                logger.warning(
                    f"solve モードでは {', '.join(ignored)} を使いません"
                    f"（FMG は multigrid.fmg_cycle={config.fmg_cycle.value}, fmg_m={config.fmg_m}）"
                )
        return config



def _as_list(value: Any) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [v for v in value.replace(",", " ").split() if v]
    return [value]


def _opt_int(value: Any) -> int | None:
    return None if value is None else int(value)


def _opt_float(value: Any) -> float | None:
    return None if value is None else float(value)


def _enum(kind: type[Enum], value: Any, name: str) -> Any:
    if isinstance(value, kind):
        return value
    try:
        return kind(str(value).lower())
    except ValueError:
        choices = ", ".join(str(m.value) for m in kind)
        raise ConfigError(f"{name} は {choices} のいずれか: {value}") from None


# ─── 実行結果 ───────────────────────────────────────────────────

@dataclass
class RunResult:
    """実行結果（書き出したファイルと表示用テキスト）"""
    mode: RunMode
    artifacts: list[Path] = field(default_factory=list)
    text: str = ""
    rows: list[dict[str, Any]] = field(default_factory=list)


def _fmg_solve(
    levels: Sequence[LevelOperators], config: RunConfig, beta: float, yd: DesiredState
) -> tuple[FMGResult, float]:
    """FMG で釣り合い系を解き、(結果, 前処理込みの壁時計時間) を返す"""
    start = time.perf_counter()
    cycle_config = config.fmg_config(beta)
    saddles = [SaddleBlockMatrix(beta, ops) for ops in levels]
    inner = ReactionDiffusionHierarchy(
        list(levels), beta, nu=config.inner_nu, damping=config.inner_damping
    )
    mg = SaddleMultigrid(levels, cycle_config, inner, saddles=saddles)
    rhs = [balanced_rhs(ops.mesh, yd, beta, config.load_degree) for ops in levels]
    result = mg.full_multigrid(rhs)
    return result, time.perf_counter() - start


def _error_row(
    levels: Sequence[LevelOperators],
    config: RunConfig,
    beta: float,
    yd: DesiredState,
    result: FMGResult,
    seconds: float,
) -> dict[str, Any]:
    finest = levels[-1].mesh
    solution = to_original_variables(result.finest(), beta)
    exact = exact_solution(beta, yd, config.series_tolerance, config.series_max_modes)
    errors = error_norms(finest, solution, exact, config.error_degree)
    control = control_error(finest, solution.p, exact[0], beta, config.error_degree)
    return {
        "yd": yd.value,
        "beta": beta,
        "level": finest.level,
        "h": finest.h,
        **errors.to_dict(),
        "rel_L2_u": control.rel_l2,
        "iterations": result.iterations[-1],
        "seconds": seconds,
    }


def _mesh_summary(levels: Sequence[LevelOperators]) -> list[dict[str, Any]]:
    summary = []
    for ops in levels:
        quality = cell_quality(ops.mesh)
        summary.append(
            {
                "level": ops.level,
                "h": ops.h,
                "vertices": ops.mesh.num_vertices,
                "cells": ops.mesh.num_cells,
                "dofs": ops.n,
                "min_quality": float(quality.min()) if quality.size else float("nan"),
            }
        )
    return summary


def run_solve(config: RunConfig) -> RunResult:
    """FMG による求解。単位正方形では参照解との誤差行も出力する"""
    levels = build_levels(config.domain, config.max_level)
    finest = levels[-1]
    result = RunResult(RunMode.SOLVE)

    if config.dump_mesh:
        result.artifacts.append(dump_mesh_json(finest.mesh, config.dump_mesh))
    if config.dump_matrices:
        base = Path(config.dump_matrices)
        result.artifacts.append(dump_matrix_triplets(finest.stiffness, base / "stiffness.txt"))
        result.artifacts.append(dump_matrix_triplets(finest.mass, base / "mass.txt"))

    solves = []
    error_rows = []
    for beta in config.betas:
        fmg, seconds = _fmg_solve(levels, config, beta, config.yd)
        solution = to_original_variables(fmg.finest(), beta)
        mass = finest.mass
        entry = {
            "beta": beta,
            "level": finest.level,
            "dofs": finest.n,
            "iterations": fmg.iterations,
            "final_residual": fmg.residual_histories[-1][-1],
            "seconds": seconds,
            "L2_p": float(np.sqrt(solution.p @ (mass @ solution.p))),
            "L2_y": float(np.sqrt(solution.y @ (mass @ solution.y))),
            "L2_u": float(np.sqrt(solution.p @ (mass @ solution.p))) / beta,
        }
        solves.append(entry)
        if config.domain.kind is DomainKind.UNIT_SQUARE and config.max_level >= 1:
            error_rows.append(_error_row(levels, config, beta, config.yd, fmg, seconds))

    summary = {
        "domain": config.domain.name,
        "yd": config.yd.value,
        "fmg_cycle": config.fmg_cycle.value,
        "fmg_m": config.fmg_m,
        "inner_nu": config.inner_nu,
        "seed": config.seed,
        "levels": _mesh_summary(levels),
        "solves": solves,
        "errors": error_rows,
    }
    result.artifacts.append(write_json(summary, config.output))
    result.rows = error_rows or solves
    lines = [
        f"β={s['beta']:g}: FMG 反復 {s['iterations'][-1]} 回, "
        f"相対残差 {s['final_residual']:.2e}, {s['seconds']:.2f}s"
        for s in solves
    ]
    if error_rows:
        lines.append("")
        lines.append(format_error_table(error_rows))
    result.text = "\n".join(lines)
    return result


def run_sweep(config: RunConfig) -> RunResult:
    """縮小率 ‖E_k‖ を β × m × レベルの格子で計測し CSV と表を書き出す"""
    reports = sweep(
        domains=[config.domain],
        betas=config.betas,
        levels=list(range(1, config.max_level + 1)),
        m_pairs=config.m_pairs,
        template=config.cycle_template(config.betas[0]),
        inner_nu=config.inner_nu,
        settings=config.measurement_settings(),
        jobs=config.jobs,
        inner_damping=config.inner_damping,
    )
    result = RunResult(RunMode.CONTRACTION_SWEEP)
    write_contraction_csv(reports, config.output)
    result.artifacts.append(config.output)
    table = format_contraction_table(reports)
    result.artifacts.append(write_text(table, config.output.with_suffix(".md")))
    result.rows = [row for r in reports for row in r.to_rows()]
    result.text = table
    failures = [message for r in reports for message in r.errors]
    if failures:
        logger.warning(f"{len(failures)} 件の計測が失敗しました")
    return result


def run_table1(config: RunConfig) -> RunResult:
    """両方の目標状態と各 β について FMG 解の相対誤差表を作る"""
    levels = build_levels(config.domain, config.max_level)
    rows = []
    for yd in DesiredState:
        for beta in config.betas:
            fmg, seconds = _fmg_solve(levels, config, beta, yd)
            row = _error_row(levels, config, beta, yd, fmg, seconds)
            logger.info(
                f"y_d={yd.value} β={beta:g}: p̄ H¹ {row['rel_H1_p']:.3e}, "
                f"ȳ L² {row['rel_L2_y']:.3e} ({seconds:.2f}s)"
            )
            rows.append(row)
    result = RunResult(RunMode.TABLE1, rows=rows)
    result.artifacts.append(_write_rows_csv(rows, config.output))
    table = format_error_table(rows)
    result.artifacts.append(write_text(table, config.output.with_suffix(".md")))
    result.text = table
    return result


def _write_rows_csv(rows: list[dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    logger.info(f"{len(rows)} 行を {path} に書き出しました")
    return path


_MODES = {
    RunMode.SOLVE: run_solve,
    RunMode.CONTRACTION_SWEEP: run_sweep,
    RunMode.TABLE1: run_table1,
}


def execute(config: RunConfig) -> RunResult:
    """モードに応じて実行する（例外はそのまま送出）"""
    logger.info(f"実行開始: {_describe(config)}")
    return _MODES[config.mode](config)


def run(config: RunConfig) -> tuple[int, RunResult | None]:
    """実行して (終了コード, 結果) を返す

    0: 成功, 2: 設定エラー, 3: 数値計算の失敗
    """
    try:
        return 0, execute(config)
    except ConfigError as e:
        logger.error(f"設定エラー: {e}")
        return 2, None
    except NumericalError as e:
        logger.error(f"数値計算に失敗しました: {e}")
        return 3, None


def _describe(config: RunConfig) -> dict[str, Any]:
    data = asdict(config)
    data["domain"] = config.domain.name
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in data.items()}
