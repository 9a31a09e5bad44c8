"""
エクスポートモジュール
縮小率の計測結果と誤差表を CSV / JSON / Markdown テキストとして書き出します。
"""

import csv
import json
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from saddlegrid.spectral import ContractionReport

logger = logging.getLogger(__name__)

CSV_FIELDS = [
    "domain", "beta", "cycle", "m1", "m2", "level",
    "norm_Ek", "converged", "seconds_per_cycle",
]


# ─── ユーティリティ ───────────────────────────────────────────

def _fmt_sci(value: float) -> str:
    """有効数字 3 桁の指数表記（例: 6.15e-01）"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.2e}"


def _ensure_parent(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ─── CSV / JSON ───────────────────────────────────────────────

def write_contraction_csv(reports: Sequence[ContractionReport], path: str | Path) -> int:
    """計測結果を 1 行 1 (領域, β, サイクル, m, レベル) の CSV に書き出す"""
    path = _ensure_parent(path)
    rows = [row for report in reports for row in report.to_rows()]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            # CSV は完全精度
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    logger.info(f"{len(rows)} 行を {path} に書き出しました")
    return len(rows)


def write_json(data: Any, path: str | Path) -> Path:
    path = _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, default=str)
    logger.info(f"JSON を書き出しました: {path}")
    return path


# ─── テキスト表 ────────────────────────────────────────────────

def format_contraction_table(reports: Sequence[ContractionReport]) -> str:
    """β ごとに、行 = m、列 = レベル k の縮小率表（Markdown）"""
    lines: list[str] = []
    groups: dict[tuple[str, float, str], list[ContractionReport]] = {}
    for r in reports:
        groups.setdefault((r.domain, r.beta, r.cycle), []).append(r)

    for (domain, beta, cycle), group in groups.items():
        levels = sorted({e.level for r in group for e in r.entries})
        lines.append(f"## {domain} / β = {beta:g} / {cycle}-cycle")
        lines.append("")
        lines.append("| m | " + " | ".join(f"k={k}" for k in levels) + " | Time (s) |")
        lines.append("|---|" + "---|" * len(levels) + "---|")
        for r in group:
            by_level = {e.level: e for e in r.entries}
            label = str(r.m1) if r.m1 == r.m2 else f"({r.m1},{r.m2})"
            cells = [_fmt_sci(by_level[k].norm_Ek) if k in by_level else "-" for k in levels]
            finest = by_level.get(levels[-1]) if levels else None
            time_cell = _fmt_sci(finest.seconds_per_cycle) if finest else "-"
            lines.append(f"| {label} | " + " | ".join(cells) + f" | {time_cell} |")
        lines.append("")
    return "\n".join(lines)


def format_error_table(rows: Sequence[dict[str, Any]]) -> str:
    """β × y_d ごとの相対誤差表（Markdown）"""
    lines = [
        "| y_d | β | p̄ H¹ | p̄ L² | ȳ H¹ | ȳ L² | ū L² | FMG 反復 | Time (s) |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['yd']} | {row['beta']:g} | {_fmt_sci(row['rel_H1_p'])} | "
            f"{_fmt_sci(row['rel_L2_p'])} | {_fmt_sci(row['rel_H1_y'])} | "
            f"{_fmt_sci(row['rel_L2_y'])} | {_fmt_sci(row['rel_L2_u'])} | "
            f"{row['iterations']} | {_fmt_sci(row['seconds'])} |"
        )
    return "\n".join(lines) + "\n"


def write_text(text: str, path: str | Path) -> Path:
    path = _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info(f"テキストを書き出しました: {path}")
    return path
