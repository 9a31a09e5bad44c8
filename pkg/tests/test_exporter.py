"""
exporter.py のユニットテスト
"""

import csv
import json

import pytest

from saddlegrid.exporter import (
    CSV_FIELDS,
    format_contraction_table,
    format_error_table,
    write_contraction_csv,
    write_json,
    write_text,
)
from saddlegrid.spectral import ContractionReport, LevelContraction


@pytest.fixture
def reports():
    """β = 1e-2 の m = 1, 2 と、失敗を含む β = 1e-6 の計測結果"""
    first = ContractionReport("unit-square", 1e-2, "w", 1, 1, 0)
    first.entries = [
        LevelContraction(1, 0.30012345678901234, 1, True, 1.5e-4, "dense"),
        LevelContraction(2, 0.6149, 1, True, 3.1e-4, "dense"),
    ]
    second = ContractionReport("unit-square", 1e-2, "w", 2, 2, 0)
    second.entries = [
        LevelContraction(1, 0.089, 1, True, 2.0e-4, "dense"),
        LevelContraction(2, 0.483, 1, True, 4.2e-4, "dense"),
    ]
    failed = ContractionReport("unit-square", 1e-6, "w", 1, 1, 0)
    failed.entries = [LevelContraction(1, float("nan"), 0, False, float("nan"), "failed")]
    failed.errors = ["k=1: singular"]
    return [first, second, failed]


class TestWriteContractionCsv:
    """write_contraction_csv() のテスト"""

    def test_header_and_rows(self, reports, tmp_path):
        path = tmp_path / "out" / "contraction.csv"
        count = write_contraction_csv(reports, path)
        assert count == 5
        with open(path, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == CSV_FIELDS
        assert len(rows) == 5
        assert rows[1]["level"] == "2"
        assert rows[2]["m1"] == "2"

    def test_full_precision(self, reports, tmp_path):
        path = tmp_path / "contraction.csv"
        write_contraction_csv(reports, path)
        with open(path, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert float(rows[0]["norm_Ek"]) == 0.30012345678901234
        assert rows[0]["converged"] == "True"
        assert rows[4]["norm_Ek"] == "nan"

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        assert write_contraction_csv([], path) == 0
        assert path.read_text(encoding="utf-8").strip() == ",".join(CSV_FIELDS)


class TestFormatContractionTable:
    """format_contraction_table() のテスト"""

    def test_three_significant_digits(self, reports):
        text = format_contraction_table(reports)
        assert "## unit-square / β = 0.01 / w-cycle" in text
        assert "| 1 | 3.00e-01 | 6.15e-01 | 3.10e-04 |" in text
        assert "| 2 | 8.90e-02 | 4.83e-01 | 4.20e-04 |" in text

    def test_failed_entries_shown_as_dash(self, reports):
        text = format_contraction_table(reports)
        assert "| 1 | - | - |" in text

    def test_asymmetric_label(self):
        report = ContractionReport("pentagon", 1e-4, "v", 2, 1, 0)
        report.entries = [LevelContraction(1, 0.5, 3, True, 1e-3)]
        assert "| (2,1) | 5.00e-01 |" in format_contraction_table([report])


class TestFormatErrorTable:
    def test_row(self):
        row = {
            "yd": "one", "beta": 1e-2, "rel_H1_p": 1.65e-2, "rel_L2_p": 1.2e-3,
            "rel_H1_y": 2.4e-2, "rel_L2_y": 6.31e-4, "rel_L2_u": 1.2e-3,
            "iterations": 4, "seconds": 0.5,
        }
        text = format_error_table([row])
        lines = text.splitlines()
        assert len(lines) == 3
        assert lines[2].startswith("| one | 0.01 | 1.65e-02 |")
        assert "6.31e-04" in lines[2]


class TestWriters:
    def test_write_json(self, tmp_path):
        path = write_json({"β": 1e-2, "path": tmp_path}, tmp_path / "a" / "b.json")
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["β"] == 1e-2
        assert data["path"] == str(tmp_path)

    def test_write_text(self, tmp_path):
        path = write_text("表\n", tmp_path / "t.md")
        assert path.read_text(encoding="utf-8") == "表\n"
