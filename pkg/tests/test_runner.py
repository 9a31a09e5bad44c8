"""
runner.py / main.py のユニットテスト
"""

import csv
import json
import logging

import pytest

import saddlegrid.runner as runner_module
from main import main
from saddlegrid.errors import ConfigError, FMGConvergenceError
from saddlegrid.mesh import DomainKind
from saddlegrid.multigrid import CycleType
from saddlegrid.reference import DesiredState
from saddlegrid.runner import RunConfig, RunMode, execute, run


class TestFromSources:
    """RunConfig.from_sources() のテスト"""

    def test_defaults_from_config(self, sample_config):
        config = RunConfig.from_sources(sample_config)
        assert config.domain.kind is DomainKind.UNIT_SQUARE
        assert config.betas == [1e-2]
        assert config.max_level == 2
        assert config.cycle is CycleType.W
        assert config.mode is RunMode.CONTRACTION_SWEEP
        assert config.seed == 7
        assert config.lanczos_steps == 40
        assert config.inner_damping is None
        assert config.yd is DesiredState.ONE

    def test_overrides_take_precedence(self, sample_config):
        config = RunConfig.from_sources(
            sample_config,
            {"betas": [1e-4, 1e-6], "domain": "l-shape", "cycle": "v", "inner_nu": 1, "seed": None},
        )
        assert config.betas == [1e-4, 1e-6]
        assert config.domain.kind is DomainKind.L_SHAPE
        assert config.cycle is CycleType.V
        assert config.inner_nu == 1
        # None は未指定扱い
        assert config.seed == 7

    def test_string_lists(self, sample_config):
        sample_config["run"]["betas"] = "1e-2, 1e-4"
        sample_config["run"]["m_values"] = "1 2 4"
        config = RunConfig.from_sources(sample_config)
        assert config.betas == [1e-2, 1e-4]
        assert config.m_pairs == [(1, 1), (2, 2), (4, 4)]

    def test_empty_config(self):
        config = RunConfig.from_sources({})
        assert config.mode is RunMode.CONTRACTION_SWEEP
        assert config.max_level == 4
        assert str(config.output) == "results/contraction.csv"

    @pytest.mark.parametrize(
        "overrides",
        [
            {"betas": [0.0]},
            {"betas": [-1e-2]},
            {"max_level": 99},
            {"max_level": -1},
            {"m_values": [0]},
            {"m1": 0, "m2": 0},
            {"m1": -1},
            {"inner_nu": 0},
            {"jobs": 0},
            {"cycle": "fmg"},
            {"cycle": "x"},
            {"domain": "circle"},
            {"mode": "table1", "domain": "pentagon"},
            {"mode": "table1", "max_level": 0},
            {"yd": "two"},
            {"max_level": "many"},
        ],
    )
    def test_invalid_values(self, sample_config, overrides):
        with pytest.raises(ConfigError):
            RunConfig.from_sources(sample_config, overrides)

    def test_cube_load_degree(self, sample_config):
        sample_config["assembly"]["load_quadrature_degree"] = 4
        with pytest.raises(ConfigError):
            RunConfig.from_sources(sample_config, {"domain": "unit-cube"})

    def test_inner_damping_range(self, sample_config):
        sample_config["inner"]["inner_smoother_damping"] = 1.5
        with pytest.raises(ConfigError):
            RunConfig.from_sources(sample_config)


class TestMPairs:
    def test_m1_m2_override(self, sample_config):
        config = RunConfig.from_sources(sample_config, {"m_values": [1, 2], "m1": 2, "m2": 1})
        assert config.m_pairs == [(2, 1)]

    def test_single_side_used_for_both(self, sample_config):
        config = RunConfig.from_sources(sample_config, {"m1": 3})
        assert config.m_pairs == [(3, 3)]

    def test_templates(self, sample_config):
        config = RunConfig.from_sources(sample_config, {"m_values": [2]})
        template = config.cycle_template(1e-4)
        assert (template.beta, template.m1, template.m2) == (1e-4, 2, 2)
        fmg = config.fmg_config(1e-4)
        assert fmg.cycle is CycleType.FMG
        assert fmg.m1 == fmg.m2 == config.fmg_m


class TestRunSweep:
    """contraction-sweep モードのテスト"""

    def test_writes_csv_and_table(self, sample_config, tmp_path):
        out = tmp_path / "sweep.csv"
        config = RunConfig.from_sources(sample_config, {"max_level": 3, "output_path": str(out)})
        status, result = run(config)
        assert status == 0
        with open(out, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["level"]) for r in rows] == [1, 2, 3]
        assert all(0.0 < float(r["norm_Ek"]) < 1.0 for r in rows)
        assert out.with_suffix(".md").exists()
        assert "k=3" in result.text

    def test_deterministic_apart_from_timing(self, sample_config, tmp_path):
        """計測時間の列を除けば同じシードで同じ CSV"""
        contents = []
        for name in ("a.csv", "b.csv"):
            config = RunConfig.from_sources(sample_config, {"output_path": str(tmp_path / name)})
            execute(config)
            with open(tmp_path / name, encoding="utf-8") as f:
                rows = list(csv.DictReader(f))
            contents.append([{k: v for k, v in r.items() if k != "seconds_per_cycle"} for r in rows])
        assert contents[0] == contents[1]


class TestRunSolve:
    """solve モードのテスト"""

    def test_summary_and_dumps(self, sample_config, tmp_path):
        out = tmp_path / "solve.json"
        config = RunConfig.from_sources(
            sample_config,
            {
                "mode": "solve",
                "output_path": str(out),
                "dump_mesh": str(tmp_path / "mesh.json"),
                "dump_matrices": str(tmp_path / "matrices"),
            },
        )
        status, result = run(config)
        assert status == 0
        summary = json.loads(out.read_text(encoding="utf-8"))
        assert summary["domain"] == "unit-square"
        assert len(summary["levels"]) == 3
        assert summary["solves"][0]["final_residual"] <= 1e-8
        assert summary["errors"][0]["level"] == 2
        assert (tmp_path / "mesh.json").exists()
        assert (tmp_path / "matrices" / "stiffness.txt").exists()
        assert (tmp_path / "matrices" / "mass.txt").exists()
        assert result.rows == summary["errors"]

    def test_sweep_flags_warned(self, sample_config, caplog):
        """solve モードで --cycle / --m1 / --m2 を指定すると警告する"""
        with caplog.at_level(logging.WARNING, logger="saddlegrid.runner"):
            config = RunConfig.from_sources(
                sample_config, {"mode": "solve", "cycle": "v", "m1": 3, "m2": None}
            )
        assert config.fmg_cycle is CycleType.W
        messages = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]
        assert len(messages) == 1
        assert "cycle" in messages[0] and "m1" in messages[0]
        assert "m2" not in messages[0]

    def test_no_warning_without_sweep_flags(self, sample_config, caplog):
        with caplog.at_level(logging.WARNING, logger="saddlegrid.runner"):
            RunConfig.from_sources(sample_config, {"mode": "solve"})
            RunConfig.from_sources(sample_config, {"cycle": "v", "m1": 3})
        assert not [r for r in caplog.records if r.levelno == logging.WARNING]

    @pytest.mark.slow
    def test_level_5_errors_match_published(self, sample_config, tmp_path):
        """FMG 解の誤差行（y_d = 1, β = 1e-2, h = 2⁻⁶）"""
        out = tmp_path / "solve.json"
        config = RunConfig.from_sources(
            sample_config,
            {"mode": "solve", "max_level": 5, "betas": [1e-2], "output_path": str(out)},
        )
        status, result = run(config)
        assert status == 0
        row = json.loads(out.read_text(encoding="utf-8"))["errors"][0]
        assert row["level"] == 5
        assert row["rel_H1_p"] == pytest.approx(1.65e-2, rel=0.2)
        assert row["rel_L2_y"] == pytest.approx(6.31e-4, rel=0.3)
        assert result.rows[0] == row

    def test_non_square_has_no_error_rows(self, sample_config, tmp_path):
        out = tmp_path / "solve.json"
        config = RunConfig.from_sources(
            sample_config, {"mode": "solve", "domain": "pentagon", "output_path": str(out)}
        )
        status, _ = run(config)
        assert status == 0
        assert json.loads(out.read_text(encoding="utf-8"))["errors"] == []


class TestRunTable1:
    def test_rows_for_both_targets(self, sample_config, tmp_path):
        out = tmp_path / "table1.csv"
        config = RunConfig.from_sources(
            sample_config, {"mode": "table1", "betas": [1e-2, 1e-4], "output_path": str(out)}
        )
        status, result = run(config)
        assert status == 0
        assert [(r["yd"], r["beta"]) for r in result.rows] == [
            ("one", 1e-2), ("one", 1e-4), ("bubble", 1e-2), ("bubble", 1e-4),
        ]
        with open(out, encoding="utf-8") as f:
            assert len(list(csv.DictReader(f))) == 4


class TestExitCodes:
    """run() の終了コード"""

    def test_numerical_error(self, sample_config, monkeypatch):
        def failing(config):
            raise FMGConvergenceError("収束しません", level=1, residual_history=[1.0, 0.9])

        monkeypatch.setitem(runner_module._MODES, RunMode.CONTRACTION_SWEEP, failing)
        config = RunConfig.from_sources(sample_config)
        assert run(config) == (3, None)

    def test_config_error(self, sample_config, monkeypatch):
        def failing(config):
            raise ConfigError("不正")

        monkeypatch.setitem(runner_module._MODES, RunMode.CONTRACTION_SWEEP, failing)
        assert run(RunConfig.from_sources(sample_config)) == (2, None)


class TestMain:
    """main() のテスト"""

    def test_sweep(self, config_file, tmp_path, capsys):
        out = tmp_path / "cli.csv"
        status = main(["-c", config_file, "--beta", "1e-2", "--m", "1", "--max-level", "2", "--out", str(out)])
        assert status == 0
        assert out.exists()
        assert "✅ 2 行を書き出しました" in capsys.readouterr().out

    def test_missing_config(self, tmp_path, capsys):
        assert main(["-c", str(tmp_path / "none.yaml")]) == 2
        assert "❌" in capsys.readouterr().out

    def test_invalid_value(self, config_file, capsys):
        assert main(["-c", config_file, "--beta", "-1"]) == 2
        assert "設定エラー" in capsys.readouterr().out

    def test_numerical_failure(self, config_file, monkeypatch, capsys):
        def failing(config):
            raise FMGConvergenceError("収束しません", level=1, residual_history=[1.0])

        monkeypatch.setitem(runner_module._MODES, RunMode.CONTRACTION_SWEEP, failing)
        assert main(["-c", config_file]) == 3
        assert "数値計算に失敗しました" in capsys.readouterr().out

    def test_unknown_mode_rejected_by_parser(self, config_file):
        with pytest.raises(SystemExit):
            main(["-c", config_file, "--mode", "plot"])
