import json

import pytest

from evoheur.cli import main
from evoheur.runlog import (
    RunLogger,
    export_groups,
    export_trajectory,
    export_turns,
    read_events,
    render_csv,
)


class TestRunLogger:
    def test_sequence_numbers_strictly_increase(self, tmp_path):
        path = tmp_path / "log.jsonl"
        with RunLogger(str(path), run_id="t", clock=lambda: 1.0) as log:
            log.emit("run_start", config={})
            log.emit("run_end", best_candidate="x", best_fitness=0.1)
        events = read_events(str(path))
        assert [e["seq"] for e in events] == [0, 1]

    def test_unknown_kind_rejected(self):
        log = RunLogger(run_id="t")
        with pytest.raises(ValueError):
            log.emit("coffee_break")

    def test_reserved_payload_keys_rejected(self):
        log = RunLogger(run_id="t")
        with pytest.raises(ValueError):
            log.emit("turn", kind="nested")

    def test_corrupt_line_reports_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"seq": 0, "kind": "run_start"}\n{oops\n')
        with pytest.raises(ValueError, match="line 2"):
            read_events(str(path))

    def test_truncated_last_line_reports_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"seq": 0, "kind": "run_start"}\n{"seq": 1, "kind": "run_end"')
        with pytest.raises(ValueError, match="line 2"):
            read_events(str(path))


class TestExports:
    def _events(self):
        log = RunLogger(run_id="t", clock=lambda: 0.0)
        log.emit("generation_summary", generation=1, best_fitness=0.5, tokens_used=10)
        log.emit("generation_summary", generation=2, best_fitness=0.4, tokens_used=30)
        log.emit("generation_summary", generation=3, best_fitness=0.4, tokens_used=60)
        for turn, decision in [(0, "exploit"), (0, "exploit"), (1, "explore")]:
            log.emit("turn", turn=turn, decision=decision, session="s",
                     parse_status="ok", reminder=False, candidate_id=None, fitness=None)
        log.emit("partition", generation=1, provenance="fallback",
                 clusters=[["a", "b"], ["c"]], violations=[])
        return log.events

    def test_trajectory_rows(self):
        rows = export_trajectory(self._events())
        assert rows == [(1, 0.5, 10), (2, 0.4, 30), (3, 0.4, 60)]
        fits = [f for _, f, _ in rows]
        assert all(b <= a for a, b in zip(fits, fits[1:]))

    def test_turn_counts_sum(self):
        rows = export_turns(self._events())
        assert sum(c for _, _, c in rows) == 3
        assert (0, "exploit", 2) in rows

    def test_groups_rows(self):
        rows = export_groups(self._events())
        assert rows == [(1, "fallback", 0, "a|b"), (1, "fallback", 1, "c")]

    def test_csv_rendering(self):
        text = render_csv([(1, 0.5, 10)], ["generation", "best_fitness", "tokens_used"])
        assert text.splitlines()[0] == "generation,best_fitness,tokens_used"
        assert text.splitlines()[1] == "1,0.5,10"


@pytest.fixture
def mock_run_config(tmp_path):
    from conftest import mock_script_rules

    script = tmp_path / "script.json"
    script.write_text(json.dumps({"rules": mock_script_rules()}))
    config = tmp_path / "run.toml"
    config.write_text(
        "\n".join([
            "max_turns = 2",
            "num_candidates_to_initialize = 6",
            "epochs = 2",
            "top_k = 4",
            "reminder_probability = 1.0",
            "num_clusters = 2",
            "num_elements = 3",
            'problem = "bpp"',
            "bpp_num_items = 150",
            "bpp_capacity = 100",
            "instance_count = 2",
            "instance_seed = 1",
            "seed = 99",
            f'llm_script = "{script}"',
        ])
    )
    return config


class TestCmdRun:
    def test_happy_path_exit_zero_log_complete(self, tmp_path, mock_run_config, capsys):
        log_path = tmp_path / "out.jsonl"
        code = main(["run", "--config", str(mock_run_config), "--log", str(log_path)])
        assert code == 0
        events = read_events(str(log_path))
        assert events[-1]["kind"] == "run_end"
        out = capsys.readouterr().out
        assert "best candidate:" in out
        assert "mean excess bins" in out

    def test_missing_config_nonzero_exit(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "absent.toml")])
        assert code != 0
        assert "cannot read config" in capsys.readouterr().err

    def test_invalid_config_lists_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("epochs = 0\n")
        code = main(["run", "--config", str(bad)])
        assert code == 2
        assert "epochs" in capsys.readouterr().err

    def test_override_epochs(self, tmp_path, mock_run_config):
        log_path = tmp_path / "out.jsonl"
        code = main([
            "run", "--config", str(mock_run_config),
            "--set", "epochs=1", "--log", str(log_path),
        ])
        assert code == 0
        events = read_events(str(log_path))
        assert sum(1 for e in events if e["kind"] == "generation_summary") == 1


class TestCmdEval:
    def test_builtin_on_seeded_set(self, capsys):
        code = main([
            "eval", "builtin:first_fit", "--problem", "bpp",
            "--num-items", "200", "--capacity", "100", "--count", "3", "--seed", "4",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean excess bins" in out
        assert "%" in out

    def test_nearest_neighbour_gap_row(self, capsys):
        code = main([
            "eval", "builtin:nearest_neighbour", "--problem", "tsp",
            "--nodes", "20", "--count", "2", "--seed", "4",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean optimality gap" in out

    def test_instance_file(self, tmp_path, capsys):
        doc = {"problem": "bpp", "capacity": 100, "items": [60, 70, 40]}
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(doc))
        code = main(["eval", "builtin:first_fit", "--instance", str(path)])
        assert code == 0
        assert "excess_bins=0.00%" in capsys.readouterr().out


class TestCmdExport:
    def test_trajectory_csv(self, tmp_path, mock_run_config, capsys):
        log_path = tmp_path / "out.jsonl"
        assert main(["run", "--config", str(mock_run_config), "--log", str(log_path)]) == 0
        capsys.readouterr()
        assert main(["export", str(log_path), "--what", "trajectory"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "generation,best_fitness,tokens_used"
        assert len(lines) == 3  # two generations
        fits = [float(line.split(",")[1]) for line in lines[1:]]
        assert all(b <= a for a, b in zip(fits, fits[1:]))

    def test_turns_csv_counts(self, tmp_path, mock_run_config, capsys):
        log_path = tmp_path / "out.jsonl"
        assert main(["run", "--config", str(mock_run_config), "--log", str(log_path)]) == 0
        capsys.readouterr()
        assert main(["export", str(log_path), "--what", "turns"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()[1:]
        total = sum(int(line.split(",")[2]) for line in lines)
        turn_events = sum(1 for e in read_events(str(log_path)) if e["kind"] == "turn")
        assert total == turn_events

    def test_corrupt_log_errors_with_line(self, tmp_path, capsys):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"kind": "run_start", "seq": 0}\nnot json\n')
        assert main(["export", str(path)]) == 2
        assert "line 2" in capsys.readouterr().err


class TestCmdBaselines:
    def test_bpp_table(self, capsys):
        code = main([
            "baselines", "--problem", "bpp", "--num-items", "200",
            "--capacity", "100", "--count", "2", "--seed", "3",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "first_fit" in out and "best_fit" in out and "worst_fit" in out

    def test_tsp_table(self, capsys):
        code = main([
            "baselines", "--problem", "tsp", "--nodes", "15", "--count", "2",
            "--seed", "3",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "nearest_neighbour" in out
