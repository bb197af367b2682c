import json

from app.cli import execute_command


def test_verify_lemma_reports_zero_violations(capsys):
    code = execute_command(["verify-lemma", "--samples", "2000", "--spot-vectors", "2", "--mc-samples", "20000"])
    captured = capsys.readouterr()
    assert code == 0
    assert json.loads(captured.out)["violations"] == 0
    assert "violations: 0" in captured.err


def test_run_is_byte_identical_for_the_same_seed(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"n": 6, "protocol": "dynamic2", "max_slots": 10000}), encoding="utf-8")
    assert execute_command(["run", "--config", str(config), "--seed", "7"]) == 0
    first = capsys.readouterr().out
    assert execute_command(["run", "--config", str(config), "--seed", "7"]) == 0
    second = capsys.readouterr().out
    assert first == second
    payload = json.loads(first)
    assert payload["config"]["seed"] == 7
    assert payload["config"]["n"] == 6


def test_run_flags_without_config_file(capsys):
    assert execute_command(["run", "--n", "1", "--d", "3", "--protocol", "dynamic1-sync", "--adversary", "front"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["successSlots"] == [4]
    assert payload["jamsUsed"] == 3


def test_unknown_config_key_is_a_config_error(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"n": 2, "bogus": 1}), encoding="utf-8")
    assert execute_command(["run", "--config", str(config)]) == 1
    assert "error" in capsys.readouterr().err


def test_malformed_json_and_missing_n_are_config_errors(tmp_path):
    config = tmp_path / "broken.json"
    config.write_text("{not json", encoding="utf-8")
    assert execute_command(["run", "--config", str(config)]) == 1
    assert execute_command(["run"]) == 1
    assert execute_command(["run", "--n", "2", "--protocol", "nope"]) == 1


def test_unknown_subcommand_is_a_config_error():
    assert execute_command(["explode"]) == 1


def test_sweep_with_empty_grid_exits_one():
    assert execute_command(["sweep", "--n-grid", "", "--d-grid", "0"]) == 1


def test_sweep_then_fit_from_csv(tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    code = execute_command(
        ["sweep", "--n-grid", "4,8,16", "--d-grid", "0", "--trials", "2", "--seed", "3", "--out", str(csv_path)]
    )
    assert code == 0
    assert "n_plus_d" in json.loads(capsys.readouterr().out)["fits"]
    assert execute_command(["fit", str(csv_path), "--model", "n_log_n_plus_d"]) == 0
    fits = json.loads(capsys.readouterr().out)["fits"]
    assert list(fits) == ["n_log_n_plus_d"]
    assert fits["n_log_n_plus_d"]["constant"] > 0


def test_decompose_reads_a_stored_trace(tmp_path, capsys):
    out = tmp_path / "run.json"
    assert execute_command(["run", "--n", "4", "--seed", "1", "--full-trace", "--out", str(out)]) == 0
    assert execute_command(["decompose", str(out), "--kind", "complete-dynamic"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["kind"] == "complete-dynamic"
    assert payload["intervals"][0]["start"] == 1
    assert payload["congestMode"] == "dynamic"


def test_decompose_missing_file_exits_one(tmp_path):
    assert execute_command(["decompose", str(tmp_path / "absent.json")]) == 1
