import json

import pytest

from conftest import FIXTURES
from policygate import cli


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.json"))}


def test_help_lists_knobs_with_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["judge", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--k ", "--k1", "--beta", "--radius", "--w-ent", "--seed", "--jobs", "--no-rerank", "--mode"):
        assert flag in text
    assert "(default: 5)" in text


def test_judge_is_deterministic_across_jobs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["judge", "--out", str(a)]) == 0
    assert cli.main(["judge", "--out", str(b), "--jobs", "4"]) == 0
    ta = tree(a)
    assert "decisions/ex002.json" in ta and "plans/ex001.json" in ta
    assert ta == tree(b)


def test_build_policy_then_reuse(tmp_path):
    assert cli.main(["build-policy", "--out", str(tmp_path)]) == 0
    graph = tmp_path / "policy_graph.json"
    assert json.loads(graph.read_text())["nodes"]
    out = tmp_path / "ctx"
    assert cli.main(["build-context", "--policy-graph", str(graph), "--out", str(out)]) == 0
    assert len(list((out / "context").glob("*.json"))) == 5


def test_evaluate_predictions_file(tmp_path, capsys):
    code = cli.main(["evaluate", "--scenarios", str(FIXTURES / "eval_scenarios.json"),
                     "--predictions", str(FIXTURES / "eval_predictions.json"), "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["micro_f1"] == pytest.approx(2 / 3)
    assert "micro_f1   0.6667" in capsys.readouterr().out


def test_evaluate_after_judge(tmp_path):
    assert cli.main(["judge", "--out", str(tmp_path)]) == 0
    assert cli.main(["evaluate", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.txt").exists()


def test_config_file_overrides_flags(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"k": 2, "beta": 0.2}))
    args = cli.parser().parse_args(["judge", "--config", str(conf), "--k", "4"])
    cfg = cli.resolve_config(args)
    assert (cfg.k, cfg.beta) == (2, 0.2)


@pytest.mark.parametrize("argv", [["judge", "--k", "0"], ["judge", "--k", "60"], ["judge", "--beta", "2"],
                                  ["judge", "--mode", "replay"]])
def test_config_errors_exit_2(tmp_path, argv):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_unknown_config_key_exit_2(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"kay": 2}))
    assert cli.main(["judge", "--config", str(conf), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_record_without_key_exit_2(tmp_path, monkeypatch):
    monkeypatch.delenv("POLICYGATE_API_KEY", raising=False)
    argv = ["judge", "--mode", "record", "--cassette", str(tmp_path / "c.json"), "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_missing_cassette_exit_3(tmp_path):
    argv = ["judge", "--mode", "replay", "--cassette", str(tmp_path / "none.json"), "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_ADAPTER


def test_data_errors_exit_4(tmp_path):
    assert cli.main(["judge", "--scenarios", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == cli.EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"id": "x", "text": "t"}]))
    assert cli.main(["judge", "--scenarios", str(bad), "--out", str(tmp_path)]) == cli.EXIT_DATA


def test_fidelity_writes_reports(tmp_path, capsys):
    argv = ["fidelity", "--out", str(tmp_path), "--iterations", "2", "--deltas", "0", "0.2", "--seeds", "2"]
    assert cli.main(argv) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fidelity_policy_cycle.json", "fidelity_policy_cycle.txt",
                     "fidelity_policy_noise.json", "fidelity_policy_noise.txt"]
    assert "semantic" in capsys.readouterr().out
