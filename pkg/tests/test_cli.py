import json

import pytest

from toolgen.cli import build_parser, main
from toolgen.synthetic import write_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = write_corpus(root / "corpus", n_tools=40, n_trajectories=6, seed=1)
    run = root / "run"
    assert main(["ingest", "--tools", str(paths["tools"]), "--out", str(run / "ingest")]) == 0
    reg = run / "ingest" / "registry.jsonl"
    assert main(["index", "--registry", str(reg), "--out", str(run / "index")]) == 0
    vi = ["--vocab", str(run / "index" / "vocab.tsv"), "--index", str(run / "index" / "index.jsonl")]
    assert main(["build-data", "--registry", str(reg), *vi, "--annotations", str(paths["annotations"]),
                 "--trajectories", str(paths["trajectories"]), "--out", str(run / "data")]) == 0
    assert main(["train-scorer", "--vocab", vi[1], "--data", str(run / "data" / "memorization.jsonl"),
                 str(run / "data" / "retrieval.jsonl"), "--out", str(run / "scorer")]) == 0
    return root, paths, reg, vi, run / "scorer" / "scorer.json"


def test_stats_atomic(corpus, capsys):
    root, paths, reg, vi, _ = corpus
    assert main(["stats", "--registry", str(reg), "--scheme", "atomic", "--out", str(root / "stats")]) == 0
    assert "histogram {1: 40}" in capsys.readouterr().out
    stats = json.loads((root / "stats" / "stats.json").read_text())
    assert stats["histogram"] == {"1": 40}


def test_eval_retrieval_deterministic(corpus):
    root, paths, reg, vi, scorer = corpus
    args = ["eval-retrieval", "--registry", str(reg), *vi, "--scorer", str(scorer),
            "--annotations", str(paths["annotations"]), "--seed", "3"]
    assert main(args + ["--out", str(root / "e1")]) == 0
    assert main(args + ["--out", str(root / "e2"), "--workers", "4"]) == 0
    a = (root / "e1" / "ndcg.csv").read_text()
    assert a == (root / "e2" / "ndcg.csv").read_text()
    rows = [r.split(",") for r in a.splitlines()[1:]]
    assert all(float(r[1]) >= 0.9 for r in rows)


def test_agent_run_and_hallucination(corpus, capsys):
    root, paths, reg, vi, scorer = corpus
    base = ["agent-run", "--registry", str(reg), *vi, "--fixtures", str(paths["fixtures"])]
    assert main(base + ["--replay", str(paths["trajectories"]), "--out", str(root / "a1")]) == 0
    assert main(base + ["--scorer", str(scorer), "--queries", str(paths["queries"]), "--out", str(root / "a2")]) == 0
    logs = [str(root / "a1" / "trajectories.jsonl"), str(root / "a2" / "trajectories.jsonl")]
    capsys.readouterr()
    assert main(["eval-hallucination", "--logs", *logs, "--out", str(root / "h")]) == 0
    assert json.loads((root / "h" / "hallucination.json").read_text())["rate"] == 0.0


def test_config_file_and_flag_override(corpus, tmp_path):
    root, paths, reg, vi, _ = corpus
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'seed = 1\n[stats]\nregistry = "{reg}"\nscheme = "numeric"\n')
    assert main(["stats", "--config", str(cfg), "--out", str(tmp_path / "s1")]) == 0
    assert json.loads((tmp_path / "s1" / "stats.json").read_text())["histogram"] == {"6": 40}
    assert main(["stats", "--config", str(cfg), "--scheme", "atomic", "--out", str(tmp_path / "s2")]) == 0
    assert json.loads((tmp_path / "s2" / "stats.json").read_text())["histogram"] == {"1": 40}


def test_default_run_dir_is_config_hash(corpus, tmp_path, monkeypatch):
    root, paths, reg, vi, _ = corpus
    monkeypatch.chdir(tmp_path)
    assert main(["stats", "--registry", str(reg)]) == 0
    assert main(["stats", "--registry", str(reg), "--workers", "2"]) == 0
    assert len(list((tmp_path / "runs").iterdir())) == 1


def test_exit_codes(tmp_path, capsys):
    assert main(["stats", "--registry", str(tmp_path / "nope.jsonl")]) == 1
    assert "nope.jsonl" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["stats", "--no-such-flag"])
    assert e.value.code == 2
    assert main(["stats", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('[{"tool_name": "T", "apis": [{"name": "a", "method": "FETCH"}]}]')
    assert main(["ingest", "--tools", str(bad), "--out", str(tmp_path / "y")]) == 1
    assert "bad.json" in capsys.readouterr().err


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text
            assert action.help, f"{name} {action.dest} has no help"


def test_inputs_not_modified(corpus):
    root, paths, reg, vi, _ = corpus
    before = reg.read_bytes()
    main(["index", "--registry", str(reg), "--scheme", "semantic", "--out", str(root / "i2")])
    assert reg.read_bytes() == before
