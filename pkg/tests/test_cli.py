import json

import pytest

from hopret.cli import main

from conftest import write_jsonl


@pytest.fixture
def fixture_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"id": f"p{i}", "title": f"Topic {i % 3}", "text": f"passage about topic{i % 3} number {i}"}
        for i in range(10)
    ]
    write_jsonl(path, rows)
    return path


@pytest.fixture
def built_index(tmp_path, fixture_corpus):
    out = tmp_path / "flat.idx"
    code = main(["build-index", "--corpus", str(fixture_corpus), "--out", str(out),
                 "--dim", "48"])
    assert code == 0
    return out


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["build-index", "--out", "/tmp/x.idx"]) == 2
        assert "--corpus" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert main(["search", "--frobnicate"]) == 2

    def test_unknown_command(self):
        assert main(["transmogrify"]) == 2

    def test_bad_ef_construction_is_usage_error(self, fixture_corpus, tmp_path):
        code = main(["build-index", "--corpus", str(fixture_corpus),
                     "--out", str(tmp_path / "x.idx"), "--hnsw", "--ef-construction", "0"])
        assert code == 2

    def test_zero_epochs_is_usage_error(self, tmp_path):
        code = main(["train", "--data", "nope.jsonl", "--corpus", "nope.jsonl",
                     "--out", str(tmp_path / "m.mdl"), "--epochs", "0"])
        assert code == 2

    def test_missing_file_is_runtime_error(self, tmp_path):
        code = main(["build-index", "--corpus", str(tmp_path / "ghost.jsonl"),
                     "--out", str(tmp_path / "x.idx")])
        assert code == 1

    def test_dimension_mismatch_is_runtime_error(self, built_index, fixture_corpus, capsys):
        code = main(["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                     "--query", "topic1", "--dim", "32"])
        assert code == 1
        assert "dimension" in capsys.readouterr().err


class TestBuildAndSearch:
    def test_search_json_output(self, built_index, fixture_corpus, capsys):
        code = main(["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                     "--query", "passage about topic1", "--dim", "48",
                     "--hops", "2", "--beam", "4", "--k", "3", "--json"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        first = json.loads(lines[0])
        assert first["rank"] == 1
        assert len(first["passages"]) == 2
        assert {"id", "title"} <= set(first["passages"][0])
        assert len(first["hop_scores"]) == 2

    def test_search_human_output(self, built_index, fixture_corpus, capsys):
        code = main(["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                     "--query", "topic2", "--dim", "48", "--k", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert "total=" in out

    def test_single_hop_matches_flat_search(self, built_index, fixture_corpus, capsys):
        code = main(["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                     "--query", "topic0", "--dim", "48", "--hops", "1", "--k", "3", "--json"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3

    def test_byte_identical_output_across_runs(self, built_index, fixture_corpus, capsys):
        args = ["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                "--query", "passage about topic2", "--dim", "48", "--k", "4", "--json"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        second = capsys.readouterr().out
        assert first == second

    def test_rerank_lexical(self, built_index, fixture_corpus, capsys):
        code = main(["search", "--index", str(built_index), "--corpus", str(fixture_corpus),
                     "--query", "topic1 number", "--dim", "48", "--k", "3",
                     "--rerank", "lexical", "--json"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert all("rerank_score" in json.loads(line) for line in lines)

    def test_hnsw_build_loadable(self, tmp_path, fixture_corpus, capsys):
        out = tmp_path / "graph.idx"
        code = main(["build-index", "--corpus", str(fixture_corpus), "--out", str(out),
                     "--dim", "48", "--hnsw", "--m-links", "4", "--ef-construction", "16"])
        assert code == 0
        code = main(["search", "--index", str(out), "--corpus", str(fixture_corpus),
                     "--query", "topic1", "--dim", "48", "--k", "2", "--json"])
        assert code == 0


class TestGenSynthetic:
    def test_writes_files_and_is_deterministic(self, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            code = main(["--seed", "3", "gen-synthetic", "--entities", "12",
                         "--relations", "2", "--out-dir", str(out)])
            assert code == 0
            capsys.readouterr()
        for name in ("corpus.jsonl", "train.jsonl", "dev.jsonl", "dev_eval.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_below_minimum_is_usage_error(self, tmp_path):
        code = main(["gen-synthetic", "--entities", "2", "--relations", "1",
                     "--out-dir", str(tmp_path / "x")])
        assert code == 2


class TestEvalAndBench:
    @pytest.fixture
    def synthetic_setup(self, tmp_path, capsys):
        out = tmp_path / "syn"
        assert main(["--seed", "5", "gen-synthetic", "--entities", "12", "--relations", "2",
                     "--out-dir", str(out)]) == 0
        capsys.readouterr()
        index = tmp_path / "syn.idx"
        assert main(["build-index", "--corpus", str(out / "corpus.jsonl"),
                     "--out", str(index), "--dim", "64"]) == 0
        return out, index

    def test_eval_reports_each_k(self, synthetic_setup, tmp_path, capsys):
        out, index = synthetic_setup
        csv_path = tmp_path / "recall.csv"
        code = main(["eval", "--index", str(index), "--corpus", str(out / "corpus.jsonl"),
                     "--data", str(out / "dev_eval.jsonl"), "--dim", "64",
                     "--k-list", "2,4,8", "--csv", str(csv_path)])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert sorted(report["recall_at"]) == ["2", "4", "8"]
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "k,recall"
        assert len(lines) == 4

    def test_eval_missing_gold_warns_and_scores_zero(self, synthetic_setup, tmp_path, capsys):
        out, index = synthetic_setup
        data = tmp_path / "ghost.jsonl"
        write_jsonl(data, [{"question": "what is rel0 of the rel1 of ent00",
                            "answer": "x", "gold_ids": ["ghost-passage", "fact-0-0"]}])
        code = main(["eval", "--index", str(index), "--corpus", str(out / "corpus.jsonl"),
                     "--data", str(data), "--dim", "64", "--k-list", "2"])
        captured = capsys.readouterr()
        assert code == 0
        assert "ghost-passage" in captured.err
        report = json.loads(captured.out)
        assert report["recall_at"]["2"] == 0.0

    def test_bench_csv_and_duplicate_k_warning(self, synthetic_setup, tmp_path, capsys):
        out, index = synthetic_setup
        queries = tmp_path / "queries.txt"
        queries.write_text("what is rel0 of the rel1 of ent05\nanother question\n")
        code = main(["bench", "--index", str(index), "--queries", str(queries),
                     "--dim", "64", "--k-list", "1,5,5"])
        captured = capsys.readouterr()
        assert code == 0
        lines = captured.out.strip().splitlines()
        assert lines[0] == "k,metric,sec_per_query,encoder_sec,index_sec"
        assert len(lines) == 1 + 2 * 3  # two distinct k, three stats each
        assert "duplicates" in captured.err


class TestConfigFile:
    def test_toml_config_supplies_defaults(self, tmp_path, fixture_corpus, capsys):
        config = tmp_path / "conf.toml"
        config.write_text('dim = 48\nout = "%s"\n' % (tmp_path / "c.idx"))
        code = main(["build-index", "--config", str(config), "--corpus", str(fixture_corpus)])
        assert code == 0
        assert (tmp_path / "c.idx").exists()

    def test_flag_overrides_config(self, tmp_path, fixture_corpus):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"dim": 16, "out": str(tmp_path / "j.idx")}))
        code = main(["build-index", "--config", str(config), "--corpus", str(fixture_corpus),
                     "--dim", "48"])
        assert code == 0
        from hopret.index import load_index
        assert load_index(tmp_path / "j.idx").dimension == 48

    def test_unknown_config_key_is_usage_error(self, tmp_path, fixture_corpus, capsys):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"no-such-flag": 1}))
        code = main(["build-index", "--config", str(config), "--corpus", str(fixture_corpus),
                     "--out", str(tmp_path / "x.idx")])
        assert code == 2
        assert "no-such-flag" in capsys.readouterr().err
