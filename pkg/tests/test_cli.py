from __future__ import annotations

import json

import pytest

from partadvisor.cli import EXIT_INPUT, EXIT_OK, load_bundle, main
from partadvisor.training import RuntimeCache, TrainConfig

from schemas import microbenchmark_document, query

TRAIN = {"episodes": 5, "t_max": 6, "hidden": [16, 8], "batch_size": 8}


@pytest.fixture
def files(tmp_path):
    def write(name, doc):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)

    return write


@pytest.fixture
def setup(files, tmp_path):
    schema = files("schema.json", microbenchmark_document())
    config = files("config.json", {"train": TRAIN, "committee": {"expert_episodes": 3}})
    mix = files("mix.json", {"frequencies": [1.0, 0.5]})
    return schema, config, mix, tmp_path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_malformed_schema_names_the_field(files, tmp_path, capsys):
    doc = microbenchmark_document()
    del doc["tables"][1]["row_count"]
    code, _, err = _run(capsys, "train-offline", "--schema", files("bad.json", doc),
                        "--out", tmp_path / "b")
    assert code == EXIT_INPUT
    assert "row_count" in err


def test_invalid_json_and_unknown_config(files, setup, capsys):
    schema, _, _, tmp = setup
    bad = tmp / "broken.json"
    bad.write_text("{not json")
    assert _run(capsys, "train-offline", "--schema", bad, "--out", tmp / "b")[0] == EXIT_INPUT
    cfg = files("odd.json", {"trainer": {}})
    code, _, err = _run(capsys, "train-offline", "--schema", schema, "--config", cfg,
                        "--out", tmp / "b")
    assert code == EXIT_INPUT and "trainer" in err


def test_offline_log_and_determinism(setup, capsys):
    schema, config, _, tmp = setup
    for name in ("a", "b"):
        assert _run(capsys, "train-offline", "--schema", schema, "--config", config,
                    "--seed", 3, "--out", tmp / name)[0] == EXIT_OK
    a = (tmp / "a" / "train_log.jsonl").read_bytes()
    assert a == (tmp / "b" / "train_log.jsonl").read_bytes()
    assert len(a.splitlines()) == TRAIN["episodes"] * TRAIN["t_max"]


def test_recommend_formats_agree(setup, capsys):
    schema, config, mix, tmp = setup
    _run(capsys, "train-offline", "--schema", schema, "--config", config, "--out", tmp / "off")
    code, out, _ = _run(capsys, "recommend", "--bundle", tmp / "off", "--mix", mix)
    assert code == EXIT_OK
    report = json.loads(out)
    code, text, _ = _run(capsys, "recommend", "--bundle", tmp / "off", "--mix", mix,
                         "--format", "table")
    assert code == EXIT_OK
    for name, label in report["designs"].items():
        line = next(row for row in text.splitlines() if row.split() and row.split()[0] == name)
        assert label in line
    assert report["trajectory_length"] == TRAIN["t_max"]


def test_mix_length_mismatch(setup, files, capsys):
    schema, config, _, tmp = setup
    _run(capsys, "train-offline", "--schema", schema, "--config", config, "--out", tmp / "off")
    code, _, err = _run(capsys, "recommend", "--bundle", tmp / "off",
                        "--mix", files("short.json", [1.0]))
    assert code == EXIT_INPUT and "mix" in err


def test_warm_start_and_cache_export(setup, capsys):
    schema, config, mix, tmp = setup
    _run(capsys, "train-offline", "--schema", schema, "--config", config, "--out", tmp / "off")
    code, out, _ = _run(capsys, "train-online", "--schema", schema, "--config", config,
                        "--warm", tmp / "off", "--out", tmp / "on")
    assert code == EXIT_OK and "executed" in out
    first = json.loads((tmp / "on" / "train_log.jsonl").read_text().splitlines()[0])
    assert first["epsilon"] == pytest.approx(TrainConfig().warm_epsilon)
    cache = RuntimeCache.load(tmp / "on" / "cache.json")
    assert len(cache) > 0
    bundle = load_bundle(str(tmp / "on"))
    assert bundle.cache.entries == cache.entries
    assert bundle.scale is not None and len(bundle.scale) == 2
    assert _run(capsys, "recommend", "--bundle", tmp / "on", "--mix", mix)[0] == EXIT_OK


def test_committee_and_extension_round_trip(files, tmp_path, capsys):
    doc = microbenchmark_document()
    extra = query(2, [("A", 0.9)], [])
    full_doc = dict(doc, queries=doc["queries"] + [extra])
    full = files("full.json", full_doc)
    old = files("old.json", doc)
    config = files("config.json", {"train": TRAIN,
                                   "committee": {"expert_episodes": 3, "extend_episodes": 3}})
    assert _run(capsys, "train-online", "--schema", old, "--config", config,
                "--out", tmp_path / "naive")[0] == EXIT_OK
    assert _run(capsys, "derive-committee", "--naive", tmp_path / "naive", "--config", config,
                "--out", tmp_path / "com")[0] == EXIT_OK
    assert load_bundle(str(tmp_path / "com")).kind == "committee"
    code, _, _ = _run(capsys, "extend-workload", "--bundle", tmp_path / "com", "--schema", full,
                      "--config", config, "--out", tmp_path / "ext")
    assert code == EXIT_OK
    code, out, _ = _run(capsys, "recommend", "--bundle", tmp_path / "ext",
                        "--mix", files("mix3.json", [1.0, 0.2, 0.7]))
    assert code == EXIT_OK
    assert json.loads(out)["expert"] is not None
    # extension needs a committee, not a single agent
    assert _run(capsys, "extend-workload", "--bundle", tmp_path / "naive", "--schema", full,
                "--out", tmp_path / "x")[0] == EXIT_INPUT


def test_benchmark_report_and_empty_list(files, capsys):
    scenario = files("scenarios.json", {"scenarios": [
        {"name": "micro", "schema": microbenchmark_document(), "config": {"train": TRAIN}}]})
    code, out, _ = _run(capsys, "benchmark", "--scenario", scenario)
    assert code == EXIT_OK
    approaches = json.loads(out)["micro"]["approaches"]
    assert {"oracle", "drl:offline", "drl:online"} <= set(approaches)
    assert max(a["speedup_vs_slowest"] for a in approaches.values()) >= 1.0
    assert min(a["speedup_vs_slowest"] for a in approaches.values()) == 1.0
    oracle = approaches["oracle"]["runtime"]
    assert all(a["runtime"] >= oracle * (1 - 1e-12) for a in approaches.values())
    assert _run(capsys, "benchmark", "--scenario", files("empty.json", {"scenarios": []}))[0] \
        == EXIT_INPUT
    bad_mix = files("bad.json", [{"schema": microbenchmark_document(), "mix": [1.0]}])
    assert _run(capsys, "benchmark", "--scenario", bad_mix)[0] == EXIT_INPUT


def test_validate_sampling(setup, capsys):
    schema, config, _, _ = setup
    code, out, _ = _run(capsys, "validate-sampling", "--schema", schema, "--config", config,
                        "--states", 6)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert len(doc["states"]) == 6


def test_usage_errors_exit_2(capsys):
    assert _run(capsys, "no-such-command")[0] == EXIT_INPUT
    assert _run(capsys, "recommend")[0] == EXIT_INPUT

