"""End-to-end command-line pipeline and exit-code contract."""

import json

import pytest

from learnedcache.cli import main
from learnedcache.modelpack import load_json
from learnedcache.trace import EventKind, read_csv_trace, read_trace

OPS = 60
CAPACITY = 24


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run all four stages once into a shared directory."""
    d = tmp_path_factory.mktemp("pipeline")
    paths = {
        "train1": str(d / "train1.bin"),
        "train2": str(d / "train2.bin"),
        "test": str(d / "test.bin"),
        "test_csv": str(d / "test.csv"),
        "model": str(d / "model.json"),
        "report_fifo": str(d / "fifo.json"),
        "report_learned": str(d / "learned.json"),
        "latency": str(d / "latency.csv"),
        "eval": str(d / "eval.json"),
    }
    for name, seed in (("train1", 100), ("train2", 101), ("test", 999)):
        rc = main([
            "gen-trace", "--workload", "synthetic_sizebias", "--ops", str(OPS),
            "--files", "4", "--seed", str(seed), "--out", paths[name],
        ] + (["--csv", paths["test_csv"]] if name == "test" else []))
        assert rc == 0
    rc = main([
        "train", "--traces", paths["train1"], paths["train2"],
        "--test", paths["test"], "--out", paths["model"],
        "--capacity", str(CAPACITY), "--pairs", "2000", "--epochs", "2",
        "--seed", "7",
    ])
    assert rc == 0
    for policy, report in (("fifo", "report_fifo"), ("learned", "report_learned")):
        rc = main([
            "simulate", "--trace", paths["test"], "--policy", policy,
            "--capacity", str(CAPACITY), "--report", paths[report],
            "--seed", "0",
        ] + (["--model", paths["model"], "--latency-csv", paths["latency"]]
             if policy == "learned" else []))
        assert rc == 0
    rc = main([
        "paired-eval", "--workload", "synthetic_sizebias", "--model", paths["model"],
        "--capacity", "16", "--trials", "3", "--ops", "30", "--files", "3",
        "--out", paths["eval"], "--seed", "42",
    ])
    assert rc == 0
    return paths


def test_generated_trace_is_a_valid_sorted_stream(pipeline):
    events = read_trace(pipeline["test"])
    assert len(events) > 100
    assert all(e.kind == EventKind.ACCESS for e in events)
    assert all(a.t_ns <= b.t_ns for a, b in zip(events, events[1:]))


def test_csv_export_matches_binary_trace(pipeline):
    assert read_csv_trace(pipeline["test_csv"]) == read_trace(pipeline["test"])


def test_trained_model_loads_and_covers_all_features(pipeline):
    pack = load_json(pipeline["model"])
    assert pack.n_features == 9
    assert pack.weight_scale == 10000


def test_train_writes_default_sibling_artifacts(pipeline):
    history = pipeline["model"].replace(".json", ".history.csv")
    metrics_path = pipeline["model"].replace(".json", ".metrics.json")
    lines = open(history).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_auc,val_f1"
    metrics = json.load(open(metrics_path))
    assert list(metrics) == [
        "auc", "f1", "best_epoch", "epochs_run",
        "n_train_rows", "n_val_rows", "n_train_pairs", "n_val_pairs",
    ]
    assert len(lines) == 1 + metrics["epochs_run"]
    assert metrics["epochs_run"] <= 2
    assert metrics["n_train_pairs"] == 2000
    assert 1 <= metrics["n_val_pairs"] <= 2000
    assert metrics["n_train_rows"] > 0


def test_simulation_reports_match_a_direct_replay(pipeline):
    from learnedcache.simcache import FifoPolicy, run_simulation

    report = json.load(open(pipeline["report_fifo"]))
    events = read_trace(pipeline["test"])
    direct = run_simulation(events, FifoPolicy(), CAPACITY)
    assert report["policy"] == "fifo"
    assert report["capacity"] == CAPACITY
    assert report["accesses"] == direct.accesses == len(events)
    assert report["insertions"] == direct.insertions
    assert report["hits"] == direct.hits
    assert report["evictions"] == direct.evictions
    assert report["insertion_rate"] == pytest.approx(direct.insertion_rate)

    learned = json.load(open(pipeline["report_learned"]))
    assert learned["policy"] == "learned"
    assert learned["accesses"] == len(events)
    assert learned["latency_ns"]["samples_path"] == pipeline["latency"]


def test_latency_csv_has_one_row_per_eviction_batch(pipeline):
    lines = open(pipeline["latency"]).read().splitlines()
    assert lines[0] == "eviction_latency_ns"
    learned = json.load(open(pipeline["report_learned"]))
    assert len(lines) - 1 > 0
    assert all(int(x) >= 0 for x in lines[1:])
    assert learned["evictions"] >= len(lines) - 1


def test_paired_eval_artifacts(pipeline):
    obj = json.load(open(pipeline["eval"]))
    assert obj["workload"]["kind"] == "synthetic_sizebias"
    assert obj["workload"]["n_ops"] == 30
    assert obj["capacity"] == 16
    assert obj["n_trials"] == 3
    assert len(obj["trials"]) == 3
    for trial in obj["trials"]:
        assert trial["order"] in ("model_first", "normal_first")
        assert 0.0 <= trial["normal_rate"] <= 1.0
    assert "p" in obj["test"] and "degenerate" in obj["test"]

    summary = open(pipeline["eval"].replace(".json", ".summary.csv")).read().splitlines()
    assert summary[0] == "workload,pct_vs_baseline,raw_change,significant"
    assert len(summary) == 2
    assert summary[1].startswith("synthetic_sizebias,")


def test_gen_trace_is_deterministic_per_seed(tmp_path):
    a, b, c = (str(tmp_path / n) for n in ("a.bin", "b.bin", "c.bin"))
    assert main(["gen-trace", "--workload", "webserver", "--ops", "200",
                 "--seed", "5", "--out", a]) == 0
    assert main(["gen-trace", "--workload", "webserver", "--ops", "200",
                 "--seed", "5", "--out", b]) == 0
    assert main(["gen-trace", "--workload", "webserver", "--ops", "200",
                 "--seed", "6", "--out", c]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    assert open(a, "rb").read() != open(c, "rb").read()


def test_seed_env_fallback_matches_explicit_flag(tmp_path, monkeypatch):
    flagged = str(tmp_path / "flagged.bin")
    from_env = str(tmp_path / "env.bin")
    defaulted = str(tmp_path / "defaulted.bin")
    zero = str(tmp_path / "zero.bin")

    monkeypatch.delenv("LEARNEDCACHE_SEED", raising=False)
    assert main(["gen-trace", "--workload", "varmail", "--ops", "150",
                 "--seed", "9", "--out", flagged]) == 0
    assert main(["gen-trace", "--workload", "varmail", "--ops", "150",
                 "--out", defaulted]) == 0
    assert main(["gen-trace", "--workload", "varmail", "--ops", "150",
                 "--seed", "0", "--out", zero]) == 0
    monkeypatch.setenv("LEARNEDCACHE_SEED", "9")
    assert main(["gen-trace", "--workload", "varmail", "--ops", "150",
                 "--out", from_env]) == 0

    assert open(from_env, "rb").read() == open(flagged, "rb").read()
    assert open(defaulted, "rb").read() == open(zero, "rb").read()
    assert open(defaulted, "rb").read() != open(flagged, "rb").read()


def test_malformed_seed_env_is_a_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("LEARNEDCACHE_SEED", "not-a-number")
    rc = main(["gen-trace", "--workload", "varmail", "--ops", "10",
               "--out", str(tmp_path / "x.bin")])
    assert rc == 2


def test_usage_errors_exit_2(tmp_path):
    out = str(tmp_path / "x.bin")
    assert main([]) == 2
    assert main(["gen-trace", "--workload", "nonsense", "--out", out]) == 2
    assert main(["gen-trace", "--workload", "webserver"]) == 2  # --out missing
    assert main(["gen-trace", "--workload", "webserver", "--ops", "-1", "--out", out]) == 2
    assert main(["simulate", "--trace", out, "--policy", "lru", "--capacity", "4"]) == 2


def test_learned_policy_without_model_exits_2(pipeline):
    rc = main(["simulate", "--trace", pipeline["test"], "--policy", "learned",
               "--capacity", "8"])
    assert rc == 2


def test_zero_capacity_exits_2(pipeline):
    rc = main(["simulate", "--trace", pipeline["test"], "--policy", "fifo",
               "--capacity", "0"])
    assert rc == 2
    rc = main(["paired-eval", "--workload", "synthetic_sizebias", "--model", pipeline["model"],
               "--capacity", "0", "--trials", "2", "--ops", "10",
               "--out", pipeline["eval"] + ".tmp"])
    assert rc == 2


def test_zero_trials_exits_2(pipeline, tmp_path):
    rc = main(["paired-eval", "--workload", "synthetic_sizebias", "--model", pipeline["model"],
               "--capacity", "8", "--trials", "0", "--ops", "10",
               "--out", str(tmp_path / "e.json")])
    assert rc == 2


def test_missing_input_file_exits_3(tmp_path):
    rc = main(["simulate", "--trace", str(tmp_path / "absent.bin"),
               "--policy", "fifo", "--capacity", "4"])
    assert rc == 3


def test_corrupt_trace_exits_3(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\x00" * 40)
    rc = main(["simulate", "--trace", str(bad), "--policy", "fifo", "--capacity", "4"])
    assert rc == 3


def test_corrupt_model_exits_3(pipeline, tmp_path):
    not_json = tmp_path / "m1.json"
    not_json.write_text("{]")
    rc = main(["simulate", "--trace", pipeline["test"], "--policy", "learned",
               "--model", str(not_json), "--capacity", "8"])
    assert rc == 3

    wrong_shape = tmp_path / "m2.json"
    wrong_shape.write_text(json.dumps({"feature_names": 3}))
    rc = main(["simulate", "--trace", pipeline["test"], "--policy", "learned",
               "--model", str(wrong_shape), "--capacity", "8"])
    assert rc == 3


def test_train_with_oversized_capacity_exits_2(pipeline, tmp_path):
    # nothing is ever evicted, so there are no labeled rows to learn from
    rc = main(["train", "--traces", pipeline["train1"], "--test", pipeline["test"],
               "--out", str(tmp_path / "m.json"), "--capacity", "100000"])
    assert rc == 2


def test_single_epoch_run_writes_single_history_row(pipeline, tmp_path):
    out = str(tmp_path / "tiny.json")
    hist = str(tmp_path / "h.csv")
    rc = main(["train", "--traces", pipeline["train1"], "--test", pipeline["test"],
               "--out", out, "--capacity", str(CAPACITY), "--pairs", "500",
               "--epochs", "1", "--history", hist, "--seed", "1"])
    assert rc == 0
    lines = open(hist).read().splitlines()
    assert len(lines) == 2
    metrics = json.load(open(out.replace(".json", ".metrics.json")))
    assert metrics["epochs_run"] == 1
    assert metrics["best_epoch"] == 1


def test_train_rerun_is_byte_identical(pipeline, tmp_path):
    outs = []
    for name in ("r1.json", "r2.json"):
        out = str(tmp_path / name)
        rc = main(["train", "--traces", pipeline["train1"], "--test", pipeline["test"],
                   "--out", out, "--capacity", str(CAPACITY), "--pairs", "800",
                   "--epochs", "2", "--seed", "3"])
        assert rc == 0
        outs.append(out)
    assert open(outs[0], "rb").read() == open(outs[1], "rb").read()
    assert (
        open(outs[0].replace(".json", ".metrics.json"), "rb").read()
        == open(outs[1].replace(".json", ".metrics.json"), "rb").read()
    )


def test_stdout_progress_lines(pipeline, tmp_path, capsys):
    out = str(tmp_path / "t.bin")
    main(["gen-trace", "--workload", "synthetic_sizebias", "--ops", "20", "--files", "2",
          "--seed", "4", "--out", out])
    main(["simulate", "--trace", out, "--policy", "fifo", "--capacity", "4"])
    printed = capsys.readouterr().out
    assert "gen-trace: synthetic_sizebias seed=4" in printed
    assert "simulate: policy=fifo capacity=4" in printed
    assert "insertion_rate=" in printed
