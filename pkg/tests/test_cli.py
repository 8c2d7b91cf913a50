import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from topo_pretrain.checkpoint import load_checkpoint
from topo_pretrain.cli import main
from topo_pretrain.config import ConfigError, ExperimentConfig
from topo_pretrain.graphs import Graph, load_corpus, save_corpus
from topo_pretrain.transfer import RunResult

TINY_ENCODER = {"num_layers": 2, "hidden_dim": 16, "projection_dim": 16}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("error: ")
    return json.loads(lines[0][len("error: "):])


def write_config(path, **sections):
    path.write_text(yaml.safe_dump(sections))
    return path


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    """256-graph pretraining corpus, a pretrained checkpoint and a downstream dataset."""
    root = tmp_path_factory.mktemp("toy")
    assert main(["generate", "--dataset", "er", "--count", "128", "--seed", "1",
                 "--out", str(root / "er.jsonl")]) == 0
    assert main(["generate", "--dataset", "trees", "--count", "128", "--seed", "2",
                 "--out", str(root / "trees.jsonl")]) == 0
    assert main(["generate", "--dataset", "community", "--count", "60", "--seed", "3",
                 "--out", str(root / "community.jsonl")]) == 0
    cfg = write_config(root / "exp.yaml",
                       corpus=[["er.jsonl", 128], {"path": "trees.jsonl"}],
                       encoder=TINY_ENCODER,
                       pretrain={"method": "adgcl", "epochs": 2, "batch_size": 64, "seed": 0},
                       finetune={"runs": 3, "epochs": 3, "batch_size": 32})
    t = time.time()
    assert main(["pretrain", "--config", str(cfg), "--out", str(root / "ckpt.bin")]) == 0
    return {"root": root, "config": cfg, "ckpt": root / "ckpt.bin", "pretrain_seconds": time.time() - t}


def test_generate_community(tmp_path, capsys):
    out = tmp_path / "c.jsonl"
    code, stdout, _ = run(["generate", "--dataset", "community", "--count", 100, "--seed", 0,
                           "--out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 100
    assert all(json.loads(line)["n"] == 48 for line in lines)
    meta = json.loads((tmp_path / "c.jsonl.meta.json").read_text())
    assert meta["config_hash"] == json.loads(stdout)["config_hash"]


def test_generate_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["generate", "--dataset", "trees", "--count", 50, "--seed", 9,
                    "--out", tmp_path / f"{name}.jsonl"], capsys)[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl.meta.json").read_text().replace("a.jsonl", "") == \
        (tmp_path / "b.jsonl.meta.json").read_text().replace("b.jsonl", "")


def test_generate_er_round_trip(tmp_path, capsys):
    out = tmp_path / "er.jsonl"
    assert run(["generate", "--dataset", "er", "--count", 1000, "--seed", 4, "--out", out], capsys)[0] == 0
    graphs = load_corpus(out)
    assert len(graphs) == 1000
    for g in graphs:
        g.validate()
        assert g.target is not None


def test_generate_errors(tmp_path, capsys):
    code, _, err = run(["generate", "--dataset", "grid", "--count", 3, "--out", tmp_path / "x"], capsys)
    assert code == 2 and parse_error(err)["command"] == "generate"
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(["generate", "--dataset", "er", "--count", 3,
                        "--out", blocker / "sub" / "x.jsonl"], capsys)
    assert code == 1 and "cannot create" in parse_error(err)["message"]


def big_graph(n=600, seed=0):
    rng = np.random.default_rng(seed)
    ring = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    extra = rng.integers(0, n, size=(2 * n, 2))
    extra = extra[extra[:, 0] != extra[:, 1]]
    edges = np.unique(np.sort(np.concatenate([ring, extra]), axis=1), axis=0)
    return Graph(n, edges)


def test_sample(tmp_path, capsys):
    save_corpus(tmp_path / "big.jsonl", [big_graph()])
    for name in ("a", "b"):
        code, _, _ = run(["sample", "--graph", tmp_path / "big.jsonl", "--count", 40, "--seed", 5,
                          "--out", tmp_path / f"{name}.jsonl"], capsys)
        assert code == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    graphs = load_corpus(tmp_path / "a.jsonl")
    assert len(graphs) == 40
    for g in graphs:
        g.validate()
        assert 24 <= g.n <= 96 and g.is_connected()


def test_sample_source_too_small(tmp_path, capsys):
    save_corpus(tmp_path / "small.jsonl", [big_graph(20)])
    code, _, err = run(["sample", "--graph", tmp_path / "small.jsonl", "--count", 2,
                        "--out", tmp_path / "o.jsonl"], capsys)
    assert code == 1
    assert parse_error(err)["error"] == "SamplingError"


def test_config_lists_every_problem(tmp_path):
    cfg = write_config(tmp_path / "bad.yaml", encoder={"readout": "max", "hidden_dim": "wide"},
                       pretrain={"epochs": 0, "temperature": -1.0},
                       finetune={"lr": -1.0, "bogus": 1}, corpus=[["a.jsonl", 0]], extra={})
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.load(cfg)
    text = str(info.value)
    for needle in ("encoder.readout", "encoder.hidden_dim", "pretrain.epochs", "pretrain.temperature",
                   "finetune.lr", "finetune.bogus", "corpus[0].max_count", "extra"):
        assert needle in text, needle


def test_config_hash_ignores_key_order(tmp_path):
    a = {"encoder": {"hidden_dim": 8, "num_layers": 2}, "pretrain": {"seed": 3, "epochs": 2},
         "corpus": [["x.jsonl", 5]]}
    b = {"corpus": [{"max_count": 5, "path": "x.jsonl"}], "pretrain": {"epochs": 2, "seed": 3},
         "encoder": {"num_layers": 2, "hidden_dim": 8}}
    (tmp_path / "a.json").write_text(json.dumps(a))
    write_config(tmp_path / "b.yaml", **b)
    ha = ExperimentConfig.load(tmp_path / "a.json").hash
    assert ha == ExperimentConfig.load(tmp_path / "b.yaml").hash
    b["pretrain"]["seed"] = 4
    write_config(tmp_path / "c.yaml", **b)
    assert ExperimentConfig.load(tmp_path / "c.yaml").hash != ha


def test_config_error_is_single_line(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.yaml", pretrain={"epochs": 0, "batch_size": 1})
    code, _, err = run(["pretrain", "--config", cfg, "--out", tmp_path / "c.bin"], capsys)
    assert code == 1
    msg = parse_error(err)["message"]
    assert "pretrain.epochs" in msg and "pretrain.batch_size" in msg


def test_pretrain_artifacts(toy):
    ckpt = load_checkpoint(toy["ckpt"])
    exp = ExperimentConfig.load(toy["config"])
    assert ckpt.extra["config_hash"] == exp.hash
    assert ckpt.extra["composition"] == {"random": 128, "trees": 128}
    with open(str(toy["ckpt"]) + ".log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    meta = json.loads((toy["root"] / "ckpt.bin.log.csv.meta.json").read_text())
    assert meta["config_hash"] == exp.hash and meta["checkpoint_id"] == ckpt.checkpoint_id


def test_pretrain_is_idempotent(toy, tmp_path, capsys):
    assert run(["pretrain", "--config", toy["config"], "--out", tmp_path / "again.bin"], capsys)[0] == 0
    assert (tmp_path / "again.bin").read_bytes() == toy["ckpt"].read_bytes()

    def without_seconds(path):
        with open(path) as fh:
            return [{k: v for k, v in r.items() if k != "seconds"} for r in csv.DictReader(fh)]
    assert without_seconds(tmp_path / "again.bin.log.csv") == without_seconds(str(toy["ckpt"]) + ".log.csv")


def test_finetune_and_compare(toy, tmp_path, capsys):
    data = toy["root"] / "community.jsonl"
    common = ["--data", data, "--config", toy["config"], "--runs", 10, "--epochs", 2]
    assert run(["finetune", "--ckpt", toy["ckpt"], *common, "--out", tmp_path / "m.json"], capsys)[0] == 0
    assert run(["finetune", "--ckpt", "none", *common, "--out", tmp_path / "b.json"], capsys)[0] == 0
    model = RunResult.from_json(tmp_path / "m.json")
    base = RunResult.from_json(tmp_path / "b.json")
    assert len(model.scores) == 10
    assert model.mean == pytest.approx(np.mean(model.scores), rel=1e-12)
    assert model.std == pytest.approx(np.std(model.scores, ddof=1), rel=1e-12)
    assert model.checkpoint_id == load_checkpoint(toy["ckpt"]).checkpoint_id
    assert base.checkpoint_id in ("", "none", None)
    assert model.config_hash and base.config_hash

    code, stdout, _ = run(["compare", "--a", tmp_path / "b.json", "--b", tmp_path / "m.json",
                           "--out", tmp_path / "cmp.csv"], capsys)
    assert code == 0
    with open(tmp_path / "cmp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["dataset"] == "community"
    assert json.loads((tmp_path / "cmp.csv.meta.json").read_text())["config_hash"]


def test_compare_identical(toy, tmp_path, capsys):
    args = ["finetune", "--ckpt", "none", "--data", toy["root"] / "community.jsonl", "--config",
            toy["config"], "--runs", 3, "--epochs", 1, "--out", tmp_path / "r.json"]
    assert run(args, capsys)[0] == 0
    code, stdout, _ = run(["compare", "--a", tmp_path / "r.json", "--b", tmp_path / "r.json",
                           "--out", tmp_path / "cmp.csv"], capsys)
    assert code == 0
    with open(tmp_path / "cmp.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["p_value"]) == 1.0 and row["better"] == "false"


def test_compare_mismatched_pairs(tmp_path, capsys):
    code, _, err = run(["compare", "--a", "x.json", "--a", "y.json", "--b", "z.json",
                        "--out", tmp_path / "c.csv"], capsys)
    assert code == 2 and parse_error(err)["command"] == "compare"


def test_probe(toy, tmp_path, capsys):
    code, _, _ = run(["probe", "--ckpt", toy["ckpt"], "--data", toy["root"] / "community.jsonl",
                      "--out", tmp_path / "p.json"], capsys)
    assert code == 0
    payload = json.loads((tmp_path / "p.json").read_text())
    assert payload["metric"] == "rmse" and np.isfinite(payload["score"]) and payload["config_hash"]


def test_analyze(toy, tmp_path, capsys):
    code, _, _ = run(["analyze", "--ckpt", toy["ckpt"], "--data", toy["root"] / "er.jsonl",
                      "--out", tmp_path / "report"], capsys)
    assert code == 0
    with open(tmp_path / "report" / "correlations.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 6
    manifest = json.loads((tmp_path / "report" / "manifest.json").read_text())
    assert manifest["config_hash"] and len(manifest["most_correlated"]) == 5


def test_bad_checkpoint_and_threads(toy, tmp_path, capsys, monkeypatch):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a checkpoint")
    code, _, err = run(["probe", "--ckpt", junk, "--data", toy["root"] / "er.jsonl",
                        "--out", tmp_path / "p.json"], capsys)
    assert code == 1 and parse_error(err)["error"] == "CheckpointError"
    monkeypatch.setenv("TOP_NUM_THREADS", "many")
    code, _, err = run(["generate", "--dataset", "er", "--count", 1, "--out", tmp_path / "e.jsonl"], capsys)
    assert code == 2 and "TOP_NUM_THREADS" in parse_error(err)["message"]
    monkeypatch.setenv("TOP_NUM_THREADS", "1")
    assert run(["generate", "--dataset", "er", "--count", 1, "--out", tmp_path / "e.jsonl"], capsys)[0] == 0


def test_experiment_command(toy, tmp_path, capsys):
    cfg = write_config(toy["root"] / "full.yaml",
                       corpus=[["er.jsonl", 40], ["trees.jsonl", 40]], encoder=TINY_ENCODER,
                       pretrain={"epochs": 1, "batch_size": 40},
                       finetune={"runs": 2, "epochs": 1},
                       tasks=[{"data": "community.jsonl", "name": "community"}])
    code, stdout, _ = run(["experiment", "--config", cfg, "--out", tmp_path / "exp"], capsys)
    assert code == 0
    summary = json.loads(stdout)
    assert [r["dataset"] for r in summary["rows"]] == ["community"]
    for name in ("checkpoint.bin", "community.model.json", "community.baseline.json", "comparison.csv"):
        assert (tmp_path / "exp" / name).exists()


def test_toy_pipeline_budget(toy):
    # 256-graph pretraining plus the fine-tuning above fits easily in ten minutes
    assert toy["pretrain_seconds"] < 600


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "topo_pretrain.cli", "generate", "--dataset", "er",
                           "--count", "2", "--out", str(tmp_path / "e.jsonl")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "topo_pretrain.cli", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    parse_error(proc.stderr)
