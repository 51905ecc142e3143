import json
import subprocess
import sys
from pathlib import Path

import pytest

from fgp import cli

SMALL = {
    "seed": 5,
    "generate": {"count": 80, "val_count": 10},
    "pretrain": {"hidden_dim": 8, "num_layers": 1, "decoder_dims": [8], "head_dims": [8], "epochs": 2},
    "finetune": {"hidden_dim": 8, "num_layers": 1, "decoder_dims": [8], "head_dims": [8],
                 "train_ratio": 0.1, "epochs": 3},
    "eval": {"percents": [10]},
    "nas": {"hidden_dim": 8, "num_layers": 1, "decoder_dims": [8], "head_dims": [8],
            "budget": 40, "finetune_epochs": 2, "reference_count": 50},
}


@pytest.fixture
def env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "runs"))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    return tmp_path, str(cfg)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, (Path(out.strip()) if code == 0 else None), err


def runs_dir(tmp_path):
    d = tmp_path / "runs"
    return sorted(p.name for p in d.iterdir()) if d.exists() else []


def test_full_chain(env, capsys):
    tmp, cfg = env
    code, gen, _ = run(["generate", "--config", cfg], capsys)
    assert code == 0 and gen.name.endswith("-seed5-generate")
    assert json.loads((gen / "config.json").read_text())["seed"] == 5
    code, sur, _ = run(["surrogate", "--config", cfg, "--dataset", str(gen / "dataset.jsonl"), "--jobs", "2"], capsys)
    assert code == 0
    assert (sur / "surrogates.csv").read_text().startswith("# seed=5\nid,s0,")
    ds = str(sur / "dataset.jsonl")
    code, pre, _ = run(["pretrain", "--config", cfg, "--dataset", ds], capsys)
    assert code == 0 and (pre / "pretrain_loss.csv").exists()
    code, fin, _ = run(["finetune", "--config", cfg, "--dataset", ds, "--checkpoint", str(pre / "checkpoint.json")], capsys)
    assert code == 0
    ckpt = str(fin / "checkpoint.json")
    assert json.loads(Path(ckpt).read_text())["header"]["meta"]["seed"] == 5
    code, ev, _ = run(["eval", "--config", cfg, "--dataset", ds, "--checkpoint", ckpt], capsys)
    report = json.loads((ev / "eval.json").read_text())
    assert code == 0 and report["meta"]["seed"] == 5 and report["n"] == 30
    code, pca, _ = run(["pca", "--config", cfg, "--dataset", ds], capsys)
    assert code == 0 and (pca / "pca_points.csv").read_text().splitlines()[1] == "id,x,y,truth_performance"
    code, pca2, _ = run(["pca", "--config", cfg, "--dataset", ds, "--checkpoint", ckpt], capsys)
    assert code == 0
    code, nas, _ = run(["nas", "--config", cfg, "--checkpoint", ckpt], capsys)
    lines = (nas / "nas_trace.csv").read_text().splitlines()
    assert code == 0 and "# seed=5" in lines and "round,pool_size,best,regret" in lines


def test_baseline_finetune_needs_no_checkpoint(env, capsys):
    tmp, cfg = env
    _, gen, _ = run(["generate", "--config", cfg], capsys)
    code, fin, _ = run(["finetune", "--config", cfg, "--dataset", str(gen / "dataset.jsonl"), "--baseline"], capsys)
    assert code == 0
    assert json.loads((fin / "checkpoint.json").read_text())["header"]["meta"]["baseline"] is True


def test_eval_with_perfect_predictions(env, capsys):
    tmp, cfg = env
    _, gen, _ = run(["generate", "--config", cfg], capsys)
    ds = gen / "dataset.jsonl"
    rows = [json.loads(line) for line in ds.read_text().splitlines()[1:]]
    preds = tmp / "pred.csv"
    preds.write_text("id,prediction\n" + "".join(f"{r['id']},{r['performance']!r}\n" for r in rows))
    code, ev, _ = run(["eval", "--config", cfg, "--dataset", str(ds), "--predictions", str(preds)], capsys)
    assert code == 0
    doc = json.loads((ev / "eval.json").read_text())
    assert doc["kendall_tau"] == 1.0 and doc["precision_at"] == {"10": 1.0}


def test_missing_dataset_is_config_error_without_outputs(env, capsys):
    tmp, cfg = env
    code, _, err = run(["surrogate", "--config", cfg, "--dataset", str(tmp / "nope.jsonl")], capsys)
    assert code == 2 and "ConfigError" in err
    code, _, _ = run(["eval", "--config", cfg], capsys)
    assert code == 2
    assert runs_dir(tmp) == []


def test_unknown_keys_rejected(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "runs"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"generate": {"cuont": 3}}))
    code, _, err = run(["generate", "--config", str(bad)], capsys)
    assert code == 2 and "cuont" in err
    bad.write_text(json.dumps({"train": {}}))
    assert run(["generate", "--config", str(bad)], capsys)[0] == 2
    assert runs_dir(tmp_path) == []


def test_seed_resolution_order(env, capsys):
    tmp, cfg = env
    assert cli.resolve_seed(None, {}) == 97
    assert cli.resolve_seed(None, {"seed": 4}) == 4
    assert cli.resolve_seed(8, {"seed": 4}) == 8
    code, out, _ = run(["generate", "--config", cfg, "--seed", "11"], capsys)
    assert out.name.endswith("-seed11-generate")
    header = json.loads((out / "dataset.jsonl").read_text().splitlines()[0])
    assert header["provenance"]["seed"] == 11


def test_schema_error_exit_code(env, capsys):
    tmp, cfg = env
    broken = tmp / "broken.jsonl"
    broken.write_text('{"vocab": ["input"]}\n{not json}\n')
    code, _, err = run(["pca", "--config", cfg, "--dataset", str(broken)], capsys)
    assert code == 4 and "line 2" in err


def test_identical_runs_are_byte_identical(env, capsys):
    tmp, cfg = env
    _, a, _ = run(["pipeline", "--config", cfg], capsys)
    _, b, _ = run(["pipeline", "--config", cfg], capsys)
    assert a != b
    for name in ("dataset.jsonl", "checkpoint.json", "eval.json", "predictions.csv", "pretrain_loss.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_inputs_are_not_modified(env, capsys):
    tmp, cfg = env
    _, gen, _ = run(["generate", "--config", cfg], capsys)
    before = (gen / "dataset.jsonl").read_bytes()
    run(["surrogate", "--config", cfg, "--dataset", str(gen / "dataset.jsonl")], capsys)
    assert (gen / "dataset.jsonl").read_bytes() == before


def test_out_flag_overrides_env(env, capsys):
    tmp, cfg = env
    code, out, _ = run(["generate", "--config", cfg, "--out", str(tmp / "elsewhere")], capsys)
    assert code == 0 and out.parent == tmp / "elsewhere"


def test_console_help_lists_config_keys():
    proc = subprocess.run([sys.executable, "-m", "fgp.cli", "nas", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "reference_count" in proc.stdout and "--predictor" in proc.stdout


def test_bundled_smoke_config_loads():
    doc = cli.load_config("smoke")
    assert doc["seed"] == 97
    for section in cli.PIPELINE:
        cli.resolve_section(section, doc, {})
