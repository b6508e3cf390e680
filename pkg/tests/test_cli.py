import csv
import json
import math

import pytest

from mobcurriculum.cli import main
from mobcurriculum.config import ConfigError, PipelineConfig
from mobcurriculum.core import read_trajectories
from mobcurriculum.entropy import normalized_entropy, symbolize
from mobcurriculum.synth import DESK_GRID, DESK_TIME


def tiny_config(tmp_path, **kw):
    cfg = PipelineConfig.desk()
    d = cfg.to_dict()
    d["synth"]["num_users"] = 30
    d["stages"] = [dict(s, epochs=1) for s in d["stages"]]
    d["finetune_epochs"] = 1
    d["paths"]["output_dir"] = str(tmp_path / "runs")
    d.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return path


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_config_roundtrip_lossless():
    for cfg in (PipelineConfig(), PipelineConfig.desk(seed=7)):
        again = PipelineConfig.from_json(cfg.to_json())
        assert again == cfg and again.to_json() == cfg.to_json()
    assert math.isinf(PipelineConfig.from_json(PipelineConfig().to_json()).stages[-1].entropy_upper)


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError, match="unknown config key"):
        PipelineConfig.from_dict({"sed": 1})
    with pytest.raises(ConfigError, match="'model'"):
        PipelineConfig.from_dict({"model": {"embed_dim": 32, "num_heads": 3}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"observe_days": 80})
    with pytest.raises(ConfigError, match="JSON"):
        PipelineConfig.from_json("{nope")


def test_digest_ignores_output_dir_and_env_seed(monkeypatch):
    a = PipelineConfig.desk()
    b = PipelineConfig.from_dict(dict(a.to_dict(), paths={"output_dir": "elsewhere"}))
    assert a.digest() == b.digest()
    monkeypatch.setenv("MOBCURRICULUM_SEED", "9")
    assert a.with_env_overrides().seed == 9 and a.with_env_overrides().digest() != a.digest()


def test_fano_endpoint(capsys):
    assert main(["fano", "--h", "0", "--q", "400"]) == 0
    assert capsys.readouterr().out.startswith("phi=1.0 ")


def test_usage_errors_are_one_line(capsys):
    assert main(["bogus"]) == 2
    assert error_line(capsys).startswith("error code=2 type=UsageError message=")
    assert main(["fano", "--h", "x", "--q", "4"]) == 2
    error_line(capsys)


def test_missing_file_is_data_error(tmp_path, capsys):
    assert main(["entropy", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 3
    line = error_line(capsys)
    assert line.startswith("error code=3 ")
    assert "none.csv" in json.loads(line.split("message=", 1)[1])


def test_bad_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"width": 0}}')
    assert main(["curriculum", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "code=2 type=ConfigError" in error_line(capsys)


def test_malformed_csv_is_data_error(tmp_path, capsys):
    data = tmp_path / "t.csv"
    data.write_text("uid,d,t,x,y\n1,0,0,0,0\n1,0,0,1,1\n")
    assert main(["ingest", "--data", str(data), "--out", str(tmp_path / "o")]) == 3
    assert "line 3" in error_line(capsys)


def test_synth_then_entropy_matches_library(tmp_path):
    cfg = tiny_config(tmp_path)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    data = tmp_path / "s" / "trajectories.csv"
    assert main(["entropy", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "e")]) == 0
    ds = read_trajectories(data, DESK_GRID, DESK_TIME)
    with open(tmp_path / "e" / "entropy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["uid"] for r in rows] == ds.uids
    for r in rows:
        assert float(r["h_norm"]) == normalized_entropy(symbolize(ds.trajectories[r["uid"]], DESK_GRID))
    hist = (tmp_path / "e" / "entropy_histogram.csv").read_text().splitlines()
    assert sum(int(line.split(",")[2]) for line in hist[1:]) == len(ds)


def test_augment_and_curriculum_commands(tmp_path):
    cfg = tiny_config(tmp_path)
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")])
    data, poi = str(tmp_path / "s" / "trajectories.csv"), str(tmp_path / "s" / "poi.csv")
    assert main(["augment", "--config", str(cfg), "--data", data, "--poi", poi, "--out", str(tmp_path / "a")]) == 0
    aug = read_trajectories(tmp_path / "a" / "trajectories.csv", DESK_GRID, DESK_TIME)
    assert len(aug) == 120
    assert (tmp_path / "a" / "poi_r.csv").exists()
    assert main(["curriculum", "--config", str(cfg), "--data", data, "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c" / "schedule.csv").read_text().splitlines()
    assert lines[0] == "order,uid,variant,stage,horizon_days,h_norm"


def test_init_config_roundtrips(tmp_path):
    out = tmp_path / "c.json"
    assert main(["init-config", "--preset", "desk", "--out", str(out)]) == 0
    assert PipelineConfig.load(out) == PipelineConfig.desk()


def test_pipeline_stages_individually(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")])
    paths = ["--data", str(tmp_path / "s" / "trajectories.csv"), "--poi", str(tmp_path / "s" / "poi.csv")]
    for cmd in ("train", "finetune", "predict", "eval"):
        assert main([cmd, "--config", str(cfg)] + paths) == 0, capsys.readouterr().err
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("run-")
    for name in ("config.json", "schedule.csv", "model.pt", "history.csv", "finetuned.pt", "predictions.csv",
                 "truth.csv", "metrics.json"):
        assert (runs[0] / name).exists(), name
    report = json.loads((runs[0] / "metrics.json").read_text())
    assert 0.0 <= report["aggregate"]["geobleu"] <= 1.0
    with open(runs[0] / "predictions.csv") as fh:
        assert next(csv.reader(fh)) == ["uid", "d", "t", "x", "y"]


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--params", "40"]) == 0
    assert "max_rel_error=" in capsys.readouterr().out
