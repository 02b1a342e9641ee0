import csv
import json

import numpy as np
import pytest
import yaml

from bdgstn.checkpoint import save_checkpoint
from bdgstn.cli import COMPARE_HEADER, compare_table, main
from bdgstn.data import load_dataset, save_dataset
from bdgstn.training import TrainConfig, train

from test_data import small_dataset


def write_cfg(path, body):
    path.write_text(yaml.safe_dump(body))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


SMALL_SIM = {"n_patches": 4, "days": 60, "seed": 5}


@pytest.fixture
def sim_dir(tmp_path):
    cfg = write_cfg(tmp_path / "sim.yaml", {"simulate": SMALL_SIM, "output": {"dir": "data"}})
    assert main(["simulate", "-c", cfg]) == 0
    return tmp_path / "data"


def data_section(d):
    return {"series": str(d / "series.csv"), "meta": str(d / "meta.csv"), "adjacency": str(d / "adjacency.csv")}


def test_simulate_defaults_loadable(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["simulate"]) == 0
    ds = load_dataset("runs/simulate/series.csv", "runs/simulate/meta.csv", "runs/simulate/adjacency.csv")
    assert ds.series.shape == (10, 200, 3)
    assert yaml.safe_load((tmp_path / "runs/simulate/config.yaml").read_text())["simulate"] == {}


def test_env_overrides_output(tmp_path, monkeypatch):
    monkeypatch.setenv("BDGSTN_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    cfg = write_cfg(tmp_path / "c.yaml", {"simulate": SMALL_SIM, "output": {"dir": "ignored"}})
    assert main(["simulate", "-c", cfg]) == 0
    assert (tmp_path / "elsewhere" / "series.csv").exists() and not (tmp_path / "ignored").exists()


@pytest.mark.parametrize("body,key", [
    ({"bogus": {}}, "bogus"),
    ({"train": {"epoch": 3}}, "train.epoch"),
    ({"data": {"series": "nope.csv", "meta": "nope.csv"}}, "data.series"),
    ({"ablate": {"graph_modes": ["random"]}}, "ablate.graph_modes"),
])
def test_bad_config_exit_2(tmp_path, capsys, body, key):
    cfg = write_cfg(tmp_path / "c.yaml", {**body, "output": {"dir": str(tmp_path / "o")}})
    cmd = "ablate" if "ablate" in body else "train"
    assert main([cmd, "-c", cfg]) == 2
    err = capsys.readouterr().err.strip()
    assert key in err and len(err.splitlines()) == 1


def test_data_violation_exit_3(tmp_path, sim_dir, capsys):
    lines = (sim_dir / "series.csv").read_text().splitlines()
    (sim_dir / "series.csv").write_text("\n".join(lines[:5] + lines[9:]) + "\n")  # drop a day
    cfg = write_cfg(tmp_path / "c.yaml", {"data": data_section(sim_dir), "output": {"dir": str(tmp_path / "o")}})
    assert main(["train", "-c", cfg]) == 3
    assert "missing date" in capsys.readouterr().err


def test_train_outputs_and_reproducible(tmp_path, sim_dir):
    outs = []
    for name in ("a", "b"):
        cfg = write_cfg(tmp_path / f"{name}.yaml", {"data": data_section(sim_dir), "train": {"epochs": 3},
                                                     "output": {"dir": str(tmp_path / "run")}})
        assert main(["train", "-c", cfg]) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / "run").rglob("*") if p.is_file()})
    assert outs[0] == outs[1]
    assert {"params.bin", "manifest.json", "history.csv", "metrics.json", "config.yaml"} <= set(outs[0])
    rows = read_csv(tmp_path / "run" / "history.csv")
    assert rows[0][:3] == ["epoch", "train_loss", "val_mae"] and len(rows) == 4
    doc = json.loads((tmp_path / "run" / "metrics.json").read_text())
    for split in ("train", "val", "test"):
        assert set(doc[split]["overall"]) >= {"mae", "rmse", "mape", "pcc", "ccc"}
        assert len(doc[split]["per_step"]) == 5
    assert {"persistence", "sir_fit"} == set(doc["baselines"]["test"])


def test_eval_perfect_oracle(tmp_path):
    ds = small_dataset(N=3, T=60)
    ds.series[:, :, 1] = 9.0
    ds.series[:, :, 0] = ds.population[:, None] - 9.0 - ds.series[:, :, 2]
    paths = save_dataset(ds, tmp_path / "data")
    res = train(ds, TrainConfig(epochs=1))
    for p in res.params.values():
        p.data = np.zeros_like(p.data)
    save_checkpoint(res, tmp_path / "ckpt")
    cfg = write_cfg(tmp_path / "e.yaml", {
        "data": {"series": paths["series"], "meta": paths["meta"]},
        "eval": {"checkpoint": str(tmp_path / "ckpt"), "split": "train"},
        "output": {"dir": str(tmp_path / "ev")}})
    assert main(["eval", "-c", cfg]) == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert doc["train"]["overall"]["mae"] == 0.0
    rows = read_csv(tmp_path / "ev" / "forecast.csv")
    assert rows[0] == ["patch", "horizon", "predicted", "actual"]
    assert len(rows) == 1 + 3 * 5
    assert all(float(r[2]) == float(r[3]) == 9.0 for r in rows[1:])


def test_ablate_reports_graph_and_info(tmp_path, sim_dir):
    cfg = write_cfg(tmp_path / "a.yaml", {"data": data_section(sim_dir), "train": {"epochs": 2},
                                          "output": {"dir": str(tmp_path / "abl")}})
    assert main(["ablate", "-c", cfg]) == 0
    metric_files = sorted(p.parent.name for p in (tmp_path / "abl").glob("*/metrics.json"))
    assert len(metric_files) == 11 and sum(m.startswith("graph-") for m in metric_files) == 7
    rows = read_csv(tmp_path / "abl" / "comparison.csv")
    assert rows[0][:4] == ["variant", "label", "graph_mode", "ablation"] and len(rows) == 12

    ck = str(tmp_path / "abl" / "graph-fused" / "checkpoint")
    rcfg = write_cfg(tmp_path / "r.yaml", {"data": data_section(sim_dir), "report": {"checkpoint": ck},
                                           "output": {"dir": str(tmp_path / "rep")}})
    assert main(["graph-report", "-c", rcfg]) == 0
    for name in ("a_back", "a_temp", "a_dyn"):
        rows = read_csv(tmp_path / "rep" / f"{name}.csv")
        assert rows[0] == ["src", "dst", "weight"] and len(rows) == 17
        w = np.array([float(r[2]) for r in rows[1:]]).reshape(4, 4)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert main(["info-report", "-c", rcfg]) == 0
    info = json.loads((tmp_path / "rep" / "info_report.json").read_text())
    assert info["all_finite"] and {"h_back", "h_time", "d_back", "d_time", "i_back", "i_time"} <= set(info)

    ccfg = write_cfg(tmp_path / "c.yaml", {"compare": {"runs": [str(tmp_path / "abl" / m) for m in metric_files]},
                                           "output": {"dir": str(tmp_path / "cmp")}})
    assert main(["compare", "-c", ccfg]) == 0
    rows = read_csv(tmp_path / "cmp" / "comparison.csv")
    maes = [float(r[1]) for r in rows[1:]]
    assert rows[0] == COMPARE_HEADER and len(rows) == 12 and maes == sorted(maes)


def _run(tmp_path, name, mae):
    d = tmp_path / name
    d.mkdir()
    block = {"mae": mae, "rmse": mae, "mape": 1.0, "pcc": 0.5, "ccc": 0.4}
    (d / "metrics.json").write_text(json.dumps({"test": {"overall": block}, "config": {"seed": 1}}))
    return d


def test_compare_table_cases(tmp_path):
    rows, skipped = compare_table([_run(tmp_path, "one", 3.0)])
    assert len(rows) == 1 and not skipped
    b, a = _run(tmp_path, "b", 9.0), _run(tmp_path, "a", 2.0)
    with pytest.warns(UserWarning):
        rows, skipped = compare_table([b, a, tmp_path / "missing"])
    assert [r[0] for r in rows] == [str(a), str(b)] and skipped == [str(tmp_path / "missing")]
    assert compare_table([]) == ([], [])


def test_compare_empty_writes_header(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"output": {"dir": str(tmp_path / "cmp")}})
    assert main(["compare", "-c", cfg]) == 0
    assert read_csv(tmp_path / "cmp" / "comparison.csv") == [COMPARE_HEADER]
