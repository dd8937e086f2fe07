import csv
import json

import numpy as np
import pytest

from stgp.cli import main, read_manifest
from stgp.config import ConfigError, from_dict, load_config
from stgp.data import load_dataset
from stgp.model import preset


def write_config(path, body):
    path.write_text(body, encoding="utf-8")
    return path


DATA = """
[data]
counts = "sim/counts.csv"
locations = "sim/locations.csv"
population = "sim/population.csv"
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "sim.toml", """
seed = 4
[model]
preset = "model2"
[simulate]
n_locations = 3
n_weeks = 10
[simulate.truth]
len_time = 3.0
sigma_time = 0.3
len_space = 0.5
sigma_space = 0.5
bias_var = 0.2
phi = 0.2
""")
    assert main(["simulate", str(cfg), "--out", str(root / "sim")]) == 0
    return root


# ---------------------------------------------------------------- config

def test_unknown_key_named():
    with pytest.raises(ConfigError, match="lenght_time"):
        from_dict({"model": {"lenght_time": 1.0}})
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"bogus": 1})


def test_config_types_and_presets():
    with pytest.raises(ConfigError, match="chains"):
        from_dict({"sampler": {"chains": "four"}})
    with pytest.raises(ConfigError, match="model9"):
        from_dict({"model": {"preset": "model9"}})
    cfg = from_dict({"model": {"preset": "model5"}, "sampler": {"chains": 2}}, overrides={"seed": 7})
    assert cfg.spec.family == "zinb" and cfg.sampler.n_chains == 2 and cfg.sampler.seed == 7
    assert cfg.spec.hyper_names() == preset("model5").hyper_names()


def test_bad_toml_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "x.toml", "seed = = 1"))


def test_cli_unknown_key_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.toml", "[model]\nlenght_time = 2.0\n")
    assert main(["fit", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "lenght_time" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate

def test_simulate_outputs(sim_dir):
    sim = sim_dir / "sim"
    data = load_dataset(sim / "counts.csv", sim / "locations.csv", sim / "population.csv")
    assert data.n_cells == 30
    assert len(read_csv(sim / "counts.csv")) == 30
    truth = [r["parameter"] for r in read_csv(sim / "truth.csv")]
    assert truth == preset("model2").hyper_names()
    assert float(read_csv(sim / "truth.csv")[2]["value"]) == 0.5


def test_simulate_300_rows(tmp_path):
    cfg = write_config(tmp_path / "s.toml", "[simulate]\nn_locations = 10\nn_weeks = 30\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert len(read_csv(tmp_path / "s" / "counts.csv")) == 300


def test_simulate_rejects_unknown_truth(tmp_path):
    cfg = write_config(tmp_path / "s.toml", "[simulate.truth]\nlen_tiem = 1.0\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s")]) == 2


def test_manifest_refuses_other_config(sim_dir, capsys):
    other = write_config(sim_dir / "other.toml", "seed = 99\n")
    assert main(["simulate", str(other), "--out", str(sim_dir / "sim")]) == 2
    assert "config" in capsys.readouterr().err


# ---------------------------------------------------------------- fit / predict / evaluate

SHORT = DATA + """
[model]
preset = "model2"
[sampler]
chains = 2
warmup = 60
samples = 60
[forecast]
horizon = 2
draws = 100
[evaluate]
pvalue_draws = 100
loo_draws = 60
"""


def test_fit_seed_determinism(sim_dir):
    cfg = write_config(sim_dir / "short.toml", "seed = 5\n" + SHORT)
    codes = [main(["fit", str(cfg), "--out", str(sim_dir / d)]) for d in ("fa", "fb")]
    assert set(codes) <= {0, 3}
    for name in ("summary.csv", "samples.csv", "rhat.csv"):
        assert (sim_dir / "fa" / name).read_bytes() == (sim_dir / "fb" / name).read_bytes()


def test_predict_evaluate_compare(sim_dir, capsys):
    reports = []
    for p in ("model1", "model2"):
        cfg = write_config(sim_dir / f"{p}.toml", "seed = 1\n" + SHORT.replace('"model2"', f'"{p}"'))
        out = sim_dir / f"run_{p}"
        assert main(["fit", str(cfg), "--out", str(out)]) in (0, 3)
        assert main(["predict", str(cfg), "--out", str(out)]) == 0
        rows = read_csv(out / "forecast.csv")
        assert len(rows) == 3 * 2
        for r in rows:
            assert float(r["q02.5"]) <= float(r["q50"]) <= float(r["q97.5"])
        gj = json.loads((out / "forecast.geojson").read_text())
        assert len(gj["features"]) == 6
        assert main(["evaluate", str(cfg), "--out", str(out)]) == 0
        row = read_csv(out / "score_report.csv")[0]
        assert np.isfinite(float(row["looic"])) and 0 <= float(row["bayes_p"]) <= 1
        reports.append(out)
    ccfg = write_config(sim_dir / "cmp.toml", "")
    assert main(["compare", str(ccfg), "--out", str(sim_dir / "cmp"), "--runs", *map(str, reports)]) == 0
    table = read_csv(sim_dir / "cmp" / "comparison.csv")
    looic = [float(r["looic"]) for r in table]
    assert looic == sorted(looic) and {r["model"] for r in table} == {"model1", "model2"}
    assert "Freeman-Tukey" in capsys.readouterr().out


def test_predict_refuses_mismatched_fit(sim_dir):
    cfg = write_config(sim_dir / "short.toml", "seed = 5\n" + SHORT)
    # a model3 config reading the model2 fit must be refused
    other = write_config(sim_dir / "m3.toml", "seed = 5\n" + SHORT.replace('"model2"', '"model3"'))
    assert main(["fit", str(cfg), "--out", str(sim_dir / "fa")]) in (0, 3)
    assert main(["predict", str(other), "--out", str(sim_dir / "pm3"),
                 "--samples", str(sim_dir / "fa")]) == 2


@pytest.mark.slow
def test_toy_fit_converges(sim_dir):
    cfg = write_config(sim_dir / "long.toml", "seed = 11\n" + DATA + """
[model]
preset = "model2"
[sampler]
chains = 2
warmup = 500
samples = 500
[forecast]
holdout = false
""")
    out = sim_dir / "long"
    assert main(["fit", str(cfg), "--out", str(out)]) == 0
    for name in ("samples.csv", "summary.csv", "rhat.csv"):
        assert (out / name).exists()
    assert max(float(r["rhat"]) for r in read_csv(out / "rhat.csv")) < 1.1
    assert read_manifest(out)["commands"]["fit"]["converged"] is True
