import pytest

from windgp.config import (TABLE1_SCENARIOS, ExperimentConfig, build_config, config_hash,
                           dump_config, flat_keys, load_config, manifest)
from windgp.dataset import SplitSpec
from windgp.errors import ConfigError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.kernels == ("rbf", "sm", "gsm")
    assert cfg.scenarios == TABLE1_SCENARIOS
    assert cfg.n_restarts == 10 and cfg.optim.learning_rate == 0.01
    assert cfg.data.rated_power == 2050.0
    assert cfg.q_for("rbf") is None and cfg.q_for("gsm") == 2


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n"
                 "data.scada_timestamp = # Date and time\n"
                 "scenarios = 10:5, 20:5:3\n"
                 "kernels = rbf, gsm\n"
                 "optim.learning_rate = 0.05\n"
                 "gsm.whiten = false\n")
    cfg = load_config(p, [("optim.learning_rate", "0.1"), ("seed", "4")])
    assert cfg.data.scada_timestamp == "# Date and time"
    assert cfg.scenarios == (SplitSpec(10, 5, 0), SplitSpec(20, 5, 3))
    assert cfg.kernels == ("rbf", "gsm")
    assert cfg.optim.learning_rate == 0.1 and cfg.seed == 4
    assert cfg.gsm.whiten is False


def test_dump_round_trip(tmp_path):
    cfg = build_config([("kernels", "sm"), ("benchmark.seeds", "3"), ("out", "x y")])
    p = tmp_path / "dump.cfg"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg and config_hash(again) == config_hash(cfg)
    assert sorted(line.split(" = ")[0] for line in dump_config(cfg).splitlines()) == sorted(flat_keys())


@pytest.mark.parametrize("pairs,key", [
    ([("nope", "1")], "nope"),
    ([("optim.nope", "1")], "optim.nope"),
    ([("optim", "1")], "optim"),
    ([("n_restarts", "ten")], "n_restarts"),
    ([("kernels", "rbf, matern")], "kernels"),
    ([("n_restarts", "0")], "n_restarts"),
    ([("forecast.selection", "worst")], "forecast.selection"),
    ([("benchmark.mode", "odd")], "benchmark.mode"),
    ([("optim.learning_rate", "-1")], "optim"),
])
def test_bad_keys_and_values(pairs, key):
    with pytest.raises(ConfigError) as exc:
        build_config(pairs)
    assert exc.value.key == key


def test_missing_and_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
    p = tmp_path / "bad.cfg"
    p.write_text("just words\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.path == str(p)


def test_manifest_hashes_inputs(tmp_path):
    f = tmp_path / "scada.csv"
    f.write_text("a\n")
    cfg = build_config([("data.scada", str(f))])
    m1 = manifest(cfg)
    assert set(m1["inputs"]) == {"scada.csv"}
    f.write_text("b\n")
    assert manifest(cfg)["manifest_sha256"] != m1["manifest_sha256"]
