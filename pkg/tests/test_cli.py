import json

import pytest
import yaml

from sinaifdd.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, ExperimentConfig, load_config, main
from sinaifdd.exceptions import ConfigError
from sinaifdd.experiments import EXPERIMENTS

REFERENCE = {"scatterers": [{"cx": 0.0, "cy": 0.0, "radius": 0.4},
                            {"cx": 0.5, "cy": 0.5, "radius": 0.2}]}
VALIDATOR = {"n_rays": 20_000}


def write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_missing_radius_names_key(tmp_path, capsys):
    cfg = {"table": {"scatterers": [{"cx": 0.0, "cy": 0.0}]}}
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, cfg))
    assert err.value.key == "table.scatterers[0].radius"
    assert main(["validate", write(tmp_path, cfg)]) == EXIT_CONFIG
    assert "table.scatterers[0].radius" in capsys.readouterr().err


def test_unknown_keys(tmp_path):
    for cfg, key in (({"table": REFERENCE, "oops": 1}, "oops"),
                     ({"table": REFERENCE, "experiment": {"nope": 1}}, "experiment.nope"),
                     ({"table": REFERENCE, "validator": {"x": 1}}, "validator.x")):
        with pytest.raises(ConfigError) as err:
            load_config(write(tmp_path, cfg), "paircorr")
        assert err.value.key == key


def test_config_round_trip():
    raw = {"table": REFERENCE, "validator": VALIDATOR, "experiment": {"n_samples": 10},
           "seeds": [1, 2], "workers": 3}
    cfg = ExperimentConfig.from_dict(raw, "paircorr")
    assert cfg.to_dict() == raw
    other = ExperimentConfig.from_dict(dict(raw, workers=1), "paircorr")
    assert cfg.digest() == other.digest()


def test_every_experiment_has_a_subcommand(tmp_path):
    with pytest.raises(SystemExit):
        main(["nope", "x.yaml"])
    for name, cls in EXPERIMENTS.items():
        est = cls()
        assert est.command == name
        assert cls(**est.get_params()).get_params() == est.get_params()


def test_validate(tmp_path, capsys):
    single = {"table": {"scatterers": [{"cx": 0.0, "cy": 0.0, "radius": 0.3}]}}
    assert main(["validate", write(tmp_path, single)]) == EXIT_FAILED
    assert "InfiniteHorizonDetected" in capsys.readouterr().err
    ref = {"table": REFERENCE, "validator": VALIDATOR}
    assert main(["validate", write(tmp_path, ref), "--out", str(tmp_path / "v")]) == EXIT_OK
    report = json.loads((tmp_path / "v" / "horizon.json").read_text())
    assert report["verdict"] == "finite"


def test_sample(tmp_path):
    ref = {"table": REFERENCE, "validator": VALIDATOR}
    out = tmp_path / "s"
    assert main(["sample", write(tmp_path, ref), "--samples", "3", "--steps", "4",
                 "--out", str(out)]) == EXIT_OK
    lines = (out / "trajectories.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 5


def _run(tmp_path, name, workers):
    cfg = {"table": REFERENCE, "validator": VALIDATOR,
           "experiment": {"gap_schedule": [1, 2, 3, 4], "threshold": 0.5}, "seeds": [3]}
    out = tmp_path / name
    code = main(["-q", "paircorr", write(tmp_path, cfg), "--samples", "40000",
                 "--workers", str(workers), "--out", str(out)])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_outputs_byte_identical(tmp_path):
    code_a, a = _run(tmp_path, "a", 1)
    code_b, b = _run(tmp_path, "b", 3)
    assert code_a == code_b
    assert set(a) == {"pair.csv", "summary.json", "manifest.json"}
    assert a == b
    summary = json.loads(a["summary.json"])
    assert summary["experiment"] == "paircorr" and "checks" in summary
    assert "workers" not in summary["params"]


def test_multiple_seeds(tmp_path):
    cfg = {"table": REFERENCE, "validator": VALIDATOR,
           "experiment": {"gap_schedule": [1, 2, 3]}, "seeds": [1, 2]}
    out = tmp_path / "m"
    main(["-q", "paircorr", write(tmp_path, cfg), "--samples", "2000", "--out", str(out)])
    assert (out / "seed_1" / "pair.csv").exists() and (out / "seed_2" / "pair.csv").exists()
    assert (out / "seed_1" / "pair.csv").read_bytes() != (out / "seed_2" / "pair.csv").read_bytes()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [1, 2]


def test_experiment_needs_out(tmp_path):
    cfg = {"table": REFERENCE, "validator": VALIDATOR}
    assert main(["paircorr", write(tmp_path, cfg)]) == EXIT_CONFIG
