import json

import pytest

from logsv_brw.cli import EXIT_ERROR, EXIT_OK, ConfigError, main, parse_config
from logsv_brw.tail_model import Regime


def _write(tmp_path, text):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


def test_defaults():
    cfg = parse_config(kind="simulate", seed=1)
    assert cfg.delta == 0.1 and cfg.T == 10.0 and cfg.K == 0.0
    assert cfg.displacement.regime is Regime.SUBLOG
    assert "threads" not in cfg.echo["experiment"]


def test_config_file_and_overrides(tmp_path):
    path = _write(tmp_path, "[experiment]\nkind = normalize\nseed = 4\nn = 9\n"
                            "[offspring]\nfamily = poisson\nlam = 3\n"
                            "[displacement]\nfamily = lognormal\n")
    cfg = parse_config(path, ["normalization.delta=0.2"])
    assert (cfg.kind, cfg.seed, cfg.n, cfg.delta) == ("normalize", 4, 9, 0.2)
    assert cfg.offspring.mean == pytest.approx(3.0)
    assert cfg.displacement.regime is Regime.SUPLOG


def test_regime_mismatch():
    with pytest.raises(ConfigError) as exc:
        parse_config(kind="simulate", seed=1, overrides=["displacement.regime=suplog"])
    assert exc.value.codes == ["E102"]


def test_seed_required():
    with pytest.raises(ConfigError) as exc:
        parse_config(kind="simulate")
    assert "E103" in exc.value.codes


def test_unknown_family():
    with pytest.raises(ConfigError) as exc:
        parse_config(kind="simulate", seed=1, overrides=["offspring.family=binomial"])
    assert exc.value.codes == ["E101"]


def test_out_of_scope():
    with pytest.raises(ConfigError) as exc:
        parse_config(kind="simulate", seed=1, overrides=["displacement.beta=1"])
    assert exc.value.codes == ["E106"]


def test_all_violations_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config(kind="bogus", overrides=["offspring.family=binomial", "experiment.R=many"])
    assert set(exc.value.codes) == {"E101", "E103", "E104", "E105"}


def test_main_prints_codes(capsys):
    assert main(["simulate"]) == EXIT_ERROR
    assert "E103" in capsys.readouterr().err


def test_simulate_run(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--seed", "3", "--out", str(out), "--override", "experiment.n=8",
                 "--override", "experiment.R=20"])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "pass" and report["flags"]["identity"]
    lines = (out / "simulate_seed3_snapshots.jsonl").read_text().splitlines()
    assert len(lines) == 20 and json.loads(lines[0])["replicate"] == 0
    assert (out / "manifest.txt").read_text().count("sha256:") == 3


def test_cap_exceeded_exit_one(tmp_path):
    out = tmp_path / "cap"
    code = main(["simulate", "--seed", "3", "--out", str(out), "--override", "experiment.n=12",
                 "--override", "experiment.R=2", "--override", "experiment.node_cap=100"])
    assert code == EXIT_ERROR
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "error" and "node cap" in report["error"]
    assert (out / "manifest.txt").exists()


def test_threads_do_not_change_artifacts(tmp_path):
    manifests = []
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        assert main(["simulate", "--seed", "8", "--out", str(out), "--threads", str(threads),
                     "--override", "experiment.n=8", "--override", "experiment.R=12"]) == EXIT_OK
        manifests.append((out / "manifest.txt").read_text())
    assert manifests[0] == manifests[1]


def test_normalize_suplog(tmp_path):
    out = tmp_path / "norm"
    assert main(["normalize", "--seed", "0", "--out", str(out), "--override", "displacement.family=lognormal",
                 "--override", "experiment.ns=10,100,1000"]) == EXIT_OK
    rows = (out / "normalize_seed0_norms.csv").read_text().splitlines()
    assert rows[0] == "n,b_n,a_n,y_n,z_n,x_n" and len(rows) == 4


def test_verify_gw_and_report(tmp_path):
    out = tmp_path / "runs"
    assert main(["verify-gw", "--seed", "12345", "--out", str(out / "gw"),
                 "--override", "offspring.family=geometric", "--override", "offspring.mean=2",
                 "--override", "verify.gw_samples=20000", "--override", "verify.w_samples=2000"]) == EXIT_OK
    assert main(["report", "--seed", "0", "--out", str(out)]) == EXIT_OK
    table = (out / "report_seed0_table.csv").read_text().splitlines()
    assert table[1].startswith("gw,verify-gw,12345,pass")
