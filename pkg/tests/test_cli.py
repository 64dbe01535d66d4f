import pytest

from capsde import cli
from capsde.cli import (ConfigError, load_config, parse_config_text,
                        write_csv)
from capsde.model import ExperimentConfig


def test_parse_config_text_types_and_comments():
    text = (
        "# full-line comment\n"
        "\n"
        "experiment = bau_oracle\n"
        "seed = 12   # trailing comment\n"
        "sigma = 0.25\n"
        "output_dir = runs/a\n"
    )
    values = parse_config_text(text)
    assert values == {"experiment": "bau_oracle", "seed": 12,
                      "sigma": 0.25, "output_dir": "runs/a"}
    assert isinstance(values["seed"], int)
    assert isinstance(values["sigma"], float)


def test_parse_errors_name_the_line():
    with pytest.raises(ConfigError, match="line 2.*key = value"):
        parse_config_text("experiment = x\nnot an assignment\n")
    with pytest.raises(ConfigError, match="line 2: unknown key"):
        parse_config_text("experiment = x\nwhatever = 3\n")
    with pytest.raises(ConfigError, match="line 3: duplicate key"):
        parse_config_text("experiment = x\nseed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="line 1: bad value for seed"):
        parse_config_text("seed = twelve\n")


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("experiment = toy_invariants\nseed = 3\ncap = 1.5\n")
    cfg = load_config(path)
    assert cfg.experiment == "toy_invariants"
    assert cfg.seed == 3 and cfg.cap == 1.5
    assert cfg.market().b == pytest.approx(2.0 * 1.5 / 1.0)

    (tmp_path / "empty.cfg").write_text("seed = 3\n")
    with pytest.raises(ConfigError, match="must set 'experiment'"):
        load_config(tmp_path / "empty.cfg")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_write_csv_echo_parses_back(tmp_path):
    cfg = ExperimentConfig(experiment="bau_oracle", seed=5, sigma=0.31)
    path = tmp_path / "out.csv"
    write_csv(path, cli._echo(cfg, dt=0.001, extra_diag=1.5),
              ["a", "b"], [(1.0 / 3.0, 2), (0.5, 4)])
    lines = path.read_text().splitlines()
    header = [ln[2:] for ln in lines if ln.startswith("# ")]
    config_lines = [ln for ln in header
                    if ln.split("=")[0].strip() in cli._ALL_KEYS]
    parsed = parse_config_text("\n".join(config_lines))
    assert parsed["experiment"] == "bau_oracle"
    assert parsed["seed"] == 5
    assert parsed["sigma"] == 0.31
    assert parsed["b"] == 2.5
    # diagnostics and the build stamp ride along without being config keys
    assert any(ln.startswith("extra_diag") for ln in header)
    assert any(ln.startswith("git") for ln in header)
    body = [ln for ln in lines if not ln.startswith("# ")]
    assert body[0] == "a,b"
    assert body[1].split(",")[0] == format(1.0 / 3.0, ".17g")


def test_checkset_exit_codes(capsys):
    ok = cli.CheckSet()
    ok.record("alpha", True, "fine")
    assert ok.exit_code() == 0

    bad = cli.CheckSet()
    bad.record("alpha", True, "fine")
    bad.record("beta", False, "off by 3")
    code = bad.exit_code()
    out = capsys.readouterr()
    assert code == 1
    assert "check beta: FAIL (off by 3)" in out.out
    assert "invariant failure: beta" in out.err


def test_main_list_experiments(capsys):
    assert cli.main(["--list-experiments"]) == 0
    names = capsys.readouterr().out.split()
    assert names == sorted(cli.EXPERIMENTS)
    assert "bau_oracle" in names and "dirac_mass" in names


def test_main_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["run", str(tmp_path / "nope.cfg")]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_rejects_unknown_experiment(capsys):
    assert cli.run(ExperimentConfig(experiment="nope")) == 2
    assert "unknown experiment" in capsys.readouterr().err


def test_run_rejects_invalid_market(tmp_path, capsys):
    cfg = ExperimentConfig(experiment="bau_oracle", sigma=-1.0,
                           output_dir=str(tmp_path))
    assert cli.run(cfg) == 2
    assert "invalid configuration" in capsys.readouterr().err
    cfg = ExperimentConfig(experiment="bau_oracle", seed=-1,
                           output_dir=str(tmp_path))
    assert cli.run(cfg) == 2


def test_run_invariant_failure_exits_one(tmp_path, monkeypatch):
    def failing(cfg):
        checks = cli.CheckSet()
        checks.record("stub", False, "forced")
        return checks.exit_code()

    monkeypatch.setitem(cli.EXPERIMENTS, "stub_fail", failing)
    cfg = ExperimentConfig(experiment="stub_fail", output_dir=str(tmp_path))
    assert cli.run(cfg) == 1


def test_main_applies_overrides(tmp_path, monkeypatch):
    seen = {}

    def spy(cfg):
        seen["cfg"] = cfg
        return 0

    monkeypatch.setitem(cli.EXPERIMENTS, "spy", spy)
    path = tmp_path / "c.cfg"
    path.write_text("experiment = spy\nseed = 3\n")
    out = tmp_path / "out"
    code = cli.main(["run", str(path), "--seed", "11", "--threads", "2",
                     "--output-dir", str(out)])
    assert code == 0
    assert seen["cfg"].seed == 11
    assert seen["cfg"].threads == 2
    assert seen["cfg"].output_dir == str(out)
    assert out.is_dir()


def test_bau_oracle_end_to_end_reproducible(tmp_path, capsys):
    path = tmp_path / "bau.cfg"
    path.write_text("experiment = bau_oracle\n")
    code_a = cli.main(["run", str(path), "--output-dir",
                       str(tmp_path / "a")])
    code_b = cli.main(["run", str(path), "--output-dir",
                       str(tmp_path / "b")])
    out = capsys.readouterr().out
    assert code_a == 0 and code_b == 0
    assert out.count("check bau_oracle_max_interior_error: PASS") == 2
    bytes_a = (tmp_path / "a" / "bau_oracle.csv").read_bytes()
    bytes_b = (tmp_path / "b" / "bau_oracle.csv").read_bytes()
    assert bytes_a == bytes_b
