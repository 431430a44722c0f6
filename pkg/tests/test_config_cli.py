import math

import pytest

from fixupbench import cli
from fixupbench.config import config_from_echo, defaults, parse_config
from fixupbench.errors import ConfigError
from fixupbench.train import METRICS_COLUMNS

SMALL = """
data.n_per_class = 40
data.dim = 16
arch.width = 16
arch.num_blocks = 4
train.log_every = 5
probe.batch_size = 64
"""


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg.values == defaults()
    assert cfg.get("train", "lr") == 0.1
    assert cfg.get("init", "scheme") == "fixup"
    assert parse_config("   # only a comment\n\n").values == cfg.values


def test_values_and_comments_parse():
    cfg = parse_config("train.lr = 0.05  # smaller\nsweep.depths = 2, 4\ntrain.scalar_lr_multiplier = auto\n")
    assert cfg.get("train", "lr") == 0.05
    assert cfg.get("sweep", "depths") == (2, 4)
    assert cfg.get("train", "scalar_lr_multiplier") is None


@pytest.mark.parametrize("text,line", [
    ("train.lr = 0.1\nmodel.depth = 3\n", 2),
    ("\n\ntrain.epochs = many\n", 3),
    ("init.scheme = fixup\narch.use_batchnorm = true\n", 2),
    ("no equals sign here\n", 1),
])
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}:"):
        parse_config(text)


def test_fixup_with_batchnorm_rejected_regardless_of_order():
    with pytest.raises(ConfigError, match="batchnorm"):
        parse_config("arch.use_batchnorm = true\n")
    assert parse_config("arch.use_batchnorm = true\ninit.scheme = he\n").get("arch", "use_batchnorm")


def test_echo_round_trip():
    cfg = parse_config("train.lr = 0.03\nrun.seeds = 1, 2\nsweep.inits = fixup, bn\ntrain.mixup_alpha = 0.7\n")
    text = cli.render_csv(cfg, ("a",), [])
    assert config_from_echo(text).values == cfg.values


def test_network_spec_variants():
    cfg = parse_config("")
    fx = cfg.network_spec("fixup", 8, (64,), 10)
    assert fx.use_scalar_bias and fx.use_multiplier and not fx.use_batchnorm
    bn = cfg.network_spec("bn", 8, (64,), 10)
    assert bn.use_batchnorm and not bn.use_scalar_bias
    sq = cfg.network_spec("sqrt_half", 8, (64,), 10)
    assert sq.branch_output_scale == pytest.approx(math.sqrt(0.5))


def test_list_flag(capsys):
    assert cli.main(["verify", "--list"]) == cli.EXIT_OK
    assert set(capsys.readouterr().out.split()) == set(cli.CHECKS)
    assert cli.main(["probe", "--list"]) == cli.EXIT_OK
    assert capsys.readouterr().out.split() == list(cli.PROBES)


def test_verify_passes_on_defaults(tmp_path, capsys):
    out = tmp_path / "v.csv"
    assert cli.main(["verify", "--out", str(out)]) == cli.EXIT_OK
    cfg, header, rows = cli.read_csv(out.read_text())
    assert header == cli.VERIFY_COLUMNS
    assert cfg.values == defaults()
    assert {r[0] for r in rows} >= {"gradcheck", "theorem1", "theorem2", "branch_constraint", "update_scale"}
    assert all(r[-1] == "true" for r in rows)


def test_verify_fails_when_branches_scaled_up(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("ablation.scale_mult = 10\n")
    assert cli.main(["verify", "--config", str(conf), "--out", str(tmp_path / "o.csv")]) == cli.EXIT_FAIL
    assert "FAIL branch_constraint" in capsys.readouterr().err


def test_config_and_io_exit_codes(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("bogus.key = 1\n")
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_CONFIG
    assert "line 1" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.conf")]) == cli.EXIT_IO
    conf.write_text("data.source = idx\ndata.train_images = /nonexistent/a\n")
    assert cli.main(["train", "--config", str(conf)]) == cli.EXIT_IO


def test_train_with_zero_epochs_is_header_only(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text(SMALL + "train.epochs = 0\n")
    out = tmp_path / "t.csv"
    assert cli.main(["train", "--config", str(conf), "--out", str(out)]) == cli.EXIT_OK
    _, header, rows = cli.read_csv(out.read_text())
    assert header == tuple(METRICS_COLUMNS) and rows == []


def test_seed_flag_overrides_seeds(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text(SMALL + "run.seeds = 1, 2, 3\n")
    out = tmp_path / "t.csv"
    assert cli.main(["train", "--config", str(conf), "--seed", "5", "--out", str(out)]) == cli.EXIT_OK
    cfg, _, rows = cli.read_csv(out.read_text())
    assert cfg.get("run", "seeds") == (5,)
    assert {r[0] for r in rows} == {"run-s5"}


def test_probe_fixup_variance_is_flat():
    cfg = parse_config(SMALL)
    rows = cli.run_probe(cfg)
    var = [r[4] for r in rows if r[0] == "variance"]
    assert len(var) == 5 and len(set(var)) == 1
    assert all(r[-1] for r in rows if r[0] in ("theorem1", "theorem2"))
    assert any(r[0] == "update_scale" for r in rows)


def test_probe_curve_rows():
    rows = cli.run_probe(parse_config(SMALL + "probe.curve_epochs = 1\n"))
    curve = [r for r in rows if r[0] == "curve"]
    assert curve and all(r[-1] for r in curve)


def test_sweep_is_repeatable_and_learns():
    cfg = parse_config(SMALL + "data.n_per_class = 100\nsweep.depths = 4\nsweep.inits = fixup, bn\n")
    a, rows = cli.produce("sweep-depth", cfg)
    b, _ = cli.produce("sweep-depth", cfg)
    assert a == b
    assert [r[2] for r in rows] == ["fixup", "bn"]
    assert all(r[METRICS_COLUMNS.index("test_acc")] > 0.2 for r in rows)
