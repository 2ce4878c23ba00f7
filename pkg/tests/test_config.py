import pytest

from ranklsd.config import ConfigError, RunConfig, apply_seed_env


def test_default_round_trip_is_identity():
    cfg = RunConfig()
    text = cfg.to_text()
    again = RunConfig.from_text(text)
    assert again == cfg
    assert again.to_text() == text
    assert again.hash() == cfg.hash()


def test_overrides_round_trip_and_change_hash():
    cfg = RunConfig().with_overrides(optim__steps=7, loss__rank=0.5, model__levels=(16, 8))
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.optim.steps == 7 and back.loss.rank == 0.5 and back.model.levels == (16, 8)
    assert cfg.hash() != RunConfig().hash()


def test_defaults_match_loss_weights():
    lw = RunConfig().loss
    assert (lw.rank, lw.conf, lw.pos, lw.junc, lw.edge) == (1.0, 1.0, 10.0, 1.0, 1.0)


def test_partial_file_keeps_defaults_and_ignores_comments():
    cfg = RunConfig.from_text("# comment\noptim.steps = 12  # trailing\n\n")
    assert cfg.optim.steps == 12
    assert cfg.model == RunConfig().model


@pytest.mark.parametrize("text", [
    "optim.nope = 1\n",
    "nosuch.steps = 1\n",
    "optim.steps = 1\noptim.steps = 2\n",
    "optim.steps = many\n",
    "just garbage\n",
    "model.hidden_dim = 30\nmodel.heads = 4\n",
])
def test_bad_files_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_seed_env_override(monkeypatch, tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("run.seed = 3\n")
    monkeypatch.delenv("RANKLSD_SEED", raising=False)
    assert RunConfig.load(p).run.seed == 3
    monkeypatch.setenv("RANKLSD_SEED", "11")
    assert RunConfig.load(p).run.seed == 11
    assert RunConfig.load(p, apply_env=False).run.seed == 3
    monkeypatch.setenv("RANKLSD_SEED", "x")
    with pytest.raises(ConfigError):
        apply_seed_env(RunConfig())
