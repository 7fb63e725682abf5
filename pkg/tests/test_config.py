import pytest

from vaelm.config import PRESETS, RunConfig, dump_config, load_config, parse_config
from vaelm.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim) == (64, 128, 32)
    tc = cfg.train_config()
    assert (tc.learning_rate, tc.patience, tc.max_decays, tc.max_epochs, tc.clip_norm) == \
        (0.5, 2, 5, 100, 5.0)
    assert tc.pretrain_max_epochs is None


def test_parse_with_comments_and_preset():
    cfg = parse_config("# run\npreset = snli\nlatent_dim = 16  # smaller\n\nswaps = 0,2\n")
    assert (cfg.embed_dim, cfg.hidden_dim) == (PRESETS["snli"]["embed_dim"], 512)
    assert cfg.latent_dim == 16
    assert cfg.swap_counts() == [0, 2]


def test_dump_round_trip(tmp_path):
    cfg = RunConfig(corpus="data/x", target_rate=4.0, clip_norm=0.0, pretrain_max_epochs=7)
    p = tmp_path / "c.txt"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg
    assert again.train_config().clip_norm is None


@pytest.mark.parametrize("text", ["nope = 1\n", "latent_dim = many\n", "preset = huge\n",
                                  "just words\n"])
def test_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_error_names_line():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("latent_dim = 4\nbogus = 1\n", "cfg")


def test_fb_anneal_flag():
    assert parse_config("fb_anneal = 1\n").fb_anneal == 1
    assert RunConfig().fb_anneal == 0
