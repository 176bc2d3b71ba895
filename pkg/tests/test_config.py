import pytest
from hypothesis import given, strategies as st

from macyclegan import gan
from macyclegan.config import SCHEMA, Config, reference
from macyclegan.errors import ConfigError

SAMPLE = """\
# desk run
[data]
dims = 32
seed = 4
bundle0.fa = 0.7
bundle1.direction = 0, 0, 1

[model]
depth = 2
patch = 8
critic_stages = 2

[train]
mode = PLAIN_CYCLEGAN
lambda_cyc_x = 2.5   # trailing comment
steps = 10

[eval]
ablate_seeds = 4, 5
absolute_cosine = false
"""


def test_parse_typed_values():
    cfg = Config.parse(SAMPLE)
    assert cfg.get("data", "dims") == (32, 32, 32)
    assert cfg.get("train", "mode") == gan.Mode.PLAIN_CYCLEGAN
    assert cfg.get("train", "lambda_cyc_x") == 2.5
    assert cfg.get("eval", "ablate_seeds") == (4, 5)
    assert cfg.get("eval", "absolute_cosine") is False
    assert cfg.get("train", "lambda_cyc_y") == 1.0  # default
    b = cfg.bundles()
    assert b[0].fa == 0.7 and b[1].direction == (0.0, 0.0, 1.0)


def test_round_trip_is_identity():
    cfg = Config.parse(SAMPLE)
    assert Config.parse(cfg.dumps()) == cfg
    assert Config.parse(cfg.dumps(include_defaults=False)) == cfg
    assert Config.parse(Config().dumps()) == Config()


@given(st.floats(0.0, 10.0), st.integers(0, 2 ** 31), st.sampled_from(list(gan.Mode)),
       st.floats(0.0, 0.95))
def test_round_trip_property(lam, seed, mode, fa):
    cfg = Config()
    cfg.set("train", "lambda_gan_x", lam)
    cfg.set("data", "seed", seed)
    cfg.set("train", "mode", mode)
    cfg.set("data", "bundle2.fa", fa)
    back = Config.parse(cfg.dumps())
    assert back == cfg
    assert back.get("train", "lambda_gan_x") == lam


def test_unknown_key_reports_position():
    text = "[train]\nsteps = 3\n  nsteps = 4\n"
    with pytest.raises(ConfigError) as info:
        Config.parse(text)
    assert (info.value.line, info.value.column) == (3, 3)
    assert "train.nsteps" in str(info.value)


def test_unknown_section_and_bad_value():
    with pytest.raises(ConfigError) as info:
        Config.parse("[optim]\nlr = 1\n")
    assert info.value.line == 1
    with pytest.raises(ConfigError) as info:
        Config.parse("[train]\nsteps =   many\n")
    assert (info.value.line, info.value.column) == (2, 11)
    with pytest.raises(ConfigError):
        Config.parse("steps = 3\n")


def test_infeasible_fa_names_key():
    with pytest.raises(ConfigError) as info:
        Config.parse("[data]\nbundle0.fa = 1.2\n")
    assert "data.bundle0.fa" in str(info.value)
    assert info.value.line == 2


def test_train_config_constraints_are_config_errors():
    with pytest.raises(ConfigError) as info:
        Config.parse("[model]\npatch = 12\n")
    assert info.value.line == 2


def test_train_config_view():
    tc = Config.parse(SAMPLE).train_config(steps=1)
    assert tc.mode is gan.Mode.PLAIN_CYCLEGAN and tc.depth == 2 and tc.patch == 8 and tc.steps == 1
    default = Config().train_config()
    assert default == gan.TrainConfig()


def test_reference_lists_every_key():
    ref = reference()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in ref
        for key in keys:
            assert f"  {key} = " in ref
