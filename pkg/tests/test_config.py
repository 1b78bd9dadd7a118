import pytest

from diffuir.config import dump_config, load_config, parse_config
from diffuir.errors import ConfigError, MissingFileError
from diffuir.training import RunConfig


def test_defaults_and_sections():
    cfg = parse_config("""
# desk run
[schedule]
T = 20
delta_bar_T = 0.5   # trailing comment

[model]
multipliers = 1, 2, 2

[data]
task_weights = derain:1.0
image_size = 16
train.iterations = 7
""")
    assert cfg.T == 20 and cfg.delta_bar_T == 0.5 and cfg.multipliers == (1, 2, 2)
    assert cfg.iterations == 7 and cfg.data.image_size == 16
    assert cfg.data.task_weights["derain"] == 1.0 and cfg.data.task_weights["dehaze"] == 0.0
    assert parse_config("").to_dict() == RunConfig().to_dict()


@pytest.mark.parametrize("text,line", [
    ("[schedule]\nT = 5\nfoo = 1\n", ":3:"),
    ("[nope]\n", ":1:"),
    ("T = 5\n", ":1:"),
    ("[train]\n\nflips = maybe\n", ":3:"),
    ("[optim]\nlr 0.1\n", ":2:"),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=line):
        parse_config(text, "run.cfg")


def test_overrides_and_value_validation():
    cfg = parse_config("[optim]\nlr = 0.1\n", overrides=["optim.lr=0.2", "train.seed = 4"])
    assert cfg.lr == 0.2 and cfg.seed == 4
    with pytest.raises(ConfigError, match="--set#1"):
        parse_config("", overrides=["optim.rate=1"])
    with pytest.raises(ConfigError):
        parse_config("[optim]\nlr = -1\n")
    with pytest.raises(ConfigError):
        parse_config("[train]\nablation_mode = everything\n")


def test_dump_round_trip(tmp_path):
    cfg = parse_config("[schedule]\nT = 10\n[train]\nflips = false\nablation_mode = no_sdt\n")
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p).to_dict() == cfg.to_dict()
    with pytest.raises(MissingFileError):
        load_config(tmp_path / "missing.cfg")
