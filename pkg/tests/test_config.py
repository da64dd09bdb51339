import pytest

from esa.config import Config, join_path, parse_overrides, split_path
from esa.errors import ConfigError
from esa.gauss_seq import LogSquarePenalty, ZeroPenalty
from esa.registry import registry
from esa.utils.literals import MalformedValueError, dumps, loads

CFG = """
[gauss-seq]
method = ["esa", "fa"]
n = 1024
q_ladder = (0.2, 0.4, 0.6)
criterion = "eb"
no_timing = true

[gauss-seq.upsilon]
@psi_penalty = "log-square"
scale = 0.5

[knn]
ladder = [3, 5, 10]
criterion = {"kind": "val", "alpha": 2.0}
"""


def test_split_path():
    assert split_path("gauss-seq.q_ladder.0") == ("gauss-seq", "q_ladder", 0)
    assert join_path(("a", 0, "b")) == "a.0.b"
    with pytest.raises(ValueError):
        split_path("a..b")


def test_read_cfg():
    config = Config.from_cfg_str(CFG)
    section = config["gauss-seq"]
    assert section["method"] == ["esa", "fa"]
    assert section["q_ladder"] == (0.2, 0.4, 0.6)
    assert section["no_timing"] is True
    assert section["upsilon"] == {"@psi_penalty": "log-square", "scale": 0.5}
    assert config["knn"]["criterion"] == {"kind": "val", "alpha": 2.0}


def test_malformed_values_are_collected():
    with pytest.raises(ConfigError) as excinfo:
        Config.from_cfg_str('[knn]\nladder = [3, 5\nalpha = "open\n')
    assert len(excinfo.value.raw_errors) == 2
    assert str(excinfo.value).startswith("2 validation errors")
    assert "-> knn.ladder" in str(excinfo.value)


def test_cfg_round_trip(tmp_path):
    config = Config.from_cfg_str(CFG)
    path = tmp_path / "config.cfg"
    config.to_disk(path)
    assert Config.from_disk(path) == config


def test_yaml(tmp_path):
    config = Config.from_cfg_str(CFG)
    path = tmp_path / "config.yaml"
    config.to_disk(path)
    again = Config.from_disk(path)
    assert again["gauss-seq"]["q_ladder"] == [0.2, 0.4, 0.6]
    assert again["gauss-seq"]["upsilon"]["scale"] == 0.5
    assert isinstance(again["knn"], Config)


def test_merge():
    config = Config.from_cfg_str(CFG)
    merged = config.merge({"gauss-seq.n": 64, "knn": {"ladder": [1, 2]}})
    assert merged["gauss-seq"]["n"] == 64
    assert merged["gauss-seq"]["criterion"] == "eb"
    assert merged["knn"]["ladder"] == [1, 2]
    assert config["gauss-seq"]["n"] == 1024


def test_merge_replaces_a_section_with_another_tag():
    config = Config.from_cfg_str(CFG)
    merged = config.merge({"gauss-seq": {"upsilon": {"@psi_penalty": "zero"}}})
    assert merged["gauss-seq"]["upsilon"] == {"@psi_penalty": "zero"}
    kept = config.merge({"gauss-seq": {"upsilon": {"center": 2.0}}})
    assert kept["gauss-seq"]["upsilon"]["scale"] == 0.5
    assert kept["gauss-seq"]["upsilon"]["center"] == 2.0


def test_resolve():
    config = Config.from_cfg_str(CFG)
    resolved = config.resolve()
    penalty = resolved["gauss-seq"]["upsilon"]
    assert isinstance(penalty, LogSquarePenalty)
    assert (penalty.scale, penalty.center) == (0.5, 1.0)
    zero = Config({"p": {"@psi_penalty": "zero"}}).resolve()["p"]
    assert isinstance(zero, ZeroPenalty)
    assert resolved["knn"]["ladder"] == [3, 5, 10]


def test_resolve_errors():
    with pytest.raises(ConfigError) as excinfo:
        Config({"p": {"@psi_penalty": "log-square", "scale": "big"}}).resolve()
    assert "-> p.scale" in str(excinfo.value)
    with pytest.raises(ConfigError):
        Config({"p": {"@psi_penalty": "zero", "@criterion": "aicc"}}).resolve()
    with pytest.raises(Exception, match="Available names"):
        Config({"p": {"@psi_penalty": "unknown"}}).resolve(registry)


def test_parse_overrides():
    args = ["--n", "64", "--method=esa,fa", "--no-timing", "--q-ladder", "0.1,0.5"]
    assert parse_overrides(args) == {
        "n": 64,
        "method": ["esa", "fa"],
        "no_timing": True,
        "q_ladder": [0.1, 0.5],
    }
    assert parse_overrides(["--upsilon.scale", "2"]) == {"upsilon.scale": 2}
    with pytest.raises(ConfigError):
        parse_overrides(["64"])


def test_literals():
    assert loads("0.5") == 0.5
    assert loads("-3") == -3
    assert loads("(1,)") == (1,)
    assert loads("results.csv") == "results.csv"
    assert loads("esa,fa,ms") == ["esa", "fa", "ms"]
    assert loads("[1, 2] # comment") == [1, 2]
    assert loads("Infinity") == float("inf")
    assert loads("null") is None
    with pytest.raises(MalformedValueError):
        loads("[1, 2")
    value = {"a": [1, 2.5, None], "b": (True, "x"), "c": float("-inf")}
    assert loads(dumps(value)) == value
    assert loads(dumps(0.1 + 0.2)) == 0.1 + 0.2
