import pytest

from bbmlab.config import SCHEMA, RunConfig
from bbmlab.errors import ConfigurationError

TEXT = f"""[meta]
schema = {SCHEMA}
command = solve

[solve]
scheme = fd   # comment
times = 1, 2.5,
n = 1e6
flag = yes
bad = x1
"""


def test_values():
    c = RunConfig(TEXT)
    assert c.command == "solve"
    assert c.get_str("solve", "scheme", choices=("fd", "duhamel")) == "fd"
    assert c.get_floats("solve", "times") == [1.0, 2.5]
    assert c.get_int("solve", "n") == 1_000_000
    assert c.get_bool("solve", "flag") is True
    assert c.get_float("solve", "missing", None) is None
    assert c.get_list("solve", "times") == ["1", "2.5"]
    assert len(c.digest) == 64


def test_errors_name_key_and_line():
    c = RunConfig(TEXT)
    with pytest.raises(ConfigurationError, match=r":10: \[solve\] bad"):
        c.get_float("solve", "bad")
    with pytest.raises(ConfigurationError, match="missing key"):
        c.get_float("solve", "dz")
    with pytest.raises(ConfigurationError, match="not one of"):
        c.get_str("solve", "scheme", choices=("duhamel",))
    with pytest.raises(ConfigurationError):
        c.get_int("solve", "times")
    with pytest.raises(ConfigurationError, match="positive"):
        RunConfig(TEXT + "dz = -1\n").get_float("solve", "dz", positive=True)
    with pytest.raises(ConfigurationError, match="finite"):
        RunConfig(TEXT + "dz = inf\n").get_float("solve", "dz")
    with pytest.raises(ConfigurationError, match="section"):
        c.require_section("grid")


@pytest.mark.parametrize("text", ["[solve]\nx = 1\n", "[meta]\nschema = other/2\n", "not an ini"])
def test_schema(text):
    with pytest.raises(ConfigurationError):
        RunConfig(text)


def test_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(TEXT)
    assert RunConfig.from_file(p).source == str(p)
    with pytest.raises(ConfigurationError, match="cannot read"):
        RunConfig.from_file(tmp_path / "none.ini")
