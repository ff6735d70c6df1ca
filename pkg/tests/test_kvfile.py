from dataclasses import dataclass

import numpy as np
import pytest

from binpose.kvfile import ConfigError, apply_overrides, fmt, format_kv, parse_kv


@dataclass(frozen=True)
class Knobs:
    count: int = 3
    rate: float = 0.5
    span: tuple = (1.0, 2.0)
    name: str = "x"
    flag: bool = False


def test_parse_skips_comments_and_blanks():
    assert parse_kv("# hi\n\na = 1\nb=two # trailing\n") == [("a", "1"), ("b", "two")]


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_kv("just words\n")


def test_overrides_cast_by_field_type():
    k = apply_overrides(Knobs(), [("count", "7"), ("sec.rate", "0.25"), ("span", "3 4"), ("name", "y"),
                                  ("flag", "true"), ("unknown", "1")], prefix="sec")
    assert k == Knobs(7, 0.25, (3.0, 4.0), "y", True)


def test_bad_value():
    with pytest.raises(ConfigError):
        apply_overrides(Knobs(), [("count", "lots")])


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(np.array([1.5, 2.0])) == "1.5 2.0"
    assert fmt(np.float64(3.25)) == "3.25" and fmt(4) == "4" and fmt(True) == "1"
    assert format_kv([("a", 1), ("b", "z")]) == "a=1\nb=z\n"
