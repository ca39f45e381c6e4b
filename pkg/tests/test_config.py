"""Flat key=value config parsing and validation."""

import pytest

from splitdrop.config import (ConfigError, parse_beta_pairs, read_config, root_seed,
                              take)


def write(tmp_path, text):
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    return p


class TestReadConfig:
    def test_basic_parse(self, tmp_path):
        p = write(tmp_path, "data.n_known = 4\nseed=9\n")
        assert read_config(p) == {"data.n_known": "4", "seed": "9"}

    def test_comments_and_blank_lines(self, tmp_path):
        p = write(tmp_path, "# full comment\n\ndata.snr_db = 10  # trailing\n")
        assert read_config(p) == {"data.snr_db": "10"}

    def test_missing_equals_rejected(self, tmp_path):
        p = write(tmp_path, "data.n_known 4\n")
        with pytest.raises(ConfigError, match="key = value"):
            read_config(p)

    def test_unknown_prefix_rejected(self, tmp_path):
        p = write(tmp_path, "daat.n_known = 4\n")
        with pytest.raises(ConfigError, match="unknown key"):
            read_config(p)

    def test_duplicate_key_rejected(self, tmp_path):
        p = write(tmp_path, "seed=1\nseed=2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            read_config(p)


class TestTake:
    DEFAULTS = {"count": 3, "rate": 0.5, "name": "x", "flag": False,
                "grid": (0.1, 0.2), "pairs": ((0.5, 0.92),)}

    def test_defaults_when_absent(self):
        assert take({}, "a.", self.DEFAULTS) == self.DEFAULTS

    def test_overrides_with_types(self):
        raw = {"a.count": "7", "a.rate": "0.25", "a.flag": "true",
               "a.grid": "0.3, 0.4, 0.5", "a.pairs": "0:1", "b.count": "9"}
        out = take(raw, "a.", self.DEFAULTS)
        assert out["count"] == 7
        assert out["rate"] == 0.25
        assert out["flag"] is True
        assert out["grid"] == (0.3, 0.4, 0.5)
        assert out["pairs"] == ((0.0, 1.0),)

    def test_other_prefixes_ignored(self):
        out = take({"b.count": "9"}, "a.", self.DEFAULTS)
        assert out["count"] == 3

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown key 'a.bogus'"):
            take({"a.bogus": "1"}, "a.", self.DEFAULTS)

    def test_bad_int_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            take({"a.count": "seven"}, "a.", self.DEFAULTS)

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            take({"a.flag": "maybe"}, "a.", self.DEFAULTS)


class TestBetaPairs:
    def test_parse_two_pairs(self):
        assert parse_beta_pairs("0.5:0.92,0:1") == ((0.5, 0.92), (0.0, 1.0))

    def test_inverted_pair_rejected(self):
        with pytest.raises(ConfigError):
            parse_beta_pairs("0.9:0.5")

    def test_equal_pair_rejected(self):
        with pytest.raises(ConfigError):
            parse_beta_pairs("0.5:0.5")

    def test_malformed_rejected(self):
        with pytest.raises(ConfigError):
            parse_beta_pairs("0.5")


class TestRootSeed:
    def test_cli_wins(self):
        assert root_seed({"seed": "3"}, 7) == 7

    def test_config_fallback(self):
        assert root_seed({"seed": "3"}, None) == 3

    def test_default_zero(self):
        assert root_seed({}, None) == 0

    def test_bad_seed_rejected(self):
        with pytest.raises(ConfigError):
            root_seed({"seed": "abc"}, None)
