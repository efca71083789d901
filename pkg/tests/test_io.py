import numpy as np
import pytest

from pathlets import io as pio
from pathlets.errors import ConfigError, InputError
from pathlets.spatial import Trajectory


def test_corpus_roundtrip(tmp_path):
    corpus = [
        Trajectory(units=(0, 1, 2), timestamp=3600.0),
        Trajectory(units=(5,), timestamp=None),
    ]
    path = tmp_path / "corpus.jsonl"
    pio.write_corpus(path, corpus)
    loaded = pio.read_corpus(path)
    assert [t.units for t in loaded] == [(0, 1, 2), (5,)]
    assert loaded[0].timestamp == 3600.0
    assert loaded[1].timestamp is None
    # write -> read -> write is byte identical
    path2 = tmp_path / "again.jsonl"
    pio.write_corpus(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_empty_corpus_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(InputError):
        pio.read_corpus(path)


def test_dictionary_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    D = (rng.random((12, 5)) < 0.3).astype(float)
    path = tmp_path / "dict.json"
    pio.write_dictionary(path, D)
    assert np.array_equal(pio.read_dictionary(path), D)
    path2 = tmp_path / "dict2.json"
    pio.write_dictionary(path2, pio.read_dictionary(path))
    assert path.read_bytes() == path2.read_bytes()


def test_matrix_roundtrip(tmp_path):
    M = np.random.default_rng(1).random((7, 3))
    path = tmp_path / "m.bin"
    pio.write_matrix(path, M)
    assert np.array_equal(pio.read_matrix(path), M)
    with open(path, "rb") as fh:
        header = fh.readline()
    assert b'"cols": 3' in header or b'"cols":3' in header.replace(b" ", b"")


def test_matrix_truncation_detected(tmp_path):
    path = tmp_path / "m.bin"
    pio.write_matrix(path, np.ones((2, 2)))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(InputError):
        pio.read_matrix(path)


def test_kv_config_parse_and_format():
    text = "alpha=1.5\n# comment\nbeta=2 # inline\n\ngamma=x\n"
    kv = pio.parse_kv_config(text)
    assert kv == {"alpha": "1.5", "beta": "2", "gamma": "x"}
    assert pio.format_kv_config(kv) == "alpha=1.5\nbeta=2\ngamma=x\n"
    with pytest.raises(ConfigError):
        pio.parse_kv_config("not a key value line")


def test_derive_rng_stable_and_distinct():
    a = pio.derive_rng(7, "trainer:init").random(4)
    b = pio.derive_rng(7, "trainer:init").random(4)
    c = pio.derive_rng(7, "other").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
