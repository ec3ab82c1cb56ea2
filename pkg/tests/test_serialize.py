import json

import numpy as np

from pbrigidity.serialize import dumps, sha256_file, write_csv


def test_floats_use_seventeen_digits():
    text = dumps({"a": 0.1, "b": 1.0, "c": np.float64(2) / 3, "n": np.int64(3), "ok": np.bool_(True)})
    assert '"a": 0.10000000000000001' in text
    assert '"b": 1.0' in text
    back = json.loads(text)
    assert back["c"] == 2 / 3 and back["n"] == 3 and back["ok"] is True


def test_nested_and_nonfinite():
    text = dumps({"x": [1.5, [2, 3]], "y": {}, "z": float("inf"), "w": None})
    back = json.loads(text)
    assert back == {"x": [1.5, [2, 3]], "y": {}, "z": float("inf"), "w": None}


def test_csv_and_digest(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [(1, 0.1), ("s", np.float64(0.25))])
    assert p.read_text() == "a,b\n1,0.10000000000000001\ns,0.25\n"
    assert len(sha256_file(p)) == 64
