import json

import pytest

from sewfield.io import SchemaError, deserialize, load_pattern, pattern_svg, save_pattern, serialize, to_dict


def test_round_trip(small_corpus):
    for p in small_corpus:
        q = deserialize(serialize(p))
        assert q == p


def test_file_round_trip(tmp_path, small_corpus):
    save_pattern(small_corpus[0], tmp_path / "p.json")
    assert load_pattern(tmp_path / "p.json") == small_corpus[0]


def test_missing_stitches_named(small_corpus):
    doc = to_dict(small_corpus[0])
    del doc["stitches"]
    with pytest.raises(SchemaError, match="stitches"):
        deserialize(json.dumps(doc))


def test_unknown_field_rejected(small_corpus):
    doc = to_dict(small_corpus[0])
    doc["panels"][0]["colour"] = "red"
    with pytest.raises(SchemaError, match="panels/0"):
        deserialize(json.dumps(doc))


def test_bad_json():
    with pytest.raises(SchemaError, match="invalid JSON"):
        deserialize("{not json")


def test_svg_has_one_group_per_panel(small_corpus):
    p = small_corpus[0]
    svg = pattern_svg(p)
    assert svg.startswith("<svg")
    assert svg.count("<circle") == sum(q.n_edges for q in p.panels)
