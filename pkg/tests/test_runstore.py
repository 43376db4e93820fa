from __future__ import annotations

import pytest

from greenrec.errors import MalformedLine
from greenrec.runstore import RunStore, config_hash, default_run_dir
from greenrec.synthetic import demo_mock_script, make_catalog, make_sessions


def test_append_and_read(tmp_path):
    store = RunStore(tmp_path / "run")
    store.append_jsonl("log.jsonl", [{"a": 1}])
    store.append_jsonl("log.jsonl", [{"a": 2}, {"a": 3}])
    assert store.read_jsonl("log.jsonl") == [{"a": 1}, {"a": 2}, {"a": 3}]
    assert store.read_jsonl("missing.jsonl") == []


def test_torn_last_line_is_dropped(tmp_path):
    store = RunStore(tmp_path)
    store.path("log.jsonl").write_text('{"a": 1}\n{"a": 2')
    assert store.read_jsonl("log.jsonl") == [{"a": 1}]
    # complete JSON but no newline: the write was still interrupted
    store.path("log.jsonl").write_text('{"a": 1}\n{"a": 2}')
    assert store.read_jsonl("log.jsonl") == [{"a": 1}]


def test_corruption_in_the_middle_is_an_error(tmp_path):
    store = RunStore(tmp_path)
    store.path("log.jsonl").write_text('{"a": 1}\n{"a": \n{"a": 3}\n')
    with pytest.raises(MalformedLine) as exc:
        store.read_jsonl("log.jsonl")
    assert exc.value.line_no == 2


def test_atomic_writes(tmp_path):
    store = RunStore(tmp_path)
    store.write_json("r.json", {"x": [1, 2]})
    store.rewrite_jsonl("l.jsonl", [{"b": 1}])
    assert store.read_json("r.json") == {"x": [1, 2]}
    assert store.path("l.jsonl").read_text() == '{"b": 1}\n'
    assert not list(tmp_path.glob("*.tmp"))


def test_run_dir_naming(tmp_path):
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert len(config_hash({})) == 10
    assert default_run_dir(tmp_path, "abc").name.endswith("-abc")


def test_synthetic_data_is_seeded():
    a, b = make_catalog(60, seed=1), make_catalog(60, seed=1)
    assert a.items == b.items and len(a) == 60
    assert any(item.sustainable for item in a)
    assert make_sessions(a, 10, seed=2) == make_sessions(b, 10, seed=2)
    script = demo_mock_script(20)
    assert set(script["tags"]) == {"evaluate", "infer_reason", "augment"}
