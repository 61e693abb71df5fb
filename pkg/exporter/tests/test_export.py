"""Export behavior: schema, dedup, manifest, determinism, edge days."""

import hashlib
import json
import os
from datetime import date

import numpy as np
import pytest

from conftest import SAMPLE_TEXTS
from embed_exporter import InvalidInput, export

from iknet.dataset import load_keyword_jsonl

DAYS = [date(2021, 3, 1), date(2021, 3, 2), date(2021, 3, 3)]


def three_days():
    return {DAYS[i]: [SAMPLE_TEXTS[i]] for i in range(3)}


def test_output_loads_under_engine_validator(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    result = export(three_days(), backend=stub, n=5, out_path=out)
    loaded = load_keyword_jsonl(out)
    assert sorted(loaded) == [d.isoformat() for d in DAYS]
    for articles, ks in loaded.values():
        assert articles == 1
        assert ks.dim == stub.dim
        assert list(ks.saliencies[: ks.count]) == sorted(
            ks.saliencies[: ks.count], reverse=True
        )
    assert result.manifest.records == 3


def test_duplicate_texts_are_hashed_out(stub, tmp_path):
    text = SAMPLE_TEXTS[0]
    once = export({DAYS[0]: [text]}, backend=stub, out_path=tmp_path / "a.jsonl")
    thrice = export(
        {DAYS[0]: [text, text, text]}, backend=stub, out_path=tmp_path / "b.jsonl"
    )
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert once.manifest.file_sha256 == thrice.manifest.file_sha256
    record = json.loads((tmp_path / "b.jsonl").read_text())
    assert record["articles"] == 1


def test_distinct_texts_all_count(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    export({DAYS[0]: SAMPLE_TEXTS}, backend=stub, out_path=out)
    assert json.loads(out.read_text())["articles"] == 3


def test_empty_day_emits_zero_keyword_record(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    texts = three_days()
    texts[DAYS[1]] = []
    export(texts, backend=stub, out_path=out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines[1] == {"date": "2021-03-02", "articles": 0, "keywords": []}
    loaded = load_keyword_jsonl(out)
    articles, ks = loaded["2021-03-02"]
    assert (articles, ks.count) == (0, 0)


def test_n_beyond_vocabulary_keeps_true_count(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    export({DAYS[0]: ["Banks climb."]}, backend=stub, n=50, out_path=out)
    record = json.loads(out.read_text())
    assert [e["word"] for e in record["keywords"]] == ["banks", "climb"]
    _, ks = load_keyword_jsonl(out)["2021-03-01"]
    assert ks.count == 2


def test_manifest_describes_the_file(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    result = export(three_days(), backend=stub, n=5, out_path=out)
    manifest = json.loads(open(result.manifest_path).read())
    assert manifest == {
        "model_id": "stub:5:16",
        "revision": stub.revision,
        "dim": 16,
        "pooling": "mean-over-tokens",
        "tokenizer": stub.tokenizer_version,
        "date_start": "2021-03-01",
        "date_end": "2021-03-03",
        "records": 3,
        "keywords_per_day": 5,
        "file_sha256": hashlib.sha256(out.read_bytes()).hexdigest(),
    }
    assert result.manifest_path == str(out) + ".manifest.json"
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


def test_reruns_are_byte_identical(stub, tmp_path):
    export(three_days(), backend=stub, n=5, out_path=tmp_path / "a.jsonl")
    export(three_days(), backend=stub, n=5, out_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    a = (tmp_path / "a.jsonl.manifest.json").read_bytes()
    b = (tmp_path / "b.jsonl.manifest.json").read_bytes()
    assert a == b


def test_same_word_same_vector_across_days(stub, tmp_path):
    out = tmp_path / "kw.jsonl"
    text = "Oil rallies as supply tightens."
    export({DAYS[0]: [text], DAYS[2]: [text]}, backend=stub, out_path=out)
    first, last = [json.loads(line) for line in out.read_text().splitlines()]
    by_word = {e["word"]: e["embedding"] for e in first["keywords"]}
    for entry in last["keywords"]:
        assert entry["embedding"] == by_word[entry["word"]]
    vec = np.array(by_word["oil"])
    assert np.array_equal(vec, stub.encode_word("oil"))


def test_model_id_string_builds_the_stub(tmp_path):
    out = tmp_path / "kw.jsonl"
    result = export(three_days(), model_id="stub:5:16", out_path=out)
    assert result.manifest.model_id == "stub:5:16"
    load_keyword_jsonl(out)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(texts_by_date={}, model_id="stub:1"),
        dict(texts_by_date={DAYS[0]: ["x"]}, model_id="stub:1", n=0),
        dict(texts_by_date={"2021-03-01": ["x"]}, model_id="stub:1"),
        dict(texts_by_date={DAYS[0]: ["x"]}),
    ],
)
def test_bad_inputs_rejected(tmp_path, kwargs):
    with pytest.raises(InvalidInput):
        export(out_path=tmp_path / "kw.jsonl", **kwargs)
