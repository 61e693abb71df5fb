"""Command line behavior and exit codes."""

import json
import subprocess
import sys

import pytest

from conftest import SAMPLE_TEXTS
from embed_exporter.cli import main, read_texts_dir

from iknet.dataset import load_keyword_jsonl


def write_day_files(root):
    days = ["2021-03-01", "2021-03-02", "2021-03-03"]
    for day, text in zip(days, SAMPLE_TEXTS):
        (root / f"{day}.txt").write_text(text + "\n\n" + "Second article for " + day + ".\n")
    return days


def test_export_run(tmp_path, capsys):
    days = write_day_files(tmp_path)
    out = tmp_path / "kw.jsonl"
    rc = main(["--texts", str(tmp_path), "--out", str(out), "--model-id", "stub:5:16", "--n", "6"])
    assert rc == 0
    loaded = load_keyword_jsonl(out)
    assert sorted(loaded) == days
    assert all(articles == 2 for articles, _ in loaded.values())
    manifest = json.loads((tmp_path / "kw.jsonl.manifest.json").read_text())
    assert manifest["keywords_per_day"] == 6
    assert str(out) in capsys.readouterr().out


def test_blank_day_file_is_an_empty_day(tmp_path):
    write_day_files(tmp_path)
    (tmp_path / "2021-03-04.txt").write_text("\n  \n")
    out = tmp_path / "kw.jsonl"
    assert main(["--texts", str(tmp_path), "--out", str(out), "--model-id", "stub:5"]) == 0
    record = json.loads(out.read_text().splitlines()[-1])
    assert record == {"date": "2021-03-04", "articles": 0, "keywords": []}


def test_missing_texts_dir_exits_2(tmp_path, capsys):
    rc = main(
        ["--texts", str(tmp_path / "absent"), "--out", str(tmp_path / "kw.jsonl"),
         "--model-id", "stub:5"]
    )
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_bad_file_name_exits_3(tmp_path, capsys):
    (tmp_path / "notes.txt").write_text("Fed raises rates.\n")
    rc = main(["--texts", str(tmp_path), "--out", str(tmp_path / "kw.jsonl"),
               "--model-id", "stub:5"])
    assert rc == 3
    assert "YYYY-MM-DD" in capsys.readouterr().err


def test_dir_without_text_files_exits_3(tmp_path):
    (tmp_path / "README.md").write_text("nothing here\n")
    rc = main(["--texts", str(tmp_path), "--out", str(tmp_path / "kw.jsonl"),
               "--model-id", "stub:5"])
    assert rc == 3


def test_bad_stub_id_exits_3(tmp_path):
    write_day_files(tmp_path)
    rc = main(["--texts", str(tmp_path), "--out", str(tmp_path / "kw.jsonl"),
               "--model-id", "stub:bad"])
    assert rc == 3


def test_read_texts_dir_skips_non_txt(tmp_path):
    write_day_files(tmp_path)
    (tmp_path / "kw.jsonl").write_text("{}\n")
    texts = read_texts_dir(str(tmp_path))
    assert len(texts) == 3


def test_console_script_help():
    proc = subprocess.run(
        ["embed-export", "--help"], capture_output=True, text=True, timeout=60
    )
    assert proc.returncode == 0
    assert "--model-id" in proc.stdout


@pytest.mark.skipif(sys.platform == "win32", reason="posix paths in assertions")
def test_module_invocation(tmp_path):
    write_day_files(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "embed_exporter.cli", "--texts", str(tmp_path),
         "--out", str(tmp_path / "kw.jsonl"), "--model-id", "stub:3"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "kw.jsonl.manifest.json").exists()
