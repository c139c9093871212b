import json
from pathlib import Path

import numpy as np
import pytest

from rewash.harness.cli import main

from test_harness import mechanics_config


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("cli")
    cfg = mechanics_config(workdir)
    cfg_path = workdir / "config.json"
    cfg.save(cfg_path)
    assert main(["train-all", "--config", str(cfg_path)]) == 0
    return workdir, cfg_path


def test_make_corpus(tmp_path, capsys) -> None:
    rc = main(["make-corpus", "--out", str(tmp_path / "c"), "--n", "3", "--resolution", "32"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_images"] == 3
    assert len(list((tmp_path / "c").glob("*.png"))) == 3


def test_train_stage_reports_reuse(cli_workspace, capsys) -> None:
    workdir, cfg_path = cli_workspace
    assert main(["train-codec", "--config", str(cfg_path)]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["reused"] is True


def test_embed_writes_pngs_and_manifest(cli_workspace, tmp_path, capsys) -> None:
    workdir, cfg_path = cli_workspace
    corpus = workdir / "corpus"
    out = tmp_path / "marked"
    rc = main([
        "embed", "--config", str(cfg_path), "--scheme", "dwtdctsvd",
        "--input", str(corpus), "--out", str(out),
    ])
    assert rc == 0
    pngs = list(out.glob("*.png"))
    assert len(pngs) == 24
    manifest = json.loads((out / "embed_manifest.json").read_text())
    assert manifest["scheme"] == "dwtdctsvd"
    assert "payload" in manifest


def test_attack_writes_pngs_and_records(cli_workspace, tmp_path, capsys) -> None:
    workdir, cfg_path = cli_workspace
    corpus = workdir / "corpus"
    marked = tmp_path / "marked"
    main([
        "embed", "--config", str(cfg_path), "--scheme", "dwtdctsvd",
        "--input", str(corpus), "--out", str(marked),
    ])
    capsys.readouterr()
    out = tmp_path / "attacked"
    rc = main([
        "attack", "--config", str(cfg_path), "--attack", "regen", "--t-star", "10",
        "--scheme", "dwtdctsvd", "--input", str(marked), "--out", str(out),
        "--dump-edges",
    ])
    assert rc == 0
    assert len(list(out.glob("img_*.png"))) >= 24  # attacked + edge dumps
    record = json.loads(next(iter(sorted(out.glob("*.json")))).read_text())
    assert record["attack"] == "regen"
    assert record["t_star"] == 10
    assert "seed" in record and "score_after" in record
    assert len(list(out.glob("*_edges.png"))) == 24


def test_eval_and_report(cli_workspace, tmp_path, capsys) -> None:
    workdir, cfg_path = cli_workspace
    out = tmp_path / "eval"
    rc = main(["eval", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 15
    assert (out / "metrics.csv").exists()
    rc = main(["report", "--run", str(out)])
    assert rc == 0
    plots = json.loads(capsys.readouterr().out)
    assert all(Path(p).exists() for p in plots)


def test_sweep_subcommand(cli_workspace, tmp_path, capsys) -> None:
    workdir, cfg_path = cli_workspace
    out = tmp_path / "sweep"
    rc = main([
        "sweep", "--config", str(cfg_path), "--grid", "10,30", "--out", str(out),
    ])
    assert rc == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    # 3 schemes x (regen grid 2 + ctrl_regen_plus grid 2)
    assert len(lines) == 1 + 3 * 4


def test_error_is_machine_readable(tmp_path, capsys) -> None:
    rc = main(["eval", "--config", str(tmp_path / "missing.json")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"
    assert "missing.json" in err["message"]
