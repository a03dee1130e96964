import json

import numpy as np
import pytest

from hinre import cli
from hinre import train as tr
from hinre.checkpoint import CheckpointMismatch, load_checkpoint, read_manifest, save_checkpoint
from hinre.metrics import PredictionRecord
from hinre.plotting import plot_ablation, plot_recall_by_evidence, plot_training_curve

from conftest import tiny_setup

SMALL = ["--set", "model.hidden=4", "--set", "model.word_dim=4", "--set", "model.type_dim=2",
         "--set", "model.coref_dim=2", "--set", "model.dist_dim=2", "--set", "train.lr=0.01"]


@pytest.fixture
def corpus(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "data"), "--seed", "3", "--set", "synth.documents=4",
                     "--set", "synth.sentences=3", "--dev-documents", "2", "-q"]) == 0
    return tmp_path / "data"


def train_run(corpus, out, epochs=2, extra=()):
    return cli.main(["train", "--train", str(corpus / "train.json"), "--dev", str(corpus / "dev.json"),
                     "--out", str(out), "--seed", "1", "--set", f"train.epochs={epochs}", "-q", *SMALL, *extra])


# -- checkpoints --------------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny):
    _, vocab, cfg, model = tiny
    save_checkpoint(tmp_path / "ck", model, vocab, 0.25)
    loaded, vocab2, delta, meta = load_checkpoint(tmp_path / "ck")
    assert delta == 0.25 and loaded.cfg == cfg and vocab2.words.names == vocab.words.names
    for name, t in model.params.items():
        assert loaded.params[name].data.tobytes() == t.data.tobytes()
        assert loaded.params[name].requires_grad == t.requires_grad
    rows = read_manifest(tmp_path / "ck")
    assert [r[0] for r in rows] == model.params.names()
    assert (tmp_path / "ck" / "params.bin").stat().st_size == 8 * model.params.count()


def test_checkpoint_overwrite_and_infinite_threshold(tmp_path, tiny):
    _, vocab, _, model = tiny
    save_checkpoint(tmp_path / "ck", model, vocab, 0.5)
    save_checkpoint(tmp_path / "ck", model, vocab, float("inf"))
    assert load_checkpoint(tmp_path / "ck")[2] == float("inf")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ck"]


def test_checkpoint_mismatch_names_parameter(tmp_path, tiny):
    _, vocab, cfg, model = tiny
    save_checkpoint(tmp_path / "ck", model, vocab, 0.5)
    with pytest.raises(CheckpointMismatch) as err:
        load_checkpoint(tmp_path / "ck", cfg.replace(hidden=3))
    assert err.value.parameter == "lstm_e.fwd.w_ih"
    with pytest.raises(CheckpointMismatch, match="not part of the config"):
        load_checkpoint(tmp_path / "ck", cfg.replace(no_bilinear=True))


# -- plotting ------------------------------------------------------------------------------


def test_figures_are_written_and_reproducible(tmp_path):
    log = [tr.EpochLog(e, 1.0 / e, 0.5, 0.5, 0.5, 0.4, 0.3) for e in range(1, 13)]
    table = {"1": {"count": 3, "recalled": 2, "recall": 2 / 3}, "2": {"count": 0, "recalled": 0, "recall": None}}
    for i in range(2):
        plot_training_curve(log, tmp_path / f"c{i}.png")
        plot_recall_by_evidence(table, tmp_path / f"r{i}.png", title="dev")
        plot_ablation([("full", 0.8, 0.7), ("flat_document", 0.6, 0.5)], tmp_path / f"a{i}.png")
    for stem in "cra":
        a, b = (tmp_path / f"{stem}0.png").read_bytes(), (tmp_path / f"{stem}1.png").read_bytes()
        assert a[:8] == b"\x89PNG\r\n\x1a\n" and a == b


# -- command line ----------------------------------------------------------------------------


def test_format_predictions_sorting():
    recs = [PredictionRecord("b", 0, 1, 0, 0.7), PredictionRecord("a", 1, 0, 1, 0.6),
            PredictionRecord("a", 0, 1, 0, 0.9), PredictionRecord("a", 0, 1, 1, 0.1)]
    text = cli.format_predictions(recs, ["R0", "R1"], 0.5)
    assert text == "a\t0\t1\tR0\t0.900000000\na\t1\t0\tR1\t0.600000000\nb\t0\t1\tR0\t0.700000000\n"


def test_synth_writes_corpus(corpus):
    data = json.loads((corpus / "train.json").read_text())
    assert len(data) == 4 and len(json.loads((corpus / "dev.json").read_text())) == 2
    assert json.loads((corpus / "rel_info.json").read_text()) == ["R0", "R1", "R2", "R3"]


def test_train_writes_artifacts_deterministically(corpus, tmp_path):
    assert train_run(corpus, tmp_path / "r1") == 0
    assert train_run(corpus, tmp_path / "r2") == 0
    for part in ("checkpoint/params.bin", "checkpoint/manifest.tsv", "checkpoint/meta.json", "train_log.tsv",
                 "dev_predictions.tsv", "threshold.txt", "training_curve.png"):
        assert (tmp_path / "r1" / part).read_bytes() == (tmp_path / "r2" / part).read_bytes(), part
    log = (tmp_path / "r1" / "train_log.tsv").read_text().splitlines()
    assert log[0] == tr.LOG_HEADER and len(log) == 3


def test_missing_corpus_path(tmp_path, capsys):
    assert cli.main(["train", "--train", str(tmp_path / "nope.json"), "--out", str(tmp_path), "-q"]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_bad_override(corpus, tmp_path, capsys):
    assert train_run(corpus, tmp_path / "r", extra=["--set", "model.hiden=4"]) == 2
    assert train_run(corpus, tmp_path / "r", extra=["--set", "oops"]) == 2


def test_config_file_and_flags(corpus, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"hidden": 3}, "train": {"epochs": 1}}))
    assert train_run(corpus, tmp_path / "r", epochs=1, extra=["--config", str(cfg)]) == 0
    meta = json.loads((tmp_path / "r" / "checkpoint" / "meta.json").read_text())
    assert meta["model"]["hidden"] == 4  # flag wins over the file
    assert cli.main(["train", "--train", str(corpus / "train.json"), "--config", str(tmp_path / "x.json"),
                     "--out", str(tmp_path), "-q"]) == 2


def test_divergence_exit_code(corpus, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise tr.DivergenceError("loss became nan", [])
    monkeypatch.setattr(cli, "train_loop", boom)
    assert train_run(corpus, tmp_path / "r") == 3


def test_eval_and_predict(corpus, tmp_path, capsys):
    assert train_run(corpus, tmp_path / "r") == 0
    ck = str(tmp_path / "r" / "checkpoint")
    assert cli.main(["eval", "--checkpoint", ck, "--data", str(corpus / "dev.json"), "--train",
                     str(corpus / "train.json"), "--out", str(tmp_path / "ev"), "-q"]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert set(report["recall_by_evidence"]) >= {"1", "2", ">=7"}
    assert (tmp_path / "ev" / "report.txt").read_text().startswith("threshold")
    assert (tmp_path / "ev" / "recall_by_evidence.png").stat().st_size > 0

    assert cli.main(["eval", "--checkpoint", ck, "--data", str(corpus / "dev.json"), "--threshold", "1.0",
                     "--out", str(tmp_path / "ev1"), "-q"]) == 0
    report = json.loads((tmp_path / "ev1" / "report.json").read_text())
    assert report["n_pred"] == 0 and report["precision"] == 0.0
    assert (tmp_path / "ev1" / "predictions.tsv").read_text() == ""

    unlabeled = json.loads((corpus / "dev.json").read_text())
    for rec in unlabeled:
        del rec["labels"]
    (tmp_path / "u.json").write_text(json.dumps(unlabeled))
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", ck, "--data", str(tmp_path / "u.json"), "--out",
                     str(tmp_path / "ev2"), "-q"]) == 2
    assert "predict" in capsys.readouterr().err
    assert cli.main(["predict", "--checkpoint", ck, "--data", str(tmp_path / "u.json"), "--threshold", "0",
                     "--out", str(tmp_path / "pr"), "-q"]) == 0
    lines = (tmp_path / "pr" / "predictions.tsv").read_text().splitlines()
    assert lines and all(len(line.split("\t")) == 5 for line in lines)


def test_eval_checkpoint_mismatch(corpus, tmp_path, capsys):
    assert train_run(corpus, tmp_path / "r", epochs=1) == 0
    code = cli.main(["eval", "--checkpoint", str(tmp_path / "r" / "checkpoint"), "--data", str(corpus / "dev.json"),
                     "--out", str(tmp_path / "ev"), "--set", "model.hidden=5", "-q"])
    assert code == 4
    assert "lstm_e.fwd.w_ih" in capsys.readouterr().err


def test_gradcheck_command(tmp_path, capsys):
    assert cli.main(["gradcheck", "--out", str(tmp_path), "-q"]) == 0
    table = (tmp_path / "gradcheck.tsv").read_text().splitlines()
    assert table[0] == "parameter\tmax_rel_error\tstatus" and all(r.endswith("ok") for r in table[1:])


def test_gradcheck_detects_corrupted_rule(capsys):
    assert cli.main(["gradcheck", "--inject-fault", "biaffine", "-q"]) == 5
    err = capsys.readouterr().err
    assert "biaffine." in err and "lstm" not in err


def test_gradcheck_size_guard(capsys):
    assert cli.main(["gradcheck", "--set", "model.hidden=5", "-q"]) == 2
    assert "8" in capsys.readouterr().err


def test_ablate_command(corpus, tmp_path):
    assert cli.main(["ablate", "--train", str(corpus / "train.json"), "--out", str(tmp_path / "ab"), "--flag",
                     "no_bilinear", "--set", "train.epochs=1", "-q", *SMALL]) == 0
    rows = (tmp_path / "ab" / "ablation.tsv").read_text().splitlines()
    assert rows[1].startswith("full\t") and rows[2].startswith("no_bilinear\t")
    assert int(rows[2].split("\t")[2]) < 0
    assert (tmp_path / "ab" / "ablation.png").exists()


def test_gradcheck_helper_matches_cli_defaults():
    report = cli.run_gradcheck({"model": {}}, seed=0)
    _, _, cfg, model = tiny_setup()
    assert set(report) == set(model.params.trainable())
    assert max(report.values()) < 1e-4
    assert np.isfinite(list(report.values())).all()
