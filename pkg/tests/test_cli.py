import json

import numpy as np
import pytest

from pretrain_nli import cli
from pretrain_nli.embeddings import save_embeddings
from pretrain_nli.seq2seq import NumericalError, load_checkpoint
from pretrain_nli.synthetic import separable_pairs
from pretrain_nli.trainer import format_pairs

SMALL = ["--d", "8", "--layers", "1", "--epochs", "2", "--unfreeze-epoch", "0"]


@pytest.fixture()
def files(tmp_path):
    ex, emb, _ = separable_pairs(40, 8, n_words=10, seed=0)
    save_embeddings(emb, tmp_path / "emb.txt")
    (tmp_path / "train.tsv").write_text(format_pairs(ex[:30]))
    (tmp_path / "dev.tsv").write_text(format_pairs(ex[30:]))
    (tmp_path / "lex.txt").write_text("w0 w1 w2\nw3 w4\n")
    (tmp_path / "base.tsv").write_text(
        "w0\tw1\thyponym\nw2\tw3\tdisjoint\nw4\tw5\tequal\nw6\tw7\thypernym\n")
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(path):
    return json.loads(open(path).read())


# --------------------------------------------------------------- commands

def test_preprocess_and_retrofit(files):
    out = files / "pre.txt"
    assert run("preprocess", "--embeddings", files / "emb.txt", "--out", out) == 0
    rows = np.array([[float(x) for x in l.split()[1:]] for l in out.read_text().splitlines()])
    assert np.allclose(rows.mean(axis=0), 0, atol=1e-8)
    m = manifest(str(out) + ".manifest.json")
    assert m["subcommand"] == "preprocess" and m["seed"] == cli.DEFAULT_SEED
    assert len(m["inputs"]["embeddings"]["sha256"]) == 64
    assert run("retrofit", "--embeddings", out, "--lexicon", files / "lex.txt",
               "--out", files / "retro.txt") == 0
    assert (files / "retro.txt").exists()


def test_gen_negation_writes_splits(files):
    d = files / "neg"
    assert run("gen-negation", "--base", files / "base.tsv", "--out-dir", d,
               "--test-depths", "3,4", "--downsample", "20") == 0
    names = sorted(p.name for p in d.iterdir())
    assert names == ["manifest.json", "stats.json", "test_l3.tsv", "test_l4.tsv", "train.tsv"]
    assert len((d / "test_l3.tsv").read_text().splitlines()) <= 20


def test_train_eval_report(files):
    ck = files / "m.ckpt"
    assert run("train", "--train", files / "train.tsv", "--dev", files / "dev.tsv",
               "--embeddings", files / "emb.txt", "--out", ck, *SMALL) == 0
    logs = (files / "m.ckpt.log.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in logs] == [1, 2]
    assert run("eval", "--model", ck, "--data", files / "dev.tsv",
               "--out", files / "ev.json") == 0
    res = json.loads((files / "ev.json").read_text())
    assert res["n"] == 10 and 0 <= res["accuracy"] <= 1
    assert run("report", "--recipe", "wordpair", "--data", files / "train.tsv",
               "--family", f"e={files / 'emb.txt'}", "--family", "random=random",
               "--out", files / "rep.json", *SMALL) == 0
    rep = json.loads((files / "rep.json").read_text())
    assert set(rep["families"]) == {"e", "random"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_report_negation(files):
    d = files / "neg"
    run("gen-negation", "--base", files / "base.tsv", "--out-dir", d, "--test-depths", "3")
    assert run("report", "--recipe", "negation", "--train", d / "train.tsv", "--tests-dir", d,
               "--out", files / "n.json", *SMALL) == 0
    assert json.loads((files / "n.json").read_text())["depths"] == [3]
    assert run("report", "--recipe", "negation", "--out", files / "x.json") == 1


def test_search_writes_trials(files):
    d = files / "s"
    assert run("search", "--train", files / "train.tsv", "--dev", files / "dev.tsv",
               "--out-dir", d, "--coarse-trials", 2, "--anneal-iters", 1, "--trials", 2,
               "--freeze", "kappa", *SMALL, "--epochs", 1) == 0
    trials = (d / "trials.jsonl").read_text().splitlines()
    assert len(trials) == 4
    best = json.loads((d / "best_params.json").read_text())
    assert set(best["params"]) == {"learning_rate", "kappa", "init_scheme"}


# -------------------------------------------------------------- exit codes

def test_usage_errors(files, capsys):
    assert run() == 1
    assert run("bogus") == 1
    assert run("train", "--train", files / "train.tsv") == 1
    assert run("train", "--train", files / "train.tsv", "--out", files / "m",
               "--no-such-flag") == 1
    assert run("train", "--train", files / "train.tsv", "--out", files / "m",
               "--preset", "nope/none") == 1
    assert run("train", "--train", files / "train.tsv", "--out", files / "m",
               "--threads", 0) == 1
    assert run("--version") == 0


def test_data_errors(files):
    assert run("preprocess", "--embeddings", files / "missing.txt", "--out", files / "o") == 2
    (files / "bad.txt").write_text("a 1 2\nb 1\n")
    assert run("preprocess", "--embeddings", files / "bad.txt", "--out", files / "o") == 2
    assert run("preprocess", "--embeddings", files / "emb.txt", "--out", files / "o",
               "--expected-dim", 3) == 2


def test_numerical_failure_exit_code(files, monkeypatch):
    def boom(*a, **kw):
        raise NumericalError("non-finite loss")
    monkeypatch.setattr(cli, "train", boom)
    assert run("train", "--train", files / "train.tsv", "--out", files / "m", *SMALL) == 3


def test_manifest_written_before_command_runs(files):
    # dev labels unknown to the training data: fails inside the command
    (files / "odd.tsv").write_text("w0\tw1\tother\n")
    out = files / "m.ckpt"
    assert run("train", "--train", files / "train.tsv", "--dev", files / "odd.tsv",
               "--out", out, *SMALL) == 2
    assert (files / "m.ckpt.manifest.json").exists() and not out.exists()


# ----------------------------------------------------------------- config

def test_config_file_and_flag_precedence(files):
    (files / "c.cfg").write_text("lr = 0.125  # from file\nkappa = 0.7\n")
    base = ["train", "--train", files / "train.tsv", "--out", files / "m", "--config",
            files / "c.cfg", *SMALL]
    assert run(*base) == 0
    cfg = manifest(files / "m.manifest.json")["config"]
    assert (cfg["lr"], cfg["kappa"]) == (0.125, 0.7)
    assert run(*base, "--lr", "0.25") == 0
    cfg = manifest(files / "m.manifest.json")["config"]
    assert (cfg["lr"], cfg["kappa"]) == (0.25, 0.7)
    (files / "bad.cfg").write_text("colour = red\n")
    assert run("train", "--train", files / "train.tsv", "--out", files / "m",
               "--config", files / "bad.cfg") == 1


def test_preset_resolves_into_manifest(files):
    assert run("train", "--train", files / "train.tsv", "--out", files / "m",
               "--preset", "retro_glove/orthogonal", *SMALL) == 0
    cfg = manifest(files / "m.manifest.json")["config"]
    assert (cfg["lr"], cfg["kappa"], cfg["init_scheme"]) == (0.80, 1.35, "orthogonal")


def test_data_root_env(files, tmp_path_factory, monkeypatch):
    monkeypatch.chdir(tmp_path_factory.mktemp("elsewhere"))
    monkeypatch.setenv(cli.DATA_ROOT_ENV, str(files))
    assert run("preprocess", "--embeddings", "emb.txt", "--out", files / "p.txt") == 0
    m = manifest(str(files / "p.txt") + ".manifest.json")
    assert m["inputs"]["embeddings"]["path"] == str(files / "emb.txt")


def test_replay_from_manifest_is_bit_exact(files):
    a = files / "a.ckpt"
    assert run("train", "--train", files / "train.tsv", "--dev", files / "dev.tsv",
               "--out", a, "--seed", 9, *SMALL) == 0
    argv = cli.argv_from_manifest(manifest(str(a) + ".manifest.json"))
    b = files / "b.ckpt"
    assert cli.main(argv + ["--out", str(b), "--log", str(files / "b.log")]) == 0
    pa, _ = load_checkpoint(a)
    pb, _ = load_checkpoint(b)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
