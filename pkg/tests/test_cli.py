import csv
import io

import pytest

from depdistill.cli import main
from depdistill.conllu import format_conllu, parse_conllu, read_conllu
from depdistill.model import load_model
from depdistill.synthetic import synthetic_corpus

SMALL_ARGS = ["word_dim=16", "upos_dim=8", "lstm_dim=32", "lstm_layers=1", "arc_mlp_dim=32",
              "label_mlp_dim=16", "emb_dropout=0", "dropout=0", "learning_rate=0.01"]


def run(capsys, *argv):
    code = main(["--quiet", *map(str, argv)])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "train.conllu").write_text(format_conllu(synthetic_corpus(8, seed=11)))
    return d


@pytest.fixture(scope="module")
def overfit_model(workdir):
    path = workdir / "full.bin"
    data = str(workdir / "train.conllu")
    assert main(["--quiet", "train", data, data, "--out", str(path), "--batch-size", "8",
                 "--seed", "3", "epochs=80", *SMALL_ARGS]) == 0
    return path


def test_stats(tmp_path, capsys, fig1_text):
    (tmp_path / "fig1.conllu").write_text(fig1_text)
    code, out, _ = run(capsys, "stats", tmp_path / "fig1.conllu")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO("\n".join(out.splitlines()[1:]))))
    assert rows[0]["treebank"] == "fig1" and rows[0]["trees"] == "1"
    assert float(rows[0]["avg_sent_length"]) == 8.0
    assert float(rows[0]["nonproj_arc_pct"]) == 0.0


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["stats"], ["bench", "x.conllu"],
                                  ["distill", "a.conllu", "--teacher", "t", "--out", "o",
                                   "--fraction", "1.5"],
                                  ["eval", "g", "--model", "m", "--include-punct", "maybe"]])
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "usage" in err


def test_missing_file_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "stats", tmp_path / "nope.conllu")
    assert code == 2 and "error" in err


def test_bad_conllu_exits_2_with_line(tmp_path, capsys):
    bad = tmp_path / "bad.conllu"
    bad.write_text("1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_\n2\tb\tb\tNOUN\t_\t_\tx\tdep\t_\t_\n\n")
    code, _, err = run(capsys, "stats", bad)
    assert code == 2 and "2" in err


def test_unknown_override_exits_2(workdir, tmp_path, capsys):
    code, _, err = run(capsys, "train", workdir / "train.conllu", "--out", tmp_path / "m.bin",
                       "no_such_key=1")
    assert code == 2 and "no_such_key" in err


def test_bad_model_exits_2(workdir, tmp_path, capsys):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"hello world, not a model")
    code, _, err = run(capsys, "parse", workdir / "train.conllu", "--model", junk)
    assert code == 2 and "magic" in err


def test_parse_then_eval_overfit(workdir, overfit_model, tmp_path, capsys):
    out = tmp_path / "pred.conllu"
    code, _, _ = run(capsys, "parse", workdir / "train.conllu", "--model", overfit_model, "--out", out)
    assert code == 0
    pred = parse_conllu(out.read_text())  # output must be valid CoNLL-U
    gold = read_conllu(workdir / "train.conllu")
    assert [p.tokens for p in pred] == [g.tokens for g in gold]
    code, stdout, _ = run(capsys, "eval", workdir / "train.conllu", "--model", overfit_model,
                          "--out", tmp_path / "eval.csv")
    assert code == 0 and stdout.strip() == "UAS 100.00  LAS 100.00"
    rows = list(csv.DictReader(open(tmp_path / "eval.csv")))
    assert rows[0]["model_tag"] == "Full" and float(rows[0]["las"]) == 100.0
    assert (workdir / "full.bin.history.csv").exists()


def test_train_is_deterministic(workdir, tmp_path, capsys):
    paths = []
    for k in range(2):
        p = tmp_path / f"m{k}.bin"
        code, _, _ = run(capsys, "train", workdir / "train.conllu", "--out", p, "--seed", 5,
                         "epochs=2", *SMALL_ARGS)
        assert code == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_baseline_fraction_tag(workdir, tmp_path, capsys):
    p = tmp_path / "b.bin"
    code, _, _ = run(capsys, "train", workdir / "train.conllu", "--out", p, "--fraction", 0.4,
                     "epochs=1")
    assert code == 0
    m = load_model(p)
    assert m.tag == "B-40" and m.config.lstm_dim < 400


def test_identity_distillation_keeps_teacher_accuracy(workdir, overfit_model, tmp_path, capsys):
    student = tmp_path / "d100.bin"
    data = workdir / "train.conllu"
    code, _, err = run(capsys, "distill", data, data, "--teacher", overfit_model, "--fraction", 1,
                       "--init-from-teacher", "--out", student, "epochs=0")
    assert code == 0, err
    _, teacher_out, _ = run(capsys, "eval", data, "--model", overfit_model)
    _, student_out, _ = run(capsys, "eval", data, "--model", student)
    assert student_out == teacher_out
    assert load_model(student).tag == "D-100"


def test_distill_small_student(workdir, overfit_model, tmp_path, capsys):
    data = workdir / "train.conllu"
    out = tmp_path / "d40.bin"
    code, _, err = run(capsys, "distill", data, data, "--teacher", overfit_model, "--out", out,
                       "--fraction", 0.4, "epochs=2", "--batch-size", 4)
    assert code == 0, err
    m = load_model(out)
    assert m.tag == "D-40" and m.config.dropout == 0.0
    assert m.vocab == load_model(overfit_model).vocab


def test_bench_csv_and_summary(workdir, overfit_model, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code, stdout, _ = run(capsys, "bench", workdir / "train.conllu", "--model", overfit_model,
                          "--batch-sizes", "1,4", "--runs", 2, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4 and {r["model_tag"] for r in rows} == {"Full"}
    assert "tok/s" in stdout and "sent/s" in stdout


def test_unreachable_fraction_exits_2(workdir, overfit_model, tmp_path, capsys):
    # with every width at the floor of 2 this teacher keeps far more than 0.5% of its size
    data = workdir / "train.conllu"
    code, _, err = run(capsys, "distill", data, "--teacher", overfit_model, "--out", tmp_path / "x",
                       "--fraction", 0.005, "epochs=1")
    assert code == 2 and "closest" in err
