import json
import subprocess
import sys

import pytest

from vaelm.cli import main

CONFIG = """\
embed_dim = 8
hidden_dim = 12
latent_dim = 4
max_epochs = 2
batch_size = 16
eval_k = 2
eval_mi_size = 20
iw_k = 8
mi_size = 50
pcc_pairs = 200
copy_samples = 10
interp_steps = 4
max_decode_len = 12
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--vocab-size", "20",
                 "--sentences", "120", "--valid", "30", "--test", "30", "--max-len", "6"]) == 0
    (root / "run.cfg").write_text(CONFIG + f"corpus = {root / 'data'}\n")
    return root


def _train(ws, out, recipe="vanilla", extra=()):
    if (ws / out / "best.ckpt").exists():
        return 0
    return main(["train", "--config", str(ws / "run.cfg"), "--recipe", recipe, "--seed", "1",
                 "--out", str(ws / out), *extra])


def test_gen_data_files(workspace):
    d = workspace / "data"
    for split in ("train", "valid", "test"):
        assert (d / f"{split}.txt").exists()
        assert set((d / f"{split}.labels").read_text().split()) <= {"0", "1"}


def test_train_writes_outputs(workspace):
    assert _train(workspace, "v1") == 0
    out = workspace / "v1"
    lines = (out / "log.jsonl").read_text().splitlines()
    assert len(lines) == 2
    for line in lines:
        rec = json.loads(line)
        for k in ("nll", "ppl", "recon", "kl", "neg_elbo", "elbo_ppl", "mi", "au"):
            assert k in rec
    assert (out / "best.ckpt").exists() and (out / "plots" / "metrics.csv").exists()
    assert "latent_dim = 4" in (out / "config.txt").read_text()


def test_rerun_is_byte_identical(workspace):
    _train(workspace, "a")
    _train(workspace, "b")
    for name in ("log.jsonl", "best.ckpt", "config.txt", "plots/metrics.csv"):
        assert (workspace / "a" / name).read_bytes() == (workspace / "b" / name).read_bytes()
    reports = []
    for run in ("a", "b"):
        ck = str(workspace / run / "best.ckpt")
        cfg = str(workspace / "run.cfg")
        assert main(["evaluate", "--ckpt", ck, "--config", cfg,
                     "--out", str(workspace / run / "eval.json")]) == 0
        assert main(["probe", "--ckpt", ck, "--config", cfg, "--out",
                     str(workspace / run / "probe")]) == 0
        assert main(["classify", "--ckpt", ck, "--config", cfg, "--labeled-counts", "0,50",
                     "--out", str(workspace / run / "cls.json")]) == 0
        reports.append([(workspace / run / f).read_bytes() for f in
                        ("eval.json", "probe/probe.json", "probe/interpolation.txt", "cls.json")])
    assert reports[0] == reports[1]
    cls = json.loads((workspace / "a" / "cls.json").read_text())["classifier_accuracy"]
    assert set(cls) == {"0", "50"}
    probe = json.loads((workspace / "a" / "probe" / "probe.json").read_text())
    assert set(probe["noisy_recon"]) == {"0", "1", "2", "3", "4"}
    assert 0 <= probe["bleu"] <= 100 and 0 <= probe["cluster_accuracy"] <= 100


def test_ours_phase_markers(workspace):
    assert _train(workspace, "ours", "ours", ["--lambda", "0.5"]) == 0
    recs = [json.loads(l) for l in (workspace / "ours" / "log.jsonl").read_text().splitlines()]
    phases = [r["phase"] for r in recs]
    assert phases == ["pretrain", "pretrain", "reset", "main", "main"]
    assert recs[2]["event"] == "decoder_reset"


def test_interpolate_stdout(workspace, capsys):
    _train(workspace, "v1")
    assert main(["interpolate", "--ckpt", str(workspace / "v1" / "best.ckpt"), "--config",
                 str(workspace / "run.cfg"), "--pair", "0,1", "--steps", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


def test_missing_corpus_is_usage_error(tmp_path):
    assert main(["evaluate", "--ckpt", str(tmp_path / "x.ckpt")]) == 2


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("wat = 1\n")
    assert main(["train", "--config", str(cfg), "--recipe", "vanilla", "--out",
                 str(tmp_path / "o")]) == 2


def test_missing_checkpoint_is_runtime_error(workspace, tmp_path):
    assert main(["evaluate", "--ckpt", str(tmp_path / "none.ckpt"), "--config",
                 str(workspace / "run.cfg")]) == 1


def test_wrong_vocab_checkpoint(workspace, tmp_path):
    main(["gen-data", "--out", str(tmp_path / "other"), "--vocab-size", "12", "--sentences",
          "20", "--valid", "5", "--test", "5"])
    _train(workspace, "a")
    rc = main(["evaluate", "--ckpt", str(workspace / "a" / "best.ckpt"), "--config",
               str(workspace / "run.cfg"), "--corpus", str(tmp_path / "other")])
    assert rc == 1


def test_grad_check_command(capsys):
    assert main(["grad-check", "--cases", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 20


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "vaelm", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "oracle-check" in res.stdout
    res = subprocess.run([sys.executable, "-m", "vaelm", "nonsense"], capture_output=True)
    assert res.returncode == 2
