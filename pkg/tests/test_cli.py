import numpy as np
import pytest

from camfuse.cli import main


def test_shapes_32(capsys):
    assert main(["shapes", "--volume-size", "32"]) == 0
    out = capsys.readouterr().out
    assert "PFE          16 x 8 x 8 x 8" in out and "AFE          128 x 1 x 1 x 1" in out
    assert "joint        384" in out and "logits       2" in out


def test_gradcheck_one_seed(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_synth_train_eval_pretrain(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert main(["synth", "--out", str(ds), "--n-subjects", "8", "--volume-size", "32", "--seed", "1"]) == 0
    assert (ds / "manifest.tsv").exists()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 1\npretrain_epochs = 1\nn_prototypes = 8\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--manifest", str(ds / "manifest.tsv"), "--folds", "4",
                 "--max-folds", "1", "--lr", "1e-3", "--out", str(run)]) == 0
    assert (run / "metrics.csv").read_text().startswith("fold,acc,auc,pre,spe,sen\n")
    assert (run / "loss_trace.csv").read_text().startswith("fold,epoch,l_total,l_consi,l_mse,l_c\n")
    assert (run / "fold0.ckpt").exists() and not (run / "fold1.ckpt").exists()
    assert main(["eval", "--checkpoint", str(run / "fold0.ckpt"), "--manifest", str(ds / "manifest.tsv"),
                 "--out", str(tmp_path / "ev")]) == 0
    assert len((tmp_path / "ev" / "metrics.csv").read_text().splitlines()) == 2
    pre = tmp_path / "pre"
    assert main(["pretrain", "--manifest", str(ds / "manifest.tsv"), "--pretrain-epochs", "1", "--out", str(pre)]) == 0
    assert (pre / "pretrain.ckpt").exists()
    assert (pre / "pretrain_trace.csv").read_text().splitlines()[0] == "epoch,l_mri,l_pet"


def test_bad_flag_exits():
    with pytest.raises(SystemExit):
        main(["train", "--task", "nope"])
